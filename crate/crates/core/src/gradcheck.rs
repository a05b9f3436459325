//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-element comparison used by [`grad_check`]:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Evaluates `f` on a fresh tape with `inputs` recorded as leaves.
fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check: function must return a scalar, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.item())
}

/// Analytic gradients of `f` with respect to each input.
pub fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
        .collect())
}

/// Central-difference gradients of `f` with respect to each input.
pub fn numeric_grads<F>(f: &F, inputs: &[Tensor], eps: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut perturbed = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for (j, slot) in g.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + eps;
            let plus = eval(f, &perturbed)?;
            perturbed[i].data_mut()[j] = orig - eps;
            let minus = eval(f, &perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Maximum relative error between analytic and central-difference gradients
/// over every scalar of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::config("grad_check: eps must be positive"));
    }
    let analytic = analytic_grads(&f, inputs)?;
    let numeric = numeric_grads(&f, inputs, eps)?;
    Ok(analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Largest disagreement found by [`module_grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `name[index]` of the worst scalar.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalars compared.
    pub checked: usize,
}

fn set_scalar<M: Module>(module: &mut M, name: &str, index: usize, value: f64) {
    module.visit_mut(&mut |p| {
        if p.name() == name {
            p.value.data_mut()[index] = value;
        }
    });
}

/// Compares the gradients `analytic` accumulates into every trainable
/// parameter of `module` against central differences of `loss`.
pub fn module_grad_check<M, A, L>(module: &mut M, eps: f64, mut analytic: A, mut loss: L) -> Result<GradCheckReport>
where
    M: Module,
    A: FnMut(&mut M) -> Result<()>,
    L: FnMut(&mut M) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::config("grad_check: eps must be positive"));
    }
    module.zero_grad();
    analytic(module)?;
    let mut params = Vec::new();
    module.visit(&mut |p| {
        if p.trainable() {
            let g = p.value.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.numel()]);
            params.push((p.name().to_string(), p.value.data().to_vec(), g));
        }
    });
    module.zero_grad();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (name, values, grads) in &params {
        for (i, (&orig, &a)) in values.iter().zip(grads).enumerate() {
            set_scalar(module, name, i, orig + eps);
            let plus = loss(module)?;
            set_scalar(module, name, i, orig - eps);
            let minus = loss(module)?;
            set_scalar(module, name, i, orig);
            let n = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, n);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst = format!("{name}[{i}]");
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
