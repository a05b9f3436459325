//! Reverse-mode gradients on a small expression, checked against central
//! differences.
//!
//! cargo run --example autodiff_gradcheck

use darts_ner::gradcheck::{analytic_grads, grad_check};
use darts_ner::tape::{Tape, Var};
use darts_ner::{Result, Tensor};

fn main() -> Result<()> {
    let a = Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75])?;
    let b = Tensor::new([3, 2], vec![1.0, 0.5, -0.5, 2.0, 0.0, 1.5])?;

    // sum(softmax(a @ b) * (a @ b)) over the last axis
    let f = |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let ab = t.matmul(v[0], v[1])?;
        let p = t.softmax(ab, 1)?;
        let weighted = t.mul(p, ab)?;
        Ok(t.sum(weighted))
    };

    let inputs = [a, b];
    let grads = analytic_grads(&f, &inputs)?;
    for (name, g) in ["a", "b"].iter().zip(&grads) {
        let g: Vec<String> = g.iter().map(|v| format!("{v:+.5}")).collect();
        println!("d/d{name} = [{}]", g.join(", "));
    }
    let err = grad_check(f, &inputs, 1e-5)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
