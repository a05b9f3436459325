//! The candidate operations placed on cell edges.
//!
//! Every primitive maps `[batch, channels, time]` to the same shape, so any
//! of them can sit on any edge.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv, Ctx, Module, Param};
use crate::rng::component_rng;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    /// Single-head scaled dot-product self-attention, head dim == channels.
    Attention,
    /// Depthwise conv → pointwise conv → ReLU.
    SepConv { kernel: usize },
    /// Dilated depthwise conv → pointwise conv.
    DilConv { kernel: usize, dilation: usize },
    SkipConnect,
    Zero,
}

impl PrimitiveKind {
    /// Canonical order used for architecture logits and genotype files.
    pub const DEFAULT_SET: [PrimitiveKind; 5] = [
        PrimitiveKind::Attention,
        PrimitiveKind::SepConv { kernel: 3 },
        PrimitiveKind::DilConv { kernel: 3, dilation: 2 },
        PrimitiveKind::SkipConnect,
        PrimitiveKind::Zero,
    ];

    pub fn name(&self) -> String {
        match self {
            PrimitiveKind::Attention => "attention".into(),
            PrimitiveKind::SepConv { kernel } => format!("sep_conv{kernel}"),
            PrimitiveKind::DilConv { kernel, dilation: 2 } => format!("dil_conv{kernel}"),
            PrimitiveKind::DilConv { kernel, dilation } => format!("dil_conv{kernel}_d{dilation}"),
            PrimitiveKind::SkipConnect => "skip_connect".into(),
            PrimitiveKind::Zero => "zero".into(),
        }
    }

    pub fn default_names() -> Vec<String> {
        Self::DEFAULT_SET.iter().map(PrimitiveKind::name).collect()
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unknown primitive name {s:?}"));
        match s {
            "attention" => return Ok(PrimitiveKind::Attention),
            "skip_connect" => return Ok(PrimitiveKind::SkipConnect),
            "zero" => return Ok(PrimitiveKind::Zero),
            _ => {}
        }
        if let Some(k) = s.strip_prefix("sep_conv") {
            let kernel = k.parse().map_err(|_| bad())?;
            return Ok(PrimitiveKind::SepConv { kernel });
        }
        if let Some(rest) = s.strip_prefix("dil_conv") {
            let (k, d) = match rest.split_once("_d") {
                Some((k, d)) => (k, d.parse().map_err(|_| bad())?),
                None => (rest, 2),
            };
            let kernel = k.parse().map_err(|_| bad())?;
            return Ok(PrimitiveKind::DilConv { kernel, dilation: d });
        }
        Err(bad())
    }
}

#[derive(Debug, Clone)]
enum Weights {
    None,
    Attention { q: Conv, k: Conv, v: Conv },
    Conv { depthwise: Conv, pointwise: Conv },
}

/// A primitive with its own weights.
#[derive(Debug, Clone)]
pub struct Primitive {
    kind: PrimitiveKind,
    channels: usize,
    weights: Weights,
}

impl Primitive {
    /// Creates a primitive whose parameters are named under `prefix`.
    pub fn new(kind: PrimitiveKind, channels: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        let p = |suffix: &str| format!("{prefix}.{suffix}");
        let weights = match kind {
            PrimitiveKind::Attention => Weights::Attention {
                q: Conv::pointwise(&p("q"), channels, channels, rng),
                k: Conv::pointwise(&p("k"), channels, channels, rng),
                v: Conv::pointwise(&p("v"), channels, channels, rng),
            },
            PrimitiveKind::SepConv { kernel } => Weights::Conv {
                depthwise: Conv::new(&p("depthwise"), channels, channels, kernel, 1, channels, rng),
                pointwise: Conv::pointwise(&p("pointwise"), channels, channels, rng),
            },
            PrimitiveKind::DilConv { kernel, dilation } => Weights::Conv {
                depthwise: Conv::new(&p("depthwise"), channels, channels, kernel, dilation, channels, rng),
                pointwise: Conv::pointwise(&p("pointwise"), channels, channels, rng),
            },
            PrimitiveKind::SkipConnect | PrimitiveKind::Zero => Weights::None,
        };
        Self {
            kind,
            channels,
            weights,
        }
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.kind
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Applies the primitive to `x: [batch, channels, time]`. Outputs at
    /// masked positions are zeroed so padding never leaks into real tokens.
    pub fn apply(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::config(format!(
                "{} expects {} channels, input has shape {shape:?}",
                self.kind, self.channels
            )));
        }
        let mask = ctx.mask();
        match (&self.kind, &self.weights) {
            (PrimitiveKind::SkipConnect, _) => Ok(x),
            (PrimitiveKind::Zero, _) => Ok(ctx.tape.constant(Tensor::zeros(shape))),
            (_, Weights::Attention { q, k, v }) => {
                let qx = q.forward(ctx, x)?;
                let kx = k.forward(ctx, x)?;
                let vx = v.forward(ctx, x)?;
                let qt = ctx.tape.transpose12(qx)?;
                let kt = ctx.tape.transpose12(kx)?;
                let vt = ctx.tape.transpose12(vx)?;
                let att = ctx.tape.attention(qt, kt, vt, &mask)?;
                let out = ctx.tape.transpose12(att)?;
                ctx.tape.mask_time(out, &mask)
            }
            (PrimitiveKind::SepConv { .. }, Weights::Conv { depthwise, pointwise }) => {
                let h = depthwise.forward(ctx, x)?;
                let h = pointwise.forward(ctx, h)?;
                let h = ctx.tape.relu(h);
                ctx.tape.mask_time(h, &mask)
            }
            (_, Weights::Conv { depthwise, pointwise }) => {
                let h = depthwise.forward(ctx, x)?;
                let h = pointwise.forward(ctx, h)?;
                ctx.tape.mask_time(h, &mask)
            }
            (kind, Weights::None) => unreachable!("{kind} constructed without weights"),
        }
    }
}

impl Module for Primitive {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match &self.weights {
            Weights::None => {}
            Weights::Attention { q, k, v } => {
                q.visit(f);
                k.visit(f);
                v.visit(f);
            }
            Weights::Conv { depthwise, pointwise } => {
                depthwise.visit(f);
                pointwise.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match &mut self.weights {
            Weights::None => {}
            Weights::Attention { q, k, v } => {
                q.visit_mut(f);
                k.visit_mut(f);
                v.visit_mut(f);
            }
            Weights::Conv { depthwise, pointwise } => {
                depthwise.visit_mut(f);
                pointwise.visit_mut(f);
            }
        }
    }
}

/// The five canonical primitives for one edge, seeded from `seed`.
pub fn default_primitive_set(channels: usize, seed: u64) -> Vec<Primitive> {
    let mut rng = component_rng(seed, "primitives");
    PrimitiveKind::DEFAULT_SET
        .iter()
        .map(|&kind| Primitive::new(kind, channels, &kind.name(), &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn ctx(mask: Vec<f64>) -> Ctx {
        Ctx::new(Mode::Eval, mask, true)
    }

    #[test]
    fn canonical_names_and_order() {
        let set = default_primitive_set(8, 0);
        let names: Vec<String> = set.iter().map(Primitive::name).collect();
        assert_eq!(names, ["attention", "sep_conv3", "dil_conv3", "skip_connect", "zero"]);
        for name in names {
            assert_eq!(name.parse::<PrimitiveKind>().unwrap().name(), name);
        }
        assert!("max_pool3".parse::<PrimitiveKind>().is_err());
    }

    #[test]
    fn seeded_parameters_are_reproducible() {
        let collect = |set: &[Primitive]| {
            let mut out = Vec::new();
            for p in set {
                p.visit(&mut |param| out.push((param.name().to_string(), param.value.clone())));
            }
            out
        };
        assert_eq!(collect(&default_primitive_set(8, 3)), collect(&default_primitive_set(8, 3)));
        assert_ne!(collect(&default_primitive_set(8, 3)), collect(&default_primitive_set(8, 4)));
    }

    #[test]
    fn skip_and_zero_have_no_parameters() {
        let set = default_primitive_set(8, 0);
        assert_eq!(set[3].num_params(), 0);
        assert_eq!(set[4].num_params(), 0);
        assert!(set[0].num_params() > 0);
    }

    #[test]
    fn skip_is_identity_and_zero_is_zero() {
        let set = default_primitive_set(2, 0);
        let mut c = ctx(vec![1.0; 3]);
        let x = c.tape.leaf(Tensor::new([1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -7.0]).unwrap());
        let skip = set[3].apply(&mut c, x).unwrap();
        assert_eq!(c.tape.value(skip), c.tape.value(x));
        let zero = set[4].apply(&mut c, x).unwrap();
        assert!(c.tape.value(zero).data().iter().all(|&v| v == 0.0));
        let s = c.tape.sum(zero);
        let g = c.tape.backward(s).unwrap();
        assert!(g.get(x).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let set = default_primitive_set(4, 0);
        let mut c = ctx(vec![1.0; 3]);
        let x = c.tape.constant(Tensor::zeros([1, 2, 3]));
        assert!(matches!(set[0].apply(&mut c, x), Err(Error::Config(_))));
    }

    #[test]
    fn dil_conv_composes_depthwise_taps_with_pointwise() {
        let mut rng = component_rng(0, "t");
        let mut prim = Primitive::new(PrimitiveKind::DEFAULT_SET[2], 1, "d", &mut rng);
        let pointwise_scale = 0.5;
        prim.visit_mut(&mut |p| {
            let data = if p.name().ends_with("depthwise.weight") {
                vec![1.0, 0.0, 1.0]
            } else {
                vec![pointwise_scale]
            };
            p.value.data_mut().copy_from_slice(&data);
        });
        let mut c = ctx(vec![1.0; 4]);
        let x = c.tape.constant(Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = prim.apply(&mut c, x).unwrap();
        // depthwise taps at t-2 and t+2 give [3, 4, 1, 2]; then the 1×1 stage
        let expect: Vec<f64> = [3.0, 4.0, 1.0, 2.0].iter().map(|v| v * pointwise_scale).collect();
        assert_eq!(c.tape.value(y).data(), expect.as_slice());
    }

    #[test]
    fn shape_is_preserved_for_every_kind() {
        for t in [1, 2, 5] {
            let set = default_primitive_set(3, 1);
            let mut c = ctx(vec![1.0; 2 * t]);
            let x = c.tape.constant(Tensor::full([2, 3, t], 0.3));
            for p in &set {
                let y = p.apply(&mut c, x).unwrap();
                assert_eq!(c.tape.shape(y), &[2, 3, t], "{}", p.name());
            }
        }
    }
}
