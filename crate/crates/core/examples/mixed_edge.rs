//! One searchable edge: every primitive applied to the same input and mixed
//! by the softmax of its architecture logits.
//!
//! cargo run --example mixed_edge

use darts_ner::cell::{mixed_op, EdgeAlphas};
use darts_ner::nn::{Ctx, Mode};
use darts_ner::primitives::default_primitive_set;
use darts_ner::{Result, Tensor};

fn main() -> Result<()> {
    let (batch, channels, time) = (1, 4, 6);
    let prims = default_primitive_set(channels, 0);
    let x = Tensor::new(
        [batch, channels, time],
        (0..batch * channels * time).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect(),
    )?;
    // last position is padding
    let mask = vec![1., 1., 1., 1., 1., 0.];

    for logits in [vec![0.0; 5], vec![-2.0, 0.5, 3.0, 0.0, -1.0], vec![-40., -40., -40., 40., -40.]] {
        let weights = EdgeAlphas(logits.clone()).softmax();
        let mut ctx = Ctx::new(Mode::Eval, mask.clone(), false);
        let xv = ctx.tape.constant(x.clone());
        let a = ctx.tape.constant(Tensor::from_vec(logits.clone()));
        let w = ctx.tape.softmax(a, 0)?;
        let out = mixed_op(&mut ctx, xv, w, &prims)?;
        let out = ctx.tape.value(out);
        let w: Vec<String> = prims
            .iter()
            .zip(&weights)
            .map(|(p, w)| format!("{}={w:.3}", p.name()))
            .collect();
        println!("{}", w.join(" "));
        let first: Vec<String> = out.data()[..time].iter().map(|v| format!("{v:+.4}")).collect();
        println!("  channel 0: [{}]", first.join(", "));
    }
    Ok(())
}
