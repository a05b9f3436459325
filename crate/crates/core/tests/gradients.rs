mod common;

use common::{check_block, random_tensor};
use darts_ner::cell::mixed_op;
use darts_ner::gradcheck::grad_check;
use darts_ner::model::{ModelConfig, Network};
use darts_ner::nn::{Ctx, Mode, Module, Param, ReluConvNorm};
use darts_ner::primitives::{default_primitive_set, Primitive};
use darts_ner::rng::component_rng;
use darts_ner::tape::{Tape, Var};
use darts_ner::Result;

const MASK: [f64; 10] = [1., 1., 1., 1., 0., 1., 1., 0., 0., 0.];

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = component_rng(0, "matmul");
    let a = random_tensor(&[3, 3], &mut rng);
    let b = random_tensor(&[3, 3], &mut rng);
    let err = grad_check(
        |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let p = t.matmul(v[0], v[1])?;
            Ok(t.sum(p))
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "relative error {err:e}");
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let mut rng = component_rng(0, "attention");
    let inputs: Vec<_> = (0..3).map(|_| random_tensor(&[2, 3, 4], &mut rng)).collect();
    let r = random_tensor(&[2, 3, 4], &mut rng);
    let mask = [1., 1., 1., 1., 1., 0.];
    let err = grad_check(
        |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let out = t.attention(v[0], v[1], v[2], &mask)?;
            let r = t.constant(r.clone());
            let p = t.mul(out, r)?;
            Ok(t.sum(p))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err:e}");
}

struct Edge {
    ops: Vec<Primitive>,
    alpha: Param,
}

impl Module for Edge {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.ops.iter().for_each(|p| p.visit(f));
        f(&self.alpha);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ops.iter_mut().for_each(|p| p.visit_mut(f));
        f(&mut self.alpha);
    }
}

#[test]
fn mixed_op_squared_norm_gradient() {
    let mut rng = component_rng(1, "mixed");
    let edge = Edge {
        ops: default_primitive_set(3, 5),
        alpha: Param::new("alpha", random_tensor(&[5], &mut rng)),
    };
    let x = random_tensor(&[2, 3, 5], &mut rng);
    let ones = darts_ner::Tensor::full([2, 3, 5], 1.0);
    let rep = check_block(edge, x, &MASK, &ones, |e: &Edge, ctx: &mut Ctx, x| {
        let a = ctx.bind(&e.alpha);
        let w = ctx.tape.softmax(a, 0)?;
        let out = mixed_op(ctx, x, w, &e.ops)?;
        Ok(ctx.tape.mul(out, out)?)
    })
    .unwrap();
    assert!(rep.max_relative_error < 1e-5, "{rep:?}");
}

#[test]
fn preprocessing_block_gradient() {
    let mut rng = component_rng(2, "pre");
    let block = ReluConvNorm::new("pre", 3, 4, &mut rng);
    let x = random_tensor(&[2, 3, 5], &mut rng);
    let r = random_tensor(&[2, 4, 5], &mut rng);
    let rep = check_block(block, x, &MASK, &r, |b: &ReluConvNorm, ctx: &mut Ctx, x| b.forward(ctx, x)).unwrap();
    assert!(rep.max_relative_error < 1e-4, "{rep:?}");
}

fn tiny_net() -> Network {
    let cell = darts_ner::cell::CellConfig {
        nodes: 1,
        channels: 4,
        ..Default::default()
    };
    let cfg = ModelConfig {
        vocab_size: 10,
        embed_dim: 3,
        channels: 4,
        num_cells: 1,
        num_labels: 7,
        dropout_p: 0.0,
        cell,
    };
    Network::supernet(&cfg, 4).unwrap()
}

#[test]
fn stem_gradient_through_both_branches() {
    let net = tiny_net();
    let mut rng = component_rng(3, "stem");
    let x = random_tensor(&[2, 3, 5], &mut rng);
    let r0 = random_tensor(&[2, 4, 5], &mut rng);
    let r1 = random_tensor(&[2, 4, 5], &mut rng);
    let mut r = r0.data().to_vec();
    r.extend_from_slice(r1.data());
    let r = darts_ner::Tensor::new([2, 8, 5], r).unwrap();
    let rep = check_block(net, x, &MASK, &r, |n: &Network, ctx: &mut Ctx, x| {
        let (s0, s1) = n.stem(ctx, x)?;
        // [batch, 8, time] so one projection covers both branches
        ctx.tape.concat_channels(&[s0, s1])
    })
    .unwrap();
    assert!(rep.max_relative_error < 1e-4, "{rep:?}");
}

#[test]
fn identical_stem_branches_agree() {
    let mut net = tiny_net();
    let mut values = Vec::new();
    net.stem0.visit(&mut |p| values.push(p.value.clone()));
    let mut it = values.into_iter();
    net.stem1.visit_mut(&mut |p| p.value = it.next().unwrap());
    let mut rng = component_rng(5, "stem");
    let x = random_tensor(&[2, 3, 5], &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        let mut ctx = Ctx::new(mode, MASK.to_vec(), false);
        let xv = ctx.tape.constant(x.clone());
        let (s0, s1) = net.stem(&mut ctx, xv).unwrap();
        assert_eq!(ctx.tape.value(s0), ctx.tape.value(s1));
    }
}

#[test]
fn zero_embedding_gives_finite_stems() {
    let net = tiny_net();
    let mut ctx = Ctx::new(Mode::Train, MASK.to_vec(), false);
    let xv = ctx.tape.constant(darts_ner::Tensor::zeros([2, 3, 5]));
    let (s0, s1) = net.stem(&mut ctx, xv).unwrap();
    assert!(ctx.tape.value(s0).is_finite() && ctx.tape.value(s1).is_finite());
}
