//! The searchable cell: two preprocessed inputs feeding a DAG of nodes whose
//! edges carry softmax-weighted mixtures of primitives.
//!
//! Node `j` reads from every earlier state: index 0 and 1 are the two
//! preprocessed cell inputs, index `2 + i` is internal node `i`. Edges are
//! numbered node-major, so node `j` owns edges
//! `offset(j) .. offset(j) + j + 2`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, Ctx, Module, Param, ReluConvNorm};
use crate::primitives::{Primitive, PrimitiveKind};
use crate::tape::Var;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub nodes: usize,
    pub channels: usize,
    pub primitives: Vec<String>,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            nodes: 3,
            channels: 32,
            primitives: PrimitiveKind::default_names(),
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.channels == 0 {
            return Err(Error::config("cell needs at least one node and one channel"));
        }
        if self.primitives.is_empty() {
            return Err(Error::config("cell needs a non-empty primitive set"));
        }
        for name in &self.primitives {
            name.parse::<PrimitiveKind>()?;
        }
        Ok(())
    }

    pub fn kinds(&self) -> Result<Vec<PrimitiveKind>> {
        self.primitives.iter().map(|n| n.parse()).collect()
    }

    /// Σ_{j < nodes} (j + 2)
    pub fn num_edges(&self) -> usize {
        (0..self.nodes).map(|j| j + 2).sum()
    }

    /// Index of the first edge entering node `j`.
    pub fn edge_offset(node: usize) -> usize {
        (0..node).map(|j| j + 2).sum()
    }

    /// `(node, input)` for every edge in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> {
        (0..self.nodes).flat_map(|j| (0..j + 2).map(move |i| (j, i)))
    }
}

/// Unnormalized architecture logits for one edge, one per primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeAlphas(pub Vec<f64>);

impl EdgeAlphas {
    pub fn softmax(&self) -> Vec<f64> {
        crate::tape::softmax_vec(&self.0)
    }
}

/// Output of one edge: the softmax-weighted sum of every primitive applied
/// to `x`. `weights` is a tape variable holding the (already normalized)
/// mixing weights.
pub fn mixed_op(ctx: &mut Ctx, x: Var, weights: Var, prims: &[Primitive]) -> Result<Var> {
    if prims.is_empty() {
        return Err(Error::config("mixed_op: empty primitive list"));
    }
    let k = ctx.tape.shape(weights).iter().product::<usize>();
    if k != prims.len() {
        return Err(Error::config(format!(
            "mixed_op: {k} mixing weights for {} primitives",
            prims.len()
        )));
    }
    let outputs = prims
        .iter()
        .map(|p| p.apply(ctx, x))
        .collect::<Result<Vec<_>>>()?;
    ctx.tape.mix(&outputs, weights)
}

#[derive(Debug, Clone)]
struct Edge {
    node: usize,
    input: usize,
    ops: Vec<Primitive>,
    /// Edge index into the shared architecture logits; `None` for a fixed op.
    alpha: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Cell {
    config: CellConfig,
    pub pre0: ReluConvNorm,
    pub pre1: ReluConvNorm,
    edges: Vec<Edge>,
    pub project: Conv,
}

impl Cell {
    /// A search cell: every edge carries every primitive.
    pub fn mixed(config: &CellConfig, name: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let kinds = config.kinds()?;
        let c = config.channels;
        let pre0 = ReluConvNorm::new(&format!("{name}.pre0"), c, c, rng);
        let pre1 = ReluConvNorm::new(&format!("{name}.pre1"), c, c, rng);
        let edges = config
            .edges()
            .enumerate()
            .map(|(e, (node, input))| Edge {
                node,
                input,
                ops: kinds
                    .iter()
                    .map(|&k| Primitive::new(k, c, &format!("{name}.edge{e}.{}", k.name()), rng))
                    .collect(),
                alpha: Some(e),
            })
            .collect();
        let project = Conv::pointwise(&format!("{name}.project"), config.nodes * c, c, rng);
        Ok(Self {
            config: config.clone(),
            pre0,
            pre1,
            edges,
            project,
        })
    }

    /// A fixed cell whose node `j` keeps only the `(input, op)` pairs in
    /// `retained[j]`.
    pub fn discrete(
        config: &CellConfig,
        retained: &[Vec<(usize, PrimitiveKind)>],
        name: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if retained.len() != config.nodes {
            return Err(Error::config(format!(
                "{} node specs for a {}-node cell",
                retained.len(),
                config.nodes
            )));
        }
        let c = config.channels;
        let pre0 = ReluConvNorm::new(&format!("{name}.pre0"), c, c, rng);
        let pre1 = ReluConvNorm::new(&format!("{name}.pre1"), c, c, rng);
        let mut edges = Vec::new();
        for (node, inputs) in retained.iter().enumerate() {
            if inputs.is_empty() {
                return Err(Error::config(format!("node {node} has no inputs")));
            }
            for &(input, kind) in inputs {
                if input >= node + 2 {
                    return Err(Error::config(format!(
                        "node {node} cannot read state {input} (only {} available)",
                        node + 2
                    )));
                }
                let e = CellConfig::edge_offset(node) + input;
                edges.push(Edge {
                    node,
                    input,
                    ops: vec![Primitive::new(kind, c, &format!("{name}.edge{e}.{}", kind.name()), rng)],
                    alpha: None,
                });
            }
        }
        let project = Conv::pointwise(&format!("{name}.project"), config.nodes * c, c, rng);
        Ok(Self {
            config: config.clone(),
            pre0,
            pre1,
            edges,
            project,
        })
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn is_mixed(&self) -> bool {
        self.edges.iter().any(|e| e.alpha.is_some())
    }

    /// Runs the cell. `weights` holds one normalized mixing-weight variable
    /// per edge and is required for (and only used by) mixed cells.
    pub fn forward(&self, ctx: &mut Ctx, s0: Var, s1: Var, weights: Option<&[Var]>) -> Result<Var> {
        if self.is_mixed() {
            let got = weights.map_or(0, <[Var]>::len);
            if got != self.config.num_edges() {
                return Err(Error::config(format!(
                    "cell expects {} edge weight vectors, got {got}",
                    self.config.num_edges()
                )));
            }
        }
        let p0 = self.pre0.forward(ctx, s0)?;
        let p1 = self.pre1.forward(ctx, s1)?;
        let mut states = vec![p0, p1];
        for node in 0..self.config.nodes {
            let mut acc: Option<Var> = None;
            for edge in self.edges.iter().filter(|e| e.node == node) {
                let x = states[edge.input];
                let out = match (edge.alpha, weights) {
                    (Some(a), Some(w)) => mixed_op(ctx, x, w[a], &edge.ops)?,
                    _ => edge.ops[0].apply(ctx, x)?,
                };
                acc = Some(match acc {
                    Some(prev) => ctx.tape.add(prev, out)?,
                    None => out,
                });
            }
            states.push(acc.ok_or_else(|| Error::config(format!("node {node} has no inputs")))?);
        }
        let cat = ctx.tape.concat_channels(&states[2..])?;
        let out = self.project.forward(ctx, cat)?;
        let mask = ctx.mask();
        ctx.tape.mask_time(out, &mask)
    }
}

impl Module for Cell {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.pre0.visit(f);
        self.pre1.visit(f);
        for e in &self.edges {
            for op in &e.ops {
                op.visit(f);
            }
        }
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.pre0.visit_mut(f);
        self.pre1.visit_mut(f);
        for e in &mut self.edges {
            for op in &mut e.ops {
                op.visit_mut(f);
            }
        }
        self.project.visit_mut(f);
    }
}
