//! Tree-structured pair classifier: two weight-sharing sentence encoders
//! (TreeRNN, TreeRNTN or summing), a comparison layer with a leaky rectifier,
//! and a softmax over the seven relations.
//!
//! Gradients are derived by hand per layer and checked against finite
//! differences in tests.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::nn::{init_uniform_with, leaky, leaky_slope, softmax_nll, OptimizerState, Tensor};
use crate::relation::Relation;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    TreeRnn,
    TreeRntn,
    SumNn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::TreeRnn => "tree-rnn",
            Architecture::TreeRntn => "tree-rntn",
            Architecture::SumNn => "sum-nn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonKind {
    Nn,
    Ntn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub comparison: ComparisonKind,
    pub comparison_dim: usize,
    pub vocabulary: Vec<String>,
    pub l2_lambda: f64,
    pub embedding_transform: bool,
    /// Dropout on the comparison layer input, training only.
    pub comparison_dropout: f64,
    /// Dropout on the embedding transform output, training only.
    pub transform_dropout: f64,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(
        architecture: Architecture,
        embedding_dim: usize,
        comparison: ComparisonKind,
        vocabulary: Vec<String>,
    ) -> Self {
        ModelConfig {
            architecture,
            embedding_dim,
            comparison,
            comparison_dim: 75,
            vocabulary,
            l2_lambda: 0.0,
            embedding_transform: false,
            comparison_dropout: 0.0,
            transform_dropout: 0.0,
            num_classes: Relation::COUNT,
        }
    }

    /// The comparison layer mirrors the composition function of tree models.
    pub fn matched(
        architecture: Architecture,
        embedding_dim: usize,
        vocabulary: Vec<String>,
    ) -> Self {
        let comparison = match architecture {
            Architecture::TreeRntn => ComparisonKind::Ntn,
            _ => ComparisonKind::Nn,
        };
        ModelConfig::new(architecture, embedding_dim, comparison, vocabulary)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.embedding_dim == 0 || self.comparison_dim == 0 || self.num_classes < 2 {
            return bad(format!(
                "dims must be positive (embedding {}, comparison {}, classes {})",
                self.embedding_dim, self.comparison_dim, self.num_classes
            ));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2 lambda {}", self.l2_lambda));
        }
        for rate in [self.comparison_dropout, self.transform_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("dropout rate {rate} outside [0, 1)"));
            }
        }
        if self.vocabulary.is_empty() {
            return bad("empty vocabulary".into());
        }
        Ok(())
    }
}

/// Positions of each parameter tensor in [`PairModel::params`].
#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    embeddings: usize,
    compose_w: Option<usize>,
    compose_b: Option<usize>,
    compose_t: Option<usize>,
    transform_w: Option<usize>,
    transform_b: Option<usize>,
    compare_w: usize,
    compare_b: usize,
    compare_t: Option<usize>,
    softmax_w: usize,
    softmax_b: usize,
}

/// Parameter names, shapes, and whether each is L2-regularized and an
/// embedding (different init range).
fn param_specs(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let n = cfg.embedding_dim;
    let c = cfg.comparison_dim;
    let mut specs = vec![("embeddings", vec![cfg.vocabulary.len(), n])];
    if cfg.architecture != Architecture::SumNn {
        specs.push(("compose_w", vec![n, 2 * n]));
        specs.push(("compose_b", vec![n]));
    }
    if cfg.architecture == Architecture::TreeRntn {
        specs.push(("compose_t", vec![n, n, n]));
    }
    if cfg.embedding_transform {
        specs.push(("transform_w", vec![n, n]));
        specs.push(("transform_b", vec![n]));
    }
    specs.push(("compare_w", vec![c, 2 * n]));
    specs.push(("compare_b", vec![c]));
    if cfg.comparison == ComparisonKind::Ntn {
        specs.push(("compare_t", vec![c, n, n]));
    }
    specs.push(("softmax_w", vec![cfg.num_classes, c]));
    specs.push(("softmax_b", vec![cfg.num_classes]));
    specs
}

fn layout_for(names: &[&str]) -> Layout {
    let find = |name: &str| names.iter().position(|n| *n == name);
    Layout {
        embeddings: find("embeddings").expect("embeddings"),
        compose_w: find("compose_w"),
        compose_b: find("compose_b"),
        compose_t: find("compose_t"),
        transform_w: find("transform_w"),
        transform_b: find("transform_b"),
        compare_w: find("compare_w").expect("compare_w"),
        compare_b: find("compare_b").expect("compare_b"),
        compare_t: find("compare_t"),
        softmax_w: find("softmax_w").expect("softmax_w"),
        softmax_b: find("softmax_b").expect("softmax_b"),
    }
}

/// Biases are excluded from L2.
pub fn is_regularized(name: &str) -> bool {
    !name.ends_with("_b")
}

pub const LAYER_INIT: (f64, f64) = (-0.05, 0.05);
pub const EMBEDDING_INIT: (f64, f64) = (-0.01, 0.01);

/// An expression with tokens resolved to vocabulary rows, in postorder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompiledTree {
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Leaf(usize),
    Branch(usize, usize),
}

impl CompiledTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairModel {
    config: ModelConfig,
    names: Vec<&'static str>,
    params: Vec<Tensor>,
    layout: Layout,
    vocab: HashMap<String, usize>,
}

/// Per-parameter gradient buffers matching [`PairModel::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Forward-pass record of one tree, kept for backpropagation.
struct TreeTrace {
    /// Output vector of every node, postorder.
    outputs: Vec<Vec<f64>>,
    /// Affine-part activations of composition nodes (tree models).
    affine: Vec<Vec<f64>>,
    /// Bilinear-part activations of composition nodes (TreeRNTN).
    bilinear: Vec<Vec<f64>>,
    /// Transform-layer activations and dropout scales; empty for branches.
    transform: Vec<Vec<f64>>,
    transform_mask: Vec<Vec<f64>>,
}

struct PairTrace {
    left: TreeTrace,
    right: TreeTrace,
    /// Comparison input after dropout.
    input: Vec<f64>,
    input_mask: Vec<f64>,
    pre_affine: Vec<f64>,
    pre_bilinear: Vec<f64>,
    features: Vec<f64>,
    logits: Vec<f64>,
}

fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[i] += lᵀ T[i] r` for a `(out.len(), l.len(), r.len())` tensor.
fn bilinear_add(t: &[f64], l: &[f64], r: &[f64], out: &mut [f64]) {
    let slice = l.len() * r.len();
    for (o, ti) in out.iter_mut().zip(t.chunks_exact(slice)) {
        let mut acc = 0.0;
        for (&lj, row) in l.iter().zip(ti.chunks_exact(r.len())) {
            if lj != 0.0 {
                acc += lj * row.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        *o += acc;
    }
}

/// Backward of `bilinear_add` for upstream gradient `g`.
fn bilinear_backward(
    t: &[f64],
    l: &[f64],
    r: &[f64],
    g: &[f64],
    dt: &mut [f64],
    dl: &mut [f64],
    dr: &mut [f64],
) {
    let slice = l.len() * r.len();
    for ((&gi, ti), dti) in g
        .iter()
        .zip(t.chunks_exact(slice))
        .zip(dt.chunks_exact_mut(slice))
    {
        if gi == 0.0 {
            continue;
        }
        for (j, (row, drow)) in ti
            .chunks_exact(r.len())
            .zip(dti.chunks_exact_mut(r.len()))
            .enumerate()
        {
            let glj = gi * l[j];
            let mut acc = 0.0;
            for k in 0..r.len() {
                drow[k] += glj * r[k];
                acc += row[k] * r[k];
                dr[k] += glj * row[k];
            }
            dl[j] += gi * acc;
        }
    }
}

/// `dw += g ⊗ x`, `dx += wᵀ g`.
fn affine_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], dx: &mut [f64]) {
    let cols = x.len();
    for ((&gi, row), drow) in g
        .iter()
        .zip(w.chunks_exact(cols))
        .zip(dw.chunks_exact_mut(cols))
    {
        if gi == 0.0 {
            continue;
        }
        for k in 0..cols {
            drow[k] += gi * x[k];
            dx[k] += gi * row[k];
        }
    }
}

fn dropout_mask(rate: f64, len: usize, rng: Option<&mut Rng>) -> Vec<f64> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            (0..len)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        }
        _ => Vec::new(),
    }
}

impl PairModel {
    /// Fresh model with uniform initialization: embeddings in (-0.01, 0.01),
    /// every other parameter in (-0.05, 0.05).
    pub fn new(config: ModelConfig, seed: u64) -> Result<PairModel> {
        config.validate()?;
        let mut rng = rng::sub_rng(seed, "init");
        let specs = param_specs(&config);
        let names: Vec<&'static str> = specs.iter().map(|(n, _)| *n).collect();
        let params = specs
            .iter()
            .map(|(name, shape)| {
                let range = if *name == "embeddings" {
                    EMBEDDING_INIT
                } else {
                    LAYER_INIT
                };
                init_uniform_with(shape, range, &mut rng)
            })
            .collect();
        Self::assemble(config, names, params)
    }

    fn assemble(
        config: ModelConfig,
        names: Vec<&'static str>,
        params: Vec<Tensor>,
    ) -> Result<PairModel> {
        let mut vocab = HashMap::new();
        for (i, w) in config.vocabulary.iter().enumerate() {
            if vocab.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary token {w:?}"
                )));
            }
        }
        let layout = layout_for(&names);
        Ok(PairModel {
            config,
            names,
            params,
            layout,
            vocab,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<PairModel> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, shape), (got_name, t)) in specs.into_iter().zip(named) {
            if name != got_name || shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Self::assemble(config, names, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .params
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
        }
    }

    pub fn set_l2_lambda(&mut self, lambda: f64) {
        self.config.l2_lambda = lambda;
    }

    pub fn compile(&self, e: &Expression) -> Result<CompiledTree> {
        let mut nodes = Vec::new();
        self.compile_into(e, &mut nodes)?;
        Ok(CompiledTree { nodes })
    }

    fn compile_into(&self, e: &Expression, nodes: &mut Vec<Node>) -> Result<usize> {
        let node = match e {
            Expression::Leaf(t) => Node::Leaf(
                *self
                    .vocab
                    .get(t)
                    .ok_or_else(|| Error::UnknownToken(t.clone()))?,
            ),
            Expression::Branch(l, r) => {
                let l = self.compile_into(l, nodes)?;
                let r = self.compile_into(r, nodes)?;
                Node::Branch(l, r)
            }
        };
        nodes.push(node);
        Ok(nodes.len() - 1)
    }

    fn p(&self, i: usize) -> &[f64] {
        self.params[i].data()
    }

    fn leaf_vector(&self, token: usize, trace: &mut TreeTrace, rng: Option<&mut Rng>) -> Vec<f64> {
        let n = self.config.embedding_dim;
        let raw = &self.p(self.layout.embeddings)[token * n..(token + 1) * n];
        let (Some(w), Some(b)) = (self.layout.transform_w, self.layout.transform_b) else {
            trace.transform.push(Vec::new());
            trace.transform_mask.push(Vec::new());
            return raw.to_vec();
        };
        let mut h = self.p(b).to_vec();
        matvec_add(self.p(w), raw, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mask = dropout_mask(self.config.transform_dropout, n, rng);
        let out = if mask.is_empty() {
            h.clone()
        } else {
            h.iter().zip(&mask).map(|(a, m)| a * m).collect()
        };
        trace.transform.push(h);
        trace.transform_mask.push(mask);
        out
    }

    fn encode(&self, tree: &CompiledTree, mut rng: Option<&mut Rng>) -> TreeTrace {
        let n = self.config.embedding_dim;
        let mut tr = TreeTrace {
            outputs: Vec::with_capacity(tree.nodes.len()),
            affine: Vec::new(),
            bilinear: Vec::new(),
            transform: Vec::new(),
            transform_mask: Vec::new(),
        };
        for node in &tree.nodes {
            let out = match *node {
                Node::Leaf(tok) => {
                    let v = self.leaf_vector(tok, &mut tr, rng.as_deref_mut());
                    tr.affine.push(Vec::new());
                    tr.bilinear.push(Vec::new());
                    v
                }
                Node::Branch(l, r) => {
                    tr.transform.push(Vec::new());
                    tr.transform_mask.push(Vec::new());
                    match self.config.architecture {
                        Architecture::SumNn => {
                            tr.affine.push(Vec::new());
                            tr.bilinear.push(Vec::new());
                            tr.outputs[l]
                                .iter()
                                .zip(&tr.outputs[r])
                                .map(|(a, b)| a + b)
                                .collect()
                        }
                        arch => {
                            let (xl, xr) = (&tr.outputs[l], &tr.outputs[r]);
                            let w = self.p(self.layout.compose_w.expect("composition weights"));
                            let mut a = self
                                .p(self.layout.compose_b.expect("composition bias"))
                                .to_vec();
                            matvec_add(w, &[xl.as_slice(), xr.as_slice()].concat(), &mut a);
                            a.iter_mut().for_each(|v| *v = v.tanh());
                            let mut out = a.clone();
                            let mut bl = Vec::new();
                            if arch == Architecture::TreeRntn {
                                let mut u = vec![0.0; n];
                                bilinear_add(
                                    self.p(self.layout.compose_t.expect("tensor")),
                                    xl,
                                    xr,
                                    &mut u,
                                );
                                u.iter_mut().for_each(|v| *v = v.tanh());
                                out.iter_mut().zip(&u).for_each(|(o, t)| *o += t);
                                bl = u;
                            }
                            tr.affine.push(a);
                            tr.bilinear.push(bl);
                            out
                        }
                    }
                }
            };
            tr.outputs.push(out);
        }
        tr
    }

    fn forward(
        &self,
        t1: &CompiledTree,
        t2: &CompiledTree,
        mut rng: Option<&mut Rng>,
    ) -> PairTrace {
        let left = self.encode(t1, rng.as_deref_mut());
        let right = self.encode(t2, rng.as_deref_mut());
        let n = self.config.embedding_dim;
        let mut input = [
            left.outputs.last().expect("non-empty tree").as_slice(),
            right.outputs.last().expect("non-empty tree").as_slice(),
        ]
        .concat();
        let input_mask = dropout_mask(self.config.comparison_dropout, 2 * n, rng);
        if !input_mask.is_empty() {
            input.iter_mut().zip(&input_mask).for_each(|(v, m)| *v *= m);
        }

        let mut pre_affine = self.p(self.layout.compare_b).to_vec();
        matvec_add(self.p(self.layout.compare_w), &input, &mut pre_affine);
        let mut features: Vec<f64> = pre_affine.iter().map(|&z| leaky(z)).collect();
        let mut pre_bilinear = Vec::new();
        if let Some(t) = self.layout.compare_t {
            pre_bilinear = vec![0.0; self.config.comparison_dim];
            bilinear_add(self.p(t), &input[..n], &input[n..], &mut pre_bilinear);
            features
                .iter_mut()
                .zip(&pre_bilinear)
                .for_each(|(f, &z)| *f += leaky(z));
        }

        let mut logits = self.p(self.layout.softmax_b).to_vec();
        matvec_add(self.p(self.layout.softmax_w), &features, &mut logits);
        PairTrace {
            left,
            right,
            input,
            input_mask,
            pre_affine,
            pre_bilinear,
            features,
            logits,
        }
    }

    /// Sentence vector of an expression. `rng` enables dropout (training).
    pub fn embed_expression(&self, e: &Expression, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        let tree = self.compile(e)?;
        let mut trace = self.encode(&tree, rng);
        Ok(trace.outputs.pop().expect("non-empty tree"))
    }

    /// Label distribution and comparison features. `rng` enables dropout.
    pub fn classify_pair(
        &self,
        e1: &Expression,
        e2: &Expression,
        rng: Option<&mut Rng>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (t1, t2) = (self.compile(e1)?, self.compile(e2)?);
        let trace = self.forward(&t1, &t2, rng);
        Ok((softmax(&trace.logits), trace.features))
    }

    /// Label distribution in evaluation mode.
    pub fn probabilities(&self, t1: &CompiledTree, t2: &CompiledTree) -> Vec<f64> {
        softmax(&self.forward(t1, t2, None).logits)
    }

    /// Most probable class, ties to the lowest index.
    pub fn predict(&self, t1: &CompiledTree, t2: &CompiledTree) -> usize {
        argmax(&self.probabilities(t1, t2))
    }

    /// Adds the NLL gradient of one example into `grads` (no L2) and returns
    /// the NLL.
    pub fn accumulate_gradient(
        &self,
        t1: &CompiledTree,
        t2: &CompiledTree,
        gold: usize,
        rng: Option<&mut Rng>,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.accumulate_gradient_with_prediction(t1, t2, gold, rng, grads)
            .map(|(loss, _)| loss)
    }

    /// As [`PairModel::accumulate_gradient`], also returning the argmax class
    /// of the same forward pass.
    pub fn accumulate_gradient_with_prediction(
        &self,
        t1: &CompiledTree,
        t2: &CompiledTree,
        gold: usize,
        rng: Option<&mut Rng>,
        grads: &mut Gradients,
    ) -> Result<(f64, usize)> {
        if gold >= self.config.num_classes {
            return Err(Error::ClassOutOfRange {
                index: gold,
                classes: self.config.num_classes,
            });
        }
        let tr = self.forward(t1, t2, rng);
        let (probs, loss) = softmax_nll(&tr.logits, gold)?;
        let predicted = argmax(&probs);
        let n = self.config.embedding_dim;
        let c = self.config.comparison_dim;
        let l = &self.layout;
        let g = &mut grads.tensors;

        // softmax + NLL
        let mut dlogits = probs;
        dlogits[gold] -= 1.0;
        let mut dfeat = vec![0.0; c];
        affine_backward(
            self.p(l.softmax_w),
            &tr.features,
            &dlogits,
            g[l.softmax_w].data_mut(),
            &mut dfeat,
        );
        add_into(g[l.softmax_b].data_mut(), &dlogits);

        // comparison layer
        let mut dinput = vec![0.0; 2 * n];
        let dz: Vec<f64> = dfeat
            .iter()
            .zip(&tr.pre_affine)
            .map(|(d, &z)| d * leaky_slope(z))
            .collect();
        affine_backward(
            self.p(l.compare_w),
            &tr.input,
            &dz,
            g[l.compare_w].data_mut(),
            &mut dinput,
        );
        add_into(g[l.compare_b].data_mut(), &dz);
        if let Some(ti) = l.compare_t {
            let dz: Vec<f64> = dfeat
                .iter()
                .zip(&tr.pre_bilinear)
                .map(|(d, &z)| d * leaky_slope(z))
                .collect();
            let (dl, dr) = dinput.split_at_mut(n);
            bilinear_backward(
                self.p(ti),
                &tr.input[..n],
                &tr.input[n..],
                &dz,
                g[ti].data_mut(),
                dl,
                dr,
            );
        }
        if !tr.input_mask.is_empty() {
            dinput
                .iter_mut()
                .zip(&tr.input_mask)
                .for_each(|(d, m)| *d *= m);
        }

        self.backward_tree(t1, &tr.left, &dinput[..n], grads);
        self.backward_tree(t2, &tr.right, &dinput[n..], grads);
        Ok((loss, predicted))
    }

    fn backward_tree(
        &self,
        tree: &CompiledTree,
        tr: &TreeTrace,
        droot: &[f64],
        grads: &mut Gradients,
    ) {
        let n = self.config.embedding_dim;
        let l = &self.layout;
        let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes.len()];
        *deltas.last_mut().expect("non-empty tree") = droot.to_vec();
        for idx in (0..tree.nodes.len()).rev() {
            let d = std::mem::take(&mut deltas[idx]);
            if d.is_empty() {
                continue;
            }
            match tree.nodes[idx] {
                Node::Leaf(tok) => self.backward_leaf(tok, tr, idx, d, grads),
                Node::Branch(left, right) => {
                    let mut dl = vec![0.0; n];
                    let mut dr = vec![0.0; n];
                    if self.config.architecture == Architecture::SumNn {
                        dl.copy_from_slice(&d);
                        dr.copy_from_slice(&d);
                    } else {
                        let (xl, xr) = (&tr.outputs[left], &tr.outputs[right]);
                        let wi = l.compose_w.expect("composition weights");
                        let dz: Vec<f64> = d
                            .iter()
                            .zip(&tr.affine[idx])
                            .map(|(g, a)| g * (1.0 - a * a))
                            .collect();
                        let x = [xl.as_slice(), xr.as_slice()].concat();
                        let mut dx = vec![0.0; 2 * n];
                        affine_backward(self.p(wi), &x, &dz, grads.tensors[wi].data_mut(), &mut dx);
                        add_into(grads.tensors[l.compose_b.expect("bias")].data_mut(), &dz);
                        dl.copy_from_slice(&dx[..n]);
                        dr.copy_from_slice(&dx[n..]);
                        if let Some(ti) = l.compose_t {
                            let du: Vec<f64> = d
                                .iter()
                                .zip(&tr.bilinear[idx])
                                .map(|(g, u)| g * (1.0 - u * u))
                                .collect();
                            bilinear_backward(
                                self.p(ti),
                                xl,
                                xr,
                                &du,
                                grads.tensors[ti].data_mut(),
                                &mut dl,
                                &mut dr,
                            );
                        }
                    }
                    accumulate_delta(&mut deltas[left], &dl);
                    accumulate_delta(&mut deltas[right], &dr);
                }
            }
        }
    }

    fn backward_leaf(
        &self,
        tok: usize,
        tr: &TreeTrace,
        idx: usize,
        mut d: Vec<f64>,
        grads: &mut Gradients,
    ) {
        let n = self.config.embedding_dim;
        let l = &self.layout;
        let draw = if let (Some(wi), Some(bi)) = (l.transform_w, l.transform_b) {
            let mask = &tr.transform_mask[idx];
            if !mask.is_empty() {
                d.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
            }
            let h = &tr.transform[idx];
            let dz: Vec<f64> = d.iter().zip(h).map(|(g, a)| g * (1.0 - a * a)).collect();
            let raw = &self.p(l.embeddings)[tok * n..(tok + 1) * n];
            let mut draw = vec![0.0; n];
            affine_backward(
                self.p(wi),
                raw,
                &dz,
                grads.tensors[wi].data_mut(),
                &mut draw,
            );
            add_into(grads.tensors[bi].data_mut(), &dz);
            draw
        } else {
            d
        };
        add_into(
            &mut grads.tensors[l.embeddings].data_mut()[tok * n..(tok + 1) * n],
            &draw,
        );
    }

    /// `(λ/2) Σ ‖W‖²` over regularized parameters.
    pub fn l2_penalty(&self) -> f64 {
        let lambda = self.config.l2_lambda;
        if lambda == 0.0 {
            return 0.0;
        }
        0.5 * lambda
            * self
                .names
                .iter()
                .zip(&self.params)
                .filter(|(n, _)| is_regularized(n))
                .map(|(_, p)| p.squared_norm())
                .sum::<f64>()
    }

    /// Adds `λ W` to the gradient of every regularized parameter.
    pub fn add_l2_gradient(&self, grads: &mut Gradients) {
        let lambda = self.config.l2_lambda;
        if lambda == 0.0 {
            return;
        }
        for ((name, p), g) in self.names.iter().zip(&self.params).zip(&mut grads.tensors) {
            if is_regularized(name) {
                g.data_mut()
                    .iter_mut()
                    .zip(p.data())
                    .for_each(|(g, w)| *g += lambda * w);
            }
        }
    }

    /// Full loss (NLL + L2) of one example and its exact gradient.
    pub fn backward_pair(
        &self,
        e1: &Expression,
        e2: &Expression,
        gold: Relation,
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Gradients)> {
        let (t1, t2) = (self.compile(e1)?, self.compile(e2)?);
        let mut grads = self.zero_gradients();
        let nll = self.accumulate_gradient(&t1, &t2, gold.index(), rng, &mut grads)?;
        self.add_l2_gradient(&mut grads);
        Ok((nll + self.l2_penalty(), grads))
    }

    /// NLL + L2 of one example without gradients.
    pub fn loss(
        &self,
        t1: &CompiledTree,
        t2: &CompiledTree,
        gold: usize,
        rng: Option<&mut Rng>,
    ) -> Result<f64> {
        let tr = self.forward(t1, t2, rng);
        let (_, nll) = softmax_nll(&tr.logits, gold)?;
        Ok(nll + self.l2_penalty())
    }

    /// All parameters as one flat vector, in [`PairModel::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for t in &mut self.params {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn accumulate_delta(slot: &mut Vec<f64>, d: &[f64]) {
    if slot.is_empty() {
        slot.extend_from_slice(d);
    } else {
        add_into(slot, d);
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Serialized model: configuration, parameters, and optionally the optimizer
/// accumulators so training can resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub rng: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub optimizer: Option<Vec<OptimizerState>>,
}

impl Checkpoint {
    pub fn from_model(
        model: &PairModel,
        seed: u64,
        optimizer: Option<Vec<OptimizerState>>,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            rng: rng::RNG_NAME.to_string(),
            seed,
            config: model.config.clone(),
            params: model
                .names
                .iter()
                .zip(&model.params)
                .map(|(n, t)| NamedTensor {
                    name: n.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
            optimizer,
        }
    }

    pub fn to_model(&self) -> Result<PairModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut named = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let t = Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.name)))?;
            named.push((p.name.clone(), t));
        }
        let model = PairModel::from_parts(self.config.clone(), named)?;
        if let Some(states) = &self.optimizer {
            let ok = states.len() == model.params.len()
                && states.iter().zip(&model.params).all(|(s, p)| {
                    s.mean_sq_grad.shape() == p.shape() && s.mean_sq_update.shape() == p.shape()
                });
            if !ok {
                return Err(Error::Checkpoint(
                    "optimizer state does not match parameters".into(),
                ));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Builds a random binary tree with `leaves` leaves drawn from `vocabulary`.
pub fn random_tree(vocabulary: &[String], leaves: usize, rng: &mut Rng) -> Expression {
    assert!(leaves > 0 && !vocabulary.is_empty());
    if leaves == 1 {
        return Expression::leaf(vocabulary[rng.gen_range(0..vocabulary.len())].clone());
    }
    let split = rng.gen_range(1..leaves);
    Expression::branch(
        random_tree(vocabulary, split, rng),
        random_tree(vocabulary, leaves - split, rng),
    )
}

/// Max relative error between the analytic gradient of the full example loss
/// (NLL + L2) and central finite differences, over every parameter.
///
/// With `dropout_seed`, the same dropout masks are replayed for every loss
/// evaluation; without it the model runs in evaluation mode.
pub fn gradient_check(
    model: &PairModel,
    e1: &Expression,
    e2: &Expression,
    gold: Relation,
    dropout_seed: Option<u64>,
    step: f64,
) -> Result<f64> {
    let (t1, t2) = (model.compile(e1)?, model.compile(e2)?);
    let mask_rng = || dropout_seed.map(rng::seeded);
    let mut grads = model.zero_gradients();
    model.accumulate_gradient(&t1, &t2, gold.index(), mask_rng().as_mut(), &mut grads)?;
    model.add_l2_gradient(&mut grads);
    let point = model.flat_params();
    let mut probe = model.clone();
    let mut failure = None;
    let err = crate::nn::grad_check(
        |x| {
            probe.set_flat_params(x);
            match probe.loss(&t1, &t2, gold.index(), mask_rng().as_mut()) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &grads.flatten(),
        &point,
        step,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}

/// Replaces every parameter with uniform draws from `(-range, range)`.
pub fn randomize_params(model: &mut PairModel, range: f64, seed: u64) {
    let mut rng = rng::seeded(seed);
    for p in &mut model.params {
        for v in p.data_mut() {
            *v = rng.gen_range(-range..range);
        }
    }
}
