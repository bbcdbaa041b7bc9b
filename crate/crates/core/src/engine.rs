//! Forward evaluation and reverse-mode gradients of validated graphs.
//!
//! Nodes run in topological order; every node output is checked for
//! non-finite values. The cross-entropy loss is computed from the logits
//! feeding the loss softmax (log-sum-exp), and its gradient enters the
//! reverse sweep at those logits as `(p - y) / m`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::graph::{EntityKind, Init, OpKind, ValidatedGraph};
use crate::precise::PreciseLoss;
use crate::rng::{stream, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("graph must declare exactly one input to be fed, found {0}")]
    InputArity(usize),
    #[error("input `{name}` expects shape {expected}, got {found:?}")]
    InputShape {
        name: String,
        expected: String,
        found: Vec<usize>,
    },
    #[error("labels must have shape {expected:?}, got {found:?}")]
    LabelShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing value for param `{0}`")]
    MissingParam(String),
    #[error("param `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("numeric overflow: non-finite values in `{0}`")]
    NumericOverflow(String),
}

/// Parameter values keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet(BTreeMap<String, Tensor>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalars across all params.
    pub fn num_scalars(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Checks that every param of `graph` is present with its declared shape.
    pub fn check_against(&self, graph: &ValidatedGraph) -> Result<(), EngineError> {
        for decl in &graph.spec().params {
            let expected = decl.shape.bind(0);
            let t = self
                .get(&decl.name)
                .ok_or_else(|| EngineError::MissingParam(decl.name.clone()))?;
            if t.shape() != expected.as_slice() {
                return Err(EngineError::ParamShape {
                    name: decl.name.clone(),
                    expected,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be a positive finite number".into());
        }
        if self.steps == 0 {
            return Err("steps must be positive".into());
        }
        if self.eval_interval == 0 || self.eval_interval > self.steps {
            return Err("eval_interval must be in 1..=steps".into());
        }
        if self.eval_batch_size == 0 {
            return Err("eval_batch_size must be positive".into());
        }
        Ok(())
    }
}

/// `(fan_in, fan_out)` of a concrete param shape.
fn fans(dims: &[usize]) -> (usize, usize) {
    match dims {
        [n] => (*n, *n),
        _ => {
            let (last, rest) = dims.split_last().expect("non-empty");
            (rest.iter().product(), *last)
        }
    }
}

/// Fresh parameters for `graph`.
///
/// Params are visited in name order. Zeros params consume no draws; each
/// glorot param takes one uniform draw per scalar, in row-major order, from
/// the `PARAM_INIT` stream of `seed`.
pub fn init_params(graph: &ValidatedGraph, seed: u64) -> ParamSet {
    let mut rng = SeededRng::with_stream(seed, stream::PARAM_INIT);
    let mut decls: Vec<_> = graph.spec().params.iter().collect();
    decls.sort_by(|a, b| a.name.cmp(&b.name));
    let mut params = ParamSet::new();
    for decl in decls {
        let dims = decl.shape.bind(0);
        let t = match decl.init {
            Init::Zeros => Tensor::zeros(&dims),
            Init::Glorot => {
                let (fan_in, fan_out) = fans(&dims);
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = dims.iter().product();
                let data = (0..n).map(|_| rng.uniform(-r, r)).collect();
                Tensor::from_parts(dims, data)
            }
        };
        params.insert(decl.name.clone(), t);
    }
    params
}

/// Evaluated graph values, indexed by entity id.
struct Values<'a> {
    input: &'a Tensor,
    params: Vec<Option<&'a Tensor>>,
    nodes: Vec<Option<Tensor>>,
}

impl<'a> Values<'a> {
    fn get(&self, graph: &ValidatedGraph, entity: usize) -> &Tensor {
        match graph.entities()[entity].1 {
            EntityKind::Input(_) => self.input,
            EntityKind::Param(p) => self.params[p].expect("param bound"),
            EntityKind::Node(n) => self.nodes[n].as_ref().expect("evaluated in order"),
        }
    }
}

fn bind_input<'a>(graph: &ValidatedGraph, input: &'a Tensor) -> Result<&'a Tensor, EngineError> {
    let inputs = &graph.spec().inputs;
    if inputs.len() != 1 {
        return Err(EngineError::InputArity(inputs.len()));
    }
    let decl = &inputs[0];
    let expected = decl.shape.bind(input.shape()[0]);
    if input.shape() != expected.as_slice() {
        return Err(EngineError::InputShape {
            name: decl.name.clone(),
            expected: decl.shape.to_string(),
            found: input.shape().to_vec(),
        });
    }
    Ok(input)
}

fn evaluate<'a>(
    graph: &ValidatedGraph,
    params: &'a ParamSet,
    input: &'a Tensor,
) -> Result<Values<'a>, EngineError> {
    params.check_against(graph)?;
    let input = bind_input(graph, input)?;
    let spec = graph.spec();
    let mut values = Values {
        input,
        params: spec.params.iter().map(|d| params.get(&d.name)).collect(),
        nodes: vec![None; spec.nodes.len()],
    };
    for &n in graph.topo_order() {
        let node = &spec.nodes[n];
        let ops = graph.node_operands(n);
        let out = {
            let arg = |i: usize| values.get(graph, ops[i]);
            match node.op {
                OpKind::MatMul => matmul(arg(0), arg(1)),
                OpKind::AddBias => add_bias(arg(0), arg(1)),
                OpKind::Relu => relu(arg(0)),
                OpKind::Softmax => softmax_rows(arg(0)),
            }
        };
        if !out.is_finite() {
            return Err(EngineError::NumericOverflow(node.name.clone()));
        }
        values.nodes[n] = Some(out);
    }
    Ok(values)
}

/// Values of every node for one input batch.
pub fn forward(
    graph: &ValidatedGraph,
    params: &ParamSet,
    input: &Tensor,
) -> Result<BTreeMap<String, Tensor>, EngineError> {
    let values = evaluate(graph, params, input)?;
    Ok(graph
        .spec()
        .nodes
        .iter()
        .zip(values.nodes)
        .map(|(d, v)| (d.name.clone(), v.expect("all nodes evaluated")))
        .collect())
}

/// The output node's value (the class probabilities for a softmax output).
pub fn predict(
    graph: &ValidatedGraph,
    params: &ParamSet,
    input: &Tensor,
) -> Result<Tensor, EngineError> {
    let mut values = evaluate(graph, params, input)?;
    let out = graph.output_entity();
    let EntityKind::Node(n) = graph.entities()[out].1 else {
        unreachable!("output is a node")
    };
    Ok(values.nodes[n].take().expect("evaluated"))
}

fn check_labels(graph: &ValidatedGraph, batch: &LabeledBatch) -> Result<(), EngineError> {
    let expected = graph.entity_shape(graph.loss_entity()).bind(batch.len());
    if batch.labels().shape() != expected.as_slice() {
        return Err(EngineError::LabelShape {
            expected,
            found: batch.labels().shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean cross-entropy from the logits feeding the loss softmax.
fn cross_entropy_from_logits(logits: &Tensor, labels: &Tensor) -> f64 {
    let m = logits.rows();
    let mut total = 0.0;
    for (z, y) in logits.row_iter().zip(labels.row_iter()) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (zj, yj) in z.iter().zip(y) {
            if *yj != 0.0 {
                total -= yj * (zj - lse);
            }
        }
    }
    total / m as f64
}

fn loss_logits_entity(graph: &ValidatedGraph) -> usize {
    let EntityKind::Node(n) = graph.entities()[graph.loss_entity()].1 else {
        unreachable!("loss target is a node")
    };
    graph.node_operands(n)[0]
}

/// Mean cross-entropy of the batch, forward only.
pub fn loss(
    graph: &ValidatedGraph,
    params: &ParamSet,
    batch: &LabeledBatch,
) -> Result<f64, EngineError> {
    check_labels(graph, batch)?;
    let values = evaluate(graph, params, batch.images())?;
    let logits = values.get(graph, loss_logits_entity(graph));
    let l = cross_entropy_from_logits(logits, batch.labels());
    if l.is_finite() {
        Ok(l)
    } else {
        Err(EngineError::NumericOverflow("loss".into()))
    }
}

/// Mean cross-entropy and its gradient with respect to every param.
pub fn loss_and_grads(
    graph: &ValidatedGraph,
    params: &ParamSet,
    batch: &LabeledBatch,
) -> Result<(f64, ParamSet), EngineError> {
    check_labels(graph, batch)?;
    let values = evaluate(graph, params, batch.images())?;
    let logits_entity = loss_logits_entity(graph);
    let loss_entity = graph.loss_entity();
    let l = cross_entropy_from_logits(values.get(graph, logits_entity), batch.labels());
    if !l.is_finite() {
        return Err(EngineError::NumericOverflow("loss".into()));
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; graph.entities().len()];
    let probs = values.get(graph, loss_entity);
    let m = batch.len() as f64;
    let seed: Vec<f64> = probs
        .data()
        .iter()
        .zip(batch.labels().data())
        .map(|(p, y)| (p - y) / m)
        .collect();
    accumulate(
        &mut grads[logits_entity],
        Tensor::from_parts(probs.shape().to_vec(), seed),
    );

    let spec = graph.spec();
    for &n in graph.topo_order().iter().rev() {
        let entity = graph.node_entity(n);
        if entity == loss_entity {
            continue;
        }
        let Some(upstream) = grads[entity].take() else {
            continue;
        };
        let ops = graph.node_operands(n);
        let arg = |i: usize| values.get(graph, ops[i]);
        match spec.nodes[n].op {
            OpKind::MatMul => {
                let da = matmul_a_bt(&upstream, arg(1));
                let db = matmul_at_b(arg(0), &upstream);
                accumulate(&mut grads[ops[0]], da);
                accumulate(&mut grads[ops[1]], db);
            }
            OpKind::AddBias => {
                let db = column_sums(&upstream);
                accumulate(&mut grads[ops[1]], db);
                accumulate(&mut grads[ops[0]], upstream);
            }
            OpKind::Relu => {
                let mut g = upstream;
                for (gi, xi) in g.data_mut().iter_mut().zip(arg(0).data()) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                accumulate(&mut grads[ops[0]], g);
            }
            OpKind::Softmax => {
                let p = values.nodes[n].as_ref().expect("evaluated");
                accumulate(&mut grads[ops[0]], softmax_backward(p, &upstream));
            }
        }
    }

    let mut out = ParamSet::new();
    for (i, decl) in spec.params.iter().enumerate() {
        let entity = spec.inputs.len() + i;
        let g = grads[entity]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&decl.shape.bind(0)));
        if !g.is_finite() {
            return Err(EngineError::NumericOverflow(format!(
                "gradient of {}",
                decl.name
            )));
        }
        out.insert(decl.name.clone(), g);
    }
    Ok((l, out))
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// `p - lr * g` for every param.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, learning_rate: f64) -> ParamSet {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, learning_rate);
    next
}

pub fn sgd_step_in_place(params: &mut ParamSet, grads: &ParamSet, learning_rate: f64) {
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient for unknown param `{name}`"));
        assert_eq!(p.shape(), g.shape(), "gradient shape for `{name}`");
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= learning_rate * gv;
        }
    }
}

/// Largest relative error between analytic gradients and central
/// differences over every param coordinate. The relative error of one
/// coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// The two losses of each difference are evaluated in double-double
/// arithmetic, so `n` is limited by `epsilon` (truncation) rather than by
/// the rounding of an `f64` loss.
pub fn grad_check(
    graph: &ValidatedGraph,
    params: &ParamSet,
    batch: &LabeledBatch,
    epsilon: f64,
) -> Result<f64, EngineError> {
    let (_, analytic) = loss_and_grads(graph, params, batch)?;
    let precise = PreciseLoss::new(graph, params, batch);
    let mut worst = 0.0f64;
    for (p, decl) in graph.spec().params.iter().enumerate() {
        let a = analytic.get(&decl.name).expect("gradient for every param");
        for (i, &ai) in a.data().iter().enumerate() {
            let plus = precise.perturbed(p, i, epsilon);
            let minus = precise.perturbed(p, i, -epsilon);
            let numeric = (plus - minus).to_f64() / (2.0 * epsilon);
            let rel = (ai - numeric).abs() / ai.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a.row(i).iter().enumerate().take(k) {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in row.iter_mut().zip(b.row(p)) {
                *o += aip * bpj;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// `g · bᵀ` for `g: [m, n]`, `b: [k, n]`.
fn matmul_a_bt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (g.rows(), b.rows());
    let mut out = Vec::with_capacity(m * k);
    for gi in g.row_iter() {
        for bp in b.row_iter() {
            out.push(gi.iter().zip(bp).map(|(x, y)| x * y).sum());
        }
    }
    Tensor::from_parts(vec![m, k], out)
}

/// `aᵀ · g` for `a: [m, k]`, `g: [m, n]`.
fn matmul_at_b(a: &Tensor, g: &Tensor) -> Tensor {
    let (k, n) = (a.cols(), g.cols());
    let mut out = vec![0.0; k * n];
    for (ai, gi) in a.row_iter().zip(g.row_iter()) {
        for (p, &aip) in ai.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &gij) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += aip * gij;
            }
        }
    }
    Tensor::from_parts(vec![k, n], out)
}

fn add_bias(a: &Tensor, bias: &Tensor) -> Tensor {
    let mut out = a.clone();
    let n = bias.len();
    for row in out.data_mut().chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    out
}

fn column_sums(g: &Tensor) -> Tensor {
    let n = g.cols();
    let mut sums = vec![0.0; n];
    for row in g.row_iter() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Tensor::from_parts(vec![n], sums)
}

fn relu(a: &Tensor) -> Tensor {
    let data = a
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    let n = a.cols();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn softmax_backward(p: &Tensor, g: &Tensor) -> Tensor {
    let n = p.cols();
    let mut out = Vec::with_capacity(p.len());
    for (pr, gr) in p.data().chunks(n).zip(g.data().chunks(n)) {
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        out.extend(pr.iter().zip(gr).map(|(pi, gi)| pi * (gi - dot)));
    }
    Tensor::from_parts(p.shape().to_vec(), out)
}
