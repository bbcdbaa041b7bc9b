//! Double-double evaluation of the training loss, for finite differences.
//!
//! A central difference divides a loss change of size about `eps * |g|` by
//! `2 * eps`; in plain `f64` the loss itself carries an absolute error near
//! one ulp, which swamps small gradients. Here every value is an unevaluated
//! sum `hi + lo` of two `f64`s (about 106 significant bits). Perturbing one
//! param coordinate only recomputes the columns that actually change.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::data::LabeledBatch;
use crate::engine::ParamSet;
use crate::graph::{EntityKind, OpKind, ValidatedGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn from_sum((hi, lo): (f64, f64)) -> Dd {
        Dd { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::from_sum(quick_two_sum(p, e + self.lo * b))
    }

    fn div_f64(self, b: f64) -> Dd {
        self / Dd::from(b)
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        assert!(self.hi < 709.0, "exp overflow");
        const HALVINGS: i32 = 9;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).scale_pow2(-HALVINGS);
        // exp(r) - 1 by Taylor series; |r| < 7e-4 so 12 terms are plenty
        let mut term = r;
        let mut sum = r;
        for i in 2..=12 {
            term = (term * r).div_f64(f64::from(i));
            sum = sum + term;
        }
        // (1 + s)^2 - 1 = 2s + s^2 keeps the small part exact while squaring
        for _ in 0..HALVINGS {
            sum = sum.mul_f64(2.0) + sum * sum;
        }
        (sum + Dd::ONE).scale_pow2(k as i32)
    }

    pub(crate) fn ln(self) -> Dd {
        assert!(self.hi > 0.0, "ln of non-positive value");
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Dd {
        Dd { hi, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::from_sum(quick_two_sum(s, e + f))
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::from_sum(quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi)))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        Dd::from_sum(quick_two_sum(q1, q2)) + Dd::from(q3)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&o.lo),
            other => other,
        }
    }
}

/// Row-major matrix view of any value: rank-1 values are a single row.
#[derive(Debug, Clone)]
struct DMat {
    cols: usize,
    data: Vec<Dd>,
}

impl DMat {
    fn from_f64(dims: &[usize], values: &[f64]) -> DMat {
        let cols = if dims.len() == 1 {
            dims[0]
        } else {
            dims[1..].iter().product()
        };
        DMat {
            cols,
            data: values.iter().map(|&v| Dd::from(v)).collect(),
        }
    }

    fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    fn at(&self, r: usize, c: usize) -> Dd {
        self.data[r * self.cols + c]
    }
}

/// Which columns of a value differ from the unperturbed evaluation.
#[derive(Debug, Clone)]
enum Cols {
    Some(Vec<usize>),
    All,
}

impl Cols {
    fn union(a: &Cols, b: &Cols) -> Cols {
        match (a, b) {
            (Cols::Some(x), Cols::Some(y)) => {
                let mut v: Vec<usize> = x.iter().chain(y).copied().collect();
                v.sort_unstable();
                v.dedup();
                Cols::Some(v)
            }
            _ => Cols::All,
        }
    }

    fn list(&self, n: usize) -> Vec<usize> {
        match self {
            Cols::Some(v) => v.clone(),
            Cols::All => (0..n).collect(),
        }
    }
}

fn matmul_col(a: &DMat, b: &DMat, out: &mut DMat, k: usize) {
    for i in 0..a.rows() {
        let mut acc = Dd::ZERO;
        for p in 0..a.cols {
            let x = a.at(i, p);
            if x.hi != 0.0 {
                acc = acc + x * b.at(p, k);
            }
        }
        out.data[i * out.cols + k] = acc;
    }
}

fn softmax(a: &DMat) -> DMat {
    let mut out = a.clone();
    for row in out.data.chunks_mut(a.cols) {
        let max = row.iter().fold(row[0], |m, &v| if v > m { v } else { m });
        let mut total = Dd::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Unperturbed double-double values of every entity the loss depends on.
pub(crate) struct PreciseLoss<'g> {
    graph: &'g ValidatedGraph,
    base: Vec<Option<DMat>>,
    needed: Vec<bool>,
    logits: usize,
    classes: Vec<usize>,
    param_entities: Vec<usize>,
}

impl<'g> PreciseLoss<'g> {
    /// `params` must already be checked against the graph.
    pub(crate) fn new(graph: &'g ValidatedGraph, params: &ParamSet, batch: &LabeledBatch) -> Self {
        let spec = graph.spec();
        let EntityKind::Node(loss_node) = graph.entities()[graph.loss_entity()].1 else {
            unreachable!("loss target is a node")
        };
        let logits = graph.node_operands(loss_node)[0];

        let n_entities = graph.entities().len();
        let mut needed = vec![false; n_entities];
        needed[logits] = true;
        for &n in graph.topo_order().iter().rev() {
            if needed[graph.node_entity(n)] {
                for &o in graph.node_operands(n) {
                    needed[o] = true;
                }
            }
        }

        let mut base: Vec<Option<DMat>> = vec![None; n_entities];
        base[0] = Some(DMat::from_f64(
            batch.images().shape(),
            batch.images().data(),
        ));
        let mut param_entities = Vec::new();
        for (i, decl) in spec.params.iter().enumerate() {
            let entity = spec.inputs.len() + i;
            let t = params.get(&decl.name).expect("checked params");
            base[entity] = Some(DMat::from_f64(t.shape(), t.data()));
            param_entities.push(entity);
        }
        let mut this = PreciseLoss {
            graph,
            base,
            needed,
            logits,
            classes: batch.classes().to_vec(),
            param_entities,
        };
        for &n in graph.topo_order() {
            let entity = graph.node_entity(n);
            if this.needed[entity] {
                let value = this.eval_node(n, &[], &Cols::All, None).0;
                this.base[entity] = Some(value);
            }
        }
        this
    }

    fn value<'a>(&'a self, changed: &'a [Option<(DMat, Cols)>], e: usize) -> &'a DMat {
        match changed.get(e).and_then(Option::as_ref) {
            Some((m, _)) => m,
            None => self.base[e].as_ref().expect("needed values are evaluated"),
        }
    }

    /// Evaluates node `n`. When `cols` lists specific columns, only those
    /// are recomputed on top of the node's base value.
    fn eval_node(
        &self,
        n: usize,
        changed: &[Option<(DMat, Cols)>],
        cols: &Cols,
        prior: Option<&DMat>,
    ) -> (DMat, Cols) {
        let graph = self.graph;
        let ops = graph.node_operands(n);
        let arg = |i: usize| self.value(changed, ops[i]);
        match graph.spec().nodes[n].op {
            OpKind::MatMul => {
                let (a, b) = (arg(0), arg(1));
                let mut out = prior.cloned().unwrap_or_else(|| DMat {
                    cols: b.cols,
                    data: vec![Dd::ZERO; a.rows() * b.cols],
                });
                for k in cols.list(b.cols) {
                    matmul_col(a, b, &mut out, k);
                }
                (out, cols.clone())
            }
            OpKind::AddBias => {
                let (a, b) = (arg(0), arg(1));
                let mut out = prior.cloned().unwrap_or_else(|| a.clone());
                for k in cols.list(a.cols) {
                    for i in 0..a.rows() {
                        out.data[i * a.cols + k] = a.at(i, k) + b.data[k];
                    }
                }
                (out, cols.clone())
            }
            OpKind::Relu => {
                let a = arg(0);
                let mut out = prior.cloned().unwrap_or_else(|| a.clone());
                for k in cols.list(a.cols) {
                    for i in 0..a.rows() {
                        let v = a.at(i, k);
                        out.data[i * a.cols + k] = if v.hi > 0.0 { v } else { Dd::ZERO };
                    }
                }
                (out, cols.clone())
            }
            OpKind::Softmax => (softmax(arg(0)), Cols::All),
        }
    }

    fn loss_of(&self, logits: &DMat) -> Dd {
        let mut total = Dd::ZERO;
        for (i, &c) in self.classes.iter().enumerate() {
            let row = &logits.data[i * logits.cols..(i + 1) * logits.cols];
            let max = row.iter().fold(row[0], |m, &v| if v > m { v } else { m });
            let mut s = Dd::ZERO;
            for &v in row {
                s = s + (v - max).exp();
            }
            total = total + (max + s.ln() - row[c]);
        }
        total.div_f64(self.classes.len() as f64)
    }

    /// Loss with `delta` added to coordinate `index` of param number `param`
    /// (declaration order).
    pub(crate) fn perturbed(&self, param: usize, index: usize, delta: f64) -> Dd {
        let graph = self.graph;
        let entity = self.param_entities[param];
        let mut changed: Vec<Option<(DMat, Cols)>> = vec![None; graph.entities().len()];
        let mut p = self.base[entity].clone().expect("param values present");
        p.data[index] = p.data[index] + Dd::from(delta);
        let col = index % p.cols;
        changed[entity] = Some((p, Cols::Some(vec![col])));

        for &n in graph.topo_order() {
            let e = graph.node_entity(n);
            if !self.needed[e] {
                continue;
            }
            let ops = graph.node_operands(n);
            let cols_of = |i: usize| changed[ops[i]].as_ref().map(|(_, c)| c.clone());
            let cols = match graph.spec().nodes[n].op {
                OpKind::MatMul => match (cols_of(0), cols_of(1)) {
                    (None, None) => continue,
                    (None, Some(c)) => c,
                    _ => Cols::All,
                },
                OpKind::AddBias => match (cols_of(0), cols_of(1)) {
                    (None, None) => continue,
                    (Some(c), None) | (None, Some(c)) => c,
                    (Some(a), Some(b)) => Cols::union(&a, &b),
                },
                OpKind::Relu | OpKind::Softmax => match cols_of(0) {
                    None => continue,
                    Some(c) => c,
                },
            };
            let prior = match cols {
                Cols::Some(_) => self.base[e].as_ref(),
                Cols::All => None,
            };
            let result = self.eval_node(n, &changed, &cols, prior);
            changed[e] = Some(result);
        }
        self.loss_of(self.value(&changed, self.logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn arithmetic_keeps_low_bits() {
        let one_third = Dd::ONE / Dd::from(3.0);
        let back = one_third * Dd::from(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-30);
        let tiny = Dd::from(1.0) + Dd::from(1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn exp_and_ln_agree_with_f64() {
        for x in [-30.0, -2.5, -1e-3, 0.0, 0.7, 5.0] {
            assert!(close(Dd::from(x).exp(), f64::exp(x), 1e-15), "exp {x}");
        }
        for x in [1e-8, 0.3, 1.0, 2.0, 1e6] {
            assert!(close(Dd::from(x).ln(), f64::ln(x), 1e-15), "ln {x}");
        }
    }

    #[test]
    fn exp_ln_roundtrip_is_double_double_accurate() {
        for x in [-7.25, -0.1, 0.5, 3.0] {
            let back = Dd::from(x).exp().ln() - Dd::from(x);
            assert!(back.to_f64().abs() < 1e-28, "{x}: {back:?}");
        }
        let e = Dd::ONE.exp();
        // e = 2.718281828459045 + 1.4456468917292502e-16
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-31);
    }
}
