//! Seeded generators of random valid graph specs and random DAGs.

use std::collections::{BTreeSet, HashMap};

use crate::graph::{GraphSpec, Init, InputDecl, LossDecl, LossKind, NodeDecl, OpKind, ParamDecl};
use crate::rng::SeededRng;
use crate::shape::Shape;

#[derive(Debug, Clone, Copy)]
pub struct SpecOptions {
    /// Feature width bounds (inclusive) for the input and hidden layers.
    pub min_dim: usize,
    pub max_dim: usize,
    pub n_classes: usize,
    pub max_hidden: usize,
}

impl Default for SpecOptions {
    fn default() -> Self {
        SpecOptions {
            min_dim: 1,
            max_dim: 8,
            n_classes: 3,
            max_hidden: 3,
        }
    }
}

fn pick_dim(rng: &mut SeededRng, o: &SpecOptions) -> usize {
    o.min_dim + rng.below((o.max_dim - o.min_dim + 1) as u64) as usize
}

fn coin(rng: &mut SeededRng) -> bool {
    rng.below(2) == 1
}

/// A random identifier not in `used`.
pub fn random_ident(rng: &mut SeededRng, used: &mut BTreeSet<String>) -> String {
    const FIRST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_0123456789";
    loop {
        let len = 1 + rng.below(8) as usize;
        let mut s = String::with_capacity(len);
        s.push(FIRST[rng.below(FIRST.len() as u64) as usize] as char);
        for _ in 1..len {
            s.push(REST[rng.below(REST.len() as u64) as usize] as char);
        }
        if used.insert(s.clone()) {
            return s;
        }
    }
}

/// A graph name mixing plain text, escapes and non-ASCII characters.
fn random_graph_name(rng: &mut SeededRng) -> String {
    const PIECES: &[&str] = &[
        "net", "mlp", " ", "\"", "\\", "\t", "\n", "é", "層", "-", "7",
    ];
    (0..rng.below(6))
        .map(|_| PIECES[rng.below(PIECES.len() as u64) as usize])
        .collect()
}

/// A random valid classifier spec: one batched input, a chain of dense
/// layers (matmul, optional addbias, optional relu or intermediate softmax),
/// a final projection to `n_classes`, softmax output and cross-entropy loss.
/// Declarations come out in shuffled order.
pub fn random_spec(rng: &mut SeededRng, o: &SpecOptions) -> GraphSpec {
    let mut used = BTreeSet::new();
    let mut spec = GraphSpec {
        name: random_graph_name(rng),
        ..GraphSpec::default()
    };
    let input = random_ident(rng, &mut used);
    let mut width = pick_dim(rng, o);
    spec.inputs.push(InputDecl {
        name: input.clone(),
        shape: Shape::batched(&[width]),
    });
    let mut current = input;
    let hidden = rng.below(o.max_hidden as u64 + 1) as usize;
    for layer in 0..=hidden {
        let last = layer == hidden;
        let out_width = if last { o.n_classes } else { pick_dim(rng, o) };
        let w = random_ident(rng, &mut used);
        spec.params.push(ParamDecl {
            name: w.clone(),
            shape: Shape::fixed(&[width, out_width]),
            init: if coin(rng) { Init::Glorot } else { Init::Zeros },
        });
        let z = random_ident(rng, &mut used);
        spec.nodes.push(NodeDecl {
            name: z.clone(),
            op: OpKind::MatMul,
            operands: vec![current, w],
        });
        current = z;
        if coin(rng) {
            let b = random_ident(rng, &mut used);
            spec.params.push(ParamDecl {
                name: b.clone(),
                shape: Shape::fixed(&[out_width]),
                init: if coin(rng) { Init::Glorot } else { Init::Zeros },
            });
            let a = random_ident(rng, &mut used);
            spec.nodes.push(NodeDecl {
                name: a.clone(),
                op: OpKind::AddBias,
                operands: vec![current, b],
            });
            current = a;
        }
        if !last {
            let op = match rng.below(4) {
                0 => None,
                1 => Some(OpKind::Softmax),
                _ => Some(OpKind::Relu),
            };
            if let Some(op) = op {
                let h = random_ident(rng, &mut used);
                spec.nodes.push(NodeDecl {
                    name: h.clone(),
                    op,
                    operands: vec![current],
                });
                current = h;
            }
        }
        width = out_width;
    }
    let probs = random_ident(rng, &mut used);
    spec.nodes.push(NodeDecl {
        name: probs.clone(),
        op: OpKind::Softmax,
        operands: vec![current],
    });
    spec.output = Some(probs.clone());
    spec.loss = Some(LossDecl {
        kind: LossKind::CrossEntropy,
        prediction: probs,
    });
    rng.shuffle(&mut spec.params);
    rng.shuffle(&mut spec.nodes);
    spec
}

/// The same spec with every input, param and node renamed through `names`.
pub fn rename_spec(spec: &GraphSpec, names: &HashMap<String, String>) -> GraphSpec {
    let r = |n: &String| names.get(n).cloned().unwrap_or_else(|| n.clone());
    let mut out = spec.clone();
    for d in &mut out.inputs {
        d.name = r(&d.name);
    }
    for d in &mut out.params {
        d.name = r(&d.name);
    }
    for d in &mut out.nodes {
        d.name = r(&d.name);
        d.operands = d.operands.iter().map(r).collect();
    }
    out.output = out.output.as_ref().map(r);
    if let Some(l) = &mut out.loss {
        l.prediction = r(&l.prediction);
    }
    out
}

/// A random DAG on `n` vertices: each forward pair `i < j` of a random
/// topological order is an edge with probability `p`.
pub fn random_dag(rng: &mut SeededRng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                edges.push((order[i], order[j]));
            }
        }
    }
    edges
}
