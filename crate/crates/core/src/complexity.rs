//! Size and structure measures of graphs, in bits.
//!
//! Compressed sizes use raw DEFLATE at level 9 (`flate2` with the
//! `miniz_oxide` backend); that identity is recorded in every report since
//! all compression-based numbers depend on it.

use std::collections::BTreeMap;
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::engine::ParamSet;
use crate::graph::{canonical_serialize, ValidatedGraph};

pub const COMPRESSOR: &str = "deflate-raw/miniz_oxide/level-9";

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComplexityError {
    #[error("ncd needs two non-empty inputs")]
    EmptyInput,
    #[error("damping must be in (0, 1), got {0}")]
    Damping(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub description_bits: u64,
    pub compressed_bits: u64,
    pub node_count: usize,
    pub ncd_to_reference: Option<f64>,
    pub pagerank: BTreeMap<String, f64>,
    pub compressor: String,
}

impl ComplexityReport {
    pub fn new(graph: &ValidatedGraph, reference: Option<&ValidatedGraph>) -> Self {
        let text = canonical_serialize(graph);
        ComplexityReport {
            description_bits: description_bits(graph, None),
            compressed_bits: compressed_bits(&text),
            node_count: graph.node_count(),
            ncd_to_reference: reference.map(|r| {
                ncd(&text, &canonical_serialize(r)).expect("canonical text is never empty")
            }),
            pagerank: pagerank(graph, DEFAULT_DAMPING, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)
                .expect("default damping is valid"),
            compressor: COMPRESSOR.to_string(),
        }
    }
}

/// Bits of the canonical text, plus 64 per parameter scalar when `params`
/// is given.
pub fn description_bits(graph: &ValidatedGraph, params: Option<&ParamSet>) -> u64 {
    let text = 8 * canonical_serialize(graph).len() as u64;
    text + params.map_or(0, |p| 64 * p.num_scalars() as u64)
}

/// Bits of the pinned compressor's output for `data`.
pub fn compressed_bits(data: &[u8]) -> u64 {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(data).expect("writing to a Vec cannot fail");
    let out = enc.finish().expect("writing to a Vec cannot fail");
    8 * out.len() as u64
}

/// Normalized compression distance.
pub fn ncd(a: &[u8], b: &[u8]) -> Result<f64, ComplexityError> {
    if a.is_empty() || b.is_empty() {
        return Err(ComplexityError::EmptyInput);
    }
    let ca = compressed_bits(a);
    let cb = compressed_bits(b);
    let mut ab = Vec::with_capacity(a.len() + b.len());
    ab.extend_from_slice(a);
    ab.extend_from_slice(b);
    let cab = compressed_bits(&ab);
    let (lo, hi) = (ca.min(cb), ca.max(cb));
    Ok((cab as f64 - lo as f64) / hi as f64)
}

/// PageRank over the dataflow graph: every input, param and node is a
/// vertex and each operand slot is an edge operand -> consumer.
pub fn pagerank(
    graph: &ValidatedGraph,
    damping: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<BTreeMap<String, f64>, ComplexityError> {
    let names: Vec<&str> = graph.entity_names().collect();
    let scores = pagerank_edges(names.len(), &graph.edges(), damping, tolerance, max_iter)?;
    Ok(names.into_iter().map(str::to_string).zip(scores).collect())
}

/// PageRank by power iteration on `n` vertices. Parallel edges count with
/// multiplicity; vertices without out-edges spread their mass uniformly.
/// Stops when the L1 change falls below `tolerance` or after `max_iter`
/// iterations.
pub fn pagerank_edges(
    n: usize,
    edges: &[(usize, usize)],
    damping: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<Vec<f64>, ComplexityError> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(ComplexityError::Damping(damping));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut out_degree = vec![0usize; n];
    for &(from, _) in edges {
        out_degree[from] += 1;
    }
    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        let dangling: f64 = rank
            .iter()
            .zip(&out_degree)
            .filter(|(_, &d)| d == 0)
            .map(|(r, _)| r)
            .sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        next.fill(base);
        for &(from, to) in edges {
            next[to] += damping * rank[from] / out_degree[from] as f64;
        }
        let total: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= total;
        }
        let change: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if change < tolerance {
            break;
        }
    }
    Ok(rank)
}
