//! Accuracy, prediction entropy and information accuracy (in bits).
//!
//! Each example contributes the entropy of its predicted distribution,
//! signed `+` when the argmax matches the label and `-` otherwise. The mean
//! over the batch is the default; the plain sum is available as
//! [`information_accuracy_sum`].

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::engine::{predict, EngineError, ParamSet};
use crate::graph::{OpKind, ValidatedGraph};
use crate::tensor::Tensor;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },
    #[error("row {row}: label is not one-hot")]
    InvalidLabel { row: usize },
    #[error("probabilities {probs:?} and labels {labels:?} differ in shape")]
    ShapeMismatch {
        probs: Vec<usize>,
        labels: Vec<usize>,
    },
    #[error("batch is empty")]
    Empty,
    #[error("graph output `{0}` is not a softmax")]
    OutputNotSoftmax(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sample of a metric curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: u64,
    pub split: Split,
    pub batch_size: usize,
    pub accuracy: f64,
    pub infoacc: f64,
}

fn check_distribution(row: usize, p: &[f64]) -> Result<(), MetricsError> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(MetricsError::InvalidProbabilities {
            row,
            reason: format!("entry {v} is not a finite non-negative number"),
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(MetricsError::InvalidProbabilities {
            row,
            reason: format!("entries sum to {total}"),
        });
    }
    Ok(())
}

fn hot_index(row: usize, y: &[f64]) -> Result<usize, MetricsError> {
    let mut hot = None;
    for (j, &v) in y.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(j);
        } else if v != 0.0 {
            return Err(MetricsError::InvalidLabel { row });
        }
    }
    hot.ok_or(MetricsError::InvalidLabel { row })
}

/// First index of the largest entry.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// Base-2 entropy of a probability vector; zero entries contribute nothing.
pub fn entropy_bits(p: &[f64]) -> Result<f64, MetricsError> {
    check_distribution(0, p)?;
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    // -0.0 and rounding just below zero for one-hot rows
    h.max(0.0)
}

/// `+1` when the argmax of `p` (lowest index on ties) is the hot index of
/// `y`, `-1` otherwise.
pub fn prediction_sign(p: &[f64], y: &[f64]) -> Result<i8, MetricsError> {
    check_distribution(0, p)?;
    if p.len() != y.len() {
        return Err(MetricsError::ShapeMismatch {
            probs: vec![p.len()],
            labels: vec![y.len()],
        });
    }
    let hot = hot_index(0, y)?;
    Ok(if argmax(p) == hot { 1 } else { -1 })
}

/// Predicted probabilities paired with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    probs: Tensor,
    classes: Vec<usize>,
}

impl PredictionBatch {
    pub fn new(probs: Tensor, labels: &Tensor) -> Result<Self, MetricsError> {
        if probs.shape() != labels.shape() || probs.shape().len() != 2 {
            return Err(MetricsError::ShapeMismatch {
                probs: probs.shape().to_vec(),
                labels: labels.shape().to_vec(),
            });
        }
        let mut classes = Vec::with_capacity(probs.rows());
        for (i, (p, y)) in probs.row_iter().zip(labels.row_iter()).enumerate() {
            check_distribution(i, p)?;
            classes.push(hot_index(i, y)?);
        }
        Ok(PredictionBatch { probs, classes })
    }

    pub fn from_rows(probs: &[Vec<f64>], classes: &[usize]) -> Result<Self, MetricsError> {
        let n = probs.first().map_or(0, Vec::len);
        let probs = Tensor::from_rows(probs).map_err(|_| MetricsError::Empty)?;
        if classes.len() != probs.rows() || classes.iter().any(|&c| c >= n) {
            return Err(MetricsError::ShapeMismatch {
                probs: probs.shape().to_vec(),
                labels: vec![classes.len()],
            });
        }
        PredictionBatch::new(probs, &crate::data::one_hot(classes, n))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// `(sign, entropy)` of each row.
    pub fn signed_entropies(&self) -> impl Iterator<Item = (i8, f64)> + '_ {
        self.probs
            .row_iter()
            .zip(&self.classes)
            .map(|(p, &c)| (if argmax(p) == c { 1 } else { -1 }, entropy_unchecked(p)))
    }
}

/// Mean signed entropy over the batch, in bits.
pub fn information_accuracy(batch: &PredictionBatch) -> f64 {
    information_accuracy_sum(batch) / batch.len() as f64
}

/// Sum of signed entropies over the batch, in bits.
pub fn information_accuracy_sum(batch: &PredictionBatch) -> f64 {
    batch
        .signed_entropies()
        .map(|(a, e)| f64::from(a) * e)
        .sum()
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(batch: &PredictionBatch) -> f64 {
    let correct = batch.signed_entropies().filter(|(a, _)| *a > 0).count();
    correct as f64 / batch.len() as f64
}

/// Runs the graph on `batch` and scores its output distribution.
pub fn evaluate(
    graph: &ValidatedGraph,
    params: &ParamSet,
    batch: &LabeledBatch,
    step: u64,
    split: Split,
) -> Result<MetricPoint, MetricsError> {
    let out = graph.output_node();
    if out.op != OpKind::Softmax {
        return Err(MetricsError::OutputNotSoftmax(out.name.clone()));
    }
    if batch.is_empty() {
        return Err(MetricsError::Empty);
    }
    let probs = predict(graph, params, batch.images())?;
    let pb = PredictionBatch::new(probs, batch.labels())?;
    Ok(MetricPoint {
        step,
        split,
        batch_size: batch.len(),
        accuracy: accuracy(&pb),
        infoacc: information_accuracy(&pb),
    })
}

/// One-decimal badge text such as `"2.6 bits"`; halves round away from zero.
pub fn chip_rating(infoacc: f64) -> String {
    let r = (infoacc * 10.0).round() / 10.0;
    // keep "0.0" rather than "-0.0" for values that round to zero
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.1} bits")
}

pub const CSV_HEADER: &str = "step,split,batch_size,accuracy,infoacc";

/// Metric points as CSV text, six decimals for the real columns.
pub fn export_csv(points: &[MetricPoint]) -> String {
    let mut out = String::with_capacity(CSV_HEADER.len() + 1 + points.len() * 40);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            p.step, p.split, p.batch_size, p.accuracy, p.infoacc
        ));
    }
    out
}

pub fn write_csv(points: &[MetricPoint], mut w: impl io::Write) -> io::Result<()> {
    w.write_all(export_csv(points).as_bytes())
}

/// Reads metric points back from [`export_csv`] output.
pub fn import_csv(text: &str) -> Result<Vec<MetricPoint>, csv::Error> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().collect()
}
