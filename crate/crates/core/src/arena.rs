//! Head-to-head battles: two graphs trained under the same seed, batch
//! order and step budget, then compared on the full test split.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::TrainConfig;
use crate::graph::ValidatedGraph;
use crate::metrics::MetricPoint;
use crate::training::{check_compatible, TrainError, TrainingRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Infoacc,
}

impl Metric {
    fn of(self, p: &MetricPoint) -> f64 {
        match self {
            Metric::Accuracy => p.accuracy,
            Metric::Infoacc => p.infoacc,
        }
    }
}

pub const DEFAULT_PRIORITY: [Metric; 2] = [Metric::Accuracy, Metric::Infoacc];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    #[serde(rename = "draw")]
    Draw,
}

impl Winner {
    pub fn swapped(self) -> Winner {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
            Winner::Draw => Winner::Draw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleConfig {
    pub train_config: TrainConfig,
    pub dataset: String,
    #[serde(default = "default_priority")]
    pub priority: Vec<Metric>,
}

fn default_priority() -> Vec<Metric> {
    DEFAULT_PRIORITY.to_vec()
}

impl BattleConfig {
    pub fn new(train_config: TrainConfig, dataset: impl Into<String>) -> Self {
        BattleConfig {
            train_config,
            dataset: dataset.into(),
            priority: default_priority(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contender {
    pub id: String,
    #[serde(rename = "final")]
    pub final_point: MetricPoint,
    pub curve: Vec<MetricPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleResult {
    pub a: Contender,
    pub b: Contender,
    pub winner: Winner,
    pub config: BattleConfig,
    pub seed: u64,
}

/// Lexicographic comparison over `priority`; exact equality is a tie.
pub fn compare_finals(a: &MetricPoint, b: &MetricPoint, priority: &[Metric]) -> Winner {
    for m in priority {
        let (x, y) = (m.of(a), m.of(b));
        if x > y {
            return Winner::A;
        }
        if y > x {
            return Winner::B;
        }
    }
    Winner::Draw
}

fn train(
    graph: Arc<ValidatedGraph>,
    data: Arc<Dataset>,
    config: TrainConfig,
) -> Result<(MetricPoint, Vec<MetricPoint>), TrainError> {
    let mut run = TrainingRun::new(graph, data, config)?;
    run.run_to_end()?;
    let final_point = run.final_eval()?;
    Ok((final_point, run.into_points()))
}

/// Trains both contenders (concurrently) and judges them.
pub fn run_battle(
    a: (&str, Arc<ValidatedGraph>),
    b: (&str, Arc<ValidatedGraph>),
    data: Arc<Dataset>,
    config: &BattleConfig,
) -> Result<BattleResult, TrainError> {
    config.train_config.validate().map_err(TrainError::Config)?;
    check_compatible(&a.1, data.dim, data.n_classes)?;
    check_compatible(&b.1, data.dim, data.n_classes)?;
    let tc = config.train_config;
    let (ra, rb) = std::thread::scope(|s| {
        let da = Arc::clone(&data);
        let ga = Arc::clone(&a.1);
        let ha = s.spawn(move || train(ga, da, tc));
        let rb = train(Arc::clone(&b.1), Arc::clone(&data), tc);
        (ha.join().expect("contender thread panicked"), rb)
    });
    let (fa, ca) = ra?;
    let (fb, cb) = rb?;
    Ok(BattleResult {
        winner: compare_finals(&fa, &fb, &config.priority),
        a: Contender {
            id: a.0.to_string(),
            final_point: fa,
            curve: ca,
        },
        b: Contender {
            id: b.0.to_string(),
            final_point: fb,
            curve: cb,
        },
        config: config.clone(),
        seed: tc.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Split;

    fn point(accuracy: f64, infoacc: f64) -> MetricPoint {
        MetricPoint {
            step: 10,
            split: Split::Eval,
            batch_size: 100,
            accuracy,
            infoacc,
        }
    }

    #[test]
    fn compare_examples() {
        let p = &DEFAULT_PRIORITY;
        assert_eq!(
            compare_finals(&point(0.93, 0.0), &point(0.91, 1.0), p),
            Winner::A
        );
        assert_eq!(
            compare_finals(&point(0.9, 1.2), &point(0.9, 0.8), p),
            Winner::A
        );
        assert_eq!(
            compare_finals(&point(0.9, 0.8), &point(0.9, 1.2), p),
            Winner::B
        );
        assert_eq!(
            compare_finals(&point(0.9, 1.0), &point(0.9, 1.0), p),
            Winner::Draw
        );
        assert_eq!(
            compare_finals(&point(0.9, 1.0), &point(0.8, 2.0), &[Metric::Infoacc]),
            Winner::B
        );
    }
}
