//! Stepwise SGD training with metric recording.
//!
//! A run owns its parameters and three independent batch orders: the
//! training order, and the rotations of train-split and test-split
//! evaluation batches. Metric points are recorded at step 0, every
//! `eval_interval` steps, and at the final step, so a run produces the same
//! curve however its steps are grouped into calls.

use std::sync::Arc;

use crate::data::{DataError, Dataset, IndexBatches, LabeledBatch};
use crate::engine::{
    init_params, loss_and_grads, sgd_step_in_place, EngineError, ParamSet, TrainConfig,
};
use crate::graph::{OpKind, ValidatedGraph};
use crate::metrics::{evaluate, MetricPoint, MetricsError, Split};
use crate::rng::{stream, SeededRng};
use crate::shape::Dim;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("graph does not fit the dataset: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run already finished at step {0}")]
    Finished(u64),
}

/// Checks that `graph` takes one `[?, dim]` input and ends in a softmax over
/// `n_classes` classes.
pub fn check_compatible(
    graph: &ValidatedGraph,
    dim: usize,
    n_classes: usize,
) -> Result<(), TrainError> {
    let spec = graph.spec();
    let [input] = spec.inputs.as_slice() else {
        return Err(TrainError::Incompatible(format!(
            "expected exactly one input, found {}",
            spec.inputs.len()
        )));
    };
    if input.shape.dims() != [Dim::Batch, Dim::Fixed(dim)] {
        return Err(TrainError::Incompatible(format!(
            "input `{}` is {} but the data has {dim} features",
            input.name, input.shape
        )));
    }
    let out = graph.output_node();
    if out.op != OpKind::Softmax {
        return Err(TrainError::Incompatible(format!(
            "output `{}` is not a softmax",
            out.name
        )));
    }
    if graph.output_shape().dims() != [Dim::Batch, Dim::Fixed(n_classes)] {
        return Err(TrainError::Incompatible(format!(
            "output `{}` is {} but the data has {n_classes} classes",
            out.name,
            graph.output_shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    graph: Arc<ValidatedGraph>,
    data: Arc<Dataset>,
    config: TrainConfig,
    params: ParamSet,
    order: IndexBatches,
    train_eval: IndexBatches,
    test_eval: IndexBatches,
    step: u64,
    last_loss: Option<f64>,
    points: Vec<MetricPoint>,
}

impl TrainingRun {
    /// Initializes parameters from `config.seed` and records the step-0 points.
    pub fn new(
        graph: Arc<ValidatedGraph>,
        data: Arc<Dataset>,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        check_compatible(&graph, data.dim, data.n_classes)?;
        let batches = |rows: usize, size: usize, id: u64, what: &str| {
            IndexBatches::new(rows, size, SeededRng::with_stream(config.seed, id)).map_err(|_| {
                TrainError::Config(format!(
                    "{what} size {size} exceeds the {rows} rows available"
                ))
            })
        };
        let order = batches(
            data.train.len(),
            config.batch_size,
            stream::TRAIN_ORDER,
            "batch",
        )?;
        let train_eval = batches(
            data.train.len(),
            config.eval_batch_size,
            stream::TRAIN_EVAL,
            "train eval batch",
        )?;
        let test_eval = batches(
            data.test.len(),
            config.eval_batch_size,
            stream::TEST_EVAL,
            "eval batch",
        )?;
        let params = init_params(&graph, config.seed);
        let mut run = TrainingRun {
            graph,
            data,
            config,
            params,
            order,
            train_eval,
            test_eval,
            step: 0,
            last_loss: None,
            points: Vec::new(),
        };
        run.record()?;
        Ok(run)
    }

    pub fn graph(&self) -> &ValidatedGraph {
        &self.graph
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Loss of the most recent training batch, before its update.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn points(&self) -> &[MetricPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<MetricPoint> {
        self.points
    }

    fn record(&mut self) -> Result<(), TrainError> {
        let train = self.data.train.select(&self.train_eval.next_indices());
        let test = self.data.test.select(&self.test_eval.next_indices());
        for (batch, split) in [(train, Split::Train), (test, Split::Eval)] {
            let p = evaluate(&self.graph, &self.params, &batch, self.step, split)?;
            self.points.push(p);
        }
        Ok(())
    }

    /// One SGD update. Returns the number of metric points it recorded.
    pub fn advance(&mut self) -> Result<usize, TrainError> {
        if self.is_finished() {
            return Err(TrainError::Finished(self.step));
        }
        let batch = self.data.train.select(&self.order.next_indices());
        let (loss, grads) = loss_and_grads(&self.graph, &self.params, &batch)?;
        sgd_step_in_place(&mut self.params, &grads, self.config.learning_rate);
        self.step += 1;
        self.last_loss = Some(loss);
        if self.step.is_multiple_of(self.config.eval_interval) || self.step == self.config.steps {
            self.record()?;
            return Ok(2);
        }
        Ok(0)
    }

    /// Up to `n` updates, stopping early at the end of the run.
    pub fn advance_by(&mut self, n: u64) -> Result<(), TrainError> {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.advance()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), TrainError> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(())
    }

    /// Metrics of the current parameters on the whole test split.
    pub fn final_eval(&self) -> Result<MetricPoint, TrainError> {
        Ok(self.evaluate_on(&self.data.test, Split::Eval)?)
    }

    pub fn evaluate_on(
        &self,
        batch: &LabeledBatch,
        split: Split,
    ) -> Result<MetricPoint, MetricsError> {
        evaluate(&self.graph, &self.params, batch, self.step, split)
    }
}
