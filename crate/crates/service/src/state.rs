use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use forge_core::complexity::ComplexityReport;
use forge_core::data::{Dataset, DatasetSpec};
use forge_core::engine::TrainConfig;
use forge_core::metrics::MetricPoint;
use forge_core::training::{TrainError, TrainingRun};
use forge_core::{parse, validate, ValidatedGraph};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, FieldError};

pub struct StoredGraph {
    pub id: String,
    pub dsl: String,
    pub graph: Arc<ValidatedGraph>,
    pub complexity: ComplexityReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Idle,
    Running,
    Finished,
    Failed,
}

struct Progress {
    state: SessionState,
    step: u64,
    failure: Option<String>,
}

pub struct Session {
    pub id: String,
    pub graph_id: String,
    pub config: TrainConfig,
    pub dataset: DatasetSpec,
    // The single writer holds `run` for the whole of a step request.
    run: Mutex<TrainingRun>,
    progress: Mutex<Progress>,
    points: RwLock<Vec<MetricPoint>>,
}

impl Session {
    pub fn state(&self) -> SessionState {
        self.progress.lock().unwrap().state
    }

    pub fn step(&self) -> u64 {
        self.progress.lock().unwrap().step
    }

    pub fn failure(&self) -> Option<String> {
        self.progress.lock().unwrap().failure.clone()
    }

    /// Recorded points with `step > since`, or all of them.
    pub fn points_after(&self, since: Option<u64>) -> Vec<MetricPoint> {
        let points = self.points.read().unwrap();
        match since {
            None => points.clone(),
            Some(k) => {
                let start = points.partition_point(|p| p.step <= k);
                points[start..].to_vec()
            }
        }
    }

    /// Runs up to `n` steps, stopping at the end of the run. Returns the new
    /// step and the most recently recorded point.
    pub fn step_by(&self, n: u64) -> Result<(u64, MetricPoint), ApiError> {
        let mut run = self.run.lock().unwrap();
        {
            let mut p = self.progress.lock().unwrap();
            match p.state {
                SessionState::Finished => {
                    return Err(ApiError::Conflict(format!(
                        "session {} already finished at step {}",
                        self.id, p.step
                    )))
                }
                SessionState::Failed => {
                    return Err(ApiError::Conflict(format!(
                        "session {} failed: {}",
                        self.id,
                        p.failure.as_deref().unwrap_or("unknown error")
                    )))
                }
                SessionState::Idle | SessionState::Running => p.state = SessionState::Running,
            }
        }
        for _ in 0..n {
            if run.is_finished() {
                break;
            }
            match run.advance() {
                Ok(0) => {}
                Ok(k) => {
                    let fresh = &run.points()[run.points().len() - k..];
                    self.points.write().unwrap().extend_from_slice(fresh);
                }
                Err(e) => return Err(self.fail(&run, e)),
            }
            self.progress.lock().unwrap().step = run.step();
        }
        if run.is_finished() {
            self.progress.lock().unwrap().state = SessionState::Finished;
        }
        let latest = run
            .points()
            .last()
            .cloned()
            .expect("step 0 is always recorded");
        Ok((run.step(), latest))
    }

    fn fail(&self, run: &TrainingRun, e: TrainError) -> ApiError {
        let mut p = self.progress.lock().unwrap();
        p.state = SessionState::Failed;
        p.step = run.step();
        p.failure = Some(e.to_string());
        e.into()
    }
}

#[derive(Default)]
pub struct AppState {
    graphs: RwLock<HashMap<String, Arc<StoredGraph>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    datasets: Mutex<HashMap<String, Arc<Dataset>>>,
    next_graph: AtomicU64,
    next_session: AtomicU64,
}

impl AppState {
    pub fn insert_graph(&self, dsl: String) -> Result<Arc<StoredGraph>, ApiError> {
        let spec = parse(&dsl)
            .map_err(|errs| ApiError::Invalid(errs.iter().map(FieldError::from).collect()))?;
        // parse already ran validation; this cannot fail
        let graph = validate(&spec).map_err(|errs| {
            ApiError::Invalid(
                errs.iter()
                    .map(|e| FieldError::unpositioned(&e.category.to_string(), e.message.clone()))
                    .collect(),
            )
        })?;
        let id = format!("g{}", self.next_graph.fetch_add(1, Ordering::Relaxed) + 1);
        let stored = Arc::new(StoredGraph {
            id: id.clone(),
            complexity: ComplexityReport::new(&graph, None),
            graph: Arc::new(graph),
            dsl,
        });
        self.graphs.write().unwrap().insert(id, stored.clone());
        Ok(stored)
    }

    pub fn graph(&self, id: &str) -> Result<Arc<StoredGraph>, ApiError> {
        self.graphs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no graph with id `{id}`")))
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session with id `{id}`")))
    }

    /// Loads a dataset once per distinct descriptor.
    pub fn dataset(&self, spec: &DatasetSpec) -> Result<Arc<Dataset>, ApiError> {
        let key = serde_json::to_string(spec).expect("descriptor serializes");
        if let Some(d) = self.datasets.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let data = Arc::new(
            spec.load()
                .map_err(|e| ApiError::invalid("dataset", e.to_string()))?,
        );
        self.datasets.lock().unwrap().insert(key, data.clone());
        Ok(data)
    }

    pub fn insert_session(
        &self,
        graph: Arc<StoredGraph>,
        data: Arc<Dataset>,
        config: TrainConfig,
        dataset: DatasetSpec,
    ) -> Result<Arc<Session>, ApiError> {
        let run = TrainingRun::new(graph.graph.clone(), data, config)?;
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed) + 1);
        let session = Arc::new(Session {
            id: id.clone(),
            graph_id: graph.id.clone(),
            config,
            dataset,
            points: RwLock::new(run.points().to_vec()),
            run: Mutex::new(run),
            progress: Mutex::new(Progress {
                state: SessionState::Idle,
                step: 0,
                failure: None,
            }),
        });
        self.sessions.write().unwrap().insert(id, session.clone());
        Ok(session)
    }
}
