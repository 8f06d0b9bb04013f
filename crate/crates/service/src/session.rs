//! Sessions, their public views and the on-disk registry.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use wynn_core::adaptive::{adaptive_init, AdaptiveState, EstimatorConfig, Phase, StepDiagnostics};
use wynn_core::{ModelSpec, ModelSpecDocument};

use crate::error::ServiceError;
use crate::log::{Event, EventLog, SessionEvent};

/// A grid point given by index or by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub spec: ModelSpecDocument,
    pub start: Vec<PointRef>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub theta_seed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitObservation {
    pub index: usize,
    pub y: f64,
    pub suggestion_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRef {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub phase: Phase,
    pub family_link: String,
    pub p: usize,
    pub n: usize,
    pub n_st: usize,
    pub observed: usize,
    pub start: Vec<GridRef>,
    pub pending: Vec<GridRef>,
    pub suggestion_seq: u64,
    pub theta_hat: Vec<f64>,
    pub boundary_flags: Vec<bool>,
    pub latest: Option<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub index: usize,
    pub label: String,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestView {
    pub index: usize,
    pub label: String,
    pub suggestion_seq: u64,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub sensitivity: Vec<SensitivityEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateView {
    pub n: usize,
    pub observed: usize,
    pub theta_hat: Vec<f64>,
    /// `sqrt(diag(M⁻¹(ξ_n, θ̂_n)) / n)`; absent when `M` is singular.
    pub standard_errors: Option<Vec<f64>>,
    pub boundary_flags: Vec<bool>,
    pub converged: Option<bool>,
    pub loglik: Option<f64>,
    pub score_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityView {
    pub n: usize,
    pub p: usize,
    pub theta_hat: Vec<f64>,
    pub argmax: usize,
    pub profile: Vec<SensitivityEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntryView {
    pub index: usize,
    pub label: String,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub theta_hat: Vec<f64>,
    /// `‖θ̂_n − θ̂_{n−1}‖` between consecutive diagnostics rows.
    pub delta_theta_norm: Option<f64>,
    pub logdet: f64,
    pub lambda_min: f64,
    pub kw_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub history: Vec<HistoryEntryView>,
    pub series: Vec<SeriesPoint>,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    log: EventLog,
    state: AdaptiveState,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    /// Changes with every accepted observation.
    pub fn suggestion_seq(&self) -> u64 {
        self.state.observed() as u64
    }

    fn grid_ref(&self, index: usize) -> GridRef {
        GridRef {
            index,
            label: self.state.spec().label(index).to_string(),
        }
    }

    fn boundary_flags(&self) -> Vec<bool> {
        self.state
            .fit()
            .map(|f| f.boundary_flags.clone())
            .unwrap_or_else(|| vec![false; self.state.spec().p()])
    }

    pub fn view(&self) -> SessionView {
        let s = &self.state;
        SessionView {
            id: self.id.clone(),
            phase: s.phase(),
            family_link: s.spec().family_link().tag().to_string(),
            p: s.spec().p(),
            n: s.n(),
            n_st: s.n_st(),
            observed: s.observed(),
            start: s.history()[..s.n_st()].iter().map(|h| self.grid_ref(h.index)).collect(),
            pending: s.pending().iter().map(|&k| self.grid_ref(k)).collect(),
            suggestion_seq: self.suggestion_seq(),
            theta_hat: s.theta_hat().iter().copied().collect(),
            boundary_flags: self.boundary_flags(),
            latest: s.diagnostics().last().cloned(),
        }
    }

    fn profile(&self) -> Result<Vec<SensitivityEntry>, ServiceError> {
        Ok(self
            .state
            .sensitivity_profile()?
            .into_iter()
            .enumerate()
            .map(|(index, d)| SensitivityEntry {
                index,
                label: self.state.spec().label(index).to_string(),
                d,
            })
            .collect())
    }

    pub fn suggest(&self) -> Result<SuggestView, ServiceError> {
        let index = self.state.next_point()?;
        Ok(SuggestView {
            index,
            label: self.state.spec().label(index).to_string(),
            suggestion_seq: self.suggestion_seq(),
            n: self.state.n(),
            theta_hat: self.state.theta_hat().iter().copied().collect(),
            sensitivity: self.profile()?,
        })
    }

    pub fn estimate(&self) -> EstimateView {
        let s = &self.state;
        let n = s.n() as f64;
        let standard_errors = s
            .information()
            .inverse()
            .ok()
            .map(|inv| (0..s.spec().p()).map(|i| (inv[(i, i)] / n).sqrt()).collect());
        EstimateView {
            n: s.n(),
            observed: s.observed(),
            theta_hat: s.theta_hat().iter().copied().collect(),
            standard_errors,
            boundary_flags: self.boundary_flags(),
            converged: s.fit().map(|f| f.converged),
            loglik: s.fit().map(|f| f.loglik),
            score_norm: s.fit().map(|f| f.score_norm),
        }
    }

    pub fn sensitivity(&self) -> Result<SensitivityView, ServiceError> {
        let profile = self.profile()?;
        let d: Vec<f64> = profile.iter().map(|e| e.d).collect();
        Ok(SensitivityView {
            n: self.state.n(),
            p: self.state.spec().p(),
            theta_hat: self.state.theta_hat().iter().copied().collect(),
            argmax: wynn_core::wynn::select_max(&d).index,
            profile,
        })
    }

    pub fn history(&self) -> HistoryView {
        let s = &self.state;
        let history = s
            .history()
            .iter()
            .map(|h| HistoryEntryView {
                index: h.index,
                label: s.spec().label(h.index).to_string(),
                y: h.y,
            })
            .collect();
        let mut prev: Option<&[f64]> = None;
        let series = s
            .diagnostics()
            .iter()
            .map(|d| {
                let delta = prev.map(|p| {
                    p.iter()
                        .zip(&d.theta_hat)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                });
                prev = Some(&d.theta_hat);
                SeriesPoint {
                    n: d.n,
                    theta_hat: d.theta_hat.clone(),
                    delta_theta_norm: delta,
                    logdet: d.logdet,
                    lambda_min: d.lambda_min,
                    kw_gap: d.kw_gap,
                }
            })
            .collect();
        HistoryView { history, series }
    }

    /// Applies an observation, persisting it before the in-memory state
    /// changes.
    pub fn observe(&mut self, req: &SubmitObservation) -> Result<[SessionEvent; 2], ServiceError> {
        let current = self.suggestion_seq();
        if req.suggestion_seq != current {
            return Err(ServiceError::Stale {
                got: req.suggestion_seq,
                current,
            });
        }
        let mut next = self.state.clone();
        next.observe(req.index, req.y)?;
        let events = self.log.append_pair(req.index, req.y, next.theta_hat().as_slice())?;
        self.state = next;
        Ok(events)
    }
}

struct Cell {
    writer: Mutex<()>,
    session: RwLock<Option<Session>>,
}

/// All sessions under one data directory.
pub struct Registry {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Cell>>>,
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ndjson"))
}

impl Registry {
    /// Opens the directory, replaying every `*.ndjson` log in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            match EventLog::open(path.clone()) {
                Ok((log, _, state)) => {
                    sessions.insert(
                        id.clone(),
                        Arc::new(Cell {
                            writer: Mutex::new(()),
                            session: RwLock::new(Some(Session { id, log, state })),
                        }),
                    );
                }
                Err(e) => tracing::error!(path = %path.display(), error = %e, "skipping unreadable session log"),
            }
        }
        Ok(Self {
            dir,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("registry lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(&self, req: CreateSession) -> Result<SessionView, ServiceError> {
        let spec = Arc::new(ModelSpec::new(req.spec.clone())?);
        let start = req
            .start
            .iter()
            .map(|p| match p {
                PointRef::Index(k) => spec.check_index(*k).map(|_| *k).map_err(ServiceError::from),
                PointRef::Label(l) => spec
                    .index_of(l)
                    .ok_or_else(|| ServiceError::BadRequest(format!("start label {l:?} is not on the grid"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let state = adaptive_init(
            spec,
            &start,
            req.estimator.clone(),
            req.theta_seed.clone().map(DVector::from_vec),
        )?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = EventLog::create(
            log_path(&self.dir, &id),
            Event::Created {
                spec: req.spec,
                start,
                estimator: req.estimator,
                theta_seed: req.theta_seed,
            },
        )?;
        let session = Session {
            id: id.clone(),
            log,
            state,
        };
        let view = session.view();
        self.sessions.write().expect("registry lock").insert(
            id,
            Arc::new(Cell {
                writer: Mutex::new(()),
                session: RwLock::new(Some(session)),
            }),
        );
        Ok(view)
    }

    fn cell(&self, id: &str) -> Result<Arc<Cell>, ServiceError> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let cell = self.cell(id)?;
        let guard = cell.session.read().expect("session lock");
        let session = guard.as_ref().ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        f(session)
    }

    /// Serialized per session: a concurrent second writer gets
    /// [`ServiceError::Busy`] instead of waiting.
    pub fn observe(&self, id: &str, req: &SubmitObservation) -> Result<SessionView, ServiceError> {
        let cell = self.cell(id)?;
        let _writer = cell.writer.try_lock().map_err(|_| ServiceError::Busy)?;
        let mut guard = cell.session.write().expect("session lock");
        let session = guard.as_mut().ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        session.observe(req)?;
        Ok(session.view())
    }

    pub fn delete(&self, id: &str) -> Result<(), ServiceError> {
        let cell = self.cell(id)?;
        let _writer = cell.writer.try_lock().map_err(|_| ServiceError::Busy)?;
        let session = cell
            .session
            .write()
            .expect("session lock")
            .take()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        self.sessions.write().expect("registry lock").remove(id);
        session.log.remove()?;
        Ok(())
    }
}
