//! The adaptive Wynn loop: estimate `θ` from the data so far, then add the
//! grid point of maximal sensitivity at the estimate.
//!
//! A session starts from `n_st` start points whose regressors span `ℝᵖ`.
//! Their responses are pending until observed (in any order); only then is
//! the first suggestion available. Each later observation must be at the
//! suggested point, updates `ξ_{n+1} = n/(n+1) ξ_n + 1/(n+1) δ_x` and refits
//! the estimator.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{info_unchecked, profile_with, update_design, Design, InfoMatrix};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, DataSet, FitResult, SolverConfig};
use crate::format::fmt_sig17;
use crate::model::ModelSpec;
use crate::wynn::{select_max, Selection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    /// Box-constrained maximum likelihood, refit every `refit_every`
    /// observations after the start phase.
    Mle {
        #[serde(default)]
        solver: SolverConfig,
        #[serde(default = "one")]
        refit_every: usize,
    },
    /// A fixed parameter value; the loop then reduces to the classical
    /// Wynn iteration at that value.
    Frozen { theta: Vec<f64> },
}

fn one() -> usize {
    1
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Mle {
            solver: SolverConfig::default(),
            refit_every: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn frozen(theta: &DVector<f64>) -> Self {
        EstimatorConfig::Frozen {
            theta: theta.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    /// `None` while a start point's response is pending.
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n: usize,
    pub index: usize,
    pub y: f64,
    pub theta_hat: Vec<f64>,
    /// `log det M(ξ_n, θ̂_n)`; `-inf` when singular.
    pub logdet: f64,
    pub lambda_min: f64,
    /// `max d − p` at `(ξ_n, θ̂_n)`; NaN when singular.
    pub kw_gap: f64,
    /// Sensitivity of the selected point at `(ξ_{n−1}, θ̂_{n−1})`.
    pub d_selected: Option<f64>,
    /// Deviation from `logdet M_n − logdet M_{n−1} = ln(1 + d/(n−1)) − p ln(1 + 1/(n−1))`,
    /// both sides at `θ̂_{n−1}`.
    pub recursion_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingStartResponses,
    Adaptive,
}

/// Everything that determines a state's future behavior, for bit-exact
/// comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub n: usize,
    pub n_st: usize,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub history: Vec<HistoryEntry>,
    pub pending: Vec<usize>,
    pub theta_hat: Vec<f64>,
    pub fit: Option<FitResult>,
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveState {
    spec: Arc<ModelSpec>,
    estimator: EstimatorConfig,
    design: Design,
    n: usize,
    n_st: usize,
    history: Vec<HistoryEntry>,
    pending: Vec<usize>,
    data: DataSet,
    theta_hat: DVector<f64>,
    fit: Option<FitResult>,
    diagnostics: Vec<StepDiagnostics>,
}

/// Starts a session. `theta_seed` defaults to the box midpoint and is
/// projected into the box; a frozen estimator overrides it.
pub fn adaptive_init(
    spec: Arc<ModelSpec>,
    start_points: &[usize],
    estimator: EstimatorConfig,
    theta_seed: Option<DVector<f64>>,
) -> Result<AdaptiveState> {
    let p = spec.p();
    if start_points.is_empty() {
        return Err(Error::StartDesign { rank: 0, p });
    }
    let rank = spec.rank_at(start_points)?;
    if rank < p {
        return Err(Error::StartDesign { rank, p });
    }
    let theta_hat = match &estimator {
        EstimatorConfig::Frozen { theta } => {
            let t = DVector::from_column_slice(theta);
            spec.check_theta(&t)?;
            t
        }
        EstimatorConfig::Mle { solver, refit_every } => {
            if *refit_every == 0 {
                return Err(Error::Argument("refit_every must be at least 1".into()));
            }
            fit_mle_config_check(solver)?;
            let seed = theta_seed.unwrap_or_else(|| spec.theta_box().midpoint());
            if seed.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: seed.len(),
                });
            }
            if seed.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("theta_seed must be finite".into()));
            }
            spec.theta_box().project(&seed)
        }
    };
    Ok(AdaptiveState {
        design: Design::empirical(start_points)?,
        n: start_points.len(),
        n_st: start_points.len(),
        history: start_points.iter().map(|&index| HistoryEntry { index, y: None }).collect(),
        pending: start_points.to_vec(),
        data: DataSet::new(spec.clone()),
        spec,
        estimator,
        theta_hat,
        fit: None,
        diagnostics: Vec::new(),
    })
}

fn fit_mle_config_check(cfg: &SolverConfig) -> Result<()> {
    if !(cfg.grad_tol > 0.0) || cfg.max_newton_iters == 0 || cfg.n_starts == Some(0) {
        return Err(Error::Argument(
            "solver config needs grad_tol > 0, max_newton_iters ≥ 1, n_starts ≥ 1".into(),
        ));
    }
    Ok(())
}

impl AdaptiveState {
    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn estimator(&self) -> &EstimatorConfig {
        &self.estimator
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Total number of design points, pending start points included.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_st(&self) -> usize {
        self.n_st
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Start points still awaiting a response, in start order.
    pub fn pending(&self) -> &[usize] {
        &self.pending
    }

    pub fn observed(&self) -> usize {
        self.data.len()
    }

    pub fn phase(&self) -> Phase {
        if self.pending.is_empty() {
            Phase::Adaptive
        } else {
            Phase::AwaitingStartResponses
        }
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn fit(&self) -> Option<&FitResult> {
        self.fit.as_ref()
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn data(&self) -> &DataSet {
        &self.data
    }

    /// `M(ξ_n, θ̂_n)`.
    pub fn information(&self) -> InfoMatrix {
        info_unchecked(&self.spec, &self.design, &self.theta_hat)
    }

    /// Sensitivity over the grid at `(ξ_n, θ̂_n)`.
    pub fn sensitivity_profile(&self) -> Result<Vec<f64>> {
        let chol = self.information().cholesky()?;
        Ok(profile_with(&self.spec, &chol, &self.theta_hat))
    }

    fn selection(&self) -> Result<Selection> {
        if !self.pending.is_empty() {
            return Err(Error::Sequencing(format!(
                "{} start response(s) pending",
                self.pending.len()
            )));
        }
        Ok(select_max(&self.sensitivity_profile()?))
    }

    /// The grid index to observe next. Does not change the state.
    pub fn next_point(&self) -> Result<usize> {
        Ok(self.selection()?.index)
    }

    /// Records response `y` at grid index `k`. On error the state is left
    /// unchanged.
    pub fn observe(&mut self, k: usize, y: f64) -> Result<()> {
        self.spec.check_index(k)?;
        self.spec.family_link().family().check_response(y)?;

        if !self.pending.is_empty() {
            let Some(pos) = self.pending.iter().position(|&j| j == k) else {
                return Err(Error::Sequencing(format!(
                    "grid index {k} is not a pending start point (pending: {:?})",
                    self.pending
                )));
            };
            let slot = self
                .history
                .iter()
                .position(|h| h.index == k && h.y.is_none())
                .expect("pending start point has an open history slot");
            self.pending.remove(pos);
            self.history[slot].y = Some(y);
            self.data.push(k, y)?;
            if self.pending.is_empty() {
                self.refit();
                let diag = self.diagnose(k, y, None, None);
                self.diagnostics.push(diag);
            }
            return Ok(());
        }

        let sel = self.selection()?;
        if sel.index != k {
            return Err(Error::Sequencing(format!(
                "observation at grid index {k} but the suggestion is {}",
                sel.index
            )));
        }
        let prev_n = self.n;
        let next_design = update_design(&self.design, k, prev_n)?;
        let prev_logdet = self.information().logdet().unwrap_or(f64::NEG_INFINITY);
        let new_logdet_same_theta = info_unchecked(&self.spec, &next_design, &self.theta_hat)
            .logdet()
            .unwrap_or(f64::NEG_INFINITY);
        let nf = prev_n as f64;
        let predicted = (sel.d_selected / nf).ln_1p() - self.spec.p() as f64 * (1.0 / nf).ln_1p();
        let residual = new_logdet_same_theta - prev_logdet - predicted;

        self.data.push(k, y)?;
        self.design = next_design;
        self.n += 1;
        self.history.push(HistoryEntry { index: k, y: Some(y) });
        if let EstimatorConfig::Mle { refit_every, .. } = self.estimator {
            if (self.n - self.n_st).is_multiple_of(refit_every) {
                self.refit();
            }
        }
        let diag = self.diagnose(k, y, Some(sel.d_selected), Some(residual));
        self.diagnostics.push(diag);
        Ok(())
    }

    fn refit(&mut self) {
        if let EstimatorConfig::Mle { solver, .. } = &self.estimator {
            let fit = fit_mle(&self.data, solver).expect("solver config validated at init and data non-empty");
            self.theta_hat = fit.theta_vector();
            self.fit = Some(fit);
        }
    }

    fn diagnose(&self, index: usize, y: f64, d_selected: Option<f64>, residual: Option<f64>) -> StepDiagnostics {
        let m = self.information();
        let lambda_min = m.lambda_min();
        let (logdet, kw_gap) = match m.cholesky() {
            Ok(chol) => {
                let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let d_max = select_max(&profile_with(&self.spec, &chol, &self.theta_hat)).d_max;
                (logdet, d_max - self.spec.p() as f64)
            }
            Err(_) => (f64::NEG_INFINITY, f64::NAN),
        };
        StepDiagnostics {
            n: self.n,
            index,
            y,
            theta_hat: self.theta_hat.iter().copied().collect(),
            logdet,
            lambda_min,
            kw_gap,
            d_selected,
            recursion_residual: residual,
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            n: self.n,
            n_st: self.n_st,
            support: self.design.support().to_vec(),
            weights: self.design.weights().to_vec(),
            history: self.history.clone(),
            pending: self.pending.clone(),
            theta_hat: self.theta_hat.iter().copied().collect(),
            fit: self.fit.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Snapshot serialized with 17 significant digits; equal strings mean
    /// bit-identical numeric state.
    pub fn snapshot_json(&self) -> String {
        crate::format::to_string(&self.snapshot()).expect("snapshot serializes")
    }
}

/// Supplies responses for requested grid points.
pub trait ResponseSource {
    fn respond(&mut self, spec: &ModelSpec, k: usize) -> Result<f64>;

    /// The parameter generating the responses, when known.
    fn true_theta(&self) -> Option<&DVector<f64>> {
        None
    }
}

/// Draws from the model at a fixed true parameter.
pub struct SimulatedResponses {
    pub theta: DVector<f64>,
    pub rng: ChaCha8Rng,
}

impl SimulatedResponses {
    pub fn new(theta: DVector<f64>, seed: u64) -> Self {
        Self {
            theta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ResponseSource for SimulatedResponses {
    fn respond(&mut self, spec: &ModelSpec, k: usize) -> Result<f64> {
        let fl = spec.family_link();
        let tau = fl.tau(spec.linear_predictor(k, &self.theta));
        fl.family().sample_response(tau, &mut self.rng)
    }

    fn true_theta(&self) -> Option<&DVector<f64>> {
        Some(&self.theta)
    }
}

/// Returns the exact mean `μ(x, θ)`; only valid responses for families
/// whose support contains the means (Gaussian).
pub struct MeanResponses {
    pub theta: DVector<f64>,
}

impl ResponseSource for MeanResponses {
    fn respond(&mut self, spec: &ModelSpec, k: usize) -> Result<f64> {
        spec.mean_response(k, &self.theta)
    }

    fn true_theta(&self) -> Option<&DVector<f64>> {
        Some(&self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    /// Number of responses observed so far.
    pub n: usize,
    pub index: usize,
    pub label: String,
    pub y: f64,
    pub theta_hat: Vec<f64>,
    pub logdet: Option<f64>,
    pub lambda_min: Option<f64>,
    pub kw_gap: Option<f64>,
    pub err_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub p: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn final_row(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    /// Grid indices in observation order.
    pub fn indices(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.index).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,x_label,y");
        for j in 0..self.p {
            let _ = write!(out, ",theta_hat_{j}");
        }
        out.push_str(",logdet,lambda_min,kw_gap,err_norm\n");
        let opt = |v: Option<f64>| v.map(fmt_sig17).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.n, csv_field(&r.label), fmt_sig17(r.y));
            for t in &r.theta_hat {
                let _ = write!(out, ",{}", fmt_sig17(*t));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                opt(r.logdet),
                opt(r.lambda_min),
                opt(r.kw_gap),
                opt(r.err_norm)
            );
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Appends the row for the latest observation of `state`.
pub fn trajectory_row(state: &AdaptiveState, index: usize, y: f64, truth: Option<&DVector<f64>>) -> TrajectoryRow {
    let diag = state
        .diagnostics()
        .last()
        .filter(|d| d.n == state.n() && state.pending().is_empty() && state.observed() == d.n);
    TrajectoryRow {
        n: state.observed(),
        index,
        label: state.spec().label(index).to_string(),
        y,
        theta_hat: state.theta_hat().iter().copied().collect(),
        logdet: diag.map(|d| d.logdet),
        lambda_min: diag.map(|d| d.lambda_min),
        kw_gap: diag.map(|d| d.kw_gap),
        err_norm: truth.map(|t| (state.theta_hat() - t).norm()),
    }
}

/// Drives `state` to `horizon` design points, answering pending start
/// points first. `on_step` sees the state after every observation.
pub fn run_adaptive_with<F>(
    mut state: AdaptiveState,
    source: &mut dyn ResponseSource,
    horizon: usize,
    mut on_step: F,
) -> Result<(AdaptiveState, Trajectory)>
where
    F: FnMut(&AdaptiveState) -> Result<()>,
{
    if horizon < state.n() {
        return Err(Error::Argument(format!(
            "horizon {horizon} is below the current sample size {}",
            state.n()
        )));
    }
    let spec = state.spec().clone();
    let truth = source.true_theta().cloned();
    let mut rows = Vec::with_capacity(horizon);
    while let Some(&k) = state.pending().first() {
        let y = source.respond(&spec, k)?;
        state.observe(k, y)?;
        rows.push(trajectory_row(&state, k, y, truth.as_ref()));
        on_step(&state)?;
    }
    while state.n() < horizon {
        let k = state.next_point()?;
        let y = source.respond(&spec, k)?;
        state.observe(k, y)?;
        rows.push(trajectory_row(&state, k, y, truth.as_ref()));
        on_step(&state)?;
    }
    Ok((state, Trajectory { p: spec.p(), rows }))
}

/// Runs a fresh session from `start` to `horizon`.
pub fn run_adaptive(
    spec: Arc<ModelSpec>,
    start: &[usize],
    estimator: EstimatorConfig,
    source: &mut dyn ResponseSource,
    horizon: usize,
) -> Result<Trajectory> {
    let state = adaptive_init(spec, start, estimator, None)?;
    Ok(run_adaptive_with(state, source, horizon, |_| Ok(()))?.1)
}
