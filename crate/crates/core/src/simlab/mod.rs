//! Replicated simulation experiments for the adaptive loop.
//!
//! Replicate `r` draws its responses from a ChaCha8 stream seeded with
//! `master_seed ^ r`, so adding replicates never changes existing ones and
//! replicates run in parallel without affecting results.

pub mod stats;

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{adaptive_init, run_adaptive_with, EstimatorConfig, MeanResponses, ResponseSource, SimulatedResponses};
use crate::design::{info_unchecked, Design, DesignEntry, InfoMatrix};
use crate::error::{Error, Result};
use crate::format::{self, fmt_sig17};
use crate::model::{ModelSpec, ModelSpecDocument};
use crate::wynn::{solve_locally_d_optimal, Certificate, WynnConfig};

use self::stats::{chi2_quantile, quantile_sorted, sorted};

/// Minimum number of usable samples for normality diagnostics.
pub const MIN_NORMALITY_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Random draws from the model at the true parameter.
    #[default]
    Simulated,
    /// The exact mean at the true parameter (Gaussian models only).
    Mean,
}

fn default_floor_from() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationConfig {
    pub spec: ModelSpecDocument,
    pub theta_true: Vec<f64>,
    /// Start points by grid label.
    pub start: Vec<String>,
    pub horizon: usize,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub theta_seed: Option<Vec<f64>>,
    pub checkpoints: Vec<usize>,
    /// First sample size included in the λ_min floor.
    #[serde(default = "default_floor_from")]
    pub floor_from: usize,
    #[serde(default)]
    pub responses: ResponseMode,
    /// Solver settings for the locally optimal reference design.
    #[serde(default = "reference_default")]
    pub reference: WynnConfig,
}

fn reference_default() -> WynnConfig {
    WynnConfig {
        max_iters: 100_000,
        kw_gap_tol: 1e-3,
        start_size: None,
    }
}

impl ReplicationConfig {
    /// SHA-256 of the config serialized with 17-digit floats.
    pub fn hash(&self) -> String {
        let text = format::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn prepare(&self) -> Result<Prepared> {
        let spec = Arc::new(ModelSpec::new(self.spec.clone())?);
        let theta = DVector::from_column_slice(&self.theta_true);
        if theta.len() != spec.p() {
            return Err(Error::Dimension {
                expected: spec.p(),
                got: theta.len(),
            });
        }
        if !spec.theta_box().contains_interior(&theta) {
            return Err(Error::Argument("theta_true must lie strictly inside the parameter box".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Argument("replicates must be at least 1".into()));
        }
        let start = self
            .start
            .iter()
            .map(|l| {
                spec.index_of(l)
                    .ok_or_else(|| Error::Argument(format!("start label {l:?} is not on the grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_st = start.len();
        if self.horizon < n_st {
            return Err(Error::Argument(format!("horizon {} is below the start size {n_st}", self.horizon)));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("checkpoints must be strictly increasing".into()));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c < n_st || c > self.horizon) {
            return Err(Error::Argument(format!(
                "checkpoint {c} outside [{n_st}, {}]",
                self.horizon
            )));
        }
        // surface start-design problems once rather than per replicate
        adaptive_init(spec.clone(), &start, self.estimator.clone(), self.theta_seed.clone().map(DVector::from_vec))?;
        Ok(Prepared { spec, theta, start })
    }
}

struct Prepared {
    spec: Arc<ModelSpec>,
    theta: DVector<f64>,
    start: Vec<usize>,
}

/// The locally D-optimal design at the true parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub design: Vec<DesignEntry>,
    pub certificate: Certificate,
    /// `Ψ* = log det M*`.
    pub logdet: f64,
    pub lambda_min: f64,
    /// `M*` by rows.
    pub matrix: Vec<Vec<f64>>,
    pub phi_min: f64,
    pub phi_max: f64,
    /// `0.5 (φ_min/φ_max)² λ_min(M*)`.
    pub floor_threshold: f64,
}

impl Reference {
    pub fn info(&self) -> InfoMatrix {
        let p = self.matrix.len();
        InfoMatrix::from_matrix(DMatrix::from_fn(p, p, |i, j| self.matrix[i][j])).expect("stored matrix is square")
    }
}

pub fn reference_design(spec: &ModelSpec, theta: &DVector<f64>, cfg: &WynnConfig) -> Result<Reference> {
    let start = Design::uniform(spec.len())?;
    let (design, certificate) = solve_locally_d_optimal(spec, theta, &start, cfg)?;
    let m = info_unchecked(spec, &design, theta);
    let (phi_min, phi_max) = spec.phi_bounds();
    let lambda_min = m.lambda_min();
    let p = spec.p();
    Ok(Reference {
        design: design.to_entries(spec),
        logdet: m.logdet()?,
        lambda_min,
        matrix: (0..p).map(|i| (0..p).map(|j| m.matrix()[(i, j)]).collect()).collect(),
        phi_min,
        phi_max,
        floor_threshold: 0.5 * (phi_min / phi_max).powi(2) * lambda_min,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub n: usize,
    pub theta_hat: Vec<f64>,
    /// `‖θ̂_n − θ̄‖`.
    pub err_norm: f64,
    /// `Ψ* − log det M(ξ_n, θ̂_n)`.
    pub logdet_gap: f64,
    /// `‖M(ξ_n, θ̂_n) − M*‖_F`.
    pub info_distance: f64,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointStats>,
    /// Minimum of `λ_min(M(ξ_n, θ))` over `n ≥ floor_from` and `θ` in
    /// `{θ̂_n, θ̄} ∪ box vertices`.
    pub lambda_floor: Option<f64>,
    /// `√N M^{1/2}(ξ_N, θ̂_N)(θ̂_N − θ̄)` for interior converged fits.
    pub z: Option<Vec<f64>>,
    pub z_excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateError {
    pub replicate: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalitySample {
    pub z: Vec<Vec<f64>>,
    pub contributed: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub cfg_hash: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub horizon: usize,
    pub p: usize,
    pub theta_true: Vec<f64>,
    pub checkpoints: Vec<usize>,
    pub reference: Reference,
    pub results: Vec<ReplicateResult>,
    pub errors: Vec<ReplicateError>,
    pub normality: NormalitySample,
}

pub fn replicate_seed(master_seed: u64, replicate: usize) -> u64 {
    master_seed ^ replicate as u64
}

fn run_replicate(cfg: &ReplicationConfig, prep: &Prepared, reference: &Reference, r: usize) -> Result<ReplicateResult> {
    let seed = replicate_seed(cfg.master_seed, r);
    let spec = &prep.spec;
    let mut source: Box<dyn ResponseSource> = match cfg.responses {
        ResponseMode::Simulated => Box::new(SimulatedResponses::new(prep.theta.clone(), seed)),
        ResponseMode::Mean => Box::new(MeanResponses {
            theta: prep.theta.clone(),
        }),
    };
    let state = adaptive_init(
        spec.clone(),
        &prep.start,
        cfg.estimator.clone(),
        cfg.theta_seed.clone().map(DVector::from_vec),
    )?;
    let m_star = reference.info();
    let vertices = spec.theta_box().vertices();
    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    let mut floor: Option<f64> = None;

    let (state, _) = run_adaptive_with(state, source.as_mut(), cfg.horizon, |s| {
        if !s.pending().is_empty() {
            return Ok(());
        }
        let n = s.n();
        let m = s.information();
        if n >= cfg.floor_from {
            let mut lo = m.lambda_min();
            for t in std::iter::once(&prep.theta).chain(vertices.iter()) {
                lo = lo.min(info_unchecked(spec, s.design(), t).lambda_min());
            }
            floor = Some(floor.map_or(lo, |f: f64| f.min(lo)));
        }
        if cfg.checkpoints.binary_search(&n).is_ok() && checkpoints.last().is_none_or(|c: &CheckpointStats| c.n != n) {
            checkpoints.push(CheckpointStats {
                n,
                theta_hat: s.theta_hat().iter().copied().collect(),
                err_norm: (s.theta_hat() - &prep.theta).norm(),
                logdet_gap: reference.logdet - m.logdet().unwrap_or(f64::NEG_INFINITY),
                info_distance: m.frobenius_distance(&m_star),
                lambda_min: m.lambda_min(),
            });
        }
        Ok(())
    })?;

    let (z, z_excluded) = match state.fit() {
        None => (None, Some("no likelihood fit".to_string())),
        Some(fit) if fit.on_boundary() => (None, Some("boundary fit".to_string())),
        Some(fit) if !fit.converged => (None, Some("fit not converged".to_string())),
        Some(_) => {
            let (_, root) = state.information().sym_inv_sqrt()?;
            let z = root * (state.theta_hat() - &prep.theta) * (state.n() as f64).sqrt();
            (Some(z.iter().copied().collect()), None)
        }
    };
    Ok(ReplicateResult {
        replicate: r,
        seed,
        checkpoints,
        lambda_floor: floor,
        z,
        z_excluded,
    })
}

/// Runs `cfg.replicates` independent adaptive trajectories in parallel.
pub fn simulate_replications(cfg: &ReplicationConfig) -> Result<ReplicationSummary> {
    let prep = cfg.prepare()?;
    let reference = reference_design(&prep.spec, &prep.theta, &cfg.reference)?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &prep, &reference, r))
        .collect();

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(res) => results.push(res),
            Err(e) => errors.push(ReplicateError {
                replicate: r,
                seed: replicate_seed(cfg.master_seed, r),
                message: e.to_string(),
            }),
        }
    }
    let z: Vec<Vec<f64>> = results.iter().filter_map(|r| r.z.clone()).collect();
    let normality = NormalitySample {
        contributed: z.len(),
        excluded: cfg.replicates - z.len(),
        z,
    };
    Ok(ReplicationSummary {
        cfg_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        replicates: cfg.replicates,
        horizon: cfg.horizon,
        p: prep.spec.p(),
        theta_true: cfg.theta_true.clone(),
        checkpoints: cfg.checkpoints.clone(),
        reference,
        results,
        errors,
        normality,
    })
}

impl ReplicationSummary {
    pub fn to_json(&self) -> String {
        format::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per replicate and checkpoint.
    pub fn checkpoints_csv(&self) -> String {
        let mut out = String::from("replicate,seed,n,err_norm,logdet_gap,info_distance,lambda_min");
        for j in 0..self.p {
            let _ = write!(out, ",theta_hat_{j}");
        }
        out.push('\n');
        for r in &self.results {
            for c in &r.checkpoints {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.replicate,
                    r.seed,
                    c.n,
                    fmt_sig17(c.err_norm),
                    fmt_sig17(c.logdet_gap),
                    fmt_sig17(c.info_distance),
                    fmt_sig17(c.lambda_min)
                );
                for t in &c.theta_hat {
                    let _ = write!(out, ",{}", fmt_sig17(*t));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Values of one checkpoint statistic at sample size `n`.
    pub fn at_checkpoint(&self, n: usize, stat: impl Fn(&CheckpointStats) -> f64) -> Vec<f64> {
        self.results
            .iter()
            .filter_map(|r| r.checkpoints.iter().find(|c| c.n == n).map(&stat))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub samples: usize,
    pub excluded: usize,
    pub mean: Vec<f64>,
    pub mean_norm: f64,
    pub covariance: Vec<Vec<f64>>,
    /// `‖cov(Z) − I‖_F`.
    pub cov_distance: f64,
    /// 0.95 quantile of χ²_p.
    pub chi2_quantile: f64,
    /// Fraction of samples with `‖Z‖² ≤ χ²_{p,0.95}`.
    pub coverage: f64,
}

pub fn normality_diagnostics(sample: &NormalitySample) -> Result<NormalityReport> {
    let z = &sample.z;
    if z.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSample {
            got: z.len(),
            need: MIN_NORMALITY_SAMPLES,
        });
    }
    let p = z[0].len();
    if p == 0 {
        return Err(Error::Argument("normality sample has dimension 0".into()));
    }
    if let Some(bad) = z.iter().find(|v| v.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: bad.len(),
        });
    }
    let count = z.len() as f64;
    let vecs: Vec<DVector<f64>> = z.iter().map(|v| DVector::from_column_slice(v)).collect();
    let mean = vecs.iter().fold(DVector::zeros(p), |acc, v| acc + v) / count;
    let mut cov = DMatrix::zeros(p, p);
    for v in &vecs {
        let d = v - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= count - 1.0;
    let q = chi2_quantile(0.95, p)?;
    let inside = vecs.iter().filter(|v| v.norm_squared() <= q).count();
    Ok(NormalityReport {
        samples: z.len(),
        excluded: sample.excluded,
        mean_norm: mean.norm(),
        mean: mean.iter().copied().collect(),
        cov_distance: (&cov - DMatrix::identity(p, p)).norm(),
        covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        chi2_quantile: q,
        coverage: inside as f64 / count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub p90: f64,
}

impl Spread {
    fn of(values: Vec<f64>) -> Self {
        let s = sorted(values);
        Spread {
            median: quantile_sorted(&s, 0.5),
            p90: quantile_sorted(&s, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAggregate {
    pub n: usize,
    pub count: usize,
    pub err_norm: Spread,
    pub info_distance: Spread,
    pub logdet_gap: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub checkpoints: Vec<CheckpointAggregate>,
    pub err_norm_monotone: bool,
    pub info_distance_monotone: bool,
    pub logdet_gap_monotone: bool,
}

/// Per-checkpoint medians and 90th percentiles of the distances to the
/// truth and to the reference design `M*` stored in the summary.
pub fn convergence_report(summary: &ReplicationSummary) -> ConvergenceReport {
    let checkpoints: Vec<CheckpointAggregate> = summary
        .checkpoints
        .iter()
        .map(|&n| {
            let err = summary.at_checkpoint(n, |c| c.err_norm);
            CheckpointAggregate {
                n,
                count: err.len(),
                err_norm: Spread::of(err),
                info_distance: Spread::of(summary.at_checkpoint(n, |c| c.info_distance)),
                logdet_gap: Spread::of(summary.at_checkpoint(n, |c| c.logdet_gap)),
            }
        })
        .collect();
    let monotone = |f: fn(&CheckpointAggregate) -> f64| checkpoints.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    ConvergenceReport {
        err_norm_monotone: monotone(|c| c.err_norm.median),
        info_distance_monotone: monotone(|c| c.info_distance.median),
        logdet_gap_monotone: monotone(|c| c.logdet_gap.median),
        checkpoints,
    }
}
