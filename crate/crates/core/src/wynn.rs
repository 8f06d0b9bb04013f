//! The Wynn iteration at a fixed parameter and the locally D-optimal
//! solver built on it.
//!
//! Each step adds the grid point of maximal sensitivity with weight
//! `1/(n+1)`. By the Kiefer–Wolfowitz equivalence theorem `max_x d(x) ≥ p`
//! for every design with nonsingular information, with equality exactly at
//! a D-optimal design, so `max_x d(x) − p` certifies optimality.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::{info_unchecked, profile_with, update_design, Design};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WynnConfig {
    pub max_iters: usize,
    /// Stop once `max d − p` falls to this value.
    pub kw_gap_tol: f64,
    /// Sample size represented by the start design; defaults to its
    /// number of support points.
    #[serde(default)]
    pub start_size: Option<usize>,
}

impl Default for WynnConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            kw_gap_tol: 1e-3,
            start_size: None,
        }
    }
}

impl WynnConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.kw_gap_tol > 0.0) {
            return Err(Error::Argument("kw_gap_tol must be positive".into()));
        }
        if self.start_size == Some(0) {
            return Err(Error::Argument("start_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rounds to 12 significant decimal digits.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(11 - mag);
    if factor.is_finite() && (x * factor).is_finite() {
        (x * factor).round() / factor
    } else {
        x
    }
}

/// The selected argmax of a sensitivity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Sensitivity at the selected point.
    pub d_selected: f64,
    /// Unrounded maximum over the grid.
    pub d_max: f64,
}

/// Argmax with ties (after rounding to 12 significant digits) broken by
/// the lowest grid index.
pub fn select_max(profile: &[f64]) -> Selection {
    let mut best = 0;
    let mut best_r = f64::NEG_INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for (k, &d) in profile.iter().enumerate() {
        d_max = d_max.max(d);
        let r = round_sig12(d);
        if r > best_r {
            best_r = r;
            best = k;
        }
    }
    Selection {
        index: best,
        d_selected: profile[best],
        d_max,
    }
}

/// Sensitivity-maximizing selection for `(ξ, θ)`.
pub fn select_next(spec: &ModelSpec, design: &Design, theta: &DVector<f64>) -> Result<Selection> {
    let m = info_unchecked(spec, design, theta);
    let chol = m.cholesky()?;
    Ok(select_max(&profile_with(spec, &chol, theta)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WynnStep {
    pub index: usize,
    pub design: Design,
    pub d_max: f64,
    pub d_selected: f64,
}

/// One Wynn step from a design of sample size `n`.
pub fn wynn_step(spec: &ModelSpec, design: &Design, theta: &DVector<f64>, n: usize) -> Result<WynnStep> {
    spec.check_theta(theta)?;
    if let Some(&k) = design.support().last() {
        spec.check_index(k)?;
    }
    let sel = select_next(spec, design, theta)?;
    Ok(WynnStep {
        index: sel.index,
        design: update_design(design, sel.index, n)?,
        d_max: sel.d_max,
        d_selected: sel.d_selected,
    })
}

/// `max_x d(x, ξ, θ) − p`.
pub fn kw_gap(spec: &ModelSpec, design: &Design, theta: &DVector<f64>) -> Result<f64> {
    spec.check_theta(theta)?;
    Ok(select_next(spec, design, theta)?.d_max - spec.p() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kw_gap: f64,
    pub logdet: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Iterates [`wynn_step`] at fixed `θ` until the KW gap drops to the
/// tolerance or the iteration budget is spent.
///
/// On convergence the current design is returned; its log-determinant is
/// within `p·log(1 + gap/p) ≤ gap` of the optimum. Otherwise the iterate
/// with the largest log-determinant seen is returned.
pub fn solve_locally_d_optimal(
    spec: &ModelSpec,
    theta: &DVector<f64>,
    start: &Design,
    cfg: &WynnConfig,
) -> Result<(Design, Certificate)> {
    cfg.validate()?;
    spec.check_theta(theta)?;
    if let Some(&k) = start.support().last() {
        spec.check_index(k)?;
    }
    let p = spec.p() as f64;
    let mut n = cfg.start_size.unwrap_or(start.len());
    let mut xi = start.clone();
    let mut best: Option<(f64, f64, Design)> = None;

    for it in 0..=cfg.max_iters {
        let m = info_unchecked(spec, &xi, theta);
        let chol = m.cholesky()?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let sel = select_max(&profile_with(spec, &chol, theta));
        let gap = sel.d_max - p;

        if gap <= cfg.kw_gap_tol {
            return Ok((
                xi,
                Certificate {
                    kw_gap: gap,
                    logdet,
                    iterations: it,
                    status: SolveStatus::Converged,
                },
            ));
        }
        if best.as_ref().is_none_or(|b| logdet > b.0) {
            best = Some((logdet, gap, xi.clone()));
        }
        if it == cfg.max_iters {
            break;
        }
        xi = update_design(&xi, sel.index, n)?;
        n += 1;
    }

    let (logdet, gap, design) = best.expect("at least one iterate evaluated");
    Ok((
        design,
        Certificate {
            kw_gap: gap,
            logdet,
            iterations: cfg.max_iters,
            status: SolveStatus::BudgetExhausted,
        },
    ))
}
