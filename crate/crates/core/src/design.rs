//! Designs as finite-support probability measures on grid indices, their
//! information matrices and the sensitivity function.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Tolerance on total mass of a design.
pub const MASS_TOL: f64 = 1e-12;
/// Weights below this after an update are dropped.
pub const PRUNE_WEIGHT: f64 = 1e-15;
/// Relative eigenvalue threshold for positive definiteness (scaled by `p`).
pub const PD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    support: Vec<usize>,
    weights: Vec<f64>,
}

impl Design {
    /// Builds a design from parallel support/weight lists. Duplicate
    /// indices are rejected; the result is sorted by index.
    pub fn new(support: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::InvalidDesign(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidDesign("empty support".into()));
        }
        let mut pairs: Vec<(usize, f64)> = support.into_iter().zip(weights).collect();
        pairs.sort_by_key(|&(k, _)| k);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDesign("support indices must be unique".into()));
        }
        if let Some(&(k, w)) = pairs.iter().find(|(_, w)| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDesign(format!(
                "weight {w} at index {k} is not positive"
            )));
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDesign(format!("weights sum to {total}")));
        }
        let (support, weights) = pairs.into_iter().unzip();
        Ok(Self { support, weights })
    }

    /// The empirical measure `(1/n) Σ δ_{x_i}` of a list of points.
    pub fn empirical(points: &[usize]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDesign("empty support".into()));
        }
        let mut counts = BTreeMap::new();
        for &k in points {
            *counts.entry(k).or_insert(0usize) += 1;
        }
        let n = points.len() as f64;
        Ok(Self {
            support: counts.keys().copied().collect(),
            weights: counts.values().map(|&c| c as f64 / n).collect(),
        })
    }

    /// Equal weights on the first `len` grid indices.
    pub fn uniform(len: usize) -> Result<Self> {
        Self::empirical(&(0..len).collect::<Vec<_>>())
    }

    pub fn point_mass(k: usize) -> Self {
        Self {
            support: vec![k],
            weights: vec![1.0],
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn weight_of(&self, k: usize) -> f64 {
        self.support
            .binary_search(&k)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `α ξ + (1 − α) η`.
    pub fn mixture(alpha: f64, a: &Design, b: &Design) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Argument(format!("mixture weight {alpha} not in [0, 1]")));
        }
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (k, w) in a.iter() {
            *acc.entry(k).or_default() += alpha * w;
        }
        for (k, w) in b.iter() {
            *acc.entry(k).or_default() += (1.0 - alpha) * w;
        }
        Ok(Self::from_map_normalized(acc))
    }

    fn from_map_normalized(acc: BTreeMap<usize, f64>) -> Self {
        let kept: Vec<(usize, f64)> = acc.into_iter().filter(|&(_, w)| w >= PRUNE_WEIGHT).collect();
        let total: f64 = kept.iter().map(|p| p.1).sum();
        Self {
            support: kept.iter().map(|p| p.0).collect(),
            weights: kept.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// Labeled weights for serialization.
    pub fn to_entries(&self, spec: &ModelSpec) -> Vec<DesignEntry> {
        self.iter()
            .map(|(k, w)| DesignEntry {
                label: spec.label(k).to_string(),
                weight: w,
            })
            .collect()
    }

    pub fn from_entries(spec: &ModelSpec, entries: &[DesignEntry]) -> Result<Self> {
        let mut support = Vec::with_capacity(entries.len());
        for e in entries {
            support.push(
                spec.index_of(&e.label)
                    .ok_or_else(|| Error::InvalidDesign(format!("unknown label {:?}", e.label)))?,
            );
        }
        Self::new(support, entries.iter().map(|e| e.weight).collect())
    }

    fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if let Some(&k) = self.support.last() {
            spec.check_index(k)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub label: String,
    pub weight: f64,
}

/// `ξ_{n+1} = n/(n+1) ξ_n + 1/(n+1) δ_k`, renormalized to unit mass.
pub fn update_design(design: &Design, k: usize, n: usize) -> Result<Design> {
    if n == 0 {
        return Err(Error::Argument("update_design requires n >= 1".into()));
    }
    let nf = n as f64;
    let keep = nf / (nf + 1.0);
    let add = 1.0 / (nf + 1.0);
    let mut acc: BTreeMap<usize, f64> = design.iter().map(|(j, w)| (j, w * keep)).collect();
    *acc.entry(k).or_default() += add;
    Ok(Design::from_map_normalized(acc))
}

/// A symmetric nonnegative definite `p × p` information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix(DMatrix<f64>);

impl InfoMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Argument("information matrix must be square".into()));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Argument("information matrix must be symmetric".into()));
        }
        Ok(Self(m))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    /// `λ_min > p · 1e-12 · λ_max`.
    pub fn is_pd(&self) -> bool {
        let ev = self.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        hi > 0.0 && lo > self.dim() as f64 * PD_REL_TOL * hi
    }

    fn require_pd(&self) -> Result<Cholesky<f64, Dyn>> {
        if !self.is_pd() {
            return Err(Error::Singular {
                lambda_min: self.lambda_min(),
            });
        }
        self.0.clone().cholesky().ok_or_else(|| Error::Singular {
            lambda_min: self.lambda_min(),
        })
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        self.require_pd()
    }

    /// `log det M` from the Cholesky factor.
    pub fn logdet(&self) -> Result<f64> {
        let chol = self.require_pd()?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.require_pd()?.inverse())
    }

    /// `(M⁻¹, M^{1/2})`, both from one eigendecomposition.
    pub fn sym_inv_sqrt(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.require_pd()?;
        let eig = SymmetricEigen::new(self.0.clone());
        let q = &eig.eigenvectors;
        let inv = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * q.transpose();
        let sqrt = q * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
        Ok((symmetrize(inv), symmetrize(sqrt)))
    }

    /// Symmetric square root of a nonnegative definite matrix; negative
    /// round-off eigenvalues are clamped to zero.
    pub fn sqrt_psd(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.0.clone());
        let q = &eig.eigenvectors;
        symmetrize(q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt())) * q.transpose())
    }

    pub fn frobenius_distance(&self, other: &InfoMatrix) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Moore–Penrose inverse of a symmetric matrix, treating eigenvalues
/// below `rel_tol · λ_max` as zero.
pub fn pinv_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let cut = rel_tol * lmax;
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cut && l != 0.0 { 1.0 / l } else { 0.0 });
    let q = &eig.eigenvectors;
    symmetrize(q * DMatrix::from_diagonal(&inv) * q.transpose())
}

pub(crate) fn info_unchecked(spec: &ModelSpec, design: &Design, theta: &DVector<f64>) -> InfoMatrix {
    let p = spec.p();
    let mut m = DMatrix::zeros(p, p);
    for (k, w) in design.iter() {
        let ft = spec.f_theta_unchecked(k, theta);
        for j in 0..p {
            let a = w * ft[j];
            for i in j..p {
                m[(i, j)] += a * ft[i];
            }
        }
    }
    for j in 0..p {
        for i in (j + 1)..p {
            m[(j, i)] = m[(i, j)];
        }
    }
    InfoMatrix(m)
}

/// `M(ξ, θ) = Σ ξ(x) f_θ(x) f_θᵀ(x)`.
pub fn information_matrix(spec: &ModelSpec, design: &Design, theta: &DVector<f64>) -> Result<InfoMatrix> {
    design.check_against(spec)?;
    spec.check_theta(theta)?;
    Ok(info_unchecked(spec, design, theta))
}

/// `d(x_k, ξ, θ) = f_θᵀ(x_k) M⁻¹(ξ, θ) f_θ(x_k)`.
pub fn sensitivity(spec: &ModelSpec, design: &Design, theta: &DVector<f64>, k: usize) -> Result<f64> {
    spec.check_index(k)?;
    let chol = information_matrix(spec, design, theta)?.cholesky()?;
    Ok(quad_inv(&chol, &spec.f_theta_unchecked(k, theta)))
}

/// The sensitivity function over every grid point.
pub fn sensitivity_profile(spec: &ModelSpec, design: &Design, theta: &DVector<f64>) -> Result<Vec<f64>> {
    let chol = information_matrix(spec, design, theta)?.cholesky()?;
    Ok(profile_with(spec, &chol, theta))
}

pub(crate) fn profile_with(spec: &ModelSpec, chol: &Cholesky<f64, Dyn>, theta: &DVector<f64>) -> Vec<f64> {
    (0..spec.len())
        .map(|k| quad_inv(chol, &spec.f_theta_unchecked(k, theta)))
        .collect()
}

/// `aᵀ M⁻¹ a` via the Cholesky factor `M = L Lᵀ`.
pub(crate) fn quad_inv(chol: &Cholesky<f64, Dyn>, a: &DVector<f64>) -> f64 {
    let z = chol
        .l_dirty()
        .solve_lower_triangular(a)
        .expect("cholesky factor has a nonzero diagonal");
    z.norm_squared()
}
