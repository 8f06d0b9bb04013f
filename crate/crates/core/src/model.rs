//! The experimental setup: a finite candidate grid with regressor vectors
//! `f(x)`, a compact parameter box, and the inverse link.
//!
//! Under the GLM factorization `f_θ(x) = φ(fᵀ(x)θ) f(x)` the parameter only
//! rescales each regressor by a positive factor.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::FamilyLink;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    /// Raw coordinates, carried for reporting only.
    #[serde(default)]
    pub x: Vec<f64>,
    /// The regressor vector `f(x)`.
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&lo, &hi))| t >= lo && t <= hi)
    }

    /// Strict interior membership.
    pub fn contains_interior(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&lo, &hi))| t > lo && t < hi)
    }

    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            theta.len(),
            theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&t, (&lo, &hi))| t.clamp(lo, hi)),
        )
    }

    pub fn midpoint(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi)),
        )
    }

    /// All `2ᵖ` corners, in binary-counter order.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let p = self.dim();
        (0..1usize << p)
            .map(|mask| {
                DVector::from_fn(p, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
    }

    /// Range of `aᵀθ` over the box.
    pub fn linear_range(&self, a: &[f64]) -> (f64, f64) {
        a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold((0.0, 0.0), |(lo, hi), (&ai, (&l, &u))| {
                let (x, y) = (ai * l, ai * u);
                (lo + x.min(y), hi + x.max(y))
            })
    }
}

/// The on-disk model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecDocument {
    pub family_link: FamilyLink,
    pub grid: Vec<GridPoint>,
    pub theta_box: ParameterBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum ValidationFailure {
    EmptyGrid,
    DimensionMismatch {
        label: String,
        expected: usize,
        got: usize,
    },
    NonFinite {
        label: String,
    },
    DuplicateLabel {
        label: String,
    },
    RankDeficient {
        rank: usize,
        p: usize,
        sigma_min: f64,
        sigma_max: f64,
    },
    BoxDimension {
        expected: usize,
        got: usize,
    },
    BoxInverted {
        coord: usize,
        lower: f64,
        upper: f64,
    },
    IntervalViolation {
        label: String,
        value: f64,
    },
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationFailure::EmptyGrid => write!(f, "grid is empty"),
            ValidationFailure::DimensionMismatch {
                label,
                expected,
                got,
            } => write!(f, "point {label:?}: f has length {got}, expected {expected}"),
            ValidationFailure::NonFinite { label } => {
                write!(f, "point {label:?}: non-finite regressor value")
            }
            ValidationFailure::DuplicateLabel { label } => write!(f, "duplicate label {label:?}"),
            ValidationFailure::RankDeficient {
                rank,
                p,
                sigma_min,
                sigma_max,
            } => write!(
                f,
                "regressors span rank {rank} < p = {p} (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})"
            ),
            ValidationFailure::BoxDimension { expected, got } => {
                write!(f, "theta_box has dimension {got}, expected {expected}")
            }
            ValidationFailure::BoxInverted {
                coord,
                lower,
                upper,
            } => write!(f, "theta_box coordinate {coord}: lower {lower} > upper {upper}"),
            ValidationFailure::IntervalViolation { label, value } => write!(
                f,
                "point {label:?}: linear predictor {value} leaves the inverse-link domain"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.failures.is_empty() {
            return write!(f, "valid");
        }
        for (i, fail) in self.failures.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{fail}")?;
        }
        Ok(())
    }
}

/// Numerical rank of the stacked rows, with the extreme singular values.
pub fn rank_of(rows: &[&[f64]], p: usize) -> (usize, f64, f64) {
    if rows.is_empty() || p == 0 {
        return (0, 0.0, 0.0);
    }
    let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = if rows.len() >= p { sv.min() } else { 0.0 };
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
    (rank, smin, smax)
}

pub fn validate_document(doc: &ModelSpecDocument) -> ValidationReport {
    let mut failures = Vec::new();
    if doc.grid.is_empty() {
        failures.push(ValidationFailure::EmptyGrid);
        return ValidationReport { failures };
    }
    let p = doc.grid[0].f.len();

    let mut seen = HashSet::new();
    let mut shape_ok = true;
    for pt in &doc.grid {
        if !seen.insert(pt.label.as_str()) {
            failures.push(ValidationFailure::DuplicateLabel {
                label: pt.label.clone(),
            });
        }
        if pt.f.len() != p {
            shape_ok = false;
            failures.push(ValidationFailure::DimensionMismatch {
                label: pt.label.clone(),
                expected: p,
                got: pt.f.len(),
            });
        } else if pt.f.iter().any(|v| !v.is_finite()) {
            shape_ok = false;
            failures.push(ValidationFailure::NonFinite {
                label: pt.label.clone(),
            });
        }
    }

    if shape_ok {
        let rows: Vec<&[f64]> = doc.grid.iter().map(|g| g.f.as_slice()).collect();
        let (rank, smin, smax) = rank_of(&rows, p);
        if p == 0 || rank < p || smin <= RANK_TOL * smax {
            failures.push(ValidationFailure::RankDeficient {
                rank,
                p,
                sigma_min: smin,
                sigma_max: smax,
            });
        }
    }

    let bx = &doc.theta_box;
    let mut box_ok = true;
    if bx.lower.len() != p || bx.upper.len() != p {
        box_ok = false;
        failures.push(ValidationFailure::BoxDimension {
            expected: p,
            got: bx.lower.len().max(bx.upper.len()),
        });
    } else {
        for (i, (&lo, &hi)) in bx.lower.iter().zip(&bx.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                box_ok = false;
                failures.push(ValidationFailure::BoxInverted {
                    coord: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
    }

    // fᵀ(x)θ is linear in θ, so checking every vertex covers the box.
    if shape_ok && box_ok {
        let domain = doc.family_link.linear_domain();
        for pt in &doc.grid {
            for v in bx.vertices() {
                let u: f64 = pt.f.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                if !domain.contains(u) {
                    failures.push(ValidationFailure::IntervalViolation {
                        label: pt.label.clone(),
                        value: u,
                    });
                    break;
                }
            }
        }
    }

    ValidationReport { failures }
}

/// A validated model: grid, regressors, parameter box and inverse link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecDocument", into = "ModelSpecDocument")]
pub struct ModelSpec {
    family_link: FamilyLink,
    grid: Vec<GridPoint>,
    theta_box: ParameterBox,
    fvecs: Vec<DVector<f64>>,
}

impl TryFrom<ModelSpecDocument> for ModelSpec {
    type Error = Error;

    fn try_from(doc: ModelSpecDocument) -> Result<Self> {
        ModelSpec::new(doc)
    }
}

impl From<ModelSpec> for ModelSpecDocument {
    fn from(spec: ModelSpec) -> Self {
        spec.to_document()
    }
}

impl ModelSpec {
    pub fn new(doc: ModelSpecDocument) -> Result<Self> {
        let report = validate_document(&doc);
        if !report.is_valid() {
            return Err(Error::Validation(report));
        }
        let fvecs = doc
            .grid
            .iter()
            .map(|g| DVector::from_column_slice(&g.f))
            .collect();
        Ok(Self {
            family_link: doc.family_link,
            grid: doc.grid,
            theta_box: doc.theta_box,
            fvecs,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelSpecDocument = serde_json::from_str(text)?;
        Self::new(doc)
    }

    pub fn to_document(&self) -> ModelSpecDocument {
        ModelSpecDocument {
            family_link: self.family_link,
            grid: self.grid.clone(),
            theta_box: self.theta_box.clone(),
        }
    }

    /// One-dimensional polynomial regression `f(x) = (1, x, …, x^degree)` on
    /// the given points.
    pub fn polynomial_1d(
        family_link: FamilyLink,
        xs: &[f64],
        degree: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let grid = xs
            .iter()
            .map(|&x| GridPoint {
                label: format_label(x),
                x: vec![x],
                f: (0..=degree).map(|d| x.powi(d as i32)).collect(),
            })
            .collect();
        Self::new(ModelSpecDocument {
            family_link,
            grid,
            theta_box: ParameterBox::new(lower, upper),
        })
    }

    pub fn family_link(&self) -> FamilyLink {
        self.family_link
    }

    pub fn p(&self) -> usize {
        self.fvecs[0].len()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[GridPoint] {
        &self.grid
    }

    pub fn theta_box(&self) -> &ParameterBox {
        &self.theta_box
    }

    pub fn label(&self, k: usize) -> &str {
        &self.grid[k].label
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.grid.iter().position(|g| g.label == label)
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k < self.grid.len() {
            Ok(())
        } else {
            Err(Error::Index {
                index: k,
                len: self.grid.len(),
            })
        }
    }

    pub fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: theta.len(),
            });
        }
        if !self.theta_box.contains(theta) {
            let bad = theta
                .iter()
                .enumerate()
                .find(|(i, &t)| !(t >= self.theta_box.lower[*i] && t <= self.theta_box.upper[*i]))
                .map(|(_, &t)| t)
                .unwrap_or(f64::NAN);
            return Err(Error::domain(
                "theta",
                bad,
                format!("box {:?}..{:?}", self.theta_box.lower, self.theta_box.upper),
            ));
        }
        Ok(())
    }

    /// `f(x_k)`.
    pub fn f(&self, k: usize) -> &DVector<f64> {
        &self.fvecs[k]
    }

    pub fn linear_predictor(&self, k: usize, theta: &DVector<f64>) -> f64 {
        self.fvecs[k].dot(theta)
    }

    pub(crate) fn f_theta_unchecked(&self, k: usize, theta: &DVector<f64>) -> DVector<f64> {
        let u = self.linear_predictor(k, theta);
        &self.fvecs[k] * self.family_link.phi_unchecked(u)
    }

    /// `f_θ(x_k) = φ(fᵀ(x_k)θ) f(x_k)`.
    pub fn f_theta(&self, k: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(k)?;
        self.check_theta(theta)?;
        Ok(self.f_theta_unchecked(k, theta))
    }

    /// `μ(x_k, θ) = G(fᵀ(x_k)θ)`.
    pub fn mean_response(&self, k: usize, theta: &DVector<f64>) -> Result<f64> {
        self.check_index(k)?;
        if theta.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: theta.len(),
            });
        }
        self.family_link
            .inverse_link(self.linear_predictor(k, theta))
    }

    /// Rank of the regressors at the given grid indices.
    pub fn rank_at(&self, indices: &[usize]) -> Result<usize> {
        for &k in indices {
            self.check_index(k)?;
        }
        let rows: Vec<&[f64]> = indices.iter().map(|&k| self.fvecs[k].as_slice()).collect();
        Ok(rank_of(&rows, self.p()).0)
    }

    /// Range `[c₁, c₂]` of `fᵀ(x)θ` over grid × box.
    pub fn linear_predictor_range(&self) -> (f64, f64) {
        self.grid.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), g| {
                let (a, b) = self.theta_box.linear_range(&g.f);
                (lo.min(a), hi.max(b))
            },
        )
    }

    /// `(φ_min, φ_max)` over the attained linear-predictor interval.
    pub fn phi_bounds(&self) -> (f64, f64) {
        let (c1, c2) = self.linear_predictor_range();
        self.family_link.phi_extrema(c1, c2)
    }

    /// The constants `γ`, `κ̂` and the φ bounds.
    ///
    /// `γ` is exact: for each grid point the extremes of φ over the box are
    /// attained at interval endpoints or stationary points of φ. `κ̂` is a
    /// sampled upper approximation of `κ`: the minimum over the coordinate
    /// axes plus `sphere_samples` random unit vectors, and over the box
    /// vertices plus `theta_samples` random parameters, of
    /// `max_x (vᵀ f_θ(x))²`.
    pub fn model_constants<R: Rng + ?Sized>(
        &self,
        sphere_samples: usize,
        theta_samples: usize,
        rng: &mut R,
    ) -> Result<ModelConstants> {
        if sphere_samples == 0 || theta_samples == 0 {
            return Err(Error::Argument("sample counts must be at least 1".into()));
        }
        let p = self.p();
        let fl = self.family_link;

        let gamma = self
            .grid
            .iter()
            .zip(&self.fvecs)
            .map(|(g, f)| {
                let (lo, hi) = self.theta_box.linear_range(&g.f);
                fl.phi_extrema(lo, hi).1 * f.norm()
            })
            .fold(0.0, f64::max);

        let mut thetas = self.theta_box.vertices();
        thetas.extend((0..theta_samples).map(|_| self.theta_box.sample(rng)));

        let mut dirs: Vec<DVector<f64>> = (0..p)
            .map(|i| DVector::from_fn(p, |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        while dirs.len() < p + sphere_samples {
            let v = DVector::from_fn(p, |_, _| {
                rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
            });
            let n = v.norm();
            if n > 1e-12 {
                dirs.push(v / n);
            }
        }

        let mut kappa = f64::INFINITY;
        for theta in &thetas {
            let ft: Vec<DVector<f64>> = (0..self.len())
                .map(|k| self.f_theta_unchecked(k, theta))
                .collect();
            for v in &dirs {
                let m = ft.iter().map(|f| v.dot(f).powi(2)).fold(0.0, f64::max);
                kappa = kappa.min(m);
            }
        }

        let (phi_min, phi_max) = self.phi_bounds();
        Ok(ModelConstants {
            gamma,
            kappa_hat: kappa,
            phi_min,
            phi_max,
            sphere_samples,
            theta_samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub gamma: f64,
    pub kappa_hat: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub sphere_samples: usize,
    pub theta_samples: usize,
}

/// Compact decimal label for a grid coordinate, e.g. `-1`, `0.25`.
pub fn format_label(x: f64) -> String {
    let s = format!("{:.6}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// `count` equispaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(fl: FamilyLink, xs: &[f64]) -> ModelSpec {
        ModelSpec::polynomial_1d(fl, xs, 1, vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn f_theta_gaussian_is_f() {
        let spec = line(FamilyLink::GaussianIdentity, &[-1.0, 0.0, 0.4, 1.0]);
        let theta = DVector::from_vec(vec![0.7, -1.3]);
        for k in 0..spec.len() {
            assert_eq!(spec.f_theta(k, &theta).unwrap(), *spec.f(k));
        }
    }

    #[test]
    fn f_theta_logistic_at_zero() {
        let spec = line(FamilyLink::BernoulliLogit, &[-1.0, 0.4, 1.0]);
        let ft = spec.f_theta(1, &DVector::zeros(2)).unwrap();
        assert_eq!(ft.as_slice(), &[0.5, 0.5 * 0.4]);
    }

    #[test]
    fn f_theta_errors() {
        let spec = line(FamilyLink::BernoulliLogit, &[-1.0, 1.0]);
        assert!(matches!(
            spec.f_theta(5, &DVector::zeros(2)),
            Err(Error::Index { index: 5, len: 2 })
        ));
        assert!(matches!(
            spec.f_theta(0, &DVector::from_vec(vec![3.0, 0.0])),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn glm_factorization() {
        let xs = linspace(-3.0, 3.0, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for fl in FamilyLink::ALL {
            let spec = line(fl, &xs);
            for _ in 0..1000 {
                let k = rng.random_range(0..spec.len());
                let theta = spec.theta_box().sample(&mut rng);
                let ft = spec.f_theta(k, &theta).unwrap();
                let phi = fl.phi(spec.linear_predictor(k, &theta)).unwrap();
                assert!(phi > 0.0);
                let back = &ft / phi;
                assert!((back - spec.f(k)).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn mean_response_values() {
        let spec = ModelSpec::polynomial_1d(
            FamilyLink::PoissonLog,
            &[0.0, 1.0],
            1,
            vec![-2.0, -2.0],
            vec![2.0, 2.0],
        )
        .unwrap();
        let theta = DVector::from_vec(vec![0.0, 1.0]);
        assert!((spec.mean_response(1, &theta).unwrap() - std::f64::consts::E).abs() < 1e-15);

        let spec = line(FamilyLink::BernoulliLogit, &[0.0, 1.0]);
        assert_eq!(spec.mean_response(0, &DVector::zeros(2)).unwrap(), 0.5);

        let spec = line(FamilyLink::GaussianIdentity, &[0.0, 1.0]);
        let theta = DVector::from_vec(vec![-2.5, 0.0]);
        assert_eq!(spec.mean_response(0, &theta).unwrap(), -2.5);
    }

    #[test]
    fn validation_reports() {
        let two = ModelSpecDocument {
            family_link: FamilyLink::GaussianIdentity,
            grid: [-1.0, 1.0]
                .iter()
                .map(|&x| GridPoint {
                    label: format_label(x),
                    x: vec![x],
                    f: vec![1.0, x],
                })
                .collect(),
            theta_box: ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
        };
        assert!(validate_document(&two).is_valid());

        let single = ModelSpecDocument {
            family_link: FamilyLink::GaussianIdentity,
            grid: vec![GridPoint {
                label: "0.5".into(),
                x: vec![0.5],
                f: vec![1.0, 0.5],
            }],
            theta_box: ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
        };
        let r = validate_document(&single);
        assert!(matches!(
            r.failures.as_slice(),
            [ValidationFailure::RankDeficient { rank: 1, p: 2, .. }]
        ));

        let mut dup = single.clone();
        dup.grid.push(GridPoint {
            label: "0.5".into(),
            x: vec![],
            f: vec![1.0, -0.5],
        });
        let r = validate_document(&dup);
        assert_eq!(
            r.failures,
            vec![ValidationFailure::DuplicateLabel {
                label: "0.5".into()
            }]
        );

        let mut inverted = dup.clone();
        inverted.grid[1].label = "-0.5".into();
        inverted.theta_box.lower[0] = 2.0;
        let r = validate_document(&inverted);
        assert!(matches!(
            r.failures.as_slice(),
            [ValidationFailure::BoxInverted { coord: 0, .. }]
        ));
        assert!(ModelSpec::new(inverted).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = line(FamilyLink::BernoulliLogit, &linspace(-1.0, 1.0, 5));
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"family_link\":\"bernoulli-logit\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let bad = json.replace("\"f\":[1.0,-1.0]", "\"f\":[1.0]");
        assert!(serde_json::from_str::<ModelSpec>(&bad).is_err());
    }

    #[test]
    fn constants_gaussian_reference() {
        let spec = line(FamilyLink::GaussianIdentity, &[-1.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let c = spec.model_constants(200, 20, &mut rng).unwrap();
        assert!((c.gamma - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((c.phi_min, c.phi_max), (1.0, 1.0));

        // Independent oracle: sweep the unit circle.
        let kappa_oracle = (0..10_000)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / 10_000.0;
                [-1.0, 0.0, 1.0]
                    .iter()
                    .map(|x| (a.cos() + x * a.sin()).powi(2))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(c.kappa_hat > 0.0 && c.kappa_hat <= 1.0);
        assert!(c.kappa_hat >= kappa_oracle - 1e-12);
        assert!((c.kappa_hat - kappa_oracle).abs() < 1e-9);
    }

    #[test]
    fn constants_are_seed_deterministic() {
        let spec = line(FamilyLink::BernoulliLogit, &linspace(-2.0, 2.0, 9));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            spec.model_constants(50, 10, &mut rng).unwrap()
        };
        assert_eq!(run(3), run(3));
        let c = run(3);
        assert!(c.phi_min > 0.0 && c.phi_min <= c.phi_max && c.phi_max <= 0.5);
    }

    #[test]
    fn labels() {
        assert_eq!(format_label(-1.0), "-1");
        assert_eq!(format_label(0.5), "0.5");
        assert_eq!(format_label(1.5499999999999998), "1.55");
        assert_eq!(format_label(-0.0000001), "0");
    }
}
