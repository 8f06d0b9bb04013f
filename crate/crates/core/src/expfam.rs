//! One-parameter exponential families in canonical form and the fixed
//! catalog of (family, inverse link) pairs.
//!
//! A family has densities `K(y) exp(τ y − b(τ))` with respect to counting
//! measure (Bernoulli, Poisson) or Lebesgue measure (unit-variance Gaussian).
//! The cumulant `b` gives the mean `b′(τ)` and the variance `b″(τ)`.
//! `K(y)` never enters a computation here: likelihood values are reported
//! without the `log K(y)` term, which does not depend on the parameter.
//!
//! New families plug in by extending [`Family`] with its cumulant, support
//! check and sampler; [`Family::mean_to_canonical_numeric`] covers families
//! whose mean map has no closed-form inverse.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An open real interval `(lo, hi)`; infinite endpoints are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v > self.lo && v < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Values of the cumulant function and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cumulant {
    pub b: f64,
    pub b1: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Poisson,
    /// Normal with unit variance.
    Gaussian,
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::Gaussian => "gaussian",
        }
    }

    /// The canonical parameter domain `J`.
    pub fn canonical_domain(self) -> Interval {
        Interval::REAL_LINE
    }

    /// The mean domain `M = b′(J)`.
    pub fn mean_domain(self) -> Interval {
        match self {
            Family::Bernoulli => Interval { lo: 0.0, hi: 1.0 },
            Family::Poisson => Interval {
                lo: 0.0,
                hi: f64::INFINITY,
            },
            Family::Gaussian => Interval::REAL_LINE,
        }
    }

    fn check_canonical(self, tau: f64) -> Result<()> {
        let j = self.canonical_domain();
        if j.contains(tau) {
            Ok(())
        } else {
            Err(Error::domain(
                format!("{} canonical parameter", self.name()),
                tau,
                j,
            ))
        }
    }

    /// `(b(τ), b′(τ), b″(τ))`.
    pub fn cumulant(self, tau: f64) -> Result<Cumulant> {
        self.check_canonical(tau)?;
        Ok(self.cumulant_unchecked(tau))
    }

    pub(crate) fn cumulant_unchecked(self, tau: f64) -> Cumulant {
        match self {
            Family::Bernoulli => {
                let m = logistic(tau);
                let q = logistic(-tau);
                Cumulant {
                    b: softplus(tau),
                    b1: m,
                    b2: m * q,
                }
            }
            Family::Poisson => {
                let e = tau.exp();
                Cumulant { b: e, b1: e, b2: e }
            }
            Family::Gaussian => Cumulant {
                b: 0.5 * tau * tau,
                b1: tau,
                b2: 1.0,
            },
        }
    }

    /// `(b′)⁻¹(m)`, closed form for every catalog family.
    pub fn mean_to_canonical(self, m: f64) -> Result<f64> {
        let dom = self.mean_domain();
        if !dom.contains(m) {
            return Err(Error::domain(format!("{} mean", self.name()), m, dom));
        }
        Ok(match self {
            Family::Bernoulli => (m / (1.0 - m)).ln(),
            Family::Poisson => m.ln(),
            Family::Gaussian => m,
        })
    }

    /// `(b′)⁻¹(m)` by bisection-safeguarded Newton iteration on the
    /// strictly increasing map `b′`, capped at 200 iterations.
    pub fn mean_to_canonical_numeric(self, m: f64) -> Result<f64> {
        let dom = self.mean_domain();
        if !dom.contains(m) {
            return Err(Error::domain(format!("{} mean", self.name()), m, dom));
        }
        let mean = |t: f64| self.cumulant_unchecked(t).b1;

        // Bracket the root by doubling outward from zero.
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        while mean(lo) > m {
            lo *= 2.0;
            if lo < -1e300 {
                return Err(Error::domain("bracket for mean inversion", m, dom));
            }
        }
        while mean(hi) < m {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::domain("bracket for mean inversion", m, dom));
            }
        }

        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let c = self.cumulant_unchecked(t);
            let r = c.b1 - m;
            if r.abs() <= 1e-14 * (1.0 + m.abs()) {
                return Ok(t);
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = t - r / c.b2;
            t = if newton > lo && newton < hi && c.b2 > 0.0 {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * (1.0 + t.abs()) {
                return Ok(t);
            }
        }
        Ok(t)
    }

    /// Whether `y` lies in the support of the family.
    pub fn in_support(self, y: f64) -> bool {
        match self {
            Family::Bernoulli => y == 0.0 || y == 1.0,
            Family::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            Family::Gaussian => y.is_finite(),
        }
    }

    pub fn check_response(self, y: f64) -> Result<()> {
        if self.in_support(y) {
            Ok(())
        } else {
            Err(Error::ResponseDomain {
                family: self.name(),
                y,
            })
        }
    }

    /// One draw from the family member with canonical parameter `tau`.
    pub fn sample_response<R: Rng + ?Sized>(self, tau: f64, rng: &mut R) -> Result<f64> {
        self.check_canonical(tau)?;
        Ok(match self {
            Family::Bernoulli => {
                let p = logistic(tau);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Poisson => {
                let lambda = tau.exp();
                let dist = Poisson::new(lambda)
                    .map_err(|_| Error::domain("poisson rate", lambda, "(0, 1.8e19)"))?;
                dist.sample(rng)
            }
            Family::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                tau + z
            }
        })
    }
}

/// A family paired with an inverse link `G` from the catalog.
///
/// All catalog links are canonical, so `(b′)⁻¹(G(u)) = u` and the
/// derivative `H(u)` of that composite is identically one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyLink {
    #[serde(rename = "bernoulli-logit")]
    BernoulliLogit,
    #[serde(rename = "poisson-log")]
    PoissonLog,
    #[serde(rename = "gaussian-identity")]
    GaussianIdentity,
}

impl FamilyLink {
    pub const ALL: [FamilyLink; 3] = [
        FamilyLink::BernoulliLogit,
        FamilyLink::PoissonLog,
        FamilyLink::GaussianIdentity,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FamilyLink::BernoulliLogit => "bernoulli-logit",
            FamilyLink::PoissonLog => "poisson-log",
            FamilyLink::GaussianIdentity => "gaussian-identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|fl| fl.tag() == tag)
    }

    pub fn family(self) -> Family {
        match self {
            FamilyLink::BernoulliLogit => Family::Bernoulli,
            FamilyLink::PoissonLog => Family::Poisson,
            FamilyLink::GaussianIdentity => Family::Gaussian,
        }
    }

    pub fn is_canonical(self) -> bool {
        true
    }

    /// Domain `I` of the inverse link (the linear predictor range).
    pub fn linear_domain(self) -> Interval {
        Interval::REAL_LINE
    }

    fn check_linear(self, u: f64) -> Result<()> {
        let i = self.linear_domain();
        if i.contains(u) {
            Ok(())
        } else {
            Err(Error::domain(
                format!("{} linear predictor", self.tag()),
                u,
                i,
            ))
        }
    }

    /// `G(u)`.
    pub fn inverse_link(self, u: f64) -> Result<f64> {
        self.check_linear(u)?;
        Ok(self.g(u))
    }

    pub(crate) fn g(self, u: f64) -> f64 {
        match self {
            FamilyLink::BernoulliLogit => logistic(u),
            FamilyLink::PoissonLog => u.exp(),
            FamilyLink::GaussianIdentity => u,
        }
    }

    /// `G′(u)`.
    pub(crate) fn g1(self, u: f64) -> f64 {
        match self {
            FamilyLink::BernoulliLogit => logistic(u) * logistic(-u),
            FamilyLink::PoissonLog => u.exp(),
            FamilyLink::GaussianIdentity => 1.0,
        }
    }

    /// `G″(u)`.
    pub fn g2(self, u: f64) -> f64 {
        match self {
            FamilyLink::BernoulliLogit => {
                let m = logistic(u);
                m * (1.0 - m) * (1.0 - 2.0 * m)
            }
            FamilyLink::PoissonLog => u.exp(),
            FamilyLink::GaussianIdentity => 0.0,
        }
    }

    pub fn inverse_link_derivative(self, u: f64) -> Result<f64> {
        self.check_linear(u)?;
        Ok(self.g1(u))
    }

    /// `τ(u) = (b′)⁻¹(G(u))`.
    pub(crate) fn tau(self, u: f64) -> f64 {
        // canonical links: b′ = G
        u
    }

    /// `φ(u) = G′(u) / √b″(τ(u))`.
    pub fn phi(self, u: f64) -> Result<f64> {
        self.check_linear(u)?;
        Ok(self.phi_unchecked(u))
    }

    pub(crate) fn phi_unchecked(self, u: f64) -> f64 {
        let b2 = self.family().cumulant_unchecked(self.tau(u)).b2;
        self.g1(u) / b2.sqrt()
    }

    /// `φ(u)` evaluated literally through `(b′)⁻¹(G(u))` without the
    /// canonical-link shortcut.
    pub fn phi_composite(self, u: f64) -> Result<f64> {
        self.check_linear(u)?;
        let fam = self.family();
        let tau = fam.mean_to_canonical(self.g(u))?;
        Ok(self.g1(u) / fam.cumulant(tau)?.b2.sqrt())
    }

    /// `H(u) = G′(u) / b″(τ(u))`, the derivative of `τ(u)`.
    pub(crate) fn h(self, u: f64) -> f64 {
        let b2 = self.family().cumulant_unchecked(self.tau(u)).b2;
        self.g1(u) / b2
    }

    /// `H′(u)`; zero for canonical links.
    pub(crate) fn h_prime(self, _u: f64) -> f64 {
        0.0
    }

    /// Interior stationary points of `φ`, used for exact extrema over an
    /// interval of linear predictor values.
    pub(crate) fn phi_stationary_points(self) -> &'static [f64] {
        match self {
            FamilyLink::BernoulliLogit => &[0.0],
            FamilyLink::PoissonLog | FamilyLink::GaussianIdentity => &[],
        }
    }

    /// `(min φ, max φ)` over the closed interval `[lo, hi]`.
    pub fn phi_extrema(self, lo: f64, hi: f64) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let interior = self
            .phi_stationary_points()
            .iter()
            .copied()
            .filter(|&s| s > lo && s < hi);
        for u in [lo, hi].into_iter().chain(interior) {
            let v = self.phi_unchecked(u);
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }
}

impl fmt::Display for FamilyLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FAMILIES: [Family; 3] = [Family::Bernoulli, Family::Poisson, Family::Gaussian];

    #[test]
    fn cumulant_reference_values() {
        let c = Family::Bernoulli.cumulant(0.0).unwrap();
        assert!((c.b - 2f64.ln()).abs() < 1e-15);
        assert_eq!((c.b1, c.b2), (0.5, 0.25));

        let c = Family::Poisson.cumulant(0.0).unwrap();
        assert_eq!((c.b, c.b1, c.b2), (1.0, 1.0, 1.0));

        let c = Family::Gaussian.cumulant(1.3).unwrap();
        assert!((c.b - 0.845).abs() < 1e-15);
        assert_eq!((c.b1, c.b2), (1.3, 1.0));
    }

    #[test]
    fn cumulant_rejects_non_finite() {
        let err = Family::Poisson.cumulant(f64::NAN).unwrap_err();
        assert!(err.to_string().contains("poisson"));
        assert!(Family::Bernoulli.cumulant(f64::INFINITY).is_err());
    }

    #[test]
    fn mean_to_canonical_reference_values() {
        assert_eq!(Family::Bernoulli.mean_to_canonical(0.5).unwrap(), 0.0);
        assert!((Family::Bernoulli.mean_to_canonical(0.75).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!((Family::Poisson.mean_to_canonical(2.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(Family::Bernoulli.mean_to_canonical(1.0).is_err());
        assert!(Family::Poisson.mean_to_canonical(-0.5).is_err());
    }

    #[test]
    fn numeric_inverse_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for fam in FAMILIES {
            for _ in 0..500 {
                let tau: f64 = rng.random_range(-8.0..8.0);
                let m = fam.cumulant(tau).unwrap().b1;
                let a = fam.mean_to_canonical(m).unwrap();
                let b = fam.mean_to_canonical_numeric(m).unwrap();
                assert!((a - b).abs() < 1e-10, "{fam:?} tau={tau} a={a} b={b}");
                assert!((fam.cumulant(b).unwrap().b1 - m).abs() < 1e-12 * (1.0 + m.abs()));
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for fam in FAMILIES {
            for _ in 0..1000 {
                let tau: f64 = rng.random_range(-6.0..6.0);
                let h = 1e-5 * (1.0 + tau.abs());
                let c = fam.cumulant(tau).unwrap();
                let cp = fam.cumulant(tau + h).unwrap();
                let cm = fam.cumulant(tau - h).unwrap();
                let db = (cp.b - cm.b) / (2.0 * h);
                let db1 = (cp.b1 - cm.b1) / (2.0 * h);
                assert!((db - c.b1).abs() <= 1e-6 * c.b1.abs().max(1e-3), "{fam:?} b' at {tau}");
                assert!((db1 - c.b2).abs() <= 1e-5 * c.b2.abs().max(1e-3), "{fam:?} b'' at {tau}");
                assert!(c.b2 > 0.0);
            }
        }
    }

    #[test]
    fn mean_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fam in FAMILIES {
            for _ in 0..1000 {
                let tau: f64 = rng.random_range(-10.0..10.0);
                let back = fam.mean_to_canonical(fam.cumulant(tau).unwrap().b1).unwrap();
                assert!((back - tau).abs() < 1e-10, "{fam:?} {tau} -> {back}");
            }
        }
    }

    #[test]
    fn phi_reference_values() {
        assert_eq!(FamilyLink::BernoulliLogit.phi(0.0).unwrap(), 0.5);
        for u in [-3.0, 0.0, 2.5] {
            assert_eq!(FamilyLink::GaussianIdentity.phi(u).unwrap(), 1.0);
        }
        let e = FamilyLink::PoissonLog.phi(2.0).unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn phi_matches_composite_and_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fl in FamilyLink::ALL {
            for _ in 0..1000 {
                let u: f64 = rng.random_range(-6.0..6.0);
                let a = fl.phi(u).unwrap();
                let b = fl.phi_composite(u).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{fl} u={u}");
                let closed = match fl {
                    FamilyLink::BernoulliLogit => (u / 2.0).exp() / (1.0 + u.exp()),
                    FamilyLink::PoissonLog => (u / 2.0).exp(),
                    FamilyLink::GaussianIdentity => 1.0,
                };
                assert!((a - closed).abs() <= 1e-12 * closed, "{fl} u={u}");
            }
        }
    }

    #[test]
    fn phi_extrema_include_interior_peak() {
        let (lo, hi) = FamilyLink::BernoulliLogit.phi_extrema(-2.0, 3.0);
        assert_eq!(hi, 0.5);
        assert!((lo - FamilyLink::BernoulliLogit.phi(3.0).unwrap()).abs() < 1e-15);
        let (lo, hi) = FamilyLink::PoissonLog.phi_extrema(-1.0, 1.0);
        assert!((lo - (-0.5f64).exp()).abs() < 1e-15);
        assert!((hi - 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn tags_roundtrip() {
        for fl in FamilyLink::ALL {
            assert_eq!(FamilyLink::from_tag(fl.tag()), Some(fl));
            let json = serde_json::to_string(&fl).unwrap();
            assert_eq!(json, format!("\"{}\"", fl.tag()));
        }
        assert_eq!(FamilyLink::from_tag("binomial-probit"), None);
    }

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn sampled_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;

        let b: Vec<f64> = (0..n)
            .map(|_| Family::Bernoulli.sample_response(0.0, &mut rng).unwrap())
            .collect();
        assert!(b.iter().all(|&y| y == 0.0 || y == 1.0));
        let (m, _) = moments(&b);
        assert!((0.49..=0.51).contains(&m), "bernoulli mean {m}");

        let p: Vec<f64> = (0..n)
            .map(|_| Family::Poisson.sample_response(0.0, &mut rng).unwrap())
            .collect();
        assert!(p.iter().all(|&y| Family::Poisson.in_support(y)));
        let (m, v) = moments(&p);
        assert!((0.98..=1.02).contains(&m), "poisson mean {m}");
        assert!((0.95..=1.05).contains(&v), "poisson var {v}");

        let g: Vec<f64> = (0..n)
            .map(|_| Family::Gaussian.sample_response(0.0, &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&g);
        assert!((-0.02..=0.02).contains(&m), "gaussian mean {m}");
        assert!((0.97..=1.03).contains(&v), "gaussian var {v}");
    }

    #[test]
    fn sampling_is_reproducible() {
        for fam in FAMILIES {
            let draw = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..64)
                    .map(|_| fam.sample_response(0.3, &mut rng).unwrap().to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(draw(9), draw(9));
        }
    }

    #[test]
    fn support_checks() {
        assert!(Family::Bernoulli.check_response(0.5).is_err());
        assert!(Family::Bernoulli.check_response(2.0).is_err());
        assert!(Family::Poisson.check_response(3.5).is_err());
        assert!(Family::Poisson.check_response(-1.0).is_err());
        assert!(Family::Poisson.check_response(7.0).is_ok());
        assert!(Family::Gaussian.check_response(-0.25).is_ok());
        assert!(Family::Gaussian.check_response(f64::NAN).is_err());
    }
}
