//! Randomized checks of four standard facts about nonnegative definite
//! matrices that the convergence arguments for the Wynn algorithm lean on:
//!
//! * **M1** – if `0 ≤ A ≤ B` then `zᵀA⁻z ≥ zᵀB⁻z` for `z ∈ range(A)`.
//! * **M2** – `āᵀ(Σ λⱼ aⱼaⱼᵀ)⁻ā ≤ Σ λⱼ aⱼᵀ(aⱼaⱼᵀ)⁻aⱼ ≤ 1` for `ā = Σ λⱼ aⱼ`.
//! * **M3** – `vᵀM⁻¹v = max {1/(bᵀMb) : vᵀb = 1}`, attained at
//!   `b₀ = M⁻¹v / (vᵀM⁻¹v)`.
//! * **M4** – `det(AᵀA) = Π dist²(aⱼ, span{a₁..aⱼ₋₁})`.
//!
//! Generalized inverses are Moore–Penrose inverses. Violations are
//! reported relative to the natural scale of each identity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::pinv_symmetric;
use crate::error::{Error, Result};

const PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub trials: usize,
    pub m1_loewner_monotone: f64,
    pub m2_convex_bound: f64,
    pub m3_max_representation: f64,
    pub m4_gram_determinant: f64,
}

impl AppendixReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.m1_loewner_monotone,
            self.m2_convex_bound,
            self.m3_max_representation,
            self.m4_gram_determinant,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

fn quad(m: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (z.transpose() * m * z)[(0, 0)]
}

pub fn check_m1<R: Rng + ?Sized>(rng: &mut R, p: usize) -> f64 {
    let r = rng.random_range(1..=p);
    let s = rng.random_range(0..=p);
    let ga = gaussian_matrix(rng, p, r);
    let a = &ga * ga.transpose();
    let b = if s == 0 {
        a.clone()
    } else {
        let gb = gaussian_matrix(rng, p, s);
        &a + &gb * gb.transpose()
    };
    let z = &a * gaussian_vector(rng, p);
    let za = quad(&pinv_symmetric(&a, PINV_TOL), &z);
    let zb = quad(&pinv_symmetric(&b, PINV_TOL), &z);
    (zb - za).max(0.0) / za.abs().max(1.0)
}

pub fn check_m2<R: Rng + ?Sized>(rng: &mut R, p: usize) -> f64 {
    let r = rng.random_range(1..=6);
    let cols: Vec<DVector<f64>> = (0..r)
        .map(|_| {
            if rng.random_bool(0.1) {
                DVector::zeros(p)
            } else {
                gaussian_vector(rng, p)
            }
        })
        .collect();
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let lambda: Vec<f64> = raw.iter().map(|x| x / total).collect();

    let mut abar = DVector::zeros(p);
    let mut m = DMatrix::zeros(p, p);
    let mut mid = 0.0;
    for (a, &l) in cols.iter().zip(&lambda) {
        abar += a * l;
        let outer = a * a.transpose();
        mid += l * quad(&pinv_symmetric(&outer, PINV_TOL), a);
        m += outer * l;
    }
    let lhs = quad(&pinv_symmetric(&m, PINV_TOL), &abar);
    (lhs - mid).max(mid - 1.0).max(0.0)
}

pub fn check_m3<R: Rng + ?Sized>(rng: &mut R, p: usize) -> f64 {
    let g = gaussian_matrix(rng, p, p + 1);
    let m = &g * g.transpose() + DMatrix::identity(p, p) * 0.1;
    let v = gaussian_vector(rng, p);
    if v.norm() < 1e-8 {
        return 0.0;
    }
    let minv = m.clone().cholesky().expect("positive definite by construction").inverse();
    let lhs = quad(&minv, &v);
    let b0 = &minv * &v / lhs;
    let at_b0 = 1.0 / quad(&m, &b0);
    let mut viol = (lhs - at_b0).abs() / lhs;
    for _ in 0..8 {
        let b = gaussian_vector(rng, p);
        let vb = v.dot(&b);
        if vb.abs() < 1e-3 {
            continue;
        }
        let b = b / vb;
        let val = 1.0 / quad(&m, &b);
        viol = viol.max((val - lhs).max(0.0) / lhs);
    }
    viol
}

pub fn check_m4<R: Rng + ?Sized>(rng: &mut R, p: usize) -> f64 {
    let q = rng.random_range(1..=p);
    let mut a = gaussian_matrix(rng, p, q);
    if q >= 2 && rng.random_bool(0.2) {
        let c = gaussian_vector(rng, q - 1);
        let dep = a.columns(0, q - 1) * c;
        a.set_column(q - 1, &dep);
    }
    let det = (a.transpose() * &a).determinant();

    // Gram–Schmidt with one re-orthogonalization pass.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut prod = 1.0;
    let mut scale = 1.0;
    for j in 0..q {
        let col = a.column(j).into_owned();
        scale *= col.norm_squared();
        let mut r = col.clone();
        for _ in 0..2 {
            for e in &basis {
                let c = e.dot(&r);
                r -= e * c;
            }
        }
        let d2 = r.norm_squared();
        prod *= d2;
        if d2.sqrt() > 1e-12 * col.norm().max(1e-300) {
            basis.push(r / d2.sqrt());
        }
    }
    (det - prod).abs() / scale.max(1e-300)
}

/// Runs `trials` rounds of all four checks with `p` drawn from `1..=5`.
pub fn appendix_checks<R: Rng + ?Sized>(rng: &mut R, trials: usize) -> Result<AppendixReport> {
    if trials == 0 {
        return Err(Error::Argument("trials must be at least 1".into()));
    }
    let mut report = AppendixReport {
        trials,
        m1_loewner_monotone: 0.0,
        m2_convex_bound: 0.0,
        m3_max_representation: 0.0,
        m4_gram_determinant: 0.0,
    };
    for _ in 0..trials {
        let p = rng.random_range(1..=5);
        report.m1_loewner_monotone = report.m1_loewner_monotone.max(check_m1(rng, p));
        report.m2_convex_bound = report.m2_convex_bound.max(check_m2(rng, p));
        report.m3_max_representation = report.m3_max_representation.max(check_m3(rng, p));
        report.m4_gram_determinant = report.m4_gram_determinant.max(check_m4(rng, p));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn m3_diagonal_case() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let minv = m.clone().try_inverse().unwrap();
        let lhs = quad(&minv, &v);
        let b0 = &minv * &v / lhs;
        assert_eq!(lhs, 0.5);
        assert_eq!(1.0 / quad(&m, &b0), 0.5);
    }

    #[test]
    fn m4_orthogonal_columns() {
        let a: DMatrix<f64> = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        assert!(((a.transpose() * &a).determinant() - 36.0).abs() < 1e-12);
    }

    #[test]
    fn m2_single_vector_is_one() {
        let a = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let outer = &a * a.transpose();
        let v = quad(&pinv_symmetric(&outer, PINV_TOL), &a);
        assert!((v - 1.0).abs() < 1e-12);
        let zero = DVector::zeros(3);
        assert_eq!(quad(&pinv_symmetric(&(&zero * zero.transpose()), PINV_TOL), &zero), 0.0);
    }

    #[test]
    fn randomized_suite_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r = appendix_checks(&mut rng, 500).unwrap();
        assert!(r.max_violation() <= 1e-8, "{r:?}");
        assert!(appendix_checks(&mut rng, 0).is_err());
    }
}
