//! Small statistical helpers: chi-square quantiles via the regularized
//! incomplete gamma function, and sample quantiles.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lead = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * lead.exp()).min(1.0)
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - lead.exp() * h).max(0.0)
    }
}

/// Chi-square distribution function with `df` degrees of freedom.
pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    gamma_p(df as f64 / 2.0, x / 2.0)
}

/// Quantile of the chi-square distribution, by bisection on the CDF.
pub fn chi2_quantile(prob: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Argument("chi-square needs df ≥ 1".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::domain("probability", prob, "(0, 1)"));
    }
    let mut lo = 0.0;
    let mut hi = df as f64 + 10.0;
    while chi2_cdf(hi, df) < prob {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linear-interpolation sample quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q * (len - 1) as f64;
            let i = pos.floor() as usize;
            if i + 1 >= len {
                return sorted[len - 1];
            }
            let frac = pos - i as f64;
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        }
    }
}

pub fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use statrs::function::gamma::ln_gamma as ref_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for i in 1..400 {
            let x = i as f64 * 0.05;
            assert!((ln_gamma(x) - ref_ln_gamma(x)).abs() < 1e-12 * (1.0 + ref_ln_gamma(x).abs()));
        }
    }

    #[test]
    fn quantiles_match_reference() {
        for df in 1..=10 {
            let reference = ChiSquared::new(df as f64).unwrap();
            for prob in [0.01, 0.5, 0.9, 0.95, 0.99] {
                let q = chi2_quantile(prob, df).unwrap();
                let r = reference.inverse_cdf(prob);
                assert!((q - r).abs() <= 1e-9 * r, "df={df} p={prob}: {q} vs {r}");
                assert!((chi2_cdf(q, df) - prob).abs() < 1e-10);
            }
        }
        assert!(chi2_quantile(0.95, 0).is_err());
        assert!(chi2_quantile(1.0, 2).is_err());
    }

    #[test]
    fn df2_closed_form() {
        // P(χ²₂ ≤ x) = 1 − e^{−x/2}
        let q = chi2_quantile(0.95, 2).unwrap();
        assert!((q - (-2.0 * 0.05f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn sample_quantiles() {
        let s = sorted([3.0, 1.0, 2.0, 4.0]);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }
}
