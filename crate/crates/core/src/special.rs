//! Standard normal special functions used by the probit and median models.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

/// 1/sqrt(2*pi), the standard normal density at zero.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Below this the lower tail uses the asymptotic series instead of erfc.
const FAR_TAIL: f64 = -30.0;

/// `Phi(x) (-x) / phi(x) ~ 1 - 1/x^2 + 3/x^4 - 15/x^6` as x -> -inf.
fn tail_series(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    1.0 - r + 3.0 * r * r - 15.0 * r * r * r
}

/// log Phi(x). Uses the asymptotic series in the far lower tail where erfc
/// underflows.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > FAR_TAIL {
        if x > 5.0 {
            // Phi(x) = 1 - tiny; ln_1p keeps the tail mass
            (-normal_cdf(-x)).ln_1p()
        } else {
            normal_cdf(x).ln()
        }
    } else {
        log_normal_pdf(x) - (-x).ln() + tail_series(x).ln()
    }
}

/// Inverse Mills ratio phi(x)/Phi(x), stable for very negative x.
pub fn mills_ratio(x: f64) -> f64 {
    if x > FAR_TAIL {
        normal_pdf(x) / normal_cdf(x)
    } else {
        -x / tail_series(x)
    }
}

#[inline]
pub fn log_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x + FRAC_1_SQRT_2PI.ln()
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Complete-data probit score factor
/// `u = (y - Phi(eta)) phi(eta) / (Phi(eta) (1 - Phi(eta)))`.
///
/// For `y = 1` this is `phi/Phi`, for `y = 0` it is `-phi(eta)/Phi(-eta)`.
/// Both are evaluated through the Mills ratio, so the factor is finite for
/// every finite index and grows linearly in the wrong-sign tail.
pub fn probit_score_factor(y: bool, eta: f64) -> f64 {
    if y {
        mills_ratio(eta)
    } else {
        -mills_ratio(-eta)
    }
}

/// Log Bernoulli-probit likelihood of a single outcome.
#[inline]
pub fn probit_log_lik(y: bool, eta: f64) -> f64 {
    if y {
        log_normal_cdf(eta)
    } else {
        log_normal_cdf(-eta)
    }
}

/// Quantile of the Student-t distribution with 4 degrees of freedom, which
/// has a closed form.
pub fn student_t4_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let a = 4.0 * p * (1.0 - p);
    let q = ((a.sqrt()).acos() / 3.0).cos() / a.sqrt();
    (p - 0.5).signum() * 2.0 * (q - 1.0).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pdf_and_cdf_at_zero() {
        assert_relative_eq!(normal_pdf(0.0), 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-16);
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-16);
    }

    #[test]
    fn probit_factor_at_origin() {
        // (1 - 0.5) * phi(0) / (0.5 * 0.5) = 2 phi(0)
        let u = probit_score_factor(true, 0.0);
        assert_relative_eq!(u, 2.0 * FRAC_1_SQRT_2PI, epsilon = 1e-14);
        assert_relative_eq!(u, 0.797_884_560_802_865_4, epsilon = 1e-12);
        assert!(probit_score_factor(false, 0.0) < 0.0);
    }

    #[test]
    fn probit_factor_matches_direct_formula_in_bulk() {
        for &eta in &[-3.0, -1.2, -0.1, 0.4, 2.5] {
            for y in [false, true] {
                let p = normal_cdf(eta);
                let yv = if y { 1.0 } else { 0.0 };
                let direct = (yv - p) * normal_pdf(eta) / (p * (1.0 - p));
                assert_relative_eq!(probit_score_factor(y, eta), direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn probit_factor_is_linear_in_the_wrong_sign_tail() {
        for &eta in &[-40.0, -1e3, -1e8, -1e150] {
            let u = probit_score_factor(true, eta);
            assert!(u.is_finite());
            assert_relative_eq!(u / -eta, 1.0, max_relative = 1e-3);
            assert_relative_eq!(probit_score_factor(false, -eta), -u);
        }
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let a = log_normal_cdf(-29.999_999);
        let b = log_normal_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-3);
        assert!(log_normal_cdf(-40.0).is_finite());
        assert_relative_eq!(mills_ratio(-29.999_999), mills_ratio(-30.000_001), max_relative = 1e-6);
        assert_relative_eq!(log_normal_cdf(10.0), -normal_cdf(-10.0), max_relative = 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.025, 0.3, 0.5, 0.975] {
            assert_relative_eq!(normal_cdf(normal_quantile(p)), p, max_relative = 1e-10);
        }
        assert_relative_eq!(normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-9);
    }

    #[test]
    fn t4_quantile_inverts_cdf() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let t = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        for &p in &[1e-6, 0.01, 0.2, 0.5, 0.77, 0.999] {
            assert_relative_eq!(t.cdf(student_t4_quantile(p)), p, max_relative = 1e-9);
        }
        assert_relative_eq!(student_t4_quantile(0.975), 2.776_445_105, epsilon = 1e-8);
    }
}
