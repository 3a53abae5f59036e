//! One-sided truncated normal draws for latent-utility Gibbs steps.

use crate::special::{normal_cdf, normal_quantile};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

/// Beyond this standardised bound the inverse-CDF route loses precision and
/// the exponential rejection sampler is used instead.
const TAIL_SWITCH: f64 = 8.0;

/// Draw `z ~ N(0, 1)` conditioned on `z > a`.
pub fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        // acceptance of plain rejection is at least one half
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return z;
            }
        }
    }
    if a > TAIL_SWITCH {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.sample(Exp1);
            let z = a + e / lambda;
            let u: f64 = rng.random();
            if u.ln() <= -0.5 * (z - lambda).powi(2) {
                return z;
            }
        }
    }
    // P(Z > z) = u·P(Z > a), using symmetry to stay in the accurate lower tail
    let tail = normal_cdf(-a);
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let z = -normal_quantile(u * tail);
    z.max(a)
}

/// Draw from `N(mean, sd²)` restricted to `(lower, ∞)` when `above`, and to
/// `(−∞, lower)` otherwise.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, bound: f64, above: bool, rng: &mut R) -> f64 {
    let a = (bound - mean) / sd;
    if above {
        mean + sd * std_normal_above(a, rng)
    } else {
        mean - sd * std_normal_above(-a, rng)
    }
}
