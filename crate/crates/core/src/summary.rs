//! Posterior summaries of chain output: moments, credible intervals, Monte
//! Carlo standard errors, two-sample distances and density grids.

use crate::error::{QError, Result};
use serde::{Deserialize, Serialize};

/// Fewest retained draws accepted for an interval.
pub const MIN_INTERVAL_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    #[default]
    EqualTailed,
    Hpd,
}

/// Mean and variance (divisor n − 1).
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Quantile of sorted data with linear interpolation between order
/// statistics at position `(n − 1) p`.
pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn check_level(draws: &[f64], level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(QError::Config(format!("credible level {level} must lie in (0, 1)")));
    }
    if draws.len() < MIN_INTERVAL_DRAWS {
        return Err(QError::InsufficientDraws { needed: MIN_INTERVAL_DRAWS, got: draws.len() });
    }
    Ok(())
}

/// Equal-tailed interval from the empirical `(1 − level)/2` and
/// `(1 + level)/2` quantiles.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(draws, level)?;
    let s = sorted(draws);
    let a = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a)))
}

/// Shortest interval containing `⌈level · n⌉` draws.
pub fn hpd_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(draws, level)?;
    let s = sorted(draws);
    let k = ((level * s.len() as f64).ceil() as usize).clamp(1, s.len());
    let (mut best, mut at) = (f64::INFINITY, 0);
    for i in 0..=s.len() - k {
        let w = s[i + k - 1] - s[i];
        if w < best {
            best = w;
            at = i;
        }
    }
    Ok((s[at], s[at + k - 1]))
}

pub fn interval(draws: &[f64], level: f64, kind: IntervalKind) -> Result<(f64, f64)> {
    match kind {
        IntervalKind::EqualTailed => credible_interval(draws, level),
        IntervalKind::Hpd => hpd_interval(draws, level),
    }
}

/// Batch-means standard error of the mean with ⌊√n⌋ batches.
pub fn batch_means_se(draws: &[f64]) -> f64 {
    let n = draws.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| draws[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    (mean_var(&means).1 / batches as f64).sqrt()
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Gaussian kernel density estimate on an evenly spaced grid covering the
/// draws plus four bandwidths either side (Silverman's rule bandwidth).
pub fn kde_grid(draws: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = draws.len() as f64;
    let s = sorted(draws);
    let sd = mean_var(draws).1.sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(1e-12);
    let (lo, hi) = (s[0] - 4.0 * h, s[s.len() - 1] + 4.0 * h);
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|k| {
            let x = lo + step * k as f64;
            let dens = s.iter().map(|d| (-0.5 * ((x - d) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, dens)
        })
        .collect()
}

/// Trapezoid-rule integral of a density grid.
pub fn trapezoid(grid: &[(f64, f64)]) -> f64 {
    grid.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// Posterior mean, variance and interval for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub mean: f64,
    pub var: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CoordinateSummary {
    pub fn from_draws(draws: &[f64], level: f64, kind: IntervalKind) -> Result<Self> {
        let (lo, hi) = interval(draws, level, kind)?;
        let (mean, var) = mean_var(draws);
        Ok(Self { mean, var, lo, hi })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn interpolated_order_statistics() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = credible_interval(&d, 0.9).unwrap();
        // position 99 · 0.05 = 4.95 → 5 + 0.95, and 99 · 0.95 = 94.05 → 95 + 0.05
        assert!((lo - 5.95).abs() < 1e-12 && (hi - 95.05).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn constant_chain_has_zero_width() {
        let d = vec![2.5; 200];
        assert_eq!(credible_interval(&d, 0.95).unwrap(), (2.5, 2.5));
        assert_eq!(hpd_interval(&d, 0.95).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn normal_quantiles() {
        let d = normals(100_000, 1);
        let (lo, hi) = credible_interval(&d, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.03 && (hi - 1.96).abs() < 0.03);
        let (lo, hi) = hpd_interval(&d, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.04 && (hi - 1.96).abs() < 0.04);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(credible_interval(&[0.0; 99], 0.9), Err(QError::InsufficientDraws { .. })));
        assert!(credible_interval(&[0.0; 100], 1.0).is_err());
    }

    #[test]
    fn batch_means_on_iid_draws() {
        let d = normals(40_000, 2);
        let se = batch_means_se(&d);
        let iid = 1.0 / 200.0;
        assert!((se / iid - 1.0).abs() < 0.25, "{se}");
    }

    #[test]
    fn ks_distance_edges() {
        let a = normals(5_000, 3);
        assert_eq!(ks_distance(&a, &a), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        assert_eq!(ks_distance(&a, &shifted), 1.0);
        let b = normals(5_000, 4);
        assert!(ks_distance(&a, &b) < 0.04);
    }

    #[test]
    fn density_grid_integrates_to_one() {
        let grid = kde_grid(&normals(5_000, 5), 512);
        assert!((trapezoid(&grid) - 1.0).abs() < 0.01);
        let peak = grid.iter().map(|p| p.1).fold(0.0, f64::max);
        assert!((peak - 0.3989).abs() < 0.03);
    }
}
