//! Per-unit score contributions and the sample covariance weight.

use crate::error::{QError, Result};
use crate::weight::{factorize_psd, WeightMatrix};
use nalgebra::{DMatrix, DVector};

/// Per-latent-draw scores `m_ij`, stored draw-major: entry `(j, i, k)` is at
/// `(j * n + i) * d + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawScores {
    pub n_draws: usize,
    pub n_units: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl DrawScores {
    #[inline]
    pub fn get(&self, draw: usize, unit: usize) -> &[f64] {
        let o = (draw * self.n_units + unit) * self.dim;
        &self.values[o..o + self.dim]
    }
}

/// Per-unit score contributions `m_i(θ)` (rows) and, for latent-variable
/// models, the per-draw contributions they average.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    unit_scores: DMatrix<f64>,
    draw_scores: Option<DrawScores>,
}

impl ScorePanel {
    pub fn new(unit_scores: DMatrix<f64>) -> Result<Self> {
        if unit_scores.iter().any(|v| !v.is_finite()) {
            return Err(QError::NonFinite("unit scores"));
        }
        Ok(Self { unit_scores, draw_scores: None })
    }

    /// Builds the panel from per-draw scores; unit rows are the draw means.
    pub fn from_draws(draws: DrawScores) -> Result<Self> {
        if draws.n_draws == 0 {
            return Err(QError::InsufficientDraws { needed: 1, got: 0 });
        }
        if draws.values.len() != draws.n_draws * draws.n_units * draws.dim {
            return Err(QError::DimensionMismatch {
                expected: draws.n_draws * draws.n_units * draws.dim,
                got: draws.values.len(),
            });
        }
        if draws.values.iter().any(|v| !v.is_finite()) {
            return Err(QError::NonFinite("draw scores"));
        }
        let (n, d) = (draws.n_units, draws.dim);
        let mut unit = DMatrix::<f64>::zeros(n, d);
        for j in 0..draws.n_draws {
            for i in 0..n {
                let row = draws.get(j, i);
                for k in 0..d {
                    unit[(i, k)] += row[k];
                }
            }
        }
        unit /= draws.n_draws as f64;
        Ok(Self { unit_scores: unit, draw_scores: Some(draws) })
    }

    pub fn n_units(&self) -> usize {
        self.unit_scores.nrows()
    }

    pub fn dim(&self) -> usize {
        self.unit_scores.ncols()
    }

    pub fn unit_scores(&self) -> &DMatrix<f64> {
        &self.unit_scores
    }

    pub fn draw_scores(&self) -> Option<&DrawScores> {
        self.draw_scores.as_ref()
    }

    /// Total score `m_n(θ) = Σ_i m_i(θ)`.
    pub fn total(&self) -> DVector<f64> {
        let (n, d) = (self.n_units(), self.dim());
        let mut t = DVector::zeros(d);
        for k in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += self.unit_scores[(i, k)];
            }
            t[k] = s;
        }
        t
    }

    /// `m_n(θ)/√n`.
    pub fn scaled_total(&self) -> DVector<f64> {
        self.total() / (self.n_units() as f64).sqrt()
    }
}

/// Population-style covariance (divisor n) of the rows of `rows`, symmetric
/// by construction.
pub fn covariance_matrix(rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = (rows.nrows(), rows.ncols());
    if n < 2 {
        return Err(QError::InsufficientData { needed: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for k in 0..d {
        mean[k] = rows.column(k).sum() / n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let mut s = 0.0;
            for i in 0..n {
                s += (rows[(i, a)] - mean[a]) * (rows[(i, b)] - mean[b]);
            }
            let v = s / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// `W_n(θ) = n⁻¹ Σ_i (m_i − m̄)(m_i − m̄)ᵀ`, factored.
pub fn sample_covariance(panel: &ScorePanel) -> Result<WeightMatrix> {
    factorize_psd(&covariance_matrix(panel.unit_scores())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_give_zero_covariance() {
        let rows = dmatrix![1.0, 2.0; 1.0, 2.0; 1.0, 2.0];
        assert_eq!(covariance_matrix(&rows).unwrap(), DMatrix::zeros(2, 2));
        let w = sample_covariance(&ScorePanel::new(rows).unwrap()).unwrap();
        assert!(w.jitter_applied() > 0.0);
    }

    #[test]
    fn two_point_variance_uses_divisor_n() {
        let rows = dmatrix![0.0, 0.0; 2.0, 0.0];
        assert_eq!(covariance_matrix(&rows).unwrap(), dmatrix![1.0, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn single_row_is_insufficient() {
        let rows = dmatrix![1.0, 2.0];
        assert_eq!(
            covariance_matrix(&rows),
            Err(QError::InsufficientData { needed: 2, got: 1 })
        );
    }

    #[test]
    fn matches_second_moment_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = DMatrix::from_fn(50, 3, |_, _| rng.random::<f64>() * 4.0 - 1.0);
        let cov = covariance_matrix(&rows).unwrap();
        // oracle: Σ m_i m_iᵀ / n − m̄ m̄ᵀ
        let n = 50.0;
        let mut second = DMatrix::<f64>::zeros(3, 3);
        for i in 0..50 {
            let r = rows.row(i).transpose();
            second += &r * r.transpose();
        }
        let mean = rows.row_sum().transpose() / n;
        let oracle = second / n - &mean * mean.transpose();
        for (a, b) in cov.iter().zip(oracle.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(cov, cov.transpose());
        let tr = cov.trace();
        assert!(cov.symmetric_eigen().eigenvalues.iter().all(|e| *e >= -1e-12 * tr));
    }

    #[test]
    fn unit_rows_are_draw_means() {
        let draws = DrawScores { n_draws: 2, n_units: 2, dim: 1, values: vec![1.0, 3.0, 3.0, 5.0] };
        let p = ScorePanel::from_draws(draws).unwrap();
        assert_eq!(p.unit_scores(), &dmatrix![2.0; 4.0]);
        assert_eq!(p.total()[0], 6.0);
    }
}
