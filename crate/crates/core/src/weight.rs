//! Factored symmetric positive-definite weight matrices and the quadratic
//! form `½ sᵀ W⁻¹ s`.

use crate::error::{QError, Result};
use nalgebra::{DMatrix, DVector};

/// Initial diagonal jitter, relative to the mean diagonal entry.
pub const JITTER_BASE: f64 = 1e-8;
/// Maximum number of escalating jitter retries (each ×10).
pub const JITTER_RETRIES: usize = 6;
/// Relative tolerance on `|a_ij - a_ji|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix carried with its lower Cholesky
/// factor and log-determinant.
///
/// When the input was only semi-definite, `jitter_applied` records the
/// diagonal shift that made it factorizable; `matrix` holds the shifted
/// matrix actually factored.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    log_det: f64,
    jitter_applied: f64,
}

impl WeightMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular factor `L` with `L Lᵀ = matrix`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    /// Solves `L x = s` in place and returns `x`.
    pub fn whiten(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.dim() {
            return Err(QError::DimensionMismatch { expected: self.dim(), got: s.len() });
        }
        let mut x = s.clone();
        forward_substitute(&self.factor, x.as_mut_slice());
        Ok(x)
    }

    /// Draws `L z` for a standard normal vector `z` already filled in.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.factor * z
    }
}

fn forward_substitute(l: &DMatrix<f64>, x: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let mut acc = x[i];
        for k in 0..i {
            acc -= l[(i, k)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
}

/// Plain Cholesky; `None` if a pivot is not strictly positive.
fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    // Reject factors whose smallest pivot is lost in roundoff relative to the
    // largest; the quadratic form would be meaningless there.
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for j in 0..d {
        lo = lo.min(l[(j, j)]);
        hi = hi.max(l[(j, j)]);
    }
    if d > 0 && lo <= hi * 1e-10 {
        return None;
    }
    Some(l)
}

/// Factorizes a symmetric matrix, adding escalating diagonal jitter
/// (`1e-8 · tr/d`, ×10 per retry, at most 6 retries) when it is not
/// numerically positive definite.
pub fn factorize_psd(matrix: &DMatrix<f64>) -> Result<WeightMatrix> {
    let d = matrix.nrows();
    if matrix.ncols() != d {
        return Err(QError::DimensionMismatch { expected: d, got: matrix.ncols() });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(QError::NonFinite("weight matrix"));
    }
    let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(QError::NotSymmetric(asym / scale));
    }
    let sym = if asym > 0.0 { (matrix + matrix.transpose()) * 0.5 } else { matrix.clone() };

    let finish = |m: DMatrix<f64>, l: DMatrix<f64>, jitter: f64| {
        let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        WeightMatrix { matrix: m, factor: l, log_det, jitter_applied: jitter }
    };
    if let Some(l) = cholesky_lower(&sym) {
        return Ok(finish(sym, l, 0.0));
    }

    let trace = sym.trace();
    // A zero matrix has no scale of its own; fall back to unit scale.
    let base = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    let mut jitter = JITTER_BASE * base;
    for _ in 0..JITTER_RETRIES {
        let mut shifted = sym.clone();
        for i in 0..d {
            shifted[(i, i)] += jitter;
        }
        if let Some(l) = cholesky_lower(&shifted) {
            return Ok(finish(shifted, l, jitter));
        }
        jitter *= 10.0;
    }
    Err(QError::SingularWeight { jitter: jitter / 10.0 })
}

/// `½ sᵀ W⁻¹ s` via a triangular solve against the stored factor.
pub fn quad_form(scaled_score: &DVector<f64>, weight: &WeightMatrix) -> Result<f64> {
    if scaled_score.iter().any(|v| !v.is_finite()) {
        return Err(QError::NonFinite("scaled score"));
    }
    let z = weight.whiten(scaled_score)?;
    Ok(0.5 * z.norm_squared())
}
