//! Dense real-matrix kernels: eigenvalues, linear solves and SPD matrix functions.
//!
//! Matrices here are tiny (state dimension rarely above 10), so every routine
//! favours robustness over speed.

use nalgebra::{DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense, row/column-agnostic real matrix.
pub type Mat = DMatrix<f64>;

/// Margin used by the Hurwitz test: `max Re λ < -HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Condition-number estimate above which [`solve_linear`] reports a singular system.
pub const SINGULAR_COND: f64 = 1e14;

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are sorted in descending order and column `i` of `vectors` is the
/// unit eigenvector belonging to `values[i]`.
#[derive(Debug, Clone)]
pub struct SymSpectrum {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl SymSpectrum {
    pub fn min(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn ensure_finite(m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch("matrix has non-finite entries".into()))
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition (input is symmetrized first).
pub fn sym_eig(m: &Mat) -> Result<SymSpectrum> {
    ensure_square(m, "sym_eig input")?;
    ensure_finite(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymSpectrum { values, vectors })
}

/// Eigenvalues of a general square matrix via the real Schur form.
pub fn gen_eig_values(m: &Mat) -> Result<Vec<Complex64>> {
    ensure_square(m, "gen_eig_values input")?;
    ensure_finite(m)?;
    if m.nrows() == 1 {
        return Ok(vec![Complex64::new(m[(0, 0)], 0.0)]);
    }
    if m.nrows() == 2 {
        return Ok(eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::DimensionMismatch("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Closed-form eigenvalues of `[[a, b], [c, d]]`.
pub(crate) fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let half_tr = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation in the smaller root
        let big = if half_tr >= 0.0 { half_tr + r } else { half_tr - r };
        let det = a * d - b * c;
        let small = if big != 0.0 { det / big } else { half_tr - r.copysign(half_tr) };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex64::new(half_tr, im), Complex64::new(half_tr, -im)]
    }
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Mat) -> Result<f64> {
    Ok(gen_eig_values(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Hurwitz test with the [`HURWITZ_MARGIN`] safety margin.
pub fn is_hurwitz(m: &Mat) -> bool {
    matches!(spectral_abscissa(m), Ok(a) if a < -HURWITZ_MARGIN)
}

/// One-norm (maximum absolute column sum).
pub fn norm1(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m)[0]
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn sigma_min(m: &Mat) -> f64 {
    *singular_values(m).last().unwrap_or(&0.0)
}

/// One-norm condition estimate `‖A‖₁ ‖A⁻¹‖₁`; infinite when `A` is exactly singular.
pub fn condition_1(a: &Mat) -> f64 {
    match a.clone().lu().try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat> {
    ensure_square(a, "solve_linear coefficient")?;
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::SingularMatrix)?;
    let cond = norm1(a) * norm1(&inv);
    if !(cond <= SINGULAR_COND) {
        return Err(Error::SingularMatrix);
    }
    lu.solve(b).ok_or(Error::SingularMatrix)
}

/// Inverse with the same conditioning guard as [`solve_linear`].
pub fn inverse(a: &Mat) -> Result<Mat> {
    solve_linear(a, &Mat::identity(a.nrows(), a.nrows()))
}

/// `M^{-1/2}` for symmetric positive definite `M`.
pub fn spd_inv_sqrt(m: &Mat) -> Result<Mat> {
    let spec = sym_eig(m)?;
    if !(spec.min() > 0.0 && spec.min() > 1e-12 * spec.max()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(spec.map(|l| 1.0 / l.sqrt()))
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix, discarding
/// eigenvalues below `rel_tol * λ_max`.
pub fn psd_pinv(m: &Mat, rel_tol: f64) -> Result<Mat> {
    let spec = sym_eig(m)?;
    let cut = rel_tol * spec.max().max(0.0);
    Ok(spec.map(|l| if l > cut && l > 0.0 { 1.0 / l } else { 0.0 }))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &Mat) -> Mat {
    Mat::from_column_slice(m.len(), 1, m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &Mat, rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v.as_slice())
}

/// Builds a matrix from row-major nested slices.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn trace(m: &Mat) -> f64 {
    m.trace()
}
