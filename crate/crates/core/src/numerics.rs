//! Small dense linear algebra on top of nalgebra: complex eigenvalues,
//! Kronecker products, diagonal matrix exponentials, Hurwitz and rank tests.
//!
//! Directed-graph Laplacians have complex spectra, so everything downstream
//! of an eigenvalue computation works over `Complex<f64>` even when the
//! inputs are real.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Dimension cap for eigenvalue computations; matrices here are tiny and
/// anything larger indicates a bug upstream.
pub const MAX_EIG_DIM: usize = 256;

/// Default margin for Hurwitz tests: a zero-real-part eigenvalue is NOT
/// Hurwitz (the stability conditions are strict inequalities).
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Default relative tolerance for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix dimension {0} exceeds cap {MAX_EIG_DIM}")]
    DimensionCap(usize),
    #[error("eigenvalue iteration failed to converge")]
    ConvergenceFailure,
    #[error("matrix contains a non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not diagonal (nonzero at ({row},{col}))")]
    NotDiagonal { row: usize, col: usize },
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {got}")]
    BadShape {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
}

/// Build a real matrix from row-major data, rejecting NaN/Inf entries.
pub fn mat_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<RMat, NumericsError> {
    if data.len() != rows * cols {
        return Err(NumericsError::BadShape {
            rows,
            cols,
            expected: rows * cols,
            got: data.len(),
        });
    }
    let m = RMat::from_row_slice(rows, cols, data);
    check_finite(&m)?;
    Ok(m)
}

pub fn check_finite(m: &RMat) -> Result<(), NumericsError> {
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            if !m[(row, col)].is_finite() {
                return Err(NumericsError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Lift a real matrix into the complex field.
pub fn complexify(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// All eigenvalues of a square real matrix, with algebraic multiplicity.
/// Order is unspecified.
pub fn eigenvalues(m: &RMat) -> Result<Vec<Complex64>, NumericsError> {
    square_checks(m.nrows(), m.ncols())?;
    check_finite(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(m.clone().complex_eigenvalues().as_slice().to_vec())
}

/// All eigenvalues of a square complex matrix, via Schur decomposition.
pub fn eigenvalues_complex(m: &CMat) -> Result<Vec<Complex64>, NumericsError> {
    square_checks(m.nrows(), m.ncols())?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    // 2x2 closed form sidesteps iteration entirely; this is the hot path for
    // the per-eigenvalue Hurwitz checks.
    if m.nrows() == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (tr * tr - det * 4.0).sqrt();
        return Ok(vec![(tr + disc) * 0.5, (tr - disc) * 0.5]);
    }
    let schur = m
        .clone()
        .try_schur(1e-15, 200_000)
        .ok_or(NumericsError::ConvergenceFailure)?;
    schur
        .eigenvalues()
        .map(|e| e.as_slice().to_vec())
        .ok_or(NumericsError::ConvergenceFailure)
}

fn square_checks(rows: usize, cols: usize) -> Result<(), NumericsError> {
    if rows != cols {
        return Err(NumericsError::NonSquare { rows, cols });
    }
    if rows > MAX_EIG_DIM {
        return Err(NumericsError::DimensionCap(rows));
    }
    Ok(())
}

/// Hurwitz test: true iff every eigenvalue satisfies Re(λ) < −margin.
/// Also returns the spectral abscissa (max real part) for reporting.
pub fn is_hurwitz(m: &CMat, margin: f64) -> Result<(bool, f64), NumericsError> {
    let eigs = eigenvalues_complex(m)?;
    let abscissa = eigs
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((abscissa < -margin, abscissa))
}

pub fn is_hurwitz_real(m: &RMat, margin: f64) -> Result<(bool, f64), NumericsError> {
    is_hurwitz(&complexify(m), margin)
}

/// Kronecker product. Dimensions multiply; capped so the eigenvalue cap
/// cannot be exceeded by accident downstream.
pub fn kron(a: &RMat, b: &RMat) -> RMat {
    a.kronecker(b)
}

pub fn kron_complex(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// exp(d·t) for a diagonal matrix: elementwise exponential on the diagonal.
pub fn expm_diag(d: &RMat, t: f64) -> Result<RMat, NumericsError> {
    square_checks(d.nrows(), d.ncols())?;
    for row in 0..d.nrows() {
        for col in 0..d.ncols() {
            if row != col && d[(row, col)] != 0.0 {
                return Err(NumericsError::NotDiagonal { row, col });
            }
        }
    }
    let mut out = RMat::zeros(d.nrows(), d.ncols());
    for i in 0..d.nrows() {
        out[(i, i)] = (d[(i, i)] * t).exp();
    }
    Ok(out)
}

/// Numerical rank: count of singular values above tol·σ_max.
pub fn rank(m: &RMat, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svals = m.clone().singular_values();
    let smax = svals.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svals.iter().filter(|&&s| s > tol * smax).count()
}

/// Max-abs entry, used to scale tolerances.
pub fn max_abs(m: &RMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
