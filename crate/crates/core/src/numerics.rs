//! Dense linear-algebra primitives shared by the rest of the crate.
//!
//! Decompositions are delegated to `nalgebra` and post-processed into a
//! canonical form: singular values and eigenvalues sorted descending, and
//! every singular/eigen vector sign-fixed so that its largest-magnitude entry
//! is positive. The canonical form makes every routine a deterministic
//! function of its input.

use nalgebra::linalg::{SymmetricEigen, SVD};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap handed to the SVD and eigen solvers.
pub const MAX_SOLVER_ITERATIONS: usize = 10_000;

/// Default clamp tolerance for [`psd_sqrt`].
pub const PSD_CLAMP_TOL: f64 = 1e-8;

/// Thin singular value decomposition `M = U diag(s) Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vector,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.s) * &self.vt
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vector,
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        &self.eigenvectors * Matrix::from_diagonal(&self.eigenvalues) * self.eigenvectors.transpose()
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn ensure_nonempty(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::contract(format!("{what} must have at least one row and column")));
    }
    Ok(())
}

/// Index of the first entry with the largest magnitude.
fn dominant_index<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, v) in values.enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    best
}

/// Descending order of `values`, ties kept in original order.
fn descending_order(values: &Vector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    ensure_nonempty(m, "svd input")?;
    ensure_finite(m, "svd input")?;
    let raw = SVD::try_new_unordered(m.clone(), true, true, f64::EPSILON, MAX_SOLVER_ITERATIONS)
        .ok_or(Error::NonConvergence {
            routine: "svd",
            iterations: MAX_SOLVER_ITERATIONS,
        })?;
    let (u, vt) = match (raw.u, raw.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => unreachable!("singular vectors were requested"),
    };
    let order = descending_order(&raw.singular_values);
    let k = order.len();
    let mut out_u = Matrix::zeros(m.nrows(), k);
    let mut out_vt = Matrix::zeros(k, m.ncols());
    let mut out_s = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u.column(src);
        let sign = if col[dominant_index(col.iter())] < 0.0 { -1.0 } else { 1.0 };
        out_u.set_column(dst, &(col * sign));
        out_vt.set_row(dst, &(vt.row(src) * sign));
        out_s[dst] = raw.singular_values[src];
    }
    Ok(Svd {
        u: out_u,
        s: out_s,
        vt: out_vt,
    })
}

/// Symmetric eigendecomposition. The input is symmetrized as `(S + Sᵀ)/2`
/// before solving; asymmetry beyond `1e-8` relative is a contract violation.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    ensure_nonempty(s, "sym_eig input")?;
    if !s.is_square() {
        return Err(Error::contract(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    ensure_finite(s, "sym_eig input")?;
    let asym = (s - s.transpose()).amax();
    if asym > 1e-8 * s.amax().max(1.0) {
        return Err(Error::contract(format!("sym_eig input is not symmetric (max |S - Sᵀ| = {asym:e})")));
    }
    let sym = (s + s.transpose()) * 0.5;
    let raw = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SOLVER_ITERATIONS).ok_or(
        Error::NonConvergence {
            routine: "sym_eig",
            iterations: MAX_SOLVER_ITERATIONS,
        },
    )?;
    let order = descending_order(&raw.eigenvalues);
    let n = order.len();
    let mut values = Vector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = raw.eigenvectors.column(src);
        let sign = if col[dominant_index(col.iter())] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
        values[dst] = raw.eigenvalues[src];
    }
    Ok(SymEig {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Averages `m` with its transpose; the result is symmetric bit-for-bit.
pub fn symmetrize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetric square root of a PSD matrix.
///
/// Eigenvalues in `[-clamp_tol, 0)` are treated as round-off and clamped to
/// zero; anything more negative is reported as [`Error::NotPsd`].
pub fn psd_sqrt(g: &Matrix, clamp_tol: f64) -> Result<Matrix> {
    let eig = sym_eig(g)?;
    let n = eig.eigenvalues.len();
    let min = eig.eigenvalues[n - 1];
    if min < -clamp_tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tolerance: clamp_tol,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * Matrix::from_diagonal(&roots);
    let h = scaled * eig.eigenvectors.transpose();
    Ok(symmetrize(&h))
}

/// Orthonormal basis `R` (n×(n−d)) of the orthogonal complement of the
/// column space of a column-orthonormal `P` (n×d).
pub fn orth_complement(p: &Matrix) -> Result<Matrix> {
    ensure_nonempty(p, "orth_complement input")?;
    let (n, d) = p.shape();
    if d >= n {
        return Err(Error::contract(format!(
            "orth_complement needs d < n, got d={d}, n={n}"
        )));
    }
    let gram_err = (p.transpose() * p - Matrix::identity(d, d)).amax();
    if gram_err > 1e-8 {
        return Err(Error::contract(format!(
            "basis is not column-orthonormal (max |PᵀP - I| = {gram_err:e})"
        )));
    }
    // I − PPᵀ has eigenvalue 1 on the complement and 0 on span(P).
    let projector = symmetrize(&(Matrix::identity(n, n) - p * p.transpose()));
    let eig = sym_eig(&projector)?;
    Ok(eig.eigenvectors.columns(0, n - d).into_owned())
}
