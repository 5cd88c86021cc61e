//! Subspace geometry on the Grassmann manifold G(d, n).
//!
//! A source subspace `P_i` (with orthogonal complement `R_i`) and a target
//! basis `P_j` are related through a special-case generalized SVD
//!
//! ```text
//! P_iᵀ P_j = V1 Γ Vᵀ        R_iᵀ P_j = −V2 Σ Vᵀ        Γ² + Σ² = I
//! ```
//!
//! obtained from the plain SVD of `B A⁻¹` with `A = P_iᵀ P_j`, `B = R_iᵀ P_j`.
//! The principal angles `θ = atan(s)` parameterize the geodesic
//! `φ(t) = P_i V1 cos(tθ) − R_i V2 sin(tθ)`, and integrating `φ(t)φ(t)ᵀ` over
//! `t ∈ [0, 1]` gives the geodesic flow kernel `G` in closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{self, ensure_finite, Matrix, Vector};

/// Default bound on `cond(P_iᵀ P_j)` accepted by [`gsvd_pair`].
pub const DEFAULT_COND_MAX: f64 = 1e12;

/// Principal angles below this are treated as zero in the kernel integrals.
pub const SMALL_ANGLE: f64 = 1e-6;

/// A point on G(d, n): column-orthonormal basis plus its complement.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    basis: Matrix,
    complement: Matrix,
}

impl SubspaceBasis {
    /// Wraps a column-orthonormal `n×d` basis, computing its complement.
    /// Requires `1 ≤ d ≤ n/2`.
    pub fn new(basis: Matrix) -> Result<Self> {
        let (n, d) = basis.shape();
        if d == 0 || 2 * d > n {
            return Err(Error::contract(format!(
                "subspace dimension must satisfy 1 <= d <= n/2, got d={d}, n={n}"
            )));
        }
        let complement = numerics::orth_complement(&basis)?;
        Ok(Self { basis, complement })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn complement(&self) -> &Matrix {
        &self.complement
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }
}

/// Uniformly random column-orthonormal `n×d` matrix, deterministic in `seed`.
pub fn random_basis(n: usize, d: usize, seed: u64) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    Ok(numerics::svd(&g)?.u)
}

/// Column means of `x`.
pub fn column_mean(x: &Matrix) -> Vector {
    let n = x.nrows() as f64;
    Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Top-`d` principal directions of the mean-centered rows of `x`.
pub fn pca_subspace(x: &Matrix, d: usize) -> Result<SubspaceBasis> {
    let (rows, n) = x.shape();
    if rows < 2 {
        return Err(Error::contract(format!("PCA needs at least 2 rows, got {rows}")));
    }
    if d == 0 || 2 * d > n || d > rows - 1 {
        return Err(Error::contract(format!(
            "subspace dimension d={d} out of range for {rows}x{n} data"
        )));
    }
    ensure_finite(x, "PCA input")?;
    let mean = column_mean(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let dec = numerics::svd(&centered)?;
    let top = dec.s[0];
    let rank = dec.s.iter().filter(|&&s| s > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    if top == 0.0 || rank < d {
        return Err(Error::DegenerateBag { rank, dim: d });
    }
    let basis = dec.vt.rows(0, d).transpose();
    SubspaceBasis::new(basis)
}

/// Output of the special-case GSVD between a source subspace and a target basis.
#[derive(Debug, Clone)]
pub struct GsvdResult {
    pub v1: Matrix,
    pub v2: Matrix,
    pub gamma: Vector,
    pub sigma: Vector,
    pub v: Matrix,
    /// Principal angles in radians, ascending.
    pub theta: Vector,
}

pub fn gsvd_pair(source: &SubspaceBasis, target: &Matrix) -> Result<GsvdResult> {
    gsvd_pair_with(source, target, DEFAULT_COND_MAX)
}

pub fn gsvd_pair_with(source: &SubspaceBasis, target: &Matrix, cond_max: f64) -> Result<GsvdResult> {
    let (n, d) = target.shape();
    if n != source.ambient_dim() || d != source.dim() {
        return Err(Error::contract(format!(
            "target basis is {n}x{d}, source subspace is {}x{}",
            source.ambient_dim(),
            source.dim()
        )));
    }
    let gram_err = (target.transpose() * target - Matrix::identity(d, d)).amax();
    if gram_err > 1e-8 {
        return Err(Error::contract(format!(
            "target basis is not column-orthonormal (max |PᵀP - I| = {gram_err:e})"
        )));
    }

    let a = source.basis().transpose() * target;
    let b = source.complement().transpose() * target;

    // Singular values of A are the principal-angle cosines (≤ 1), so the
    // conditioning is measured against the unit scale rather than σ_max.
    let sv = numerics::svd(&a)?.s;
    let condition = if sv[d - 1] > 0.0 { 1.0 / sv[d - 1] } else { f64::INFINITY };
    if !(condition <= cond_max) {
        return Err(Error::SingularOverlap { condition });
    }

    // X = B A⁻¹  ⇔  Aᵀ Xᵀ = Bᵀ
    let xt = a
        .transpose()
        .lu()
        .solve(&b.transpose())
        .ok_or(Error::SingularOverlap { condition })?;
    let dec = numerics::svd(&xt.transpose())?;

    // Reverse to ascending angles; the −1 of B A⁻¹ = −V2 S V1ᵀ goes into V2.
    let mut v1 = Matrix::zeros(d, d);
    let mut v2 = Matrix::zeros(n - d, d);
    let mut s = Vector::zeros(d);
    for k in 0..d {
        let src = d - 1 - k;
        v1.set_column(k, &dec.vt.row(src).transpose());
        v2.set_column(k, &(-dec.u.column(src)));
        s[k] = dec.s[src];
    }
    let gamma = s.map(|s| 1.0 / (1.0 + s * s).sqrt());
    let sigma = s.map(|s| s / (1.0 + s * s).sqrt());
    let theta = s.map(f64::atan);
    let inv_gamma = Matrix::from_diagonal(&gamma.map(|g| 1.0 / g));
    let v = a.transpose() * &v1 * inv_gamma;

    Ok(GsvdResult {
        v1,
        v2,
        gamma,
        sigma,
        v,
        theta,
    })
}

/// Point `φ(t)` on the geodesic from the source span (t = 0) to the target span (t = 1).
pub fn geodesic_flow(g: &GsvdResult, source: &SubspaceBasis, t: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("flow time must lie in [0, 1], got {t}")));
    }
    let cos = Matrix::from_diagonal(&g.theta.map(|th| (t * th).cos()));
    let sin = Matrix::from_diagonal(&g.theta.map(|th| (t * th).sin()));
    Ok(source.basis() * &g.v1 * cos - source.complement() * &g.v2 * sin)
}

/// Closed-form integrals `(∫cos², −∫cos·sin, ∫sin²)` of one principal angle over `t ∈ [0, 1]`.
pub fn flow_integrals(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        return (1.0, 0.0, 0.0);
    }
    let ratio = (2.0 * theta).sin() / (4.0 * theta);
    let s = theta.sin();
    (0.5 + ratio, -s * s / (2.0 * theta), 0.5 - ratio)
}

/// Geodesic flow kernel and its PSD square root.
#[derive(Debug, Clone)]
pub struct GeodesicKernel {
    pub g: Matrix,
    pub sqrt_g: Matrix,
    pub theta: Vector,
}

impl GeodesicKernel {
    /// Kernel with `G = √G = I`, i.e. no re-embedding.
    pub fn identity(n: usize) -> Self {
        Self {
            g: Matrix::identity(n, n),
            sqrt_g: Matrix::identity(n, n),
            theta: Vector::zeros(0),
        }
    }

    pub fn bilinear(&self, x: &Vector, y: &Vector) -> f64 {
        x.dot(&(&self.g * y))
    }
}

pub fn gfk_kernel(g: &GsvdResult, source: &SubspaceBasis) -> Result<GeodesicKernel> {
    let left = source.basis() * &g.v1;
    let right = source.complement() * &g.v2;
    let d = g.theta.len();
    let mut l1 = Vector::zeros(d);
    let mut l2 = Vector::zeros(d);
    let mut l3 = Vector::zeros(d);
    for (k, &th) in g.theta.iter().enumerate() {
        (l1[k], l2[k], l3[k]) = flow_integrals(th);
    }
    let l1 = Matrix::from_diagonal(&l1);
    let l2 = Matrix::from_diagonal(&l2);
    let l3 = Matrix::from_diagonal(&l3);
    let cross = &left * &l2 * right.transpose();
    let raw = &left * l1 * left.transpose() + &cross + cross.transpose() + &right * l3 * right.transpose();
    let gm = numerics::symmetrize(&raw);
    let sqrt_g = numerics::psd_sqrt(&gm, numerics::PSD_CLAMP_TOL)?;
    Ok(GeodesicKernel {
        g: gm,
        sqrt_g,
        theta: g.theta.clone(),
    })
}

/// Re-embeds the rows of `x` as `x √G`.
pub fn reembed(x: &Matrix, kernel: &GeodesicKernel) -> Result<Matrix> {
    if x.ncols() != kernel.sqrt_g.nrows() {
        return Err(Error::contract(format!(
            "feature dimension {} does not match kernel dimension {}",
            x.ncols(),
            kernel.sqrt_g.nrows()
        )));
    }
    Ok(x * &kernel.sqrt_g)
}
