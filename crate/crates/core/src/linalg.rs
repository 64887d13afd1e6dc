//! Dense symmetric linear algebra used by every bound.
//!
//! The symmetric eigensolver (Householder tridiagonalization followed by
//! implicit QR) and the thin QR factorization come from `nalgebra`. The
//! Cholesky factorization reports the offending pivot on failure.
//!
//! Two types carry the invariants the rest of the crate relies on:
//!
//! - [`SymMatrix`]: exactly symmetric, with a lazily computed definiteness
//!   class.
//! - [`Frame`]: a `d x r` matrix with orthonormal columns, i.e. a
//!   representative of a point on the Grassmannian `Gr(d, r)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Orthonormality tolerance for [`Frame`] columns.
pub const TOL_ORTH: f64 = 1e-10;
/// Relative tolerance for eigen residuals and psd classification.
pub const TOL_EIG: f64 = 1e-9;
/// Seed of the generator used by [`complete_frame`].
pub const COMPLETION_SEED: u64 = 0x5eed_c0de;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("columns are rank deficient")]
    RankDeficient,
    #[error("eigendecomposition did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Definiteness class of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Definiteness {
    Indefinite,
    Psd,
    Pd,
}

/// Dense symmetric matrix.
///
/// The stored entries are exactly symmetric: construction averages `A` and
/// `Aᵀ`. The definiteness class is computed on first request and cached.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    data: DMatrix<f64>,
    class: OnceLock<Definiteness>,
}

impl PartialEq for SymMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        check_finite(&m)?;
        let data = (&m + m.transpose()) * 0.5;
        Ok(Self::from_symmetric(data))
    }

    fn from_symmetric(data: DMatrix<f64>) -> Self {
        Self {
            data,
            class: OnceLock::new(),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_symmetric(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self::from_symmetric(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_symmetric(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `Σ_k values[k] v_k v_kᵀ` from the columns of `vectors`.
    pub fn from_spectrum(values: &DVector<f64>, vectors: &DMatrix<f64>) -> Self {
        let scaled = vectors * DMatrix::from_diagonal(values);
        let m = scaled * vectors.transpose();
        Self::new(m).expect("spectral reconstruction is square and finite")
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    pub fn definiteness(&self) -> Definiteness {
        *self.class.get_or_init(|| classify(&self.data))
    }

    pub fn is_pd(&self) -> bool {
        self.definiteness() == Definiteness::Pd
    }

    pub fn is_psd(&self) -> bool {
        self.definiteness() >= Definiteness::Psd
    }

    /// `Uᵀ A U` for any `d x k` matrix `U`.
    pub fn congruence(&self, u: &DMatrix<f64>) -> SymMatrix {
        let m = u.transpose() * &self.data * u;
        Self::new(m).expect("congruence of a finite symmetric matrix")
    }

    /// `trace(Uᵀ A U)` without forming the product.
    pub fn trace_congruence(&self, u: &DMatrix<f64>) -> f64 {
        let au = &self.data * u;
        u.iter().zip(au.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self::from_symmetric(&self.data + &other.data)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self::from_symmetric(&self.data - &other.data)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self::from_symmetric(&self.data * s)
    }

    /// `A + s·I`.
    pub fn shift(&self, s: f64) -> SymMatrix {
        let mut m = self.data.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        Self::from_symmetric(m)
    }

    /// `A + s·v vᵀ`.
    pub fn rank_one_update(&self, v: &DVector<f64>, s: f64) -> SymMatrix {
        Self::new(&self.data + v * v.transpose() * s).expect("finite update")
    }

    /// Inverse through the Cholesky factor.
    pub fn inverse(&self) -> Result<SymMatrix> {
        let l = cholesky(&self.data)?;
        let eye = DMatrix::identity(self.dim(), self.dim());
        let inv = solve_with_factor(&l, &eye);
        Self::new(inv)
    }

    /// Solves `A X = B` for pd `A`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = cholesky(&self.data)?;
        Ok(solve_with_factor(&l, b))
    }

    /// Raises every eigenvalue to at least `floor`.
    pub fn clamp_eigenvalues(&self, floor: f64) -> Result<SymMatrix> {
        let eig = eig_sym(self)?;
        let values = eig.values.map(|v| v.max(floor));
        Ok(Self::from_spectrum(&values, &eig.vectors))
    }

    /// `f(A)` by spectral calculus.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let eig = eig_sym(self)?;
        let values = eig.values.map(f);
        Ok(Self::from_spectrum(&values, &eig.vectors))
    }

    /// Symmetric square root of a psd matrix.
    pub fn sqrt(&self) -> Result<SymMatrix> {
        self.map_spectrum(|v| v.max(0.0).sqrt())
    }

    /// Symmetric inverse square root of a pd matrix.
    pub fn inv_sqrt(&self) -> Result<SymMatrix> {
        cholesky(&self.data)?;
        self.map_spectrum(|v| 1.0 / v.sqrt())
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn classify(m: &DMatrix<f64>) -> Definiteness {
    if m.nrows() == 0 || cholesky(m).is_ok() {
        return Definiteness::Pd;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    match m.clone().try_symmetric_eigen(f64::EPSILON, 0) {
        Some(eig) if eig.eigenvalues.min() >= -TOL_EIG * scale => Definiteness::Psd,
        _ => Definiteness::Indefinite,
    }
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
///
/// Fails on the first non-positive pivot and reports its index.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn solve_with_factor(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal");
    l.tr_solve_lower_triangular(&y)
        .expect("Cholesky factor has a positive diagonal")
}

/// `ln det A` from the Cholesky factor; never forms the determinant.
pub fn logdet(a: &SymMatrix) -> Result<f64> {
    logdet_raw(a.matrix())
}

pub(crate) fn logdet_raw(a: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Orthonormal columns spanning a `d`-dimensional subspace of dimension `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    cols: DMatrix<f64>,
}

impl Frame {
    /// Validates `colsᵀ cols = I` to [`TOL_ORTH`].
    pub fn new(cols: DMatrix<f64>) -> Result<Self> {
        check_finite(&cols)?;
        let deviation = orthonormality_defect(&cols);
        if deviation > TOL_ORTH {
            return Err(LinalgError::NotOrthonormal { deviation });
        }
        Ok(Self { cols })
    }

    /// The rank-0 frame in dimension `d`.
    pub fn empty(d: usize) -> Self {
        Self {
            cols: DMatrix::zeros(d, 0),
        }
    }

    /// Canonical axis vectors `e_i` for the given indices.
    pub fn axes(d: usize, indices: &[usize]) -> Result<Self> {
        let mut cols = DMatrix::zeros(d, indices.len());
        for (k, &i) in indices.iter().enumerate() {
            if i >= d {
                return Err(LinalgError::DimensionMismatch {
                    expected: d,
                    found: i + 1,
                });
            }
            cols[(i, k)] = 1.0;
        }
        Self::new(cols)
    }

    /// Thin-QR orthonormalization of arbitrary full-column-rank columns.
    ///
    /// The Q factor is sign-normalized to give `R` a positive diagonal.
    pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Self> {
        check_finite(m)?;
        let (d, r) = m.shape();
        if r > d {
            return Err(LinalgError::RankDeficient);
        }
        if r == 0 {
            return Ok(Self::empty(d));
        }
        let qr = m.clone().qr();
        let rr = qr.r();
        let mut q = qr.q();
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for k in 0..r {
            let rkk = rr[(k, k)];
            if rkk.abs() <= 1e-12 * scale {
                return Err(LinalgError::RankDeficient);
            }
            if rkk < 0.0 {
                q.column_mut(k).neg_mut();
            }
        }
        Self::new(q)
    }

    /// Orthonormal frame from a direction vector.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        Self::orthonormalize(&DMatrix::from_column_slice(v.len(), 1, v))
    }

    /// Uniformly distributed random frame.
    pub fn random<R: rand::Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Self {
        loop {
            let g = DMatrix::from_fn(d, r, |_, _| StandardNormal.sample(rng));
            if let Ok(f) = Self::orthonormalize(&g) {
                return f;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.cols.nrows()
    }

    pub fn rank(&self) -> usize {
        self.cols.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.cols
    }

    /// The first `r` columns.
    pub fn leading(&self, r: usize) -> Frame {
        Frame {
            cols: self.cols.columns(0, r.min(self.rank())).into_owned(),
        }
    }

    /// `(I - UUᵀ) v`.
    pub fn project_out(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.cols * (self.cols.transpose() * v)
    }

    /// `(I - UUᵀ) X`.
    pub fn project_out_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - &self.cols * (self.cols.transpose() * x)
    }

    /// Any orthonormal completion `U_⊥`; see [`complete_frame`].
    pub fn complement(&self) -> Frame {
        complete_frame(self)
    }

    /// Frame transformed by an orthogonal matrix, `Q U`.
    pub fn rotate(&self, q: &DMatrix<f64>) -> Result<Frame> {
        Frame::new(q * &self.cols)
    }
}

fn orthonormality_defect(cols: &DMatrix<f64>) -> f64 {
    let r = cols.ncols();
    if r == 0 {
        return 0.0;
    }
    let gram = cols.transpose() * cols;
    (gram - DMatrix::<f64>::identity(r, r)).amax()
}

/// Orthonormal completion `U_⊥` of rank `d - r` with `[U, U_⊥]` orthogonal.
///
/// Pads `U` with seeded Gaussian columns, takes the full QR factor and
/// re-orthogonalizes the trailing block against `U` once more. Returns the
/// empty frame when `r == d`.
pub fn complete_frame(u: &Frame) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(COMPLETION_SEED);
    complete_frame_with(u, &mut rng)
}

pub fn complete_frame_with<R: rand::Rng + ?Sized>(u: &Frame, rng: &mut R) -> Frame {
    let (d, r) = (u.dim(), u.rank());
    if r == d {
        return Frame::empty(d);
    }
    loop {
        let mut padded = DMatrix::<f64>::zeros(d, d);
        padded.columns_mut(0, r).copy_from(u.matrix());
        for j in r..d {
            for i in 0..d {
                padded[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let q = padded.qr().q();
        let tail = q.columns(r, d - r).into_owned();
        let tail = u.project_out_mat(&tail);
        if let Ok(f) = Frame::orthonormalize(&tail) {
            if (u.matrix().transpose() * f.matrix()).amax() <= TOL_ORTH {
                return f;
            }
        }
    }
}

/// Eigenvalues in descending order with matching eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigPair {
    /// Leading `r` eigenvectors as a frame (standard problems only).
    pub fn top_frame(&self, r: usize) -> Result<Frame> {
        Frame::new(self.vectors.columns(0, r).into_owned())
    }

    /// Leading `r` eigenvectors, no orthonormality check.
    pub fn top_vectors(&self, r: usize) -> DMatrix<f64> {
        self.vectors.columns(0, r).into_owned()
    }

    /// `Σ_{k > r} f(λ_k)` over the discarded tail.
    pub fn tail_sum(&self, r: usize, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().skip(r).map(|&v| f(v)).sum()
    }
}

/// Symmetric eigendecomposition, values sorted descending.
///
/// Ties keep the order produced by the solver, which makes the output
/// deterministic.
pub fn eig_sym(a: &SymMatrix) -> Result<EigPair> {
    let d = a.dim();
    if d == 0 {
        return Ok(EigPair {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = a
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 1000 * d.max(10))
        .ok_or(LinalgError::NoConvergence {
            residual: f64::INFINITY,
        })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let residual = (a.matrix() * &vectors - &vectors * DMatrix::from_diagonal(&values)).amax();
    if residual > TOL_EIG * scale * (d as f64).sqrt() {
        return Err(LinalgError::NoConvergence { residual });
    }
    Ok(EigPair { values, vectors })
}

/// Generalized problem `A v = λ B v` with `B` positive definite.
///
/// Reduced to a standard problem through `B = L Lᵀ`; the returned vectors
/// satisfy `Vᵀ B V = I`.
pub fn eig_gen(a: &SymMatrix, b: &SymMatrix) -> Result<EigPair> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let l = cholesky(b.matrix())?;
    let y = l
        .solve_lower_triangular(a.matrix())
        .ok_or(LinalgError::NotPositiveDefinite {
            pivot: 0,
            value: 0.0,
        })?;
    // L⁻¹ A L⁻ᵀ = (L⁻¹ (L⁻¹ A)ᵀ)
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(LinalgError::NotPositiveDefinite {
            pivot: 0,
            value: 0.0,
        })?;
    let std = eig_sym(&SymMatrix::new(c)?)?;
    let vectors = l
        .tr_solve_lower_triangular(&std.vectors)
        .ok_or(LinalgError::NotPositiveDefinite {
            pivot: 0,
            value: 0.0,
        })?;
    Ok(EigPair {
        values: std.values,
        vectors,
    })
}

/// The two sides of the Sylvester determinant identity
/// `logdet(U_⊥ᵀ H U_⊥) = logdet(H) + logdet(Uᵀ H⁻¹ U)`.
pub fn sylvester_equiv_check(h: &SymMatrix, u: &Frame) -> Result<(f64, f64)> {
    if h.dim() != u.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: h.dim(),
            found: u.dim(),
        });
    }
    let perp = u.complement();
    let lhs = if perp.rank() == 0 {
        0.0
    } else {
        logdet(&h.congruence(perp.matrix()))?
    };
    let mut rhs = logdet(h)?;
    if u.rank() > 0 {
        let hinv_u = h.solve(u.matrix())?;
        rhs += logdet_raw(&symmetrize(u.matrix().transpose() * hinv_u))?;
    }
    Ok((lhs, rhs))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Principal angles (radians, ascending) between the spans of two frames.
pub fn principal_angles(a: &Frame, b: &Frame) -> Vec<f64> {
    let m = a.matrix().transpose() * b.matrix();
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m
        .svd(false, false)
        .singular_values
        .iter()
        .map(|&c| c.clamp(-1.0, 1.0).acos())
        .collect();
    s.sort_by(|x, y| x.partial_cmp(y).unwrap());
    s
}
