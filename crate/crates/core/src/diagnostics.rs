//! Diagnostic matrices of a target measure.
//!
//! Every bound in [`crate::bounds`] is a function of a [`DiagnosticSet`]:
//! the relative Fisher information `H_rel = E_π[∇ln ℓ ∇ln ℓᵀ]` (with
//! `ℓ = dπ/dμ`), the second moment `M`, the mean `m`, the Fisher information
//! `H` of `π` itself and the covariance `C = M − mmᵀ`. For a standard
//! Gaussian reference the four matrices are tied by
//! `H_rel = H − 2I + M`, so `H` never has to be estimated from the Lebesgue
//! score: the sample estimator uses `Ĥ = Ĥ_rel − M̂ + 2I`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::gaussian_oracle::GaussianMeasure;
use crate::linalg::{eig_sym, LinalgError, SymMatrix};

/// Rows per block of the parallel Gram reduction.
pub const BLOCK_ROWS: usize = 256;
/// Relative eigenvalue floor applied to the estimated Fisher matrix.
pub const EPS_PD_REL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("non-finite value in sample row {row}")]
    NonFinite { row: usize },
    #[error("points are {points_rows}x{points_cols} but gradients are {grads_rows}x{grads_cols}")]
    ShapeMismatch {
        points_rows: usize,
        points_cols: usize,
        grads_rows: usize,
        grads_cols: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

fn check_rows(m: &DMatrix<f64>) -> Result<()> {
    for (row, r) in m.row_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(DiagnosticsError::NonFinite { row });
        }
    }
    Ok(())
}

/// Samples `x_i ~ π` with gradients `g_i = ∇ln(dπ/dμ)(x_i)`, one per row.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    points: DMatrix<f64>,
    grads: DMatrix<f64>,
}

impl SampleBatch {
    pub fn new(points: DMatrix<f64>, grads: DMatrix<f64>) -> Result<Self> {
        if points.shape() != grads.shape() {
            return Err(DiagnosticsError::ShapeMismatch {
                points_rows: points.nrows(),
                points_cols: points.ncols(),
                grads_rows: grads.nrows(),
                grads_cols: grads.ncols(),
            });
        }
        check_rows(&points)?;
        check_rows(&grads)?;
        Ok(Self { points, grads })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn grads(&self) -> &DMatrix<f64> {
        &self.grads
    }
}

/// Likelihood scores `∇ₓ ln ℓ^{y_i}(x_i)` for draws `(x_i, y_i)` of the
/// joint law, one per row.
#[derive(Debug, Clone)]
pub struct JointSampleBatch {
    grads: DMatrix<f64>,
}

impl JointSampleBatch {
    pub fn new(grads: DMatrix<f64>) -> Result<Self> {
        check_rows(&grads)?;
        Ok(Self { grads })
    }

    pub fn len(&self) -> usize {
        self.grads.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.grads.ncols()
    }

    pub fn grads(&self) -> &DMatrix<f64> {
        &self.grads
    }
}

/// The matrices `{H_rel, H, M, m, C}` of one target measure.
#[derive(Debug, Clone)]
pub struct DiagnosticSet {
    h_rel: SymMatrix,
    fisher: SymMatrix,
    second_moment: SymMatrix,
    mean: DVector<f64>,
    cov: SymMatrix,
}

impl DiagnosticSet {
    /// Builds the set from `H_rel`, `M` and `m`, deriving
    /// `H = H_rel − M + 2I` (floored at `EPS_PD_REL·tr(H)/d` when
    /// indefinite) and `C = M − mmᵀ`.
    pub fn from_moments(h_rel: SymMatrix, second_moment: SymMatrix, mean: DVector<f64>) -> Result<Self> {
        let d = h_rel.dim();
        check_dim(d, second_moment.dim())?;
        check_dim(d, mean.len())?;
        let raw = h_rel.sub(&second_moment).shift(2.0);
        let fisher = floor_spectrum(raw)?;
        let cov = second_moment.rank_one_update(&mean, -1.0);
        Ok(Self {
            h_rel,
            fisher,
            second_moment,
            mean,
            cov,
        })
    }

    /// Builds the set from an exactly known Fisher information `H`, deriving
    /// `H_rel = H − 2I + M` and `C = M − mmᵀ`.
    pub fn from_fisher(fisher: SymMatrix, second_moment: SymMatrix, mean: DVector<f64>) -> Result<Self> {
        let d = fisher.dim();
        check_dim(d, second_moment.dim())?;
        check_dim(d, mean.len())?;
        let h_rel = fisher.add(&second_moment).shift(-2.0);
        let cov = second_moment.rank_one_update(&mean, -1.0);
        Ok(Self {
            h_rel,
            fisher,
            second_moment,
            mean,
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Relative Fisher information `H(π‖μ)`.
    pub fn h_rel(&self) -> &SymMatrix {
        &self.h_rel
    }

    /// Fisher information `H(π)`.
    pub fn fisher(&self) -> &SymMatrix {
        &self.fisher
    }

    pub fn second_moment(&self) -> &SymMatrix {
        &self.second_moment
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    /// Max-abs residual of `H_rel = H − 2I + M`.
    pub fn fim_identity_residual(&self) -> f64 {
        self.fisher
            .add(&self.second_moment)
            .shift(-2.0)
            .sub(&self.h_rel)
            .max_abs()
    }

    /// Diagnostics of the image of `π` under `x ↦ Q x` for orthogonal `Q`.
    pub fn rotate(&self, q: &DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim(), q.nrows())?;
        let conj = |s: &SymMatrix| SymMatrix::new(q * s.matrix() * q.transpose());
        Ok(Self {
            h_rel: conj(&self.h_rel)?,
            fisher: conj(&self.fisher)?,
            second_moment: conj(&self.second_moment)?,
            mean: q * &self.mean,
            cov: conj(&self.cov)?,
        })
    }

    /// Diagnostics of the whitened target `C^{-1/2}(X − m)` together with
    /// `C^{1/2}`. The whitened set has `M = I`, `m = 0` and
    /// `H = C^{1/2} H C^{1/2}`.
    pub fn whiten(&self) -> Result<(Self, SymMatrix)> {
        let c_half = self.cov.sqrt()?;
        self.cov.inv_sqrt()?;
        let fisher = self.fisher.congruence(c_half.matrix());
        let d = self.dim();
        let white = Self::from_fisher(fisher, SymMatrix::identity(d), DVector::zeros(d))?;
        Ok((white, c_half))
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DiagnosticsError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn floor_spectrum(h: SymMatrix) -> Result<SymMatrix> {
    let d = h.dim();
    if d == 0 {
        return Ok(h);
    }
    let trace = h.trace();
    let eps = if trace > 0.0 {
        EPS_PD_REL * trace / d as f64
    } else {
        EPS_PD_REL
    };
    let eig = eig_sym(&h)?;
    let min = eig.values[d - 1];
    if min >= eps {
        return Ok(h);
    }
    log::warn!("Fisher estimate has eigenvalue {min:e} below floor {eps:e}; clamping");
    let values = eig.values.map(|v| v.max(eps));
    Ok(SymMatrix::from_spectrum(&values, &eig.vectors))
}

/// `(1/n) Σ xᵢ xᵢᵀ` as a parallel reduction over fixed row blocks, summed in
/// block order so the result does not depend on the thread count.
pub fn mean_outer(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let blocks = n.div_ceil(BLOCK_ROWS);
    let partial: Vec<DMatrix<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_ROWS;
            let len = BLOCK_ROWS.min(n - start);
            let block = x.rows(start, len);
            block.transpose() * block
        })
        .collect();
    let mut total = DMatrix::zeros(d, d);
    for p in &partial {
        total += p;
    }
    total / n as f64
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Monte Carlo diagnostics with the stabilized Fisher estimator
/// `Ĥ = Ĥ_rel − M̂ + 2I`.
pub fn estimate_diagnostics(batch: &SampleBatch) -> Result<DiagnosticSet> {
    let (n, d) = (batch.len(), batch.dim());
    if n < 2 {
        return Err(DiagnosticsError::TooFewSamples { n });
    }
    if n < 5 * d {
        log::warn!("only {n} samples for dimension {d}; diagnostics may overfit");
    }
    let h_rel = SymMatrix::new(mean_outer(batch.grads()))?;
    let second = SymMatrix::new(mean_outer(batch.points()))?;
    let mean = column_mean(batch.points());
    DiagnosticSet::from_moments(h_rel, second, mean)
}

/// Monte Carlo estimate of the data-free diagnostic `E[∇ₓln ℓ^Y(X) ⊗ 2]`.
pub fn estimate_datafree(batch: &JointSampleBatch) -> Result<SymMatrix> {
    let n = batch.len();
    if n < 2 {
        return Err(DiagnosticsError::TooFewSamples { n });
    }
    Ok(SymMatrix::new(mean_outer(batch.grads()))?)
}

/// Exact diagnostics of `N(m, C)`: `H = C⁻¹`, `M = C + mmᵀ`.
pub fn diagnostics_from_gaussian(g: &GaussianMeasure) -> Result<DiagnosticSet> {
    let fisher = g.cov().inverse()?;
    let second = g.cov().rank_one_update(g.mean(), 1.0);
    DiagnosticSet::from_fisher(fisher, second, g.mean().clone())
}
