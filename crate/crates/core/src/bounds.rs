//! Certified bounds on ridge-approximation error.
//!
//! For a frame `U` with orthonormal columns and any orthogonal completion
//! `U_⊥`, the KL divergence between the target and its optimal ridge
//! approximation along `U` is bracketed by
//!
//! ```text
//! ½‖U_⊥ᵀm‖²  ≤  J↑(U)  ≤  KL  ≤  J↓(U)  ≤  ½ tr(U_⊥ᵀ H_rel U_⊥)
//! J↓(U) = ½[tr(U_⊥ᵀ M U_⊥) − (d−r) + logdet(U_⊥ᵀ H U_⊥)]
//! J↑(U) = ½[tr(U_⊥ᵀ M U_⊥) − (d−r) − logdet(U_⊥ᵀ C U_⊥)]
//! ```
//!
//! The outer pair comes from the Gaussian logarithmic Sobolev inequality,
//! the inner pair from its dimensional refinement. The same module provides
//! the best-Gaussian (tilted) bound, the data-free bound for averaging over
//! observed data, and the Hellinger bounds from the (dimensional) Poincaré
//! inequality.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::diagnostics::DiagnosticSet;
use crate::linalg::{self, eig_gen, eig_sym, logdet, Frame, LinalgError, SymMatrix};

/// Slack allowed when checking `lower ≤ upper` before clamping.
pub const ORDER_SLACK: f64 = 1e-9;
/// Tolerance on `M = I` and `m = 0` for the isotropic closed form.
pub const ISOTROPY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("rank {r} out of range for dimension {d}")]
    RankOutOfRange { r: usize, d: usize },
    #[error("{which} is not positive definite ({source}); consider flooring its spectrum")]
    NotPositiveDefinite {
        which: &'static str,
        source: LinalgError,
    },
    #[error("target is not centered and isotropic (deviation {deviation:e}); use the tilted certificate")]
    NotIsotropic { deviation: f64 },
    #[error("Hellinger lower bound {0} is outside [0, 1]")]
    InvalidHellingerLower(f64),
    #[error("lower bound {lower} exceeds upper bound {upper}")]
    Inverted { lower: f64, upper: f64 },
    #[error("the data-free bound is evaluated from a data-free diagnostic, not a target's diagnostics")]
    NeedsDatafreeDiagnostic,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lsi,
    DimLsi,
    Tilted,
    Datafree,
    Hellinger,
    DimHellinger,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lsi => "lsi",
            Method::DimLsi => "dim",
            Method::Tilted => "tilted",
            Method::Datafree => "datafree",
            Method::Hellinger => "hellinger",
            Method::DimHellinger => "dim_hellinger",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An evaluated certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertBound {
    pub lower: Option<f64>,
    pub upper: f64,
    pub method: Method,
    pub rank: usize,
}

impl CertBound {
    /// Builds a bound, clamping a lower value that exceeds the upper one by
    /// rounding noise and rejecting a genuine inversion.
    pub fn new(lower: Option<f64>, upper: f64, method: Method, rank: usize) -> Result<Self> {
        let lower = match lower {
            Some(lo) if lo > upper => {
                if lo - upper > ORDER_SLACK * (1.0 + upper.abs()) {
                    return Err(BoundsError::Inverted { lower: lo, upper });
                }
                Some(upper)
            }
            other => other,
        };
        Ok(Self {
            lower,
            upper,
            method,
            rank,
        })
    }
}

fn check_frame(d: usize, u: &Frame) -> Result<()> {
    if u.dim() != d {
        return Err(BoundsError::DimensionMismatch {
            expected: d,
            found: u.dim(),
        });
    }
    Ok(())
}

fn check_rank(d: usize, r: usize) -> Result<()> {
    if r > d {
        return Err(BoundsError::RankOutOfRange { r, d });
    }
    Ok(())
}

fn pd_logdet(a: &SymMatrix, which: &'static str) -> Result<f64> {
    if a.dim() == 0 {
        return Ok(0.0);
    }
    logdet(a).map_err(|source| BoundsError::NotPositiveDefinite { which, source })
}

/// `½ tr((I − UUᵀ) H_rel)`.
pub fn lsi_majorant(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    check_frame(diag.dim(), u)?;
    let h = diag.h_rel();
    Ok(0.5 * (h.trace() - h.trace_congruence(u.matrix())))
}

/// `½ ‖(I − UUᵀ) m‖²`.
pub fn lsi_minorant(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    check_frame(diag.dim(), u)?;
    Ok(0.5 * u.project_out(diag.mean()).norm_squared())
}

/// `J↓(U)` in complement form.
pub fn dim_majorant(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    check_frame(diag.dim(), u)?;
    let perp = u.complement();
    let k = perp.rank();
    if k == 0 {
        return Ok(0.0);
    }
    let pm = perp.matrix();
    let trace = diag.second_moment().trace_congruence(pm);
    let ld = pd_logdet(&diag.fisher().congruence(pm), "Fisher information H")?;
    let value = 0.5 * (trace - k as f64 + ld);
    #[cfg(debug_assertions)]
    if let Ok(inv) = dim_majorant_inverse_form(diag, u) {
        let gap = (inv - value).abs();
        if gap > 1e-8 * (1.0 + value.abs() + ld.abs()) {
            log::warn!("complement and inverse forms of J↓ differ by {gap:e}");
        }
    }
    Ok(value)
}

/// `J↓(U)` in inverse form
/// `½[tr M − tr(UᵀMU) − (d−r) + logdet H + logdet(UᵀH⁻¹U)]`,
/// equal to [`dim_majorant`] by Sylvester's determinant identity.
pub fn dim_majorant_inverse_form(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    check_frame(diag.dim(), u)?;
    let (d, r) = (u.dim(), u.rank());
    let m = diag.second_moment();
    let h = diag.fisher();
    let h_inv = h
        .inverse()
        .map_err(|source| BoundsError::NotPositiveDefinite {
            which: "Fisher information H",
            source,
        })?;
    let reduced = if r == 0 {
        0.0
    } else {
        pd_logdet(&h_inv.congruence(u.matrix()), "UᵀH⁻¹U")?
    };
    Ok(0.5 * (m.trace() - m.trace_congruence(u.matrix()) - (d - r) as f64 + logdet(h)? + reduced))
}

/// `J↑(U)` in complement form, floored at zero.
pub fn dim_minorant(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    check_frame(diag.dim(), u)?;
    let perp = u.complement();
    let k = perp.rank();
    if k == 0 {
        return Ok(0.0);
    }
    let pm = perp.matrix();
    let trace = diag.second_moment().trace_congruence(pm);
    let ld = pd_logdet(&diag.cov().congruence(pm), "covariance C")?;
    Ok((0.5 * (trace - k as f64 - ld)).max(0.0))
}

/// Leading `r` eigenvectors of `H_rel` and `½ Σ_{k>r} λ_k(H_rel)`.
pub fn lsi_certificate(diag: &DiagnosticSet, r: usize) -> Result<(Frame, f64)> {
    check_rank(diag.dim(), r)?;
    let eig = eig_sym(diag.h_rel())?;
    Ok((eig.top_frame(r)?, 0.5 * eig.tail_sum(r, |l| l)))
}

/// Closed-form minimizer of `J↓` for a centered isotropic target: leading
/// eigenvectors of `H` and `½ Σ_{k>r} ln λ_k(H)`.
pub fn dim_certificate_centered_isotropic(diag: &DiagnosticSet, r: usize) -> Result<(Frame, f64)> {
    let d = diag.dim();
    check_rank(d, r)?;
    let deviation = (diag.second_moment().matrix() - DMatrix::<f64>::identity(d, d))
        .amax()
        .max(diag.mean().amax());
    if deviation > ISOTROPY_TOL {
        return Err(BoundsError::NotIsotropic { deviation });
    }
    let eig = eig_sym(diag.fisher())?;
    let rel = eig_sym(diag.h_rel())?;
    for k in 0..d {
        let (h, hr) = (eig.values[k], rel.values[k]);
        debug_assert!(
            (h - 1.0 - hr).abs() <= 1e-8 * (1.0 + h.abs()),
            "spectra of H and H_rel are not shifted by one"
        );
    }
    if d > 0 && eig.values[d - 1] <= 0.0 {
        return Err(BoundsError::NotPositiveDefinite {
            which: "Fisher information H",
            source: LinalgError::NotPositiveDefinite {
                pivot: d - 1,
                value: eig.values[d - 1],
            },
        });
    }
    Ok((eig.top_frame(r)?, 0.5 * eig.tail_sum(r, f64::ln)))
}

/// Closed-form minimizer of the best-Gaussian bound.
#[derive(Debug, Clone)]
pub struct TiltedCertificate {
    /// Generalized eigenvalues of `(H, C⁻¹)`, descending.
    pub values: DVector<f64>,
    /// `V_r = [v_1..v_r]` with `V_rᵀ C⁻¹ V_r = I`.
    pub v: DMatrix<f64>,
    /// `U_r = C⁻¹ V_r`, satisfying `U_rᵀ C U_r = I`.
    pub u: DMatrix<f64>,
    /// `½ Σ_{k>r} ln λ_k(H, C⁻¹)`.
    pub certificate: f64,
}

impl TiltedCertificate {
    /// Orthonormal frame spanning the features `U_r`.
    pub fn feature_frame(&self) -> Result<Frame> {
        if self.u.ncols() == 0 {
            return Ok(Frame::empty(self.u.nrows()));
        }
        Ok(Frame::orthonormalize(&self.u)?)
    }
}

fn pd_cov_inverse(diag: &DiagnosticSet) -> Result<SymMatrix> {
    diag.cov()
        .inverse()
        .map_err(|source| BoundsError::NotPositiveDefinite {
            which: "covariance C",
            source,
        })
}

/// Minimizer of the best-Gaussian bound from the generalized eigenproblem
/// `H v = λ C⁻¹ v`.
pub fn tilted_certificate(diag: &DiagnosticSet, r: usize) -> Result<TiltedCertificate> {
    let d = diag.dim();
    check_rank(d, r)?;
    let precision = pd_cov_inverse(diag)?;
    linalg::cholesky(diag.fisher().matrix()).map_err(|source| BoundsError::NotPositiveDefinite {
        which: "Fisher information H",
        source,
    })?;
    let eig = eig_gen(diag.fisher(), &precision)?;
    let v = eig.top_vectors(r);
    let u = precision.matrix() * &v;
    let certificate = 0.5 * eig.tail_sum(r, f64::ln);
    Ok(TiltedCertificate {
        values: eig.values,
        v,
        u,
        certificate,
    })
}

/// Best-Gaussian bound at the features spanned by `u` (any full-rank
/// representative; it is rescaled so that `UᵀCU = I`):
/// `½ logdet(CH) + ½ logdet(UᵀH⁻¹U)`.
pub fn tilted_majorant(diag: &DiagnosticSet, u: &DMatrix<f64>) -> Result<f64> {
    let d = diag.dim();
    if u.nrows() != d {
        return Err(BoundsError::DimensionMismatch {
            expected: d,
            found: u.nrows(),
        });
    }
    let full = pd_logdet(diag.cov(), "covariance C")? + pd_logdet(diag.fisher(), "Fisher information H")?;
    if u.ncols() == 0 {
        return Ok(0.5 * full);
    }
    let h_inv = diag.fisher().inverse()?;
    let reduced = pd_logdet(&h_inv.congruence(u), "UᵀH⁻¹U")? - pd_logdet(&diag.cov().congruence(u), "UᵀCU")?;
    Ok(0.5 * (full + reduced))
}

/// `½ logdet(V_⊥ᵀ (I + H_df) V_⊥)`.
pub fn datafree_majorant(h_df: &SymMatrix, v: &Frame) -> Result<f64> {
    check_frame(h_df.dim(), v)?;
    let perp = v.complement();
    if perp.rank() == 0 {
        return Ok(0.0);
    }
    Ok(0.5 * pd_logdet(&h_df.shift(1.0).congruence(perp.matrix()), "I + H_df")?)
}

/// Data-free certificate at the leading eigenvectors of `H_df`.
#[derive(Debug, Clone)]
pub struct DatafreeCertificate {
    pub frame: Frame,
    /// `½ Σ_{k>r} ln(1 + λ_k)`.
    pub dim_cert: f64,
    /// `½ Σ_{k>r} λ_k`.
    pub linear_cert: f64,
}

pub fn datafree_certificate(h_df: &SymMatrix, r: usize) -> Result<DatafreeCertificate> {
    check_rank(h_df.dim(), r)?;
    let eig = eig_sym(h_df)?;
    Ok(DatafreeCertificate {
        frame: eig.top_frame(r)?,
        dim_cert: 0.5 * eig.tail_sum(r, |l| l.max(0.0).ln_1p()),
        linear_cert: 0.5 * eig.tail_sum(r, |l| l.max(0.0)),
    })
}

/// Lower bound `I(X;Y) − ½ logdet(V_⊥ᵀ(I + H_df)V_⊥)` on the information
/// carried by the features `VᵀX`.
pub fn mutual_info_lower(h_df: &SymMatrix, v: &Frame, i_xy: f64) -> Result<f64> {
    Ok(i_xy - datafree_majorant(h_df, v)?)
}

/// Traces entering the Hellinger bounds at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HellingerContext {
    /// `tr H_rel − tr(UᵀH_rel U)`.
    pub trace_hrel_perp: f64,
    /// `tr M − tr(UᵀMU)`.
    pub trace_m_perp: f64,
    pub d_minus_r: usize,
}

impl HellingerContext {
    pub fn new(diag: &DiagnosticSet, u: &Frame) -> Result<Self> {
        check_frame(diag.dim(), u)?;
        let um = u.matrix();
        let h = diag.h_rel();
        let m = diag.second_moment();
        Ok(Self {
            trace_hrel_perp: h.trace() - h.trace_congruence(um),
            trace_m_perp: m.trace() - m.trace_congruence(um),
            d_minus_r: u.dim() - u.rank(),
        })
    }

    /// `1 − sqrt((1 − ¼ gap)₊)`.
    pub fn majorant(&self) -> f64 {
        self.with_delta(0.0)
    }

    fn with_delta(&self, delta: f64) -> f64 {
        let inner = (1.0 - 0.25 * self.trace_hrel_perp + delta).max(0.0);
        (1.0 - inner.sqrt()).max(0.0)
    }

    fn offset(&self) -> f64 {
        0.5 * (self.d_minus_r as f64 - self.trace_m_perp)
    }

    fn denominator(&self) -> f64 {
        self.trace_m_perp + self.d_minus_r as f64
    }

    /// `δ_r(U, y) = (1 − (1−y)² − ½tr M_⊥ + ½(d−r))² / (tr M_⊥ + d − r)`.
    pub fn delta(&self, y: f64) -> f64 {
        if self.d_minus_r == 0 {
            return 0.0;
        }
        let num = 1.0 - (1.0 - y).powi(2) + self.offset();
        let den = self.denominator();
        if den <= 0.0 {
            return 0.0;
        }
        num * num / den
    }

    /// Smallest `δ_r(U, y)` over `y ∈ [y_lower, y_upper]`.
    pub fn delta_min(&self, y_lower: f64, y_upper: f64) -> f64 {
        if self.d_minus_r == 0 || self.denominator() <= 0.0 {
            return 0.0;
        }
        let a = |y: f64| 1.0 - (1.0 - y).powi(2);
        let (lo, hi) = (a(y_lower) + self.offset(), a(y_upper.max(y_lower)) + self.offset());
        let num = if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            lo.abs().min(hi.abs())
        };
        num * num / self.denominator()
    }

    /// Dimensional-Poincaré majorant, valid whenever `y_lower` is a lower
    /// bound on the true squared Hellinger error. `δ_r` is minimized over
    /// all errors compatible with `y_lower` and the Poincaré majorant.
    pub fn dim_majorant(&self, y_lower: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y_lower) {
            return Err(BoundsError::InvalidHellingerLower(y_lower));
        }
        let upper = self.majorant();
        Ok(self.with_delta(self.delta_min(y_lower, upper)).min(upper))
    }

    /// Isotropic shortcut `(1 − (1−y)²)² / (2(d−r))`.
    pub fn delta_isotropic(y: f64, d_minus_r: usize) -> f64 {
        if d_minus_r == 0 {
            return 0.0;
        }
        (1.0 - (1.0 - y).powi(2)).powi(2) / (2.0 * d_minus_r as f64)
    }

    /// Damped iteration `y ← (1−β) y + β·bound(y)` with the raw `δ_r(U, y)`.
    /// The limit is a heuristic estimate, not a certificate.
    pub fn fixed_point(&self, y0: f64, damping: f64, max_iters: usize, tol: f64) -> FixedPoint {
        let mut y = y0.clamp(0.0, 1.0);
        let mut residual = f64::INFINITY;
        for iters in 0..max_iters {
            let next = self.with_delta(self.delta(y));
            residual = (next - y).abs();
            if residual <= tol {
                return FixedPoint {
                    value: next,
                    residual,
                    iters,
                    converged: true,
                };
            }
            y = (1.0 - damping) * y + damping * next;
        }
        FixedPoint {
            value: y,
            residual,
            iters: max_iters,
            converged: false,
        }
    }
}

/// Outcome of [`HellingerContext::fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub value: f64,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
}

/// `1 − sqrt((1 − ¼(tr H_rel − tr(UᵀH_rel U)))₊)`.
pub fn hellinger_majorant(diag: &DiagnosticSet, u: &Frame) -> Result<f64> {
    Ok(HellingerContext::new(diag, u)?.majorant())
}

/// `δ_r(U, y)` for the frame `u`.
pub fn hellinger_delta(diag: &DiagnosticSet, u: &Frame, y: f64) -> Result<f64> {
    Ok(HellingerContext::new(diag, u)?.delta(y))
}

/// Dimensional-Poincaré Hellinger majorant given a lower bound `y_lower`
/// on the true error (`0` is always valid).
pub fn dim_hellinger_majorant(diag: &DiagnosticSet, u: &Frame, y_lower: f64) -> Result<f64> {
    HellingerContext::new(diag, u)?.dim_majorant(y_lower)
}

/// Evaluates the lower and upper bound of `method` at `u`.
pub fn evaluate(diag: &DiagnosticSet, u: &Frame, method: Method) -> Result<CertBound> {
    let r = u.rank();
    match method {
        Method::Lsi => CertBound::new(Some(lsi_minorant(diag, u)?), lsi_majorant(diag, u)?, method, r),
        Method::DimLsi => CertBound::new(Some(dim_minorant(diag, u)?), dim_majorant(diag, u)?, method, r),
        Method::Tilted => CertBound::new(Some(0.0), tilted_majorant(diag, u.matrix())?, method, r),
        Method::Hellinger => CertBound::new(None, hellinger_majorant(diag, u)?, method, r),
        Method::DimHellinger => CertBound::new(None, dim_hellinger_majorant(diag, u, 0.0)?, method, r),
        Method::Datafree => Err(BoundsError::NeedsDatafreeDiagnostic),
    }
}
