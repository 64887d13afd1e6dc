//! Gauss–Hermite quadrature ground truth for low-dimensional pushforward
//! targets `π = T_#μ`.
//!
//! Expectations under `π` are tensor Gauss–Hermite sums over the latent
//! standard normal `Z`, with `X = T(Z)`. The KL divergence between `π` and
//! its optimal profile approximation along a unit vector `u` is
//!
//! ```text
//! KL = E_π[ln f(X)] − ∫ q(t) ln(q(t)/φ(t)) dt,    f = dπ/dμ,
//! ```
//!
//! where `q` is the density of `uᵀX` under `π` and `φ` the standard normal
//! density. The first term is a tensor Gauss–Hermite sum. The marginal `q`
//! is obtained by integrating the target density over the complement
//! direction on a uniform grid anchored at the origin, whose step is tied to
//! the quadrature order. A coarse pre-scan restricts each row of that grid to
//! the region carrying non-negligible mass.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{self, BoundsError};
use crate::diagnostics::{DiagnosticSet, DiagnosticsError};
use crate::grassmann::{self, GrassmannError, OptConfig};
use crate::linalg::{eig_sym, Frame, LinalgError, SymMatrix};

/// Largest dimension handled by tensor rules.
pub const MAX_DIM: usize = 4;
/// Largest supported number of points per axis.
pub const MAX_ORDER: usize = 200;
/// Default points per axis.
pub const DEFAULT_ORDER: usize = 60;
/// The profile grid step is `STEP_FACTOR / order`.
pub const STEP_FACTOR: f64 = 1.5;
/// Latent radius whose image bounds the profile grid.
const SUPPORT_RADIUS: f64 = 9.0;
/// Points per axis of the latent grid used to bound the support.
const SUPPORT_POINTS: usize = 121;
/// Log-density drop below a row maximum treated as zero mass.
const LOG_CUTOFF: f64 = 46.0;
/// Upper bound on the coarse scan step.
const COARSE_STEP: f64 = 0.2;
/// Coarse cells kept on each side of a marked cell.
const COARSE_PAD: i64 = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature order {0} must lie in 1..={MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("dimension {d} is not supported (need 1 <= d <= {MAX_DIM})")]
    DimensionUnsupported { d: usize },
    #[error("operation needs a two-dimensional target, got d = {0}")]
    NotTwoDimensional(usize),
    #[error("map Jacobian is singular at latent node {node:?}")]
    SingularJacobian { node: Vec<f64> },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, QuadratureError>;

/// A measure `π = T_#μ` given by a smooth invertible map `T` of the standard
/// normal `μ` on `R^d`.
pub trait PushforwardTarget: Send + Sync {
    fn dim(&self) -> usize;

    fn description(&self) -> String;

    /// Writes `T(z)` into `x`.
    fn forward(&self, z: &[f64], x: &mut [f64]);

    /// `det ∇T(z)`.
    fn jacobian_det(&self, z: &[f64]) -> f64;

    /// `ln (dπ/dx)(x)` with respect to Lebesgue measure.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes the Lebesgue score `∇ ln (dπ/dx)` at `x = T(z)` into `out`.
    fn score(&self, z: &[f64], out: &mut [f64]);
}

/// The banana map `T(z₁, z₂) = (z₁ − a, (z₁ − a)² + b·z₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rosenbrock {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Rosenbrock {
    fn default() -> Self {
        Self {
            shift: 0.5,
            scale: 0.2f64.sqrt(),
        }
    }
}

impl PushforwardTarget for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn description(&self) -> String {
        format!(
            "Rosenbrock T(z) = (z1 - {a}, (z1 - {a})^2 + {b}*z2)",
            a = self.shift,
            b = self.scale
        )
    }

    fn forward(&self, z: &[f64], x: &mut [f64]) {
        let x1 = z[0] - self.shift;
        x[0] = x1;
        x[1] = x1 * x1 + self.scale * z[1];
    }

    fn jacobian_det(&self, _z: &[f64]) -> f64 {
        self.scale
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let z1 = x[0] + self.shift;
        let z2 = (x[1] - x[0] * x[0]) / self.scale;
        -0.5 * (z1 * z1 + z2 * z2) - LN_2PI - self.scale.ln()
    }

    fn score(&self, z: &[f64], out: &mut [f64]) {
        let x1 = z[0] - self.shift;
        out[0] = -(z[0] - 2.0 * x1 * z[1] / self.scale);
        out[1] = -z[1] / self.scale;
    }
}

/// The affine map `T(z) = A z + b`, so that `π = N(b, A Aᵀ)`.
#[derive(Debug, Clone)]
pub struct AffineTarget {
    a: DMatrix<f64>,
    b: DVector<f64>,
    a_inv: DMatrix<f64>,
    log_abs_det: f64,
}

impl AffineTarget {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || b.len() != d {
            return Err(QuadratureError::InvalidTarget(format!(
                "A is {}x{} and b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if !(1..=MAX_DIM).contains(&d) {
            return Err(QuadratureError::DimensionUnsupported { d });
        }
        let det = a.determinant();
        let a_inv = a
            .clone()
            .try_inverse()
            .filter(|_| det != 0.0 && det.is_finite())
            .ok_or_else(|| QuadratureError::InvalidTarget("A is singular".into()))?;
        Ok(Self {
            a,
            b,
            a_inv,
            log_abs_det: det.abs().ln(),
        })
    }

    /// The identity map, for which `π = μ`.
    pub fn identity(d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, d), DVector::zeros(d))
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }
}

impl PushforwardTarget for AffineTarget {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn description(&self) -> String {
        format!("affine map of dimension {}", self.dim())
    }

    fn forward(&self, z: &[f64], x: &mut [f64]) {
        let d = self.dim();
        for (i, xi) in x.iter_mut().enumerate().take(d) {
            *xi = self.b[i] + (0..d).map(|j| self.a[(i, j)] * z[j]).sum::<f64>();
        }
    }

    fn jacobian_det(&self, _z: &[f64]) -> f64 {
        self.a.determinant()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            let zi: f64 = (0..d).map(|j| self.a_inv[(i, j)] * (x[j] - self.b[j])).sum();
            q += zi * zi;
        }
        -0.5 * q - self.log_abs_det - 0.5 * d as f64 * LN_2PI
    }

    fn score(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = -(0..d).map(|j| self.a_inv[(j, i)] * z[j]).sum::<f64>();
        }
    }
}

/// The image `Y = L(X − c)` of a target `X` under an invertible affine map.
pub struct AffineImage<'a> {
    inner: &'a dyn PushforwardTarget,
    center: DVector<f64>,
    lin: DMatrix<f64>,
    lin_inv: DMatrix<f64>,
    log_abs_det: f64,
}

impl<'a> AffineImage<'a> {
    pub fn new(inner: &'a dyn PushforwardTarget, lin: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let d = inner.dim();
        if lin.nrows() != d || lin.ncols() != d || center.len() != d {
            return Err(QuadratureError::InvalidTarget("affine image dimensions disagree".into()));
        }
        let det = lin.determinant();
        let lin_inv = lin
            .clone()
            .try_inverse()
            .filter(|_| det != 0.0 && det.is_finite())
            .ok_or_else(|| QuadratureError::InvalidTarget("affine image map is singular".into()))?;
        Ok(Self {
            inner,
            center,
            lin,
            lin_inv,
            log_abs_det: det.abs().ln(),
        })
    }

    /// The whitened target `C^{-1/2}(X − m)` for the mean `m` and covariance
    /// `C` of `X`.
    pub fn whitening(inner: &'a dyn PushforwardTarget, mean: &DVector<f64>, cov: &SymMatrix) -> Result<Self> {
        Self::new(inner, cov.inv_sqrt()?.into_matrix(), mean.clone())
    }
}

impl PushforwardTarget for AffineImage<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn description(&self) -> String {
        format!("affine image of {}", self.inner.description())
    }

    fn forward(&self, z: &[f64], y: &mut [f64]) {
        let d = self.dim();
        let mut x = [0.0; MAX_DIM];
        self.inner.forward(z, &mut x[..d]);
        for (i, yi) in y.iter_mut().enumerate().take(d) {
            *yi = (0..d).map(|j| self.lin[(i, j)] * (x[j] - self.center[j])).sum();
        }
    }

    fn jacobian_det(&self, z: &[f64]) -> f64 {
        self.log_abs_det.exp() * self.inner.jacobian_det(z)
    }

    fn log_density(&self, y: &[f64]) -> f64 {
        let d = self.dim();
        let mut x = [0.0; MAX_DIM];
        for (i, xi) in x.iter_mut().enumerate().take(d) {
            *xi = self.center[i] + (0..d).map(|j| self.lin_inv[(i, j)] * y[j]).sum::<f64>();
        }
        self.inner.log_density(&x[..d]) - self.log_abs_det
    }

    fn score(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut s = [0.0; MAX_DIM];
        self.inner.score(z, &mut s[..d]);
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = (0..d).map(|j| self.lin_inv[(j, i)] * s[j]).sum();
        }
    }
}

/// Gauss–Hermite rule for the standard normal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    /// Probabilists' normalization: the weights sum to one.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `Σ w_i f(x_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Orthonormal Hermite values `p_0..p_n` at `x`: returns `(p_n, p_{n−1},
/// Σ_{k<n} p_k²)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Gauss–Hermite rule with `order` nodes: Golub–Welsch nodes polished by
/// Newton steps on the orthonormal Hermite polynomial, with Christoffel
/// weights `1 / Σ_{k<n} p_k(x)²`.
pub fn gh_rule(order: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::OrderOutOfRange(order));
    }
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = eig_sym(&SymMatrix::new(jacobi)?)?;
    let mut nodes: Vec<f64> = eig.values.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let sqrt_n = (order as f64).sqrt();
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pn, pn1, _) = hermite_orthonormal(order, *x);
            if pn1 != 0.0 {
                *x -= pn / (sqrt_n * pn1);
            }
        }
    }
    for k in 0..order / 2 {
        let j = order - 1 - k;
        let x = 0.5 * (nodes[j] - nodes[k]);
        nodes[k] = -x;
        nodes[j] = x;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes.iter().map(|&x| 1.0 / hermite_orthonormal(order, x).2).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(QuadratureRule { order, nodes, weights })
}

fn check_dim(target: &dyn PushforwardTarget) -> Result<usize> {
    let d = target.dim();
    if !(1..=MAX_DIM).contains(&d) {
        return Err(QuadratureError::DimensionUnsupported { d });
    }
    Ok(d)
}

fn check_planar(target: &dyn PushforwardTarget) -> Result<()> {
    match target.dim() {
        2 => Ok(()),
        d => Err(QuadratureError::NotTwoDimensional(d)),
    }
}

/// Tensor sum `Σ_ν w_ν F(z_ν)` of a vector-valued integrand of length `len`.
///
/// `f(z, x, out)` receives the node, its image `T(z)` and a zeroed buffer for
/// `F(z)`. Partial sums are formed per leading-axis node in parallel and
/// combined in order.
fn tensor_sum<F>(target: &dyn PushforwardTarget, rule: &QuadratureRule, len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    let d = check_dim(target)?;
    let q = rule.order;
    let inner_count = q.pow(d as u32 - 1);
    let partials: Vec<Result<Vec<f64>>> = (0..q)
        .into_par_iter()
        .map(|i0| {
            let mut acc = vec![0.0; len];
            let mut term = vec![0.0; len];
            let mut z = [0.0; MAX_DIM];
            let mut x = [0.0; MAX_DIM];
            for flat in 0..inner_count {
                let mut w = rule.weights[i0];
                z[0] = rule.nodes[i0];
                let mut rest = flat;
                for zk in z.iter_mut().take(d).skip(1) {
                    let k = rest % q;
                    rest /= q;
                    *zk = rule.nodes[k];
                    w *= rule.weights[k];
                }
                let det = target.jacobian_det(&z[..d]);
                if det == 0.0 || !det.is_finite() {
                    return Err(QuadratureError::SingularJacobian { node: z[..d].to_vec() });
                }
                target.forward(&z[..d], &mut x[..d]);
                term.iter_mut().for_each(|t| *t = 0.0);
                f(&z[..d], &x[..d], &mut term);
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += w * t;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(total)
}

/// Moments of a target computed by tensor quadrature.
#[derive(Debug, Clone)]
pub struct QuadratureMoments {
    pub mean: DVector<f64>,
    pub second_moment: SymMatrix,
    /// `E_π[∇ln f ∇ln fᵀ]` with `f = dπ/dμ`.
    pub h_rel: SymMatrix,
    /// `E_π[∇ln p ∇ln pᵀ]` with the Lebesgue score, computed directly.
    pub fisher: SymMatrix,
}

/// Mean, second moment, relative Fisher information and Fisher information
/// of `target` by tensor quadrature.
pub fn quadrature_moments(target: &dyn PushforwardTarget, rule: &QuadratureRule) -> Result<QuadratureMoments> {
    let d = check_dim(target)?;
    let dd = d * d;
    let sums = tensor_sum(target, rule, d + 3 * dd, |z, x, out| {
        let mut s = [0.0; MAX_DIM];
        target.score(z, &mut s[..d]);
        for i in 0..d {
            out[i] = x[i];
            for j in 0..d {
                let gi = s[i] + x[i];
                let gj = s[j] + x[j];
                out[d + i * d + j] = x[i] * x[j];
                out[d + dd + i * d + j] = gi * gj;
                out[d + 2 * dd + i * d + j] = s[i] * s[j];
            }
        }
    })?;
    let block = |k: usize| SymMatrix::new(DMatrix::from_row_slice(d, d, &sums[d + k * dd..d + (k + 1) * dd]));
    Ok(QuadratureMoments {
        mean: DVector::from_column_slice(&sums[..d]),
        second_moment: block(0)?,
        h_rel: block(1)?,
        fisher: block(2)?,
    })
}

/// Diagnostics of `target` with `H_rel`, `M` and `m` from quadrature and `H`
/// from the identity `H = H_rel − M + 2I`.
pub fn quadrature_diagnostics(target: &dyn PushforwardTarget, rule: &QuadratureRule) -> Result<DiagnosticSet> {
    let m = quadrature_moments(target, rule)?;
    Ok(DiagnosticSet::from_moments(m.h_rel, m.second_moment, m.mean)?)
}

/// `E_π[ln (dπ/dμ)(X)]`.
pub fn expected_log_ratio(target: &dyn PushforwardTarget, rule: &QuadratureRule) -> Result<f64> {
    let d = target.dim() as f64;
    let s = tensor_sum(target, rule, 1, |_, x, out| {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        out[0] = target.log_density(x) + 0.5 * sq + 0.5 * d * LN_2PI;
    })?;
    Ok(s[0])
}

/// Density of `uᵀX` on the grid `t_k = (first + k)·step`, in log scale.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub step: f64,
    pub first: i64,
    pub log_q: Vec<f64>,
}

impl Marginal {
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.log_q
            .iter()
            .enumerate()
            .filter(|(_, lq)| lq.is_finite())
            .map(|(k, &lq)| ((self.first + k as i64) as f64 * self.step, lq))
    }

    /// `∫ tᵏ q(t) dt`.
    pub fn moment(&self, k: i32) -> f64 {
        self.step * self.nodes().map(|(t, lq)| t.powi(k) * lq.exp()).sum::<f64>()
    }

    /// `∫ q ln(q/φ) dt`.
    pub fn relative_entropy(&self) -> f64 {
        self.step
            * self
                .nodes()
                .map(|(t, lq)| lq.exp() * (lq + 0.5 * t * t + 0.5 * LN_2PI))
                .sum::<f64>()
    }
}

/// Points `T(z)` for `z` on a uniform grid of the latent box `[−R, R]²`.
fn support_cloud(target: &dyn PushforwardTarget) -> Vec<[f64; 2]> {
    let n = SUPPORT_POINTS;
    let h = 2.0 * SUPPORT_RADIUS / (n - 1) as f64;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let z = [-SUPPORT_RADIUS + i as f64 * h, -SUPPORT_RADIUS + j as f64 * h];
            let mut x = [0.0; 2];
            target.forward(&z, &mut x);
            pts.push(x);
        }
    }
    pts
}

fn index_range(lo: f64, hi: f64, step: f64) -> (i64, i64) {
    ((lo / step).floor() as i64, (hi / step).ceil() as i64)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn marginal_with(target: &dyn PushforwardTarget, theta: f64, step: f64, cloud: &[[f64; 2]]) -> Marginal {
    let (s, c) = theta.sin_cos();
    let u = [c, s];
    let v = [-s, c];
    let (mut tlo, mut thi, mut slo, mut shi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in cloud {
        let t = u[0] * p[0] + u[1] * p[1];
        let r = v[0] * p[0] + v[1] * p[1];
        tlo = tlo.min(t);
        thi = thi.max(t);
        slo = slo.min(r);
        shi = shi.max(r);
    }
    let pad = 1.0;
    let (k0, k1) = index_range(tlo - pad, thi + pad, step);
    let stride = ((COARSE_STEP / step).floor() as i64).max(1);
    let coarse = step * stride as f64;
    let (c0, c1) = index_range(slo - pad, shi + pad, coarse);
    let (j_min, j_max) = (c0 * stride, c1 * stride);
    let density = |t: f64, r: f64| target.log_density(&[t * u[0] + r * v[0], t * u[1] + r * v[1]]);

    let log_q = (k0..=k1)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * step;
            let scan: Vec<f64> = (c0..=c1).map(|jc| density(t, jc as f64 * coarse)).collect();
            let row_max = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !row_max.is_finite() {
                return f64::NEG_INFINITY;
            }
            let mut intervals: Vec<(i64, i64)> = Vec::new();
            for (idx, &lp) in scan.iter().enumerate() {
                if lp <= row_max - LOG_CUTOFF {
                    continue;
                }
                let jc = c0 + idx as i64;
                let lo = ((jc - COARSE_PAD) * stride).max(j_min);
                let hi = ((jc + COARSE_PAD) * stride).min(j_max);
                match intervals.last_mut() {
                    Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
                    _ => intervals.push((lo, hi)),
                }
            }
            let fine: Vec<f64> = intervals
                .iter()
                .flat_map(|&(lo, hi)| lo..=hi)
                .map(|j| density(t, j as f64 * step))
                .collect();
            step.ln() + log_sum_exp(&fine)
        })
        .collect();
    Marginal {
        step,
        first: k0,
        log_q,
    }
}

/// Profile grid step used with a rule of the given order.
pub fn profile_step(order: usize) -> f64 {
    STEP_FACTOR / order as f64
}

/// Marginal density of `u(θ)ᵀX`, `u(θ) = (cos θ, sin θ)`.
pub fn marginal(target: &dyn PushforwardTarget, theta: f64, order: usize) -> Result<Marginal> {
    check_planar(target)?;
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::OrderOutOfRange(order));
    }
    let cloud = support_cloud(target);
    Ok(marginal_with(target, theta, profile_step(order), &cloud))
}

/// Shared state for repeated profile evaluations on one target.
struct Profiler<'a> {
    target: &'a dyn PushforwardTarget,
    step: f64,
    expected_log_ratio: f64,
    cloud: Vec<[f64; 2]>,
}

impl<'a> Profiler<'a> {
    fn new(target: &'a dyn PushforwardTarget, rule: &QuadratureRule) -> Result<Self> {
        check_planar(target)?;
        Ok(Self {
            target,
            step: profile_step(rule.order),
            expected_log_ratio: expected_log_ratio(target, rule)?,
            cloud: support_cloud(target),
        })
    }

    fn kl(&self, theta: f64) -> f64 {
        let m = marginal_with(self.target, theta, self.step, &self.cloud);
        let mass = m.moment(0);
        if (mass - 1.0).abs() > 1e-8 {
            log::warn!("profile marginal at theta = {theta} has mass {mass}; the support grid may be too small");
        }
        (self.expected_log_ratio - m.relative_entropy()).max(0.0)
    }
}

/// `KL(π ‖ π̃)` for the optimal profile approximation along
/// `u(θ) = (cos θ, sin θ)`.
pub fn profile_kl(target: &dyn PushforwardTarget, theta: f64, rule: &QuadratureRule) -> Result<f64> {
    Ok(Profiler::new(target, rule)?.kl(theta))
}

/// A value together with its order-doubling drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checked {
    pub value: f64,
    /// `|value(2·order) − value(order)|`.
    pub drift: f64,
    /// `drift ≤ rel_tol·(1 + |value|)`.
    pub converged: bool,
}

/// [`profile_kl`] at `order` and `2·order`, reporting the drift. The
/// Gauss–Hermite order of the doubled evaluation is capped at
/// [`MAX_ORDER`]; its profile grid step still halves.
pub fn profile_kl_checked(
    target: &dyn PushforwardTarget,
    theta: f64,
    order: usize,
    rel_tol: f64,
) -> Result<Checked> {
    let coarse = profile_kl(target, theta, &gh_rule(order)?)?;
    let fine = doubled_profiler(target, order)?.kl(theta);
    let drift = (fine - coarse).abs();
    let converged = drift <= rel_tol * (1.0 + coarse.abs());
    if !converged {
        log::warn!("profile KL at theta = {theta}: order doubling moved the value by {drift:e}");
    }
    Ok(Checked {
        value: coarse,
        drift,
        converged,
    })
}

fn doubled_profiler(target: &dyn PushforwardTarget, order: usize) -> Result<Profiler<'_>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::OrderOutOfRange(order));
    }
    let mut p = Profiler::new(target, &gh_rule((2 * order).min(MAX_ORDER))?)?;
    p.step = profile_step(2 * order);
    Ok(p)
}

/// Reference measure of an angle sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// `N(0, I)`.
    Standard,
    /// `N(m(π), C(π))`, realized by whitening the target.
    BestGaussian,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Standard => "standard",
            Reference::BestGaussian => "best_gaussian",
        }
    }
}

impl std::str::FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Reference::Standard),
            "best_gaussian" => Ok(Reference::BestGaussian),
            other => Err(format!("unknown reference {other:?} (expected standard or best_gaussian)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub theta_deg: f64,
    pub kl: f64,
    pub lsi_lo: f64,
    pub lsi_hi: f64,
    pub dim_lo: f64,
    pub dim_hi: f64,
}

/// Result of [`angle_sweep`].
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub reference: Reference,
    pub rows: Vec<SweepRow>,
    /// Angle in degrees, in `[0, 180)`, of the LSI certificate direction.
    pub theta_lsi_deg: f64,
    /// Angle in degrees, in `[0, 180)`, of the minimizer of the
    /// dimensional majorant.
    pub theta_dim_deg: f64,
    /// Largest order-doubling drift of `kl` over the sampled check angles,
    /// when requested.
    pub drift: Option<f64>,
}

impl SweepTable {
    pub const HEADER: &'static str = "theta_deg,kl,lsi_lo,lsi_hi,dim_lo,dim_hi";

    fn argmin_by(&self, f: impl Fn(&SweepRow) -> f64) -> usize {
        let mut best = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if f(row) < f(&self.rows[best]) {
                best = i;
            }
        }
        best
    }

    pub fn argmin_kl(&self) -> usize {
        self.argmin_by(|r| r.kl)
    }

    pub fn argmin_dim_hi(&self) -> usize {
        self.argmin_by(|r| r.dim_hi)
    }
}

/// Options of [`angle_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub n_angles: usize,
    pub order: usize,
    pub reference: Reference,
    /// Check order doubling at every `check_stride`-th angle; zero skips it.
    pub check_stride: usize,
    /// Optimizer settings for the standard-reference footer.
    pub opt: OptConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n_angles: 181,
            order: DEFAULT_ORDER,
            reference: Reference::Standard,
            check_stride: 0,
            opt: OptConfig::default(),
        }
    }
}

/// Angle in degrees of the line spanned by `(x, y)`, folded into `[0, 180)`.
pub fn line_angle_deg(x: f64, y: f64) -> f64 {
    let a = y.atan2(x).to_degrees().rem_euclid(180.0);
    if !(1e-9..=180.0 - 1e-9).contains(&a) {
        0.0
    } else {
        a
    }
}

/// True KL and the four bounds on the uniform grid `θ_i = iπ/n`, `i < n`.
///
/// With [`Reference::BestGaussian`] the target is whitened to
/// `C^{-1/2}(X − m)` and the feature `u(θ)ᵀx` becomes `wᵀy` with
/// `w ∝ C^{1/2}u(θ)`, so rows are indexed by the same original-space angle
/// under both references.
pub fn angle_sweep(target: &dyn PushforwardTarget, opts: &SweepOptions) -> Result<SweepTable> {
    check_planar(target)?;
    if opts.n_angles == 0 {
        return Err(QuadratureError::InvalidTarget("the sweep needs at least one angle".into()));
    }
    let rule = gh_rule(opts.order)?;
    let diag = quadrature_diagnostics(target, &rule)?;
    match opts.reference {
        Reference::Standard => {
            let (lsi_frame, _) = bounds::lsi_certificate(&diag, 1)?;
            let report = grassmann::minimize(&diag, 1, &opts.opt)?;
            let theta_lsi_deg = frame_angle(&lsi_frame);
            let theta_dim_deg = frame_angle(&report.frame);
            sweep_rows(target, &diag, None, &rule, opts, theta_lsi_deg, theta_dim_deg)
        }
        Reference::BestGaussian => {
            let whitened = AffineImage::whitening(target, diag.mean(), diag.cov())?;
            let (white, c_half) = diag.whiten()?;
            let (lsi_frame, _) = bounds::lsi_certificate(&white, 1)?;
            let c_inv_half = diag.cov().inv_sqrt()?;
            let lsi_dir = c_inv_half.matrix() * lsi_frame.matrix();
            let theta_lsi_deg = line_angle_deg(lsi_dir[0], lsi_dir[1]);
            let tilted = bounds::tilted_certificate(&diag, 1)?;
            let theta_dim_deg = line_angle_deg(tilted.u[(0, 0)], tilted.u[(1, 0)]);
            sweep_rows(
                &whitened,
                &white,
                Some(&c_half),
                &rule,
                opts,
                theta_lsi_deg,
                theta_dim_deg,
            )
        }
    }
}

fn frame_angle(f: &Frame) -> f64 {
    line_angle_deg(f.matrix()[(0, 0)], f.matrix()[(1, 0)])
}

fn sweep_rows(
    target: &dyn PushforwardTarget,
    diag: &DiagnosticSet,
    c_half: Option<&SymMatrix>,
    rule: &QuadratureRule,
    opts: &SweepOptions,
    theta_lsi_deg: f64,
    theta_dim_deg: f64,
) -> Result<SweepTable> {
    let profiler = Profiler::new(target, rule)?;
    let doubled = if opts.check_stride > 0 {
        Some(doubled_profiler(target, opts.order)?)
    } else {
        None
    };
    let n = opts.n_angles;
    let results: Vec<Result<(SweepRow, Option<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * std::f64::consts::PI / n as f64;
            let (s, c) = theta.sin_cos();
            let w = match c_half {
                Some(ch) => {
                    let v = ch.matrix() * DVector::from_column_slice(&[c, s]);
                    [v[0], v[1]]
                }
                None => [c, s],
            };
            let phi = w[1].atan2(w[0]);
            let frame = Frame::from_vector(&w)?;
            let kl = profiler.kl(phi);
            let drift = match &doubled {
                Some(p) if i % opts.check_stride == 0 => Some((p.kl(phi) - kl).abs()),
                _ => None,
            };
            let row = SweepRow {
                theta_deg: theta.to_degrees(),
                kl,
                lsi_lo: bounds::lsi_minorant(diag, &frame)?,
                lsi_hi: bounds::lsi_majorant(diag, &frame)?,
                dim_lo: bounds::dim_minorant(diag, &frame)?,
                dim_hi: bounds::dim_majorant(diag, &frame)?,
            };
            Ok((row, drift))
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut drift: Option<f64> = None;
    for r in results {
        let (row, d) = r?;
        rows.push(row);
        if let Some(d) = d {
            drift = Some(drift.map_or(d, |x| x.max(d)));
        }
    }
    Ok(SweepTable {
        reference: opts.reference,
        rows,
        theta_lsi_deg,
        theta_dim_deg,
        drift,
    })
}
