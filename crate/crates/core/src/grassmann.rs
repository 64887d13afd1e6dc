//! Minimization of the dimensional majorant `J↓` over the Grassmannian.
//!
//! `J↓(U)` depends only on `span(U)`. Up to constants it equals
//! `½[logdet(UᵀH⁻¹U) − tr(UᵀMU)]`, whose Euclidean gradient is
//! `G = H⁻¹U(UᵀH⁻¹U)⁻¹ − MU`; the Riemannian gradient is its horizontal
//! part `(I − UUᵀ)G`. Descent uses a Barzilai–Borwein trial step safeguarded
//! by Armijo backtracking and a sign-normalized QR retraction.
//!
//! At a critical point `U` the two conditions
//!
//! ```text
//! (A)  Uᵀ[H_rel, M]U = [UᵀH_rel U, UᵀMU]
//! (B)  U_⊥ᵀ(H_rel + M + H_rel M − M²)U = U_⊥ᵀ(H_rel − M)U UᵀMU
//! ```
//!
//! hold; [`criticality_residuals`] reports their Frobenius residuals.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{self, BoundsError};
use crate::diagnostics::DiagnosticSet;
use crate::linalg::{self, eig_sym, Frame, LinalgError, SymMatrix};

#[derive(Debug, Error)]
pub enum GrassmannError {
    #[error("rank {r} must satisfy 1 <= r < d = {d}")]
    RankOutOfRange { r: usize, d: usize },
    #[error("invalid optimizer configuration: {0}")]
    Config(&'static str),
    #[error("Fisher information H is not positive definite: {0}")]
    FisherNotPd(LinalgError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, GrassmannError>;

/// Settings of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_iters: usize,
    /// Stop once `‖grad‖ ≤ grad_tol·(1 + |J↓|)`.
    pub grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    /// Number of starts: the leading eigenvectors of `H_rel` followed by
    /// `n_starts − 1` random frames.
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            grad_tol: 1e-8,
            step_init: 1.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            n_starts: 8,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GrassmannError::Config("max_iters must be positive"));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol < 1.0) {
            return Err(GrassmannError::Config("grad_tol must lie in (0, 1)"));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(GrassmannError::Config("step_init must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(GrassmannError::Config("armijo_c must lie in (0, 1)"));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(GrassmannError::Config("armijo_shrink must lie in (0, 1)"));
        }
        if self.n_starts == 0 {
            return Err(GrassmannError::Config("n_starts must be positive"));
        }
        Ok(())
    }
}

/// Result of one optimization (the best over all starts for [`minimize`]).
#[derive(Debug, Clone)]
pub struct OptReport {
    pub frame: Frame,
    pub value: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub crit_residual_a: f64,
    pub crit_residual_b: f64,
    pub converged: bool,
    /// Index of the winning start (0 is the eigenvector warm start).
    pub start: usize,
    /// Final objective value of every start, in start order.
    pub start_values: Vec<f64>,
}

/// `J↓` and its gradient with `H⁻¹` and the constant part precomputed.
struct Objective<'a> {
    m: &'a DMatrix<f64>,
    h_inv: DMatrix<f64>,
    constant: f64,
    d: usize,
}

impl<'a> Objective<'a> {
    fn new(diag: &'a DiagnosticSet) -> Result<Self> {
        let h_inv = diag.fisher().inverse().map_err(GrassmannError::FisherNotPd)?;
        let m = diag.second_moment();
        let constant = m.trace() + linalg::logdet(diag.fisher()).map_err(GrassmannError::FisherNotPd)?;
        Ok(Self {
            m: m.matrix(),
            h_inv: h_inv.into_matrix(),
            constant,
            d: diag.dim(),
        })
    }

    fn reduced(&self, u: &DMatrix<f64>) -> Result<SymMatrix> {
        Ok(SymMatrix::new(u.transpose() * &self.h_inv * u)?)
    }

    /// The `U`-dependent part `½[logdet(UᵀH⁻¹U) − tr(UᵀMU)]` and an
    /// estimate of its rounding error.
    fn variable(&self, u: &DMatrix<f64>) -> Result<(f64, f64)> {
        let mu = self.m * u;
        let tr = inner(u, &mu);
        let ld = linalg::logdet(&self.reduced(u)?)?;
        let noise = 256.0 * f64::EPSILON * (1.0 + tr.abs() + ld.abs());
        Ok((0.5 * (ld - tr), noise))
    }

    fn value_from(&self, variable: f64, r: usize) -> f64 {
        0.5 * (self.constant - (self.d - r) as f64) + variable
    }

    /// Horizontal part of `H⁻¹U(UᵀH⁻¹U)⁻¹ − MU`.
    fn grad(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let hu = &self.h_inv * u;
        let k = SymMatrix::new(u.transpose() * &hu)?;
        let g = k.solve(&hu.transpose())?.transpose() - self.m * u;
        Ok(&g - u * (u.transpose() * &g))
    }
}

/// Riemannian gradient of `J↓` at `u`.
pub fn riemannian_grad(diag: &DiagnosticSet, u: &Frame) -> Result<DMatrix<f64>> {
    check_dims(diag, u)?;
    Objective::new(diag)?.grad(u.matrix())
}

fn check_dims(diag: &DiagnosticSet, u: &Frame) -> Result<()> {
    if u.dim() != diag.dim() {
        return Err(GrassmannError::Linalg(LinalgError::DimensionMismatch {
            expected: diag.dim(),
            found: u.dim(),
        }));
    }
    Ok(())
}

/// Frobenius residuals of the two first-order conditions at `u`.
pub fn criticality_residuals(diag: &DiagnosticSet, u: &Frame) -> Result<(f64, f64)> {
    check_dims(diag, u)?;
    let hr = diag.h_rel().matrix();
    let m = diag.second_moment().matrix();
    let um = u.matrix();
    let comm = |a: &DMatrix<f64>, b: &DMatrix<f64>| a * b - b * a;
    let hr_u = um.transpose() * hr * um;
    let m_u = um.transpose() * m * um;
    let a = um.transpose() * comm(hr, m) * um - comm(&hr_u, &m_u);

    let perp = u.complement();
    if perp.rank() == 0 || u.rank() == 0 {
        return Ok((a.norm(), 0.0));
    }
    let pm = perp.matrix();
    let lhs = pm.transpose() * (hr + m + hr * m - m * m) * um;
    let rhs = pm.transpose() * (hr - m) * um * &m_u;
    Ok((a.norm(), (lhs - rhs).norm()))
}

struct Run {
    frame: DMatrix<f64>,
    value: f64,
    grad_norm: f64,
    iters: usize,
    converged: bool,
}

fn retract(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Frame::orthonormalize(x)?.into_matrix())
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn descend(obj: &Objective<'_>, start: DMatrix<f64>, cfg: &OptConfig) -> Result<Run> {
    let r = start.ncols();
    let mut u = start;
    let (mut phi, mut noise) = obj.variable(&u)?;
    let mut grad = obj.grad(&u)?;
    let mut prev: Option<(DMatrix<f64>, f64)> = None;
    let finish = |u: DMatrix<f64>, phi: f64, grad_norm: f64, iters: usize, converged: bool| Run {
        value: obj.value_from(phi, r),
        frame: u,
        grad_norm,
        iters,
        converged,
    };
    for iter in 0..cfg.max_iters {
        let gn2 = grad.norm_squared();
        let grad_norm = gn2.sqrt();
        if grad_norm <= cfg.grad_tol * (1.0 + obj.value_from(phi, r).abs()) {
            return Ok(finish(u, phi, grad_norm, iter, true));
        }
        let mut step = match &prev {
            Some((prev_grad, prev_step)) => {
                let transported = prev_grad - &u * (u.transpose() * prev_grad);
                let s = &transported * -*prev_step;
                let y = &grad - &transported;
                let sy = inner(&s, &y);
                if sy > 0.0 {
                    (s.norm_squared() / sy).min(1e6 * cfg.step_init)
                } else {
                    cfg.step_init
                }
            }
            None => cfg.step_init,
        };
        let accepted = loop {
            let candidate = retract(&(&u - &grad * step))?;
            if let Ok((v, v_noise)) = obj.variable(&candidate) {
                let decrease = cfg.armijo_c * step * gn2;
                if v <= phi - decrease {
                    break Some((candidate, v, v_noise, None));
                }
                // Below the rounding floor of the objective, sufficient
                // decrease is undetectable; accept a step that keeps the
                // value within rounding and reduces the gradient norm.
                let floor = noise.max(v_noise);
                if decrease <= floor && v <= phi + floor {
                    let g = obj.grad(&candidate)?;
                    if g.norm_squared() < gn2 {
                        break Some((candidate, v, v_noise, Some(g)));
                    }
                }
            }
            step *= cfg.armijo_shrink;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((next, next_phi, next_noise, next_grad)) = accepted else {
            log::debug!("line search stalled at iteration {iter} with gradient norm {grad_norm:e}");
            return Ok(finish(u, phi, grad_norm, iter, false));
        };
        prev = Some((grad, step));
        u = next;
        phi = next_phi;
        noise = next_noise;
        grad = match next_grad {
            Some(g) => g,
            None => obj.grad(&u)?,
        };
    }
    let grad_norm = grad.norm();
    let converged = grad_norm <= cfg.grad_tol * (1.0 + obj.value_from(phi, r).abs());
    Ok(finish(u, phi, grad_norm, cfg.max_iters, converged))
}

fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_starts(diag: &DiagnosticSet, starts: Vec<DMatrix<f64>>, cfg: &OptConfig) -> Result<Vec<Run>> {
    let obj = Objective::new(diag)?;
    starts.into_par_iter().map(|s| descend(&obj, s, cfg)).collect()
}

fn check_rank(diag: &DiagnosticSet, r: usize) -> Result<()> {
    let d = diag.dim();
    if r == 0 || r >= d {
        return Err(GrassmannError::RankOutOfRange { r, d });
    }
    Ok(())
}

fn random_starts(d: usize, r: usize, cfg: &OptConfig, first: usize, count: usize) -> Vec<DMatrix<f64>> {
    (first..first + count)
        .map(|k| Frame::random(d, r, &mut start_rng(cfg.seed, k)).into_matrix())
        .collect()
}

fn report(diag: &DiagnosticSet, runs: Vec<Run>) -> Result<OptReport> {
    let start_values: Vec<f64> = runs.iter().map(|r| r.value).collect();
    let (start, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .expect("at least one start");
    let frame = Frame::new(best.frame)?;
    let value = bounds::dim_majorant(diag, &frame)?;
    let (crit_residual_a, crit_residual_b) = criticality_residuals(diag, &frame)?;
    Ok(OptReport {
        frame,
        value,
        grad_norm: best.grad_norm,
        iters: best.iters,
        crit_residual_a,
        crit_residual_b,
        converged: best.converged,
        start,
        start_values,
    })
}

/// Minimizes `J↓` over rank-`r` frames from the eigenvector warm start and
/// `cfg.n_starts − 1` seeded random starts, run in parallel.
pub fn minimize(diag: &DiagnosticSet, r: usize, cfg: &OptConfig) -> Result<OptReport> {
    cfg.validate()?;
    check_rank(diag, r)?;
    let warm = eig_sym(diag.h_rel())?.top_frame(r)?.into_matrix();
    let mut starts = vec![warm];
    starts.extend(random_starts(diag.dim(), r, cfg, 1, cfg.n_starts - 1));
    let runs = run_starts(diag, starts, cfg)?;
    report(diag, runs)
}

/// Minimizes `J↓` from a caller-supplied frame only.
pub fn minimize_from(diag: &DiagnosticSet, start: &Frame, cfg: &OptConfig) -> Result<OptReport> {
    cfg.validate()?;
    check_dims(diag, start)?;
    check_rank(diag, start.rank())?;
    let runs = run_starts(diag, vec![start.matrix().clone()], cfg)?;
    report(diag, runs)
}

/// Final values of `cfg.n_starts` seeded random starts, in start order.
pub fn multistart_values(diag: &DiagnosticSet, r: usize, cfg: &OptConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_rank(diag, r)?;
    let starts = random_starts(diag.dim(), r, cfg, 1, cfg.n_starts);
    Ok(run_starts(diag, starts, cfg)?.into_iter().map(|r| r.value).collect())
}

/// Spread `max − min` of the converged values over random starts.
pub fn multistart_spread(diag: &DiagnosticSet, r: usize, cfg: &OptConfig) -> Result<f64> {
    let values = multistart_values(diag, r, cfg)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}
