//! Closed-form ground truth for Gaussian targets.
//!
//! With reference `N(0, I)` and target `π = N(m, C)`, the optimal ridge
//! approximation along a frame `U` is again Gaussian: mean `UUᵀm` and
//! covariance `Q diag(UᵀCU, I) Qᵀ` where `Q = [U, U_⊥]`. Everything here is
//! exact and is used to check the bound formulas, never to compute them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{self, eig_sym, logdet, Frame, LinalgError, SymMatrix};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("covariance must be positive definite: {0}")]
    Covariance(LinalgError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Non-degenerate Gaussian measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: SymMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        linalg::cholesky(cov.matrix()).map_err(OracleError::Covariance)?;
        Ok(Self { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: SymMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let l = linalg::cholesky(self.cov.matrix())?;
        let d = self.dim();
        let z = DMatrix::from_fn(n, d, |_, _| -> f64 { StandardNormal.sample(rng) });
        let mut x = z * l.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(x)
    }
}

fn check_dims(g: &GaussianMeasure, u: &Frame) -> Result<()> {
    if g.dim() != u.dim() {
        return Err(OracleError::DimensionMismatch {
            expected: g.dim(),
            found: u.dim(),
        });
    }
    Ok(())
}

/// The optimal ridge approximation of `g` along `u` under reference `N(0, I)`.
pub fn gaussian_approx(g: &GaussianMeasure, u: &Frame) -> Result<GaussianMeasure> {
    check_dims(g, u)?;
    let um = u.matrix();
    let perp = u.complement();
    let pm = perp.matrix();
    let mean = um * (um.transpose() * g.mean());
    let reduced = g.cov().congruence(um);
    let cov = um * reduced.matrix() * um.transpose() + pm * pm.transpose();
    GaussianMeasure::new(mean, SymMatrix::new(cov)?)
}

/// `KL(g ‖ gaussian_approx(g, u))` in closed form:
/// `½[logdet(UᵀCU) − logdet C − (d−r) + tr(U_⊥ᵀ C U_⊥) + ‖U_⊥ᵀ m‖²]`.
pub fn exact_gaussian_kl(g: &GaussianMeasure, u: &Frame) -> Result<f64> {
    check_dims(g, u)?;
    let (d, r) = (u.dim(), u.rank());
    let perp = u.complement();
    let kept = if r == 0 {
        0.0
    } else {
        logdet(&g.cov().congruence(u.matrix()))?
    };
    let discarded_mean = perp.matrix().transpose() * g.mean();
    let value = kept - logdet(g.cov())? - (d - r) as f64
        + g.cov().trace_congruence(perp.matrix())
        + discarded_mean.norm_squared();
    Ok(0.5 * value)
}

/// Generic `KL(p ‖ q)` between two Gaussians (trace, quadratic and logdet
/// terms). Independent of the ridge structure.
pub fn gaussian_kl(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(OracleError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let d = p.dim() as f64;
    let q_inv_p = q.cov().solve(p.cov().matrix())?;
    let diff = q.mean() - p.mean();
    let q_inv_diff = q.cov().solve(&DMatrix::from_column_slice(diff.len(), 1, diff.as_slice()))?;
    let quad = diff.dot(&q_inv_diff.column(0));
    Ok(0.5 * (q_inv_p.trace() + quad - d + logdet(q.cov())? - logdet(p.cov())?))
}

/// Posterior of `X ~ N(0, I)` given `Y = A X + ε = y`, `ε ~ N(0, I)`:
/// mean `(I + AᵀA)⁻¹Aᵀy`, covariance `(I + AᵀA)⁻¹`.
pub fn linear_gaussian_posterior(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<GaussianMeasure> {
    if a.nrows() != y.len() {
        return Err(OracleError::DimensionMismatch {
            expected: a.nrows(),
            found: y.len(),
        });
    }
    let precision = SymMatrix::new(a.transpose() * a)?.shift(1.0);
    let rhs = a.transpose() * y;
    let mean = precision.solve(&DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    let cov = precision.inverse()?;
    GaussianMeasure::new(mean.column(0).into_owned(), cov)
}

/// `½ Σ_{k>r} ln(1 + λ_k(AᵀA))`, the exact data-averaged KL at the leading
/// eigenvectors of `AᵀA` for the linear model.
pub fn datafree_expected_kl_linear(a: &DMatrix<f64>, r: usize) -> Result<f64> {
    let eig = eig_sym(&SymMatrix::new(a.transpose() * a)?)?;
    Ok(0.5 * eig.tail_sum(r, |l| l.max(0.0).ln_1p()))
}

/// `I(X; Y) = ½ logdet(I + A Aᵀ)` for the linear model, computed in data space.
pub fn linear_gaussian_mutual_info(a: &DMatrix<f64>) -> Result<f64> {
    let s = SymMatrix::new(a * a.transpose())?.shift(1.0);
    Ok(0.5 * logdet(&s)?)
}

/// `I(VᵀX; Y)` for the linear model, computed in data space as
/// `½ logdet(I + AAᵀ) − ½ logdet(I + A V_⊥ V_⊥ᵀ Aᵀ)`.
pub fn linear_gaussian_feature_info(a: &DMatrix<f64>, v: &Frame) -> Result<f64> {
    let perp = v.complement();
    let av = a * perp.matrix();
    let s = SymMatrix::new(&av * av.transpose())?.shift(1.0);
    Ok(linear_gaussian_mutual_info(a)? - 0.5 * logdet(&s)?)
}

/// Linear-Gaussian inverse problem `Y = A X + ε` with standard normal prior
/// and noise.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    /// Random forward operator with entries `N(0, 1)·3/(j+1)` on column `j`.
    pub fn random<R: Rng + ?Sized>(dx: usize, dy: usize, rng: &mut R) -> Self {
        let a = DMatrix::from_fn(dy, dx, |_, j| {
            let z: f64 = StandardNormal.sample(rng);
            3.0 * z / (j as f64 + 1.0)
        });
        Self { a }
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dx(&self) -> usize {
        self.a.ncols()
    }

    pub fn dy(&self) -> usize {
        self.a.nrows()
    }

    /// One draw `(x, y)` from the joint law.
    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let x = DVector::from_fn(self.dx(), |_, _| StandardNormal.sample(rng));
        let noise = DVector::from_fn(self.dy(), |_, _| StandardNormal.sample(rng));
        let y = &self.a * &x + noise;
        (x, y)
    }

    /// `∇ₓ ln ℓ^y(x) = Aᵀ(y − A x)`.
    pub fn likelihood_score(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * (y - &self.a * x)
    }

    pub fn posterior(&self, y: &DVector<f64>) -> Result<GaussianMeasure> {
        linear_gaussian_posterior(&self.a, y)
    }

    /// The population data-free diagnostic `AᵀA`.
    pub fn datafree_diagnostic(&self) -> SymMatrix {
        SymMatrix::new(self.a.transpose() * &self.a).expect("finite operator")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(d: usize, rng: &mut ChaCha8Rng) -> GaussianMeasure {
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let cov = SymMatrix::new(&g * g.transpose() / d as f64).unwrap().shift(0.3);
        let mean = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        GaussianMeasure::new(mean, cov).unwrap()
    }

    #[test]
    fn approx_full_rank_is_identity_and_empty_is_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_gaussian(4, &mut rng);
        let full = Frame::axes(4, &[0, 1, 2, 3]).unwrap();
        let a = gaussian_approx(&g, &full).unwrap();
        assert!((a.mean() - g.mean()).amax() < 1e-14);
        assert!((a.cov().matrix() - g.cov().matrix()).amax() < 1e-14);

        let a = gaussian_approx(&g, &Frame::empty(4)).unwrap();
        assert!(a.mean().amax() < 1e-15);
        assert!((a.cov().matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn approx_by_hand() {
        let g = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, 2.0]),
            SymMatrix::from_diagonal(&[4.0, 9.0]),
        )
        .unwrap();
        let a = gaussian_approx(&g, &Frame::axes(2, &[0]).unwrap()).unwrap();
        assert!((a.mean() - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-14);
        assert!((a.cov().matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).amax() < 1e-14);
    }

    #[test]
    fn approx_preserves_feature_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gaussian(6, &mut rng);
        let u = Frame::random(6, 2, &mut rng);
        let a = gaussian_approx(&g, &u).unwrap();
        let um = u.matrix();
        assert!((um.transpose() * a.mean() - um.transpose() * g.mean()).amax() < 1e-12);
        let ca = a.cov().congruence(um);
        let cg = g.cov().congruence(um);
        assert!((ca.matrix() - cg.matrix()).amax() < 1e-12);
    }

    #[test]
    fn exact_kl_examples() {
        let std = GaussianMeasure::standard(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 0..=3 {
            let u = Frame::random(3, r, &mut rng);
            assert!(exact_gaussian_kl(&std, &u).unwrap().abs() < 1e-14);
        }
        let g = GaussianMeasure::new(DVector::from_vec(vec![1.0]), SymMatrix::from_diagonal(&[4.0])).unwrap();
        let kl = exact_gaussian_kl(&g, &Frame::empty(1)).unwrap();
        let expected = 0.5 * (4.0 + 1.0 - 1.0 - 4f64.ln());
        assert!((kl - expected).abs() < 1e-14);
        assert!((kl - 1.306853).abs() < 1e-6);
    }

    #[test]
    fn exact_kl_agrees_with_generic_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 1..=7 {
            let g = random_gaussian(d, &mut rng);
            for r in 0..=d {
                let u = Frame::random(d, r, &mut rng);
                let special = exact_gaussian_kl(&g, &u).unwrap();
                let generic = gaussian_kl(&g, &gaussian_approx(&g, &u).unwrap()).unwrap();
                assert!((special - generic).abs() <= 1e-10, "d={d} r={r}: {special} vs {generic}");
                assert!(special >= -1e-12);
            }
        }
    }

    #[test]
    fn posterior_examples() {
        let p = linear_gaussian_posterior(&DMatrix::zeros(3, 2), &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(p.mean().amax() < 1e-15);
        assert!((p.cov().matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        let y = DVector::from_vec(vec![2.0, -4.0]);
        let p = linear_gaussian_posterior(&DMatrix::identity(2, 2), &y).unwrap();
        assert!((p.mean() - &y * 0.5).amax() < 1e-15);
        assert!((p.cov().matrix() - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn posterior_satisfies_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = LinearGaussianModel::random(5, 4, &mut rng);
        let (_, y) = model.sample_joint(&mut rng);
        let p = model.posterior(&y).unwrap();
        let a = model.operator();
        let lhs = (DMatrix::<f64>::identity(5, 5) + a.transpose() * a) * p.mean();
        assert!((lhs - a.transpose() * &y).amax() <= 1e-10);
    }

    #[test]
    fn datafree_expected_kl_examples() {
        assert_eq!(datafree_expected_kl_linear(&DMatrix::zeros(3, 4), 0).unwrap(), 0.0);
        let a = DMatrix::from_row_slice(2, 2, &[(1f64.exp() - 1.0).sqrt(), 0.0, 0.0, 0.0]);
        assert!((datafree_expected_kl_linear(&a, 0).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn feature_information_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = LinearGaussianModel::random(4, 3, &mut rng);
        let total = linear_gaussian_mutual_info(model.operator()).unwrap();
        let full = Frame::axes(4, &[0, 1, 2, 3]).unwrap();
        assert!((linear_gaussian_feature_info(model.operator(), &full).unwrap() - total).abs() < 1e-12);
        assert!(linear_gaussian_feature_info(model.operator(), &Frame::empty(4)).unwrap().abs() < 1e-12);
    }
}
