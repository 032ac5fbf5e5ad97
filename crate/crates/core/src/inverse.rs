//! The linear Bayesian inverse problem `y = G u + eta` with a Gaussian prior.
//!
//! Every observation row is whitened by `sqrt(xi_j) / sigma_j` on entry, so the
//! criteria below are written for unit noise. A design weight `xi_j` scales the
//! row's precision; a fractional weight is equivalent to noise variance
//! `sigma_j^2 / xi_j`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Covariance, GaussianMeasure};
use crate::hilbert::{OpExpr, Space, Spectrum};
use crate::rng;

/// Relative floor below which eigenvalues of the prior-preconditioned Hessian
/// are treated as zero.
pub const PP_TRUNCATION: f64 = 1e-12;

/// Relative truncation of the prior spectrum in the Cameron–Martin norm.
pub const CM_TRUNCATION: f64 = 1e-12;

/// Largest relative component outside the retained prior spectrum that the
/// Cameron–Martin norm accepts.
pub const CM_RESIDUAL_TOL: f64 = 1e-10;

/// Per-candidate observation weights `xi_j` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignWeights(Vec<f64>);

impl DesignWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((index, &weight)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(Error::InvalidWeight { index, weight });
        }
        Ok(Self(weights))
    }

    pub fn all(q: usize) -> Self {
        Self(vec![1.0; q])
    }

    pub fn none(q: usize) -> Self {
        Self(vec![0.0; q])
    }

    /// Binary design with exactly the listed candidates active.
    pub fn from_active(q: usize, active: &[usize]) -> Result<Self> {
        let mut w = vec![0.0; q];
        for &j in active {
            if j >= q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: j + 1,
                });
            }
            w[j] = 1.0;
        }
        Ok(Self(w))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j] > 0.0).collect()
    }
}

/// Prior, forward map, diagonal noise and design; the posterior operator is
/// assembled once on first use and shared by every data vector.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    prior: GaussianMeasure,
    prior_root: Arc<Spectrum>,
    forward: OpExpr,
    noise_var: DVector<f64>,
    design: DesignWeights,
    whitened: OpExpr,
    posterior_op: Arc<OnceLock<Result<Arc<PosteriorOperator>>>>,
}

/// Data-independent pieces of the posterior.
#[derive(Debug)]
pub struct PosteriorOperator {
    pp: Spectrum,
    alphas: Vec<f64>,
    logdet: f64,
    tr_hc: f64,
    /// Coefficients of `C_post`.
    cpost: DMatrix<f64>,
    /// Coefficients of `C_post F*`, the whitened-data-to-mean gain.
    gain: DMatrix<f64>,
    covariance: Arc<Covariance>,
}

impl PosteriorOperator {
    /// Nonzero eigenpairs of the prior-preconditioned Hessian.
    pub fn pp_spectrum(&self) -> &Spectrum {
        &self.pp
    }

    /// `lambda_j / (1 + lambda_j)`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `log det(I + H̃)`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `tr(H C_post) = tr(S H̃) = sum lambda / (1 + lambda)`.
    pub fn trace_hc(&self) -> f64 {
        self.tr_hc
    }

    pub fn covariance(&self) -> &Arc<Covariance> {
        &self.covariance
    }

    pub fn cpost_dense(&self) -> &DMatrix<f64> {
        &self.cpost
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `S x = x - sum alpha_j <e_j, x> e_j`, i.e. `(I + H̃)^{-1} x`.
    pub fn apply_s(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.pp.apply_fn(x, |l| l / (1.0 + l))
    }

    pub fn apply_cpost(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.cpost * x
    }
}

/// Posterior measure for one data vector.
#[derive(Clone, Debug)]
pub struct PosteriorBundle {
    pub posterior: GaussianMeasure,
    pub pp_spectrum: Spectrum,
    pub data: DVector<f64>,
}

/// `delta = tr(C_pr) - tr(C_post)` and its per-direction weights.
#[derive(Clone, Debug)]
pub struct VarianceReduction {
    pub delta: f64,
    pub alphas: Vec<f64>,
    pub directions: Spectrum,
}

impl InverseProblem {
    /// All candidate observations active.
    pub fn new(prior: GaussianMeasure, forward: OpExpr, noise_var: DVector<f64>) -> Result<Self> {
        let q = forward.codomain().dim();
        Self::with_weights(prior, forward, noise_var, DesignWeights::all(q))
    }

    pub fn with_weights(
        prior: GaussianMeasure,
        forward: OpExpr,
        noise_var: DVector<f64>,
        design: DesignWeights,
    ) -> Result<Self> {
        let space = prior.space().clone();
        if !forward.domain().same_as(&space) {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: forward.domain().dim(),
            });
        }
        let spec = prior.spectrum()?;
        let min = spec.values().last().copied().unwrap_or(1.0);
        if spec.rank() < space.dim() || min <= 0.0 {
            return Err(Error::SingularCovariance { min_eigenvalue: min });
        }
        let prior_root = Arc::new(spec.sqrt()?);
        Self::assemble(prior, prior_root, forward, noise_var, design)
    }

    fn assemble(
        prior: GaussianMeasure,
        prior_root: Arc<Spectrum>,
        forward: OpExpr,
        noise_var: DVector<f64>,
        design: DesignWeights,
    ) -> Result<Self> {
        let q = forward.codomain().dim();
        if noise_var.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: noise_var.len(),
            });
        }
        if design.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: design.len(),
            });
        }
        if let Some(bad) = noise_var.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidConfig(format!("noise variance {bad} is not positive")));
        }
        let g = forward.to_dense()?;
        let w = row_weights(&noise_var, &design);
        let mut f = g;
        for (i, wi) in w.iter().enumerate() {
            f.row_mut(i).scale_mut(*wi);
        }
        let whitened = OpExpr::dense(f, prior.space().clone(), Space::euclidean(q))?;
        Ok(Self {
            prior,
            prior_root,
            forward,
            noise_var,
            design,
            whitened,
            posterior_op: Arc::new(OnceLock::new()),
        })
    }

    /// Same prior, forward map and noise under a different design.
    pub fn with_design(&self, design: DesignWeights) -> Result<Self> {
        Self::assemble(
            self.prior.clone(),
            self.prior_root.clone(),
            self.forward.clone(),
            self.noise_var.clone(),
            design,
        )
    }

    pub fn space(&self) -> &Space {
        self.prior.space()
    }

    pub fn prior(&self) -> &GaussianMeasure {
        &self.prior
    }

    /// Spectrum of `C_pr^{1/2}`.
    pub fn prior_root(&self) -> &Spectrum {
        &self.prior_root
    }

    pub fn forward(&self) -> &OpExpr {
        &self.forward
    }

    pub fn noise_var(&self) -> &DVector<f64> {
        &self.noise_var
    }

    pub fn design(&self) -> &DesignWeights {
        &self.design
    }

    /// Number of candidate observations.
    pub fn q(&self) -> usize {
        self.noise_var.len()
    }

    /// `F = diag(sqrt(xi) / sigma) G`.
    pub fn whitened_forward(&self) -> &OpExpr {
        &self.whitened
    }

    fn f_dense(&self) -> &DMatrix<f64> {
        match &self.whitened {
            OpExpr::Dense(d) => d.matrix(),
            _ => unreachable!("whitened forward map is always dense"),
        }
    }

    /// `sqrt(xi) / sigma` applied row-wise to raw data.
    pub fn whiten(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_data(y)?;
        let w = row_weights(&self.noise_var, &self.design);
        Ok(y.component_mul(&w))
    }

    fn check_data(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.q() {
            return Err(Error::DimensionMismatch {
                expected: self.q(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// `G u + eta`, `eta_j ~ N(0, sigma_j^2 / xi_j)` on active rows and
    /// `N(0, sigma_j^2)` on inactive ones (which the likelihood ignores).
    /// Draws from stream 0 of `seed`.
    pub fn simulate_data(&self, u: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
        self.simulate_data_with(u, &mut rng::stream_rng(seed, 0))
    }

    pub fn simulate_data_with<R: Rng + ?Sized>(&self, u: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let gu = self.forward.apply(u)?;
        let z = rng::normal_vector(rng, self.q());
        Ok(DVector::from_fn(self.q(), |j, _| {
            let xi = self.design.weights()[j];
            let var = if xi > 0.0 {
                self.noise_var[j] / xi
            } else {
                self.noise_var[j]
            };
            gu[j] + var.sqrt() * z[j]
        }))
    }

    /// `Phi(u; y) = 1/2 |G u - y|^2` in the weighted noise norm.
    pub fn misfit_phi(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let r = self.whitened.apply(u)? - self.whiten(y)?;
        Ok(0.5 * r.norm_squared())
    }

    /// The same misfit as `1/2 <H u, u> - <G* y, u> + 1/2 |y|^2`.
    pub fn misfit_phi_expanded(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let yt = self.whiten(y)?;
        let space = self.space();
        let hu = self.hessian()?.apply(u)?;
        let b = self.whitened.adjoint_apply(&yt)?;
        Ok(0.5 * space.inner(&hu, u) - space.inner(&b, u) + 0.5 * yt.norm_squared())
    }

    /// Misfit Hessian `H = F* F`.
    pub fn hessian(&self) -> Result<OpExpr> {
        OpExpr::compose(vec![self.whitened.adjoint(), self.whitened.clone()])
    }

    /// `H̃ = C^{1/2} F* F C^{1/2}` as an operator expression.
    pub fn pp_hessian(&self) -> Result<OpExpr> {
        let root = OpExpr::LowRankSpectral(self.prior_root.clone());
        OpExpr::compose(vec![root.clone(), self.whitened.adjoint(), self.whitened.clone(), root])
    }

    /// Leading eigenpairs of `H̃`: the smallest prefix whose next eigenvalue
    /// falls below `tol * max(lambda_1, 1)`. The rank never exceeds `q`.
    pub fn pp_hessian_lowrank(&self, tol: f64) -> Result<Spectrum> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("truncation tolerance {tol} must be positive")));
        }
        Ok(self.posterior_operator()?.pp.truncated(tol))
    }

    pub fn posterior_operator(&self) -> Result<&PosteriorOperator> {
        self.posterior_op
            .get_or_init(|| PosteriorOperator::build(self).map(Arc::new))
            .as_ref()
            .map(|p| &**p)
            .map_err(Clone::clone)
    }

    /// Posterior mean for whitened data `ỹ`: `m_pr + C_post F* (ỹ - F m_pr)`.
    pub fn posterior_mean_whitened(&self, yt: &DVector<f64>) -> Result<DVector<f64>> {
        let post = self.posterior_operator()?;
        let shifted = yt - self.f_dense() * self.prior.mean();
        Ok(self.prior.mean() + &post.gain * shifted)
    }

    pub fn posterior_mean(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.posterior_mean_whitened(&self.whiten(y)?)
    }

    pub fn posterior(&self, y: &DVector<f64>) -> Result<PosteriorBundle> {
        let post = self.posterior_operator()?;
        let mean = self.posterior_mean(y)?;
        Ok(PosteriorBundle {
            posterior: GaussianMeasure::from_covariance(mean, post.covariance.clone())?,
            pp_spectrum: post.pp.clone(),
            data: y.clone(),
        })
    }

    /// `|x|_C^2 = |C^{-1/2} x|^2`, spectrally.
    pub fn cm_norm_sq(&self, x: &DVector<f64>) -> Result<f64> {
        let space = self.space();
        space.check(x)?;
        let spec = self.prior.spectrum()?.truncated(CM_TRUNCATION);
        let c = spec.coordinates(x);
        let total = space.norm(x);
        if total > 0.0 {
            let residual = space.norm(&(x - spec.combine(&c))) / total;
            if residual > CM_RESIDUAL_TOL {
                return Err(Error::CameronMartinTruncation { residual });
            }
        }
        Ok(c.iter().zip(spec.values()).map(|(ci, l)| ci * ci / l).sum())
    }

    /// `J(u) = Phi(u; y) + 1/2 |u - m_pr|_C^2`.
    pub fn map_objective(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let d = u - self.prior.mean();
        Ok(self.misfit_phi(u, y)? + 0.5 * self.cm_norm_sq(&d)?)
    }

    /// `delta = sum_j alpha_j <C_pr e_j, e_j>` over the eigenpairs of `H̃`.
    pub fn variance_reduction(&self) -> Result<VarianceReduction> {
        let post = self.posterior_operator()?;
        let space = self.space();
        let cov = self.prior.cov();
        let mut delta = 0.0;
        for (j, a) in post.alphas.iter().enumerate() {
            let e = post.pp.vector(j);
            delta += a * space.inner(&cov.apply(&e)?, &e);
        }
        Ok(VarianceReduction {
            delta,
            alphas: post.alphas.clone(),
            directions: post.pp.clone(),
        })
    }
}

fn row_weights(noise_var: &DVector<f64>, design: &DesignWeights) -> DVector<f64> {
    DVector::from_fn(noise_var.len(), |j, _| {
        (design.weights()[j] / noise_var[j]).sqrt()
    })
}

impl PosteriorOperator {
    fn build(p: &InverseProblem) -> Result<Self> {
        let space = p.space().clone();
        let n = space.dim();
        let f = p.f_dense();
        let root = p.prior_root.to_dense();
        let pp = pp_spectrum(&space, &(f * &root))?;

        let alphas: Vec<f64> = pp.values().iter().map(|l| l / (1.0 + l)).collect();
        let logdet = pp.logdet_i_plus()?;
        let tr_hc = alphas.iter().sum();

        // C^{1/2} S C^{1/2} with S = I - E diag(alpha) E^T M
        let scaled = DMatrix::from_fn(n, pp.rank(), |i, j| pp.vectors()[(i, j)] * alphas[j]);
        let mut s = -(scaled * pp.vectors().transpose());
        for (j, m) in space.mass().iter().enumerate() {
            s.column_mut(j).scale_mut(*m);
        }
        for i in 0..n {
            s[(i, i)] += 1.0;
        }
        let cpost = &root * s * &root;
        let f_adj = DMatrix::from_fn(n, f.nrows(), |i, j| f[(j, i)] / space.mass()[i]);
        let gain = &cpost * f_adj;

        let root_op = OpExpr::LowRankSpectral(p.prior_root.clone());
        let s_op = OpExpr::shifted_inverse(OpExpr::low_rank(pp.clone()), 1.0)?;
        let covariance = Arc::new(Covariance::new(OpExpr::compose(vec![root_op.clone(), s_op, root_op])?)?);
        Ok(Self {
            pp,
            alphas,
            logdet,
            tr_hc,
            cpost,
            gain,
            covariance,
        })
    }
}

/// Nonzero spectrum of `H̃ = W* W` for `W = F C^{1/2}` (coefficients `w`).
///
/// The range of `H̃` is spanned by `M^{-1} W^T`; an orthonormal basis of it
/// comes from a thin QR of `Z = M^{-1/2} W^T = Q R`, and `H̃` restricted to
/// that basis is `R R^T`. The result is exact for repeated eigenvalues and has
/// rank at most `q`.
fn pp_spectrum(space: &Space, w: &DMatrix<f64>) -> Result<Spectrum> {
    let n = space.dim();
    let q = w.nrows();
    if q == 0 || n == 0 {
        return Ok(Spectrum::empty(space.clone()));
    }
    let inv_root: Vec<f64> = space.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
    let z = DMatrix::from_fn(n, q, |i, j| w[(j, i)] * inv_root[i]);
    let qr = z.qr();
    let (qm, r) = (qr.q(), qr.r());
    let t = &r * r.transpose();
    let t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);
    let vectors = DMatrix::from_fn(n, eig.eigenvalues.len(), |i, j| {
        inv_root[i] * qm.row(i).dot(&eig.eigenvectors.column(j).transpose())
    });
    let spec = Spectrum::sorted(space.clone(), eig.eigenvalues.iter().copied().collect(), vectors);
    let top = spec.values().first().copied().unwrap_or(0.0).max(1.0);
    let r = spec
        .values()
        .iter()
        .position(|&l| l < PP_TRUNCATION * top)
        .unwrap_or(spec.rank());
    Ok(spec.leading(r))
}
