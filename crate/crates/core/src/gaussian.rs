//! Gaussian measures on a [`Space`]: sampling, affine pushforwards, the
//! quadratic-form expectation, the Gaussian exponential integral and the
//! finite-dimensional KL divergence used as a reference.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{dense_eig, OpExpr, Space, Spectrum, NEGATIVE_TOL};
use crate::rng;

/// Eigenvalues of `Q` below this fraction of the largest are dropped when
/// forming `Q^{1/2} A Q^{1/2}`.
pub const SQRT_TRUNCATION: f64 = 1e-12;

/// A self-adjoint PSD covariance operator with a lazily computed spectrum.
#[derive(Debug)]
pub struct Covariance {
    op: OpExpr,
    spectrum: OnceLock<Result<Spectrum>>,
    sqrt_factor: OnceLock<DMatrix<f64>>,
}

impl Covariance {
    pub fn new(op: OpExpr) -> Result<Self> {
        if !op.domain().same_as(op.codomain()) {
            return Err(Error::DimensionMismatch {
                expected: op.domain().dim(),
                found: op.codomain().dim(),
            });
        }
        Ok(Self {
            op,
            spectrum: OnceLock::new(),
            sqrt_factor: OnceLock::new(),
        })
    }

    /// Uses a spectrum the caller already has (it must describe `op`).
    pub fn with_spectrum(op: OpExpr, spectrum: Spectrum) -> Result<Self> {
        let cov = Self::new(op)?;
        let _ = cov.spectrum.set(Ok(spectrum));
        Ok(cov)
    }

    pub fn op(&self) -> &OpExpr {
        &self.op
    }

    pub fn space(&self) -> &Space {
        self.op.domain()
    }

    /// Full spectrum; round-off negatives are clamped to zero.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        self.spectrum
            .get_or_init(|| psd_spectrum(&self.op))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `V diag(sqrt(lambda))`, so that `L z` with `z ~ N(0, I)` has covariance `Q`.
    fn sqrt_factor(&self) -> Result<&DMatrix<f64>> {
        let spec = self.spectrum()?;
        Ok(self.sqrt_factor.get_or_init(|| {
            let v = spec.vectors();
            DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * spec.values()[j].sqrt())
        }))
    }
}

fn psd_spectrum(op: &OpExpr) -> Result<Spectrum> {
    let spec = dense_eig(op)?;
    let scale = spec.values().first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&low) = spec.values().last() {
        if low < -NEGATIVE_TOL * scale {
            return Err(Error::Indefinite { value: low });
        }
    }
    Ok(spec.map_values(|l| l.max(0.0)))
}

/// `N(mean, cov)`. The covariance is shared, so measures that differ only
/// in their mean (posteriors for different data) are cheap to build.
#[derive(Clone, Debug)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: Arc<Covariance>,
}

impl GaussianMeasure {
    /// Builds the measure and eagerly validates the covariance spectrum.
    pub fn new(mean: DVector<f64>, cov: OpExpr) -> Result<Self> {
        let cov = Arc::new(Covariance::new(cov)?);
        cov.spectrum()?;
        Self::from_covariance(mean, cov)
    }

    pub fn centered(cov: OpExpr) -> Result<Self> {
        let mean = cov.domain().zeros();
        Self::new(mean, cov)
    }

    /// Shares an existing covariance. Its spectrum is computed on first use.
    pub fn from_covariance(mean: DVector<f64>, cov: Arc<Covariance>) -> Result<Self> {
        cov.space().check(&mean)?;
        Ok(Self { mean, cov })
    }

    pub fn space(&self) -> &Space {
        self.cov.space()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &OpExpr {
        self.cov.op()
    }

    pub fn covariance(&self) -> &Arc<Covariance> {
        &self.cov
    }

    pub fn spectrum(&self) -> Result<&Spectrum> {
        self.cov.spectrum()
    }

    pub fn is_centered(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0)
    }

    /// One draw `m + sum_i sqrt(lambda_i) z_i e_i`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let l = self.cov.sqrt_factor()?;
        let z = rng::normal_vector(rng, l.ncols());
        Ok(&self.mean + l * z)
    }

    /// `count` draws; draw `i` uses stream `i` of `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        (0..count)
            .map(|i| self.sample_with(&mut rng::stream_rng(seed, i as u64)))
            .collect()
    }

    /// Law of `x -> A x + b`: `N(A m + b, A Q A*)`.
    pub fn pushforward_affine(&self, a: &OpExpr, b: &DVector<f64>) -> Result<GaussianMeasure> {
        if a.domain().dim() != self.space().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space().dim(),
                found: a.domain().dim(),
            });
        }
        a.codomain().check(b)?;
        let mean = a.apply(&self.mean)? + b;
        let cov = OpExpr::compose(vec![a.clone(), self.cov().clone(), a.adjoint()])?;
        GaussianMeasure::new(mean, cov)
    }

    /// `integral |x|^2 dmu = tr(Q) + |m|^2`.
    pub fn second_moment(&self) -> Result<f64> {
        Ok(self.spectrum()?.sum() + self.space().norm_sq(&self.mean))
    }
}

/// `integral <A x, x> dmu(x) = tr(A Q) + <A m, m>`.
pub fn expect_quad_form(a: &OpExpr, mu: &GaussianMeasure) -> Result<f64> {
    let space = mu.space();
    if a.domain().dim() != space.dim() || a.codomain().dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: a.domain().dim(),
        });
    }
    let q = OpExpr::low_rank(mu.spectrum()?.clone());
    let tr = OpExpr::compose(vec![a.clone(), q])?.trace()?;
    let am = a.apply(mu.mean())?;
    Ok(tr + space.inner(&am, mu.mean()))
}

/// Log of `integral exp(-1/2 <A x, x> + <b, x>) dmu(x)` for centered `mu`:
/// `-1/2 log det(I + Ã) + 1/2 |(I + Ã)^{-1/2} Q^{1/2} b|^2` with `Ã = Q^{1/2} A Q^{1/2}`.
pub fn gaussian_exp_integral(a: &OpExpr, b: &DVector<f64>, mu: &GaussianMeasure) -> Result<f64> {
    let space = mu.space();
    if !mu.is_centered() {
        return Err(Error::NotCentered {
            norm: space.norm(mu.mean()),
        });
    }
    space.check(b)?;
    let a_tilde = pre_conditioned(a, mu)?;
    let logdet = a_tilde.logdet_i_plus()?;
    let root = mu.spectrum()?.truncated(SQRT_TRUNCATION).sqrt()?;
    let v = root.apply(b);
    let c = a_tilde.coordinates(&v);
    let damped: f64 = c
        .iter()
        .zip(a_tilde.values())
        .map(|(ci, l)| ci * ci * l / (1.0 + l))
        .sum();
    let quad = space.norm_sq(&v) - damped;
    Ok(-0.5 * logdet + 0.5 * quad)
}

/// Spectrum of `Q^{1/2} A Q^{1/2}`, checked to be PSD.
pub fn pre_conditioned(a: &OpExpr, mu: &GaussianMeasure) -> Result<Spectrum> {
    let root = OpExpr::low_rank(mu.spectrum()?.truncated(SQRT_TRUNCATION).sqrt()?);
    let op = OpExpr::compose(vec![root.clone(), a.clone(), root])?;
    let spec = dense_eig(&op)?;
    let scale = spec.values().first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&low) = spec.values().last() {
        if low < -1e-10 * scale {
            return Err(Error::Indefinite { value: low });
        }
    }
    Ok(spec.map_values(|l| l.max(0.0)))
}

/// Textbook `KL(post || prior)` at fixed dimension, through dense
/// factorizations of both covariances and the explicit prior inverse.
pub fn kl_gaussian_ref(post: &GaussianMeasure, prior: &GaussianMeasure) -> Result<f64> {
    let space = prior.space();
    if !space.same_as(post.space()) {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: post.space().dim(),
        });
    }
    let n = space.dim();
    let b_pr = symmetrized(&prior.cov().to_dense()?, space);
    let b_post = symmetrized(&post.cov().to_dense()?, space);
    let chol_pr = Cholesky::new(b_pr).ok_or(Error::SingularCovariance {
        min_eigenvalue: f64::NAN,
    })?;
    let chol_post = Cholesky::new(b_post.clone()).ok_or(Error::SingularCovariance {
        min_eigenvalue: f64::NAN,
    })?;
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let log_ratio = logdet(&chol_post) - logdet(&chol_pr);
    let tr = chol_pr.solve(&b_post).trace();
    let d = post.mean() - prior.mean();
    let d_half = DVector::from_iterator(n, d.iter().zip(space.mass()).map(|(x, m)| x * m.sqrt()));
    let quad = d_half.dot(&chol_pr.solve(&d_half));
    Ok(0.5 * (-log_ratio - n as f64 + tr + quad))
}

/// `M^{1/2} K M^{-1/2}`, symmetrized.
fn symmetrized(k: &DMatrix<f64>, space: &Space) -> DMatrix<f64> {
    let root: Vec<f64> = space.mass().iter().map(|m| m.sqrt()).collect();
    let b = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| root[i] * k[(i, j)] / root[j]);
    (&b + b.transpose()) * 0.5
}
