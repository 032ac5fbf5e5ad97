use nalgebra::DVector;
use serde::Serialize;

use crate::error::Result;
use crate::hilbert::Spectrum;
use crate::inverse::{InverseProblem, PosteriorOperator};
use crate::stats::McEstimate;

/// Which algebraic form of the posterior-to-prior KL divergence to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlForm {
    /// Data-misfit term `<m_post - m_pr, G*(G m_post - y)>`.
    Misfit,
    /// Cameron–Martin term `|m_post - m_pr|_C^2`.
    CameronMartin,
}

/// A criterion value with the spectrum it came from and, optionally, an
/// independent Monte Carlo estimate of the same quantity.
#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub name: String,
    pub value: f64,
    pub spectrum: Spectrum,
    pub mc: Option<McEstimate>,
}

impl CriterionReport {
    pub fn with_mc(mut self, mc: McEstimate) -> Self {
        self.mc = Some(mc);
        self
    }

    /// `(|value - mean|, 3 SE)` when an estimate is attached.
    pub fn mc_gap(&self) -> Option<(f64, f64)> {
        self.mc
            .map(|e| ((self.value - e.mean).abs(), 3.0 * e.std_error))
    }
}

/// `log Z_0(y)` with `Z_0(y) = integral exp(-Phi(u; y)) mu_pr(du)`.
///
/// For a non-centered prior the data are shifted by `G m_pr`, which reduces the
/// integral to the centered case.
pub fn z0(p: &InverseProblem, y: &DVector<f64>) -> Result<f64> {
    let post = p.posterior_operator()?;
    let yt = p.whiten(y)? - p.whitened_forward().apply(p.prior().mean())?;
    let b = p.whitened_forward().adjoint_apply(&yt)?;
    let cb = post.apply_cpost(&b);
    Ok(-0.5 * yt.norm_squared() - 0.5 * post.logdet() + 0.5 * p.space().inner(&cb, &b))
}

/// `D_KL(mu_post^y || mu_pr)`.
pub fn kl_post_prior(p: &InverseProblem, y: &DVector<f64>, form: KlForm) -> Result<f64> {
    let yt = p.whiten(y)?;
    let m_post = p.posterior_mean_whitened(&yt)?;
    let post = p.posterior_operator()?;
    match form {
        KlForm::Misfit => kl_misfit_whitened(p, post, &yt, &m_post),
        KlForm::CameronMartin => {
            let d = &m_post - p.prior().mean();
            Ok(0.5 * (post.logdet() - post.trace_hc() + p.cm_norm_sq(&d)?))
        }
    }
}

/// Misfit-form KL for whitened data and its posterior mean.
pub(crate) fn kl_misfit_whitened(
    p: &InverseProblem,
    post: &PosteriorOperator,
    yt: &DVector<f64>,
    m_post: &DVector<f64>,
) -> Result<f64> {
    let f = p.whitened_forward();
    let d = m_post - p.prior().mean();
    let residual = f.apply(m_post)? - yt;
    let cross = f.apply(&d)?.dot(&residual);
    Ok(0.5 * (post.logdet() - post.trace_hc() - cross))
}

/// Expected information gain `1/2 log det(I + H̃)`: the D-criterion.
pub fn expected_info_gain(p: &InverseProblem) -> Result<CriterionReport> {
    let post = p.posterior_operator()?;
    Ok(CriterionReport {
        name: "expected_info_gain".into(),
        value: 0.5 * post.logdet(),
        spectrum: post.pp_spectrum().clone(),
        mc: None,
    })
}

/// Expected information gain from the spectrum truncated at `tol`.
pub fn expected_info_gain_lowrank(p: &InverseProblem, tol: f64) -> Result<CriterionReport> {
    let spec = p.pp_hessian_lowrank(tol)?;
    Ok(CriterionReport {
        name: "expected_info_gain_lowrank".into(),
        value: 0.5 * spec.logdet_i_plus()?,
        spectrum: spec,
        mc: None,
    })
}

/// Bayes risk of the MAP estimator, `tr(C_post) = tr(C_pr) - delta`: the A-criterion.
pub fn bayes_risk(p: &InverseProblem) -> Result<CriterionReport> {
    let vr = p.variance_reduction()?;
    let tr_prior = p.prior().spectrum()?.sum();
    Ok(CriterionReport {
        name: "bayes_risk".into(),
        value: tr_prior - vr.delta,
        spectrum: vr.directions,
        mc: None,
    })
}

/// `tr(H̃) = sum lambda`.
pub fn trace_pp_hessian(p: &InverseProblem) -> Result<f64> {
    Ok(p.posterior_operator()?.pp_spectrum().sum())
}

/// `tr(S H̃^2) = sum lambda^2 / (1 + lambda)`.
pub fn trace_s_pp_squared(p: &InverseProblem) -> Result<f64> {
    Ok(p.posterior_operator()?
        .pp_spectrum()
        .values()
        .iter()
        .map(|l| l * l / (1.0 + l))
        .sum())
}

/// `log det C_post = log det C_pr - log det(I + H̃)`, the finite-dimensional
/// determinant that has no limit under mesh refinement.
pub fn naive_logdet_cpost(p: &InverseProblem) -> Result<f64> {
    let prior: f64 = p.prior().spectrum()?.values().iter().map(|l| l.ln()).sum();
    Ok(prior - p.posterior_operator()?.logdet())
}

/// Mean squared error of the MAP estimator at a fixed truth, split into its
/// bias and noise-variance parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MseDecomposition {
    /// `|(C_post H - I)(u - m_pr)|^2`.
    pub bias: f64,
    /// `tr(C_post^2 H)`.
    pub variance: f64,
}

impl MseDecomposition {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

pub fn mse_map(p: &InverseProblem, u_true: &DVector<f64>) -> Result<MseDecomposition> {
    let space = p.space();
    space.check(u_true)?;
    let post = p.posterior_operator()?;
    let d = u_true - p.prior().mean();
    let hd = p.hessian()?.apply(&d)?;
    let bias_vec = post.apply_cpost(&hd) - &d;
    // C_post F* has one column per whitened observation; their squared norms sum to tr(C_post^2 H)
    let variance = post
        .gain()
        .column_iter()
        .map(|c| space.norm_sq(&c.into_owned()))
        .sum();
    Ok(MseDecomposition {
        bias: space.norm_sq(&bias_vec),
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianMeasure;
    use crate::hilbert::{OpExpr, Space};
    use nalgebra::DMatrix;

    fn scalar_problem(g: f64) -> InverseProblem {
        let s = Space::euclidean(1);
        let prior = GaussianMeasure::centered(OpExpr::identity(s.clone())).unwrap();
        let fwd = OpExpr::dense(DMatrix::from_element(1, 1, g), s, Space::euclidean(1)).unwrap();
        InverseProblem::new(prior, fwd, DVector::from_element(1, 1.0)).unwrap()
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn scalar_z0() {
        let p = scalar_problem(1.0);
        let expected = -0.5 - 0.5 * 2f64.ln() + 0.25;
        assert!((z0(&p, &v(1.0)).unwrap() - expected).abs() < 1e-14);
        // no data: only the determinant term survives
        assert!((z0(&p, &v(0.0)).unwrap() + 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn z0_vanishes_without_data_or_information() {
        let p = scalar_problem(0.0);
        assert_eq!(z0(&p, &v(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn scalar_kl_both_forms() {
        let p = scalar_problem(1.0);
        let expected = 0.5 * (2f64.ln() - 0.5 + 1.0);
        for form in [KlForm::Misfit, KlForm::CameronMartin] {
            assert!((kl_post_prior(&p, &v(2.0), form).unwrap() - expected).abs() < 1e-14);
        }
        assert!((expected - 0.596574).abs() < 1e-6);
    }

    #[test]
    fn uninformative_problem_has_zero_criteria() {
        let p = scalar_problem(0.0);
        assert_eq!(kl_post_prior(&p, &v(2.0), KlForm::Misfit).unwrap(), 0.0);
        assert_eq!(expected_info_gain(&p).unwrap().value, 0.0);
        assert_eq!(bayes_risk(&p).unwrap().value, 1.0);
        assert_eq!(mse_map(&p, &v(1.5)).unwrap().total(), 2.25);
    }

    #[test]
    fn scalar_criteria() {
        let p = scalar_problem(1.0);
        assert!((expected_info_gain(&p).unwrap().value - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((bayes_risk(&p).unwrap().value - 0.5).abs() < 1e-15);
        let mse = mse_map(&p, &v(1.0)).unwrap();
        assert!((mse.bias - 0.25).abs() < 1e-15);
        assert!((mse.variance - 0.25).abs() < 1e-15);
        assert!((trace_pp_hessian(&p).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_s_pp_squared(&p).unwrap() - 0.5).abs() < 1e-15);
    }
}
