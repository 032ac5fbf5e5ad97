//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use oed_core::gaussian::kl_gaussian_ref;
use oed_core::hilbert::{eig_self_adjoint, EigRank};
use oed_core::models::{self, HeatModelConfig, HeatProblem, NoiseSigma};
use oed_core::oed::*;
use oed_core::rng;
use oed_core::Result;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn default_problem() -> Result<HeatProblem> {
    models::build_problem(&HeatModelConfig::default(), SEED)
}

/// KL divergence, both forms, against the dense finite-dimensional formula.
fn ac1() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let u = p.prior().sample_with(&mut rng::stream_rng(SEED + 1, i))?;
        let y = p.simulate_data(&u, SEED + 100 + i)?;
        let reference = kl_gaussian_ref(&p.posterior(&y)?.posterior, p.prior())?;
        for form in [KlForm::Misfit, KlForm::CameronMartin] {
            let kl = kl_post_prior(p, &y, form)?;
            worst = worst.max((kl - reference).abs() / reference.abs());
        }
    }
    outcome(worst <= 1e-8, format!("max relative error {worst:.2e} over 20 data vectors (tol 1e-8)"))
}

fn mc_line(name: &str, exact: f64, mean: f64, se: f64, k: f64) -> Result<Outcome> {
    let gap = (exact - mean).abs();
    outcome(
        gap <= k * se,
        format!("{name}: closed form {exact:.6}, MC {mean:.6} ± {se:.2e}, |gap| = {:.2} SE (tol {k} SE)", gap / se),
    )
}

/// Expected information gain against joint-sample Monte Carlo.
fn ac2() -> Result<Outcome> {
    let hp = default_problem()?;
    let eig = expected_info_gain(&hp.problem)?.value;
    let mc = mc_oracle(&hp.problem, &McTarget::Eig, 4000, SEED)?;
    mc_line("EIG", eig, mc.mean, mc.std_error, 3.0)
}

/// Bayes risk and the MSE decomposition at a fixed truth.
fn ac3() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let risk = bayes_risk(p)?.value;
    let mc = mc_oracle(p, &McTarget::BayesRisk, 4000, SEED)?;
    let a = mc_line("Bayes risk", risk, mc.mean, mc.std_error, 3.0)?;
    let target = McTarget::Mse(hp.u_true.clone());
    let mse = closed_form(p, &target)?;
    let mc = mc_oracle(p, &target, 100_000, SEED + 1)?;
    let b = mc_line("MSE", mse, mc.mean, mc.std_error, 3.0)?;
    outcome(a.pass && b.pass, format!("{}; {}", a.detail, b.detail))
}

/// Reduced problem on which `exp(-Phi)` has a usable Monte Carlo variance.
fn reduced_config() -> HeatModelConfig {
    HeatModelConfig {
        n: 8,
        sensors: models::equispaced_sensors(2, 1.0),
        sigma: NoiseSigma::Uniform(0.5),
        ..Default::default()
    }
}

/// Normalizing constant against prior-sample Monte Carlo, in the linear domain.
fn ac4() -> Result<Outcome> {
    let hp = models::build_problem(&reduced_config(), SEED)?;
    let target = McTarget::Z0(hp.data.clone());
    let exact = closed_form(&hp.problem, &target)?;
    let mc = mc_oracle(&hp.problem, &target, 1_000_000, SEED)?;
    mc_line("Z0", exact, mc.mean, mc.std_error, 3.0)
}

/// The two double-expectation identities.
fn ac5() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let mut lines = Vec::new();
    let mut pass = true;
    for (target, seed) in [(McTarget::DblexpData, SEED + 5), (McTarget::DblexpHessian, SEED + 6)] {
        let exact = closed_form(p, &target)?;
        let mc = mc_oracle(p, &target, 4000, seed)?;
        let o = mc_line(target.name(), exact, mc.mean, mc.std_error, 3.0)?;
        pass &= o.pass;
        lines.push(o.detail);
    }
    outcome(pass, lines.join("; "))
}

/// Per-direction variance reduction and a non-negative total reduction.
fn ac6() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let post = p.posterior_operator()?;
    let space = p.space();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..post.pp_spectrum().rank() {
        let e = post.pp_spectrum().vector(i);
        let before = space.inner(&p.prior().cov().apply(&e)?, &e);
        let after = space.inner(&post.apply_cpost(&e), &e);
        worst = worst.max(after - before);
    }
    let delta = p.variance_reduction()?.delta;
    outcome(
        worst <= 1e-10 && delta >= -1e-10,
        format!(
            "max <e,C_post e> - <e,C_pr e> = {worst:.2e} over {} directions (tol 1e-10); delta = {delta:.6e} (tol >= -1e-10)",
            post.pp_spectrum().rank()
        ),
    )
}

/// Mesh refinement: stable criteria, divergent naive determinant.
fn ac7() -> Result<Outcome> {
    let mut rows = Vec::new();
    for n in [32, 64, 128, 256] {
        let cfg = HeatModelConfig {
            n,
            ..Default::default()
        };
        let p = models::build_problem(&cfg, SEED)?.problem;
        rows.push((
            n,
            expected_info_gain(&p)?.value,
            bayes_risk(&p)?.value,
            naive_logdet_cpost(&p)?,
        ));
    }
    let (a, b) = (&rows[2], &rows[3]);
    let eig_change = (b.1 - a.1).abs() / b.1;
    let risk_change = (b.2 - a.2).abs() / b.2;
    let decreasing = rows.windows(2).all(|w| w[1].3 < w[0].3);
    let naive: Vec<String> = rows.iter().map(|r| format!("{:.1}", r.3)).collect();
    outcome(
        eig_change < 0.01 && risk_change < 0.01 && decreasing,
        format!(
            "EIG change {eig_change:.2e}, tr(C_post) change {risk_change:.2e} between n=128 and 256 (tol 1e-2); naive log det C_post [{}] strictly decreasing: {decreasing}",
            naive.join(", ")
        ),
    )
}

/// Low-rank EIG against the dense spectrum.
fn ac8() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let dense = eig_self_adjoint(&p.pp_hessian()?, EigRank::Full, 1e-8)?;
    let full: f64 = 0.5 * dense.values().iter().map(|l| l.max(0.0).ln_1p()).sum::<f64>();
    let low = expected_info_gain_lowrank(p, 1e-8)?;
    let r = low.spectrum.rank();
    let tail: f64 = 0.5 * dense.values()[r..].iter().map(|l| l.max(0.0)).sum::<f64>();
    let err = (full - low.value).abs();
    outcome(
        err <= tail.max(1e-12) && err <= 1e-6,
        format!("rank {r}, |EIG_r - EIG_full| = {err:.2e} (tail bound {tail:.2e}, tol 1e-6)"),
    )
}

/// Greedy D-optimal selection against exhaustive enumeration.
fn ac9() -> Result<Outcome> {
    let cfg = HeatModelConfig {
        sensors: models::equispaced_sensors(10, 1.0),
        ..Default::default()
    };
    let p = models::build_problem(&cfg, SEED)?.problem;
    let greedy = greedy_design(&p, 3, DesignCriterion::D)?;
    let best = exhaustive_design(&p, 3, DesignCriterion::D)?;
    let gap = best.value - greedy.value();
    let values: Vec<String> = greedy.steps.iter().map(|s| format!("{:.4}", s.value)).collect();
    outcome(
        greedy.monotone() && best.values.len() == 120 && gap >= -1e-12,
        format!(
            "greedy {:?} values [{}] monotone: {}; exhaustive optimum {:?} = {:.6} over {} subsets; gap {gap:.3e}",
            greedy.order,
            values.join(", "),
            greedy.monotone(),
            best.best,
            best.value,
            best.values.len()
        ),
    )
}

/// MAP optimality and adjoint consistency of the forward map.
fn ac10() -> Result<Outcome> {
    let hp = default_problem()?;
    let p = &hp.problem;
    let m = p.posterior_mean(&hp.data)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let d = rng::normal_vector(&mut rng::stream_rng(SEED + 10, i), p.space().dim());
        let d = &d / p.space().norm(&d);
        let plus = p.map_objective(&(&m + &d * h), &hp.data)?;
        let minus = p.map_objective(&(&m - &d * h), &hp.data)?;
        worst = worst.max(((plus - minus) / (2.0 * h)).abs());
    }
    let adjoint = p.forward().adjoint_defect(100, SEED)?;
    outcome(
        worst <= 1e-6 && adjoint <= 1e-12,
        format!("max |dJ| = {worst:.2e} over 20 directions (tol 1e-6); G adjoint defect {adjoint:.2e} (tol 1e-12)"),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Result<Outcome>;
    let checks: [(&str, &str, Check, Option<u64>); 10] = [
        ("AC-1", "KL formula equivalence", ac1, Some(10)),
        ("AC-2", "expected information gain vs Monte Carlo", ac2, Some(60)),
        ("AC-3", "Bayes risk and MSE vs Monte Carlo", ac3, None),
        ("AC-4", "Z0 vs prior-sample Monte Carlo", ac4, None),
        ("AC-5", "double-expectation identities", ac5, None),
        ("AC-6", "spectral uncertainty reduction", ac6, None),
        ("AC-7", "discretization invariance", ac7, Some(120)),
        ("AC-8", "low-rank fidelity", ac8, None),
        ("AC-9", "design optimization", ac9, Some(30)),
        ("AC-10", "MAP optimality and adjoint consistency", ac10, None),
    ];
    let mut failures = 0;
    for (id, name, check, limit) in checks {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let within = limit.is_none_or(|s| elapsed <= Duration::from_secs(s));
        let budget = limit.map_or(String::new(), |s| format!(", limit {s} s"));
        let (pass, detail) = match result {
            Ok(o) => (o.pass && within, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "[{}] {id} {name}: {detail} [{:.2} s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        println!("acceptance: 10/10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 10 criteria failed");
        ExitCode::FAILURE
    }
}
