use oed_core::gaussian::kl_gaussian_ref;
use oed_core::hilbert::{eig_self_adjoint, EigRank};
use oed_core::models::{self, HeatModelConfig, HeatProblem};
use oed_core::oed::{
    bayes_risk, closed_form, exhaustive_design, expected_info_gain, expected_info_gain_lowrank, greedy_design,
    kl_post_prior, mc_oracle, naive_logdet_cpost, trace_pp_hessian, DesignCriterion, KlForm, McTarget,
    EXHAUSTIVE_LIMIT,
};
use oed_core::rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{Header, Output};

/// Everything a subcommand needs after argument parsing.
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl Context {
    fn problem(&self, model: &HeatModelConfig) -> Result<HeatProblem, CliError> {
        Ok(models::build_problem(model, self.seed)?)
    }

    /// Independent seed for the oracle labelled `tag`.
    fn subseed(&self, tag: u64) -> u64 {
        self.seed.wrapping_add(tag << 32)
    }
}

#[derive(Serialize)]
struct NamedValue {
    name: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    eigenvalue: f64,
    /// `lambda / (1 + lambda)`, the fraction of prior variance removed along
    /// the eigenvector.
    reduction: f64,
}

#[derive(Serialize)]
struct CriteriaReport<'a> {
    header: &'a Header,
    n: usize,
    sensors: &'a [f64],
    criteria: &'a [NamedValue],
    lowrank_rank: usize,
    pp_spectrum: &'a [SpectrumRow],
}

pub fn criteria(ctx: &Context, out: &Output) -> Result<(), CliError> {
    let model = &ctx.config.model;
    let hp = ctx.problem(model)?;
    let p = &hp.problem;
    let eig = expected_info_gain(p)?;
    let lowrank = expected_info_gain_lowrank(p, ctx.config.criteria.lowrank_tol)?;
    let risk = bayes_risk(p)?;
    let vr = p.variance_reduction()?;
    let values = [
        NamedValue { name: "eig", value: eig.value },
        NamedValue { name: "eig_lowrank", value: lowrank.value },
        NamedValue { name: "bayes_risk", value: risk.value },
        NamedValue { name: "trace_prior", value: p.prior().spectrum()?.sum() },
        NamedValue { name: "variance_reduction", value: vr.delta },
        NamedValue { name: "trace_pp_hessian", value: trace_pp_hessian(p)? },
    ];
    let spectrum: Vec<SpectrumRow> = eig
        .spectrum
        .values()
        .iter()
        .enumerate()
        .map(|(index, &l)| SpectrumRow {
            index,
            eigenvalue: l,
            reduction: l / (1.0 + l),
        })
        .collect();
    out.json(
        "criteria.json",
        &CriteriaReport {
            header: out.header(),
            n: model.n,
            sensors: &model.sensors,
            criteria: &values,
            lowrank_rank: lowrank.spectrum.rank(),
            pp_spectrum: &spectrum,
        },
    )?;
    out.csv("criteria.csv", &["name", "value"], &values)?;
    out.csv("pp_spectrum.csv", &["index", "eigenvalue", "reduction"], &spectrum)?;
    for v in &values {
        println!("{:<20} {:.10e}", v.name, v.value);
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckRow {
    name: &'static str,
    kind: &'static str,
    closed_form: f64,
    /// Monte Carlo mean, or the independent reference value.
    reference: f64,
    std_error: Option<f64>,
    n_samples: Option<usize>,
    /// `|closed_form - reference|`, relative for the KL rows.
    error: f64,
    tolerance: f64,
    pass: bool,
}

impl CheckRow {
    fn monte_carlo(name: &'static str, closed: f64, mc: oed_core::stats::McEstimate, n_se: f64) -> Self {
        let error = (closed - mc.mean).abs();
        let tolerance = n_se * mc.std_error;
        Self {
            name,
            kind: "monte_carlo",
            closed_form: closed,
            reference: mc.mean,
            std_error: Some(mc.std_error),
            n_samples: Some(mc.n_samples),
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }

    fn deterministic(name: &'static str, closed: f64, reference: f64, error: f64, tolerance: f64) -> Self {
        Self {
            name,
            kind: "deterministic",
            closed_form: closed,
            reference,
            std_error: None,
            n_samples: None,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    header: &'a Header,
    passed: bool,
    failed: usize,
    checks: &'a [CheckRow],
}

pub fn validate(ctx: &Context, out: &Output) -> Result<(), CliError> {
    let v = &ctx.config.validate;
    let hp = ctx.problem(&ctx.config.model)?;
    let p = &hp.problem;
    let mut rows = Vec::new();

    let mut mc_row = |name: &'static str, target: McTarget, n: usize, tag: u64, scale: f64| -> Result<(), CliError> {
        let closed = scale * closed_form(p, &target)?;
        let mc = mc_oracle(p, &target, n, ctx.subseed(tag))?;
        rows.push(CheckRow::monte_carlo(name, closed, mc, v.n_se));
        Ok(())
    };
    // the corrupted fixture drops the one half in front of log det(I + H)
    mc_row("eig", McTarget::Eig, v.samples, 1, if v.corrupt { 2.0 } else { 1.0 })?;
    mc_row("bayes_risk", McTarget::BayesRisk, v.samples, 2, 1.0)?;
    mc_row("dblexp_data", McTarget::DblexpData, v.samples, 3, 1.0)?;
    mc_row("dblexp_hessian", McTarget::DblexpHessian, v.samples, 4, 1.0)?;
    mc_row("mse", McTarget::Mse(hp.u_true.clone()), v.mse_samples, 5, 1.0)?;

    let small = ctx.problem(&v.z0_model)?;
    let target = McTarget::Z0(small.data.clone());
    let closed = closed_form(&small.problem, &target)?;
    let mc = mc_oracle(&small.problem, &target, v.z0_samples, ctx.subseed(6))?;
    rows.push(CheckRow::monte_carlo("z0", closed, mc, v.n_se));

    for (name, form) in [("kl_misfit", KlForm::Misfit), ("kl_cameron_martin", KlForm::CameronMartin)] {
        // worst relative error over the data draws
        let mut worst = (0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..v.kl_data as u64 {
            let u = p.prior().sample_with(&mut rng::stream_rng(ctx.subseed(7), i))?;
            let y = p.simulate_data(&u, ctx.subseed(8).wrapping_add(i))?;
            let reference = kl_gaussian_ref(&p.posterior(&y)?.posterior, p.prior())?;
            let kl = kl_post_prior(p, &y, form)?;
            let rel = (kl - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
            if rel > worst.2 {
                worst = (kl, reference, rel);
            }
        }
        rows.push(CheckRow::deterministic(name, worst.0, worst.1, worst.2.max(0.0), v.kl_tol));
    }

    let dense = eig_self_adjoint(&p.pp_hessian()?, EigRank::Full, 1e-8)?;
    let full = 0.5 * dense.values().iter().map(|l| l.max(0.0).ln_1p()).sum::<f64>();
    let low = expected_info_gain_lowrank(p, v.lowrank_tol)?.value;
    rows.push(CheckRow::deterministic(
        "eig_lowrank",
        low,
        full,
        (low - full).abs(),
        v.lowrank_max_err,
    ));

    let m = p.posterior_mean(&hp.data)?;
    let mut worst: f64 = 0.0;
    for i in 0..v.fd_directions as u64 {
        let d = rng::normal_vector(&mut rng::stream_rng(ctx.subseed(9), i), p.space().dim());
        let d = &d / p.space().norm(&d);
        let plus = p.map_objective(&(&m + &d * v.fd_step), &hp.data)?;
        let minus = p.map_objective(&(&m - &d * v.fd_step), &hp.data)?;
        worst = worst.max(((plus - minus) / (2.0 * v.fd_step)).abs());
    }
    rows.push(CheckRow::deterministic("map_gradient", 0.0, worst, worst, v.gradient_tol));

    let defect = p.forward().adjoint_defect(100, ctx.subseed(10))?;
    rows.push(CheckRow::deterministic("forward_adjoint", 0.0, defect, defect, v.adjoint_tol));

    let post = p.posterior_operator()?;
    let mut increase = f64::NEG_INFINITY;
    for i in 0..post.pp_spectrum().rank() {
        let e = post.pp_spectrum().vector(i);
        let before = p.space().inner(&p.prior().cov().apply(&e)?, &e);
        let after = p.space().inner(&post.apply_cpost(&e), &e);
        increase = increase.max(after - before);
    }
    let increase = increase.max(-p.variance_reduction()?.delta).max(0.0);
    rows.push(CheckRow::deterministic("variance_reduction", 0.0, increase, increase, v.variance_tol));

    let failed = rows.iter().filter(|r| !r.pass).count();
    out.json(
        "validate.json",
        &ValidateReport {
            header: out.header(),
            passed: failed == 0,
            failed,
            checks: &rows,
        },
    )?;
    out.csv(
        "validate.csv",
        &[
            "name",
            "kind",
            "closed_form",
            "reference",
            "std_error",
            "n_samples",
            "error",
            "tolerance",
            "pass",
        ],
        &rows,
    )?;
    for r in &rows {
        println!(
            "[{}] {:<20} closed {:.6e}  reference {:.6e}  error {:.2e}  tol {:.2e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.closed_form,
            r.reference,
            r.error,
            r.tolerance
        );
    }
    if failed > 0 {
        return Err(CliError::Validation {
            failed,
            total: rows.len(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    chosen: usize,
    location: f64,
    value: f64,
    monotone: bool,
}

#[derive(Serialize)]
struct ExhaustiveSummary {
    best: Vec<usize>,
    best_locations: Vec<f64>,
    value: f64,
    /// How far the greedy design falls short of the optimum (never negative
    /// up to rounding).
    gap: f64,
    subsets: usize,
}

#[derive(Serialize)]
struct DesignReport<'a> {
    header: &'a Header,
    criterion: &'static str,
    candidates: &'a [f64],
    k: usize,
    initial_value: f64,
    steps: &'a [StepRow],
    design: Vec<f64>,
    value: f64,
    recomputed_value: f64,
    monotone: bool,
    exhaustive: Option<ExhaustiveSummary>,
}

pub fn design(ctx: &Context, out: &Output) -> Result<(), CliError> {
    let dc = &ctx.config.design;
    let candidates = dc.candidate_locations(ctx.config.model.length);
    let model = HeatModelConfig {
        sensors: candidates.clone(),
        ..ctx.config.model.clone()
    };
    let criterion = DesignCriterion::from(dc.criterion);
    if dc.exhaustive && candidates.len() > EXHAUSTIVE_LIMIT {
        return Err(CliError::Config(format!(
            "exhaustive search supports at most {EXHAUSTIVE_LIMIT} candidates, got {}",
            candidates.len()
        )));
    }
    let p = ctx.problem(&model)?.problem;
    let greedy = greedy_design(&p, dc.k, criterion)?;
    let steps: Vec<StepRow> = greedy
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepRow {
            step: i + 1,
            chosen: s.chosen,
            location: candidates[s.chosen],
            value: s.value,
            monotone: s.monotone,
        })
        .collect();
    let exhaustive = if dc.exhaustive {
        let best = exhaustive_design(&p, dc.k, criterion)?;
        let gap = match criterion {
            DesignCriterion::D => best.value - greedy.value(),
            DesignCriterion::A => greedy.value() - best.value,
        };
        Some(ExhaustiveSummary {
            best_locations: best.best.iter().map(|&i| candidates[i]).collect(),
            best: best.best,
            value: best.value,
            gap,
            subsets: best.values.len(),
        })
    } else {
        None
    };
    let report = DesignReport {
        header: out.header(),
        criterion: criterion.name(),
        candidates: &candidates,
        k: dc.k,
        initial_value: greedy.initial_value,
        steps: &steps,
        design: greedy.order.iter().map(|&i| candidates[i]).collect(),
        value: greedy.value(),
        recomputed_value: greedy.report.value,
        monotone: greedy.monotone(),
        exhaustive,
    };
    out.json("design.json", &report)?;
    out.csv("design_steps.csv", &["step", "chosen", "location", "value", "monotone"], &steps)?;
    println!("{}-optimal greedy design {:?} value {:.10e}", criterion.name(), report.design, report.value);
    if let Some(e) = &report.exhaustive {
        println!("exhaustive optimum {:?} value {:.10e} gap {:.3e}", e.best_locations, e.value, e.gap);
    }
    Ok(())
}

#[derive(Serialize)]
struct RefineRow {
    n: usize,
    eig: f64,
    bayes_risk: f64,
    trace_prior: f64,
    naive_logdet_cpost: f64,
}

#[derive(Serialize)]
struct RefineReport<'a> {
    header: &'a Header,
    rows: &'a [RefineRow],
    /// Relative changes between the two finest grids.
    eig_rel_change: Option<f64>,
    bayes_risk_rel_change: Option<f64>,
    naive_strictly_decreasing: bool,
    stable: bool,
}

pub fn refine(ctx: &Context, out: &Output) -> Result<(), CliError> {
    let rc = &ctx.config.refine;
    let mut rows = Vec::with_capacity(rc.grids.len());
    for &n in &rc.grids {
        let model = HeatModelConfig {
            n,
            ..ctx.config.model.clone()
        };
        let p = ctx.problem(&model)?.problem;
        rows.push(RefineRow {
            n,
            eig: expected_info_gain(&p)?.value,
            bayes_risk: bayes_risk(&p)?.value,
            trace_prior: p.prior().spectrum()?.sum(),
            naive_logdet_cpost: naive_logdet_cpost(&p)?,
        });
    }
    let rel = |f: fn(&RefineRow) -> f64| match rows.as_slice() {
        [.., a, b] => Some((f(b) - f(a)).abs() / f(b).abs()),
        _ => None,
    };
    let eig_rel_change = rel(|r| r.eig);
    let bayes_risk_rel_change = rel(|r| r.bayes_risk);
    let naive_strictly_decreasing = rows.windows(2).all(|w| w[1].naive_logdet_cpost < w[0].naive_logdet_cpost);
    let stable = [eig_rel_change, bayes_risk_rel_change]
        .iter()
        .all(|c| c.is_some_and(|c| c < rc.stability_tol));
    out.json(
        "refine.json",
        &RefineReport {
            header: out.header(),
            rows: &rows,
            eig_rel_change,
            bayes_risk_rel_change,
            naive_strictly_decreasing,
            stable,
        },
    )?;
    out.csv(
        "refine.csv",
        &["n", "eig", "bayes_risk", "trace_prior", "naive_logdet_cpost"],
        &rows,
    )?;
    for r in &rows {
        println!(
            "n={:<5} eig {:.8e}  bayes_risk {:.8e}  naive log det C_post {:.6e}",
            r.n, r.eig, r.bayes_risk, r.naive_logdet_cpost
        );
    }
    Ok(())
}
