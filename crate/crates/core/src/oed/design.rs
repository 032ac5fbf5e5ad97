use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::criteria::{bayes_risk, expected_info_gain, CriterionReport};
use crate::error::{Error, Result};
use crate::inverse::{DesignWeights, InverseProblem};

/// Candidate counts up to this use rank-one updates of a dense `C_post`.
pub const RANK_ONE_LIMIT: usize = 64;

/// Slack allowed in the per-step monotonicity check.
const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignCriterion {
    /// Maximize expected information gain.
    D,
    /// Minimize the Bayes risk `tr(C_post)`.
    A,
}

impl DesignCriterion {
    pub fn name(self) -> &'static str {
        match self {
            DesignCriterion::D => "D",
            DesignCriterion::A => "A",
        }
    }

    fn improves(self, new: f64, old: f64) -> bool {
        let margin = 1e-12 * old.abs().max(1.0);
        match self {
            DesignCriterion::D => new > old + margin,
            DesignCriterion::A => new < old - margin,
        }
    }

    fn monotone(self, new: f64, old: f64) -> bool {
        match self {
            DesignCriterion::D => new >= old - MONOTONE_SLACK,
            DesignCriterion::A => new <= old + MONOTONE_SLACK,
        }
    }
}

/// How each greedy step re-evaluates the criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreedyPath {
    /// Sherman–Morrison updates of a dense posterior covariance.
    RankOne,
    /// A fresh posterior for every trial design.
    Recompute,
    /// `RankOne` up to [`RANK_ONE_LIMIT`] candidates, `Recompute` beyond.
    Auto,
}

#[derive(Clone, Debug)]
pub struct GreedyStep {
    pub chosen: usize,
    pub value: f64,
    /// The criterion did not move the wrong way (beyond `1e-10`).
    pub monotone: bool,
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub design: DesignWeights,
    pub order: Vec<usize>,
    /// Criterion value of the empty design.
    pub initial_value: f64,
    pub steps: Vec<GreedyStep>,
    /// Criterion recomputed from scratch for the final design.
    pub report: CriterionReport,
}

impl GreedyResult {
    pub fn monotone(&self) -> bool {
        self.steps.iter().all(|s| s.monotone)
    }

    pub fn value(&self) -> f64 {
        self.steps.last().map_or(self.initial_value, |s| s.value)
    }
}

pub fn greedy_design(p: &InverseProblem, k: usize, criterion: DesignCriterion) -> Result<GreedyResult> {
    greedy_design_with(p, k, criterion, GreedyPath::Auto)
}

/// Activates `k` candidates one at a time, each time taking the one with the
/// best criterion; ties go to the lowest index.
pub fn greedy_design_with(
    p: &InverseProblem,
    k: usize,
    criterion: DesignCriterion,
    path: GreedyPath,
) -> Result<GreedyResult> {
    let q = p.q();
    if k > q {
        return Err(Error::DesignSize { k, candidates: q });
    }
    let path = match path {
        GreedyPath::Auto if q <= RANK_ONE_LIMIT => GreedyPath::RankOne,
        GreedyPath::Auto => GreedyPath::Recompute,
        other => other,
    };
    let initial_value = design_value(p, &[], criterion)?;
    let (order, values) = match path {
        GreedyPath::RankOne => greedy_rank_one(p, k, criterion, initial_value)?,
        _ => greedy_recompute(p, k, criterion, initial_value)?,
    };

    let mut steps = Vec::with_capacity(k);
    let mut prev = initial_value;
    for (&chosen, &value) in order.iter().zip(&values) {
        steps.push(GreedyStep {
            chosen,
            value,
            monotone: criterion.monotone(value, prev),
        });
        prev = value;
    }
    let design = DesignWeights::from_active(q, &order)?;
    let report = criterion_report(&p.with_design(design.clone())?, criterion)?;
    Ok(GreedyResult {
        design,
        order,
        initial_value,
        steps,
        report,
    })
}

fn criterion_report(p: &InverseProblem, criterion: DesignCriterion) -> Result<CriterionReport> {
    match criterion {
        DesignCriterion::D => expected_info_gain(p),
        DesignCriterion::A => bayes_risk(p),
    }
}

/// Lowest-index best entry among `(index, value)` pairs in index order.
fn pick(scores: &[(usize, f64)], criterion: DesignCriterion) -> (usize, f64) {
    let mut best = scores[0];
    for &(j, v) in &scores[1..] {
        if criterion.improves(v, best.1) {
            best = (j, v);
        }
    }
    best
}

fn greedy_recompute(
    p: &InverseProblem,
    k: usize,
    criterion: DesignCriterion,
    _initial: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let q = p.q();
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let scores: Vec<(usize, f64)> = (0..q)
            .into_par_iter()
            .filter(|j| !order.contains(j))
            .map(|j| {
                let mut trial = order.clone();
                trial.push(j);
                let design = DesignWeights::from_active(q, &trial)?;
                Ok((j, criterion_report(&p.with_design(design)?, criterion)?.value))
            })
            .collect::<Result<_>>()?;
        let (j, v) = pick(&scores, criterion);
        order.push(j);
        values.push(v);
    }
    Ok((order, values))
}

/// Whitened candidate rows `G_j / sigma_j`, ignoring the problem's current design.
fn candidate_rows(p: &InverseProblem) -> Result<DMatrix<f64>> {
    let mut f = p.forward().to_dense()?;
    for (j, var) in p.noise_var().iter().enumerate() {
        f.row_mut(j).scale_mut(1.0 / var.sqrt());
    }
    Ok(f)
}

fn greedy_rank_one(
    p: &InverseProblem,
    k: usize,
    criterion: DesignCriterion,
    initial: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let space = p.space();
    let mass = space.mass();
    let n = space.dim();
    let f = candidate_rows(p)?;
    // Riesz representers of the candidate functionals, one per column
    let reps = DMatrix::from_fn(n, f.nrows(), |i, j| f[(j, i)] / mass[i]);
    let mut cov = p.prior().spectrum()?.to_dense();
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let mut current = initial;
    for _ in 0..k {
        let scores: Vec<(usize, f64, DVector<f64>, f64)> = (0..f.nrows())
            .into_par_iter()
            .filter(|j| !order.contains(j))
            .map(|j| {
                let g = &cov * reps.column(j);
                let s = f.row(j).dot(&g.transpose());
                let value = match criterion {
                    DesignCriterion::D => current + 0.5 * s.ln_1p(),
                    DesignCriterion::A => current - space.norm_sq(&g) / (1.0 + s),
                };
                (j, value, g, s)
            })
            .collect();
        let flat: Vec<(usize, f64)> = scores.iter().map(|(j, v, _, _)| (*j, *v)).collect();
        let (j, v) = pick(&flat, criterion);
        let (_, _, g, s) = scores.into_iter().find(|c| c.0 == j).expect("picked from scores");
        // C' = C - g <g, .> / (1 + s)
        let lowered = space.lower(&g);
        cov -= (&g * lowered.transpose()) / (1.0 + s);
        order.push(j);
        values.push(v);
        current = v;
    }
    Ok((order, values))
}

/// Criterion value of the binary design with `active` candidates, from the
/// data-space Gram matrices of the candidate rows.
pub fn design_value(p: &InverseProblem, active: &[usize], criterion: DesignCriterion) -> Result<f64> {
    let grams = Grams::new(p)?;
    grams.value(active, criterion)
}

/// `A0 = F C F*` and `B0 = (C F*)* (C F*)` over all candidates.
struct Grams {
    a0: DMatrix<f64>,
    b0: DMatrix<f64>,
    tr_prior: f64,
}

impl Grams {
    fn new(p: &InverseProblem) -> Result<Self> {
        let space = p.space();
        let mass = space.mass();
        let f = candidate_rows(p)?;
        let spec = p.prior().spectrum()?;
        let cov = spec.to_dense();
        let reps = DMatrix::from_fn(space.dim(), f.nrows(), |i, j| f[(j, i)] / mass[i]);
        let x = cov * reps;
        let a0 = &f * &x;
        let mx = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * mass[i]);
        let b0 = x.transpose() * mx;
        Ok(Self {
            a0: (&a0 + a0.transpose()) * 0.5,
            b0: (&b0 + b0.transpose()) * 0.5,
            tr_prior: spec.sum(),
        })
    }

    fn value(&self, active: &[usize], criterion: DesignCriterion) -> Result<f64> {
        let r = active.len();
        if r == 0 {
            return Ok(match criterion {
                DesignCriterion::D => 0.0,
                DesignCriterion::A => self.tr_prior,
            });
        }
        let mut m = DMatrix::from_fn(r, r, |i, j| self.a0[(active[i], active[j])]);
        for i in 0..r {
            m[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(m).ok_or(Error::Indefinite { value: f64::NAN })?;
        Ok(match criterion {
            DesignCriterion::D => chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            DesignCriterion::A => {
                let b = DMatrix::from_fn(r, r, |i, j| self.b0[(active[i], active[j])]);
                self.tr_prior - chol.solve(&b).trace()
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExhaustiveResult {
    pub best: Vec<usize>,
    pub value: f64,
    /// Every `k`-subset in lexicographic order with its criterion value.
    pub values: Vec<(Vec<usize>, f64)>,
}

/// Largest candidate count accepted by [`exhaustive_design`].
pub const EXHAUSTIVE_LIMIT: usize = 15;

/// Optimum over all `k`-subsets; ties go to the lexicographically first.
pub fn exhaustive_design(p: &InverseProblem, k: usize, criterion: DesignCriterion) -> Result<ExhaustiveResult> {
    let q = p.q();
    if k > q {
        return Err(Error::DesignSize { k, candidates: q });
    }
    if q > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "exhaustive search supports at most {EXHAUSTIVE_LIMIT} candidates, got {q}"
        )));
    }
    let grams = Grams::new(p)?;
    let values: Vec<(Vec<usize>, f64)> = (0..q)
        .combinations(k)
        .map(|s| grams.value(&s, criterion).map(|v| (s, v)))
        .collect::<Result<_>>()?;
    let scores: Vec<(usize, f64)> = values.iter().enumerate().map(|(i, (_, v))| (i, *v)).collect();
    let (i, value) = pick(&scores, criterion);
    Ok(ExhaustiveResult {
        best: values[i].0.clone(),
        value,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianMeasure;
    use crate::hilbert::{OpExpr, Space};

    fn problem(rows: &[f64], q: usize) -> InverseProblem {
        let n = rows.len() / q;
        let s = Space::uniform(n, 0.5).unwrap();
        let prior = GaussianMeasure::centered(
            OpExpr::diagonal(DVector::from_fn(n, |i, _| 1.0 / (1.0 + i as f64)), s.clone()).unwrap(),
        )
        .unwrap();
        let g = DMatrix::from_row_slice(q, n, rows);
        let fwd = OpExpr::dense(g, s, Space::euclidean(q)).unwrap();
        InverseProblem::new(prior, fwd, DVector::from_element(q, 0.5)).unwrap()
    }

    #[test]
    fn identical_rows_tie_to_lowest_index() {
        let p = problem(&[0.0, 1.0, 1.0, 0.0, 1.0, 1.0], 2);
        for c in [DesignCriterion::D, DesignCriterion::A] {
            for path in [GreedyPath::RankOne, GreedyPath::Recompute] {
                assert_eq!(greedy_design_with(&p, 1, c, path).unwrap().order, vec![0]);
            }
        }
    }

    #[test]
    fn full_selection_matches_full_design() {
        let p = problem(&[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 3.0, 1.0, 0.0], 3);
        let g = greedy_design(&p, 3, DesignCriterion::D).unwrap();
        assert_eq!(g.design.active(), vec![0, 1, 2]);
        let full = expected_info_gain(&p).unwrap().value;
        assert!((g.value() - full).abs() < 1e-12);
        assert!((g.report.value - full).abs() < 1e-12);
    }

    #[test]
    fn too_many_sensors() {
        let p = problem(&[1.0, 0.0], 1);
        assert!(matches!(
            greedy_design(&p, 2, DesignCriterion::D),
            Err(Error::DesignSize { k: 2, candidates: 1 })
        ));
    }

    #[test]
    fn empty_design() {
        let p = problem(&[1.0, 0.0], 1);
        let g = greedy_design(&p, 0, DesignCriterion::D).unwrap();
        assert!(g.steps.is_empty());
        assert_eq!(g.value(), 0.0);
    }
}
