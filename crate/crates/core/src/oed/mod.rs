//! Design criteria, their Monte Carlo oracles and sensor selection.
//!
//! All values are in nats. Criteria are computed for the problem's current
//! design weights; [`greedy_design`] and [`exhaustive_design`] search over
//! the candidate rows of the forward map.

mod criteria;
mod design;
mod mc;

pub use criteria::{
    bayes_risk, expected_info_gain, expected_info_gain_lowrank, kl_post_prior, mse_map, naive_logdet_cpost,
    trace_pp_hessian, trace_s_pp_squared, z0, CriterionReport, KlForm, MseDecomposition,
};
pub use design::{
    design_value, exhaustive_design, greedy_design, greedy_design_with, DesignCriterion, ExhaustiveResult, GreedyPath,
    GreedyResult, GreedyStep, EXHAUSTIVE_LIMIT, RANK_ONE_LIMIT,
};
pub use mc::{closed_form, mc_oracle, McTarget};

pub use crate::inverse::DesignWeights;
