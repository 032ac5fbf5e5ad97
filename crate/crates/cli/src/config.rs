//! The experiment file: one TOML document with a `[model]` table and one
//! table per subcommand. Every field has a default, so an empty file is the
//! reference configuration.

use std::path::{Path, PathBuf};

use oed_core::models::{equispaced_sensors, HeatModelConfig, NoiseSigma};
use oed_core::oed::DesignCriterion;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Output directory; `--out` overrides it. Not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub model: HeatModelConfig,
    pub criteria: CriteriaConfig,
    pub validate: ValidateConfig,
    pub design: DesignConfig,
    pub refine: RefineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    /// Relative eigenvalue cutoff for the low-rank EIG column.
    pub lowrank_tol: f64,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self { lowrank_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Joint `(u, y)` samples for the EIG, Bayes-risk and double-expectation rows.
    pub samples: usize,
    /// Data samples at the fixed truth for the MSE row.
    pub mse_samples: usize,
    /// Prior samples for the normalizing-constant row.
    pub z0_samples: usize,
    /// Monte Carlo rows pass when `|closed - mean| <= n_se * SE`.
    pub n_se: f64,
    /// Data vectors for the KL rows.
    pub kl_data: usize,
    pub kl_tol: f64,
    pub lowrank_tol: f64,
    pub lowrank_max_err: f64,
    pub fd_step: f64,
    pub fd_directions: usize,
    pub gradient_tol: f64,
    pub adjoint_tol: f64,
    pub variance_tol: f64,
    /// Model for the normalizing constant, small enough that `exp(-Phi)` has
    /// a usable Monte Carlo variance.
    pub z0_model: HeatModelConfig,
    /// Negative control: drops the factor one half from the closed-form EIG.
    pub corrupt: bool,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            samples: 4000,
            mse_samples: 100_000,
            z0_samples: 1_000_000,
            n_se: 3.0,
            kl_data: 20,
            kl_tol: 1e-8,
            lowrank_tol: 1e-8,
            lowrank_max_err: 1e-6,
            fd_step: 1e-5,
            fd_directions: 20,
            gradient_tol: 1e-6,
            adjoint_tol: 1e-12,
            variance_tol: 1e-10,
            z0_model: HeatModelConfig {
                n: 8,
                sensors: equispaced_sensors(2, 1.0),
                sigma: NoiseSigma::Uniform(0.5),
                ..Default::default()
            },
            corrupt: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    D,
    A,
}

impl From<Criterion> for DesignCriterion {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::D => DesignCriterion::D,
            Criterion::A => DesignCriterion::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Explicit candidate locations; when absent, `num_candidates`
    /// equispaced points are used.
    pub candidates: Option<Vec<f64>>,
    pub num_candidates: usize,
    pub k: usize,
    pub criterion: Criterion,
    /// Also enumerate every `k`-subset and report the greedy gap.
    pub exhaustive: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            candidates: None,
            num_candidates: 10,
            k: 3,
            criterion: Criterion::D,
            exhaustive: true,
        }
    }
}

impl DesignConfig {
    pub fn candidate_locations(&self, length: f64) -> Vec<f64> {
        self.candidates
            .clone()
            .unwrap_or_else(|| equispaced_sensors(self.num_candidates, length))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub grids: Vec<usize>,
    /// Relative change between the two finest grids counted as stable.
    pub stability_tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            grids: vec![32, 64, 128, 256],
            stability_tol: 0.01,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.validate.z0_model.validate()?;
        let v = &self.validate;
        for (name, n) in [
            ("validate.samples", v.samples),
            ("validate.mse_samples", v.mse_samples),
            ("validate.z0_samples", v.z0_samples),
        ] {
            if n < 2 {
                return Err(CliError::Config(format!("{name} must be at least 2, got {n}")));
            }
        }
        for (name, x) in [
            ("criteria.lowrank_tol", self.criteria.lowrank_tol),
            ("validate.n_se", v.n_se),
            ("validate.fd_step", v.fd_step),
            ("validate.lowrank_tol", v.lowrank_tol),
            ("refine.stability_tol", self.refine.stability_tol),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(CliError::Config(format!("{name} must be positive, got {x}")));
            }
        }
        if self.refine.grids.is_empty() {
            return Err(CliError::Config("refine.grids must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration, so
    /// formatting and comments in the file do not change it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
