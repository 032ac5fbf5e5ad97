//! A 1D reference problem: recover the initial temperature of a rod from a few
//! point sensors read after diffusion.
//!
//! The grid has `n` interior points with homogeneous Dirichlet ends, the prior
//! covariance is `(delta I - gamma Laplacian)^{-2}`, and the forward map is
//! implicit-Euler heat propagation followed by linear interpolation at the
//! sensors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::hilbert::{OpExpr, Space};
use crate::inverse::InverseProblem;
use crate::rng;

/// Noise standard deviation: one value for every sensor, or one per sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSigma {
    Uniform(f64),
    PerSensor(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatModelConfig {
    /// Interior grid points.
    pub n: usize,
    pub length: f64,
    pub kappa: f64,
    pub final_time: f64,
    /// Implicit Euler steps; zero means the sensors read the initial state.
    pub n_steps: usize,
    pub gamma: f64,
    pub delta: f64,
    pub sensors: Vec<f64>,
    pub sigma: NoiseSigma,
}

impl Default for HeatModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            length: 1.0,
            kappa: 0.01,
            final_time: 0.1,
            n_steps: 50,
            gamma: 1e-2,
            delta: 1.0,
            sensors: equispaced_sensors(5, 1.0),
            sigma: NoiseSigma::Uniform(0.05),
        }
    }
}

/// `count` sensors at `j L / (count + 1)`, `j = 1..=count`.
pub fn equispaced_sensors(count: usize, length: f64) -> Vec<f64> {
    (1..=count).map(|j| j as f64 * length / (count + 1) as f64).collect()
}

impl HeatModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 4 {
            return bad(format!("grid size {} is below the minimum of 4", self.n));
        }
        for (name, v) in [
            ("length", self.length),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.final_time.is_finite() && self.final_time >= 0.0) {
            return bad(format!("final_time must be non-negative, got {}", self.final_time));
        }
        if self.final_time > 0.0 && self.n_steps == 0 {
            return bad("n_steps must be at least 1 when final_time > 0".into());
        }
        if let Some(s) = self.sensors.iter().find(|&&s| !(s > 0.0 && s < self.length)) {
            return bad(format!("sensor location {s} is not strictly inside (0, {})", self.length));
        }
        let sig = self.sigmas()?;
        if let Some(s) = sig.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return bad(format!("noise sigma {s} must be positive"));
        }
        Ok(())
    }

    pub fn sigmas(&self) -> Result<Vec<f64>> {
        match &self.sigma {
            NoiseSigma::Uniform(s) => Ok(vec![*s; self.sensors.len()]),
            NoiseSigma::PerSensor(v) if v.len() == self.sensors.len() => Ok(v.clone()),
            NoiseSigma::PerSensor(v) => Err(Error::InvalidConfig(format!(
                "{} noise sigmas for {} sensors",
                v.len(),
                self.sensors.len()
            ))),
        }
    }

    pub fn noise_var(&self) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(
            self.sensors.len(),
            self.sigmas()?.into_iter().map(|s| s * s),
        ))
    }

    pub fn h(&self) -> f64 {
        self.length / (self.n + 1) as f64
    }
}

/// `n` interior points of `(0, L)` with uniform weight `h = L / (n + 1)`.
pub fn build_grid(n: usize, length: f64) -> Result<Space> {
    if n < 4 {
        return Err(Error::InvalidConfig(format!("grid size {n} is below the minimum of 4")));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidConfig(format!("domain length {length} must be positive")));
    }
    Space::uniform(n, length / (n + 1) as f64)
}

/// Interior node coordinates `x_i = (i + 1) h`.
pub fn grid_points(space: &Space) -> Vec<f64> {
    let h = space.mass()[0];
    (0..space.dim()).map(|i| (i + 1) as f64 * h).collect()
}

/// Dirichlet finite-difference Laplacian `(u_{i-1} - 2 u_i + u_{i+1}) / h^2`.
pub fn laplacian(n: usize, h: f64) -> DMatrix<f64> {
    let c = 1.0 / (h * h);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -2.0 * c
        } else if i.abs_diff(j) == 1 {
            c
        } else {
            0.0
        }
    })
}

/// Eigenvalues `(2 / h^2)(1 - cos(k pi h / L))`, `k = 1..=n`, of `-Laplacian`.
pub fn laplacian_eigenvalues(n: usize, length: f64) -> Vec<f64> {
    let h = length / (n + 1) as f64;
    (1..=n)
        .map(|k| 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h / length).cos()))
        .collect()
}

/// Centered prior with covariance `(delta I - gamma Laplacian)^{-2}`.
pub fn build_prior(space: &Space, gamma: f64, delta: f64) -> Result<GaussianMeasure> {
    if !(gamma > 0.0 && delta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "prior parameters must be positive (gamma {gamma}, delta {delta})"
        )));
    }
    let n = space.dim();
    let h = space.mass()[0];
    let elliptic = OpExpr::dense_square(laplacian(n, h) * -gamma, space.clone())?;
    let inv = OpExpr::shifted_inverse(elliptic, delta)?;
    GaussianMeasure::centered(OpExpr::compose(vec![inv.clone(), inv])?)
}

/// Linear-interpolation rows: row `j` reads the field at `sensors[j]`, with
/// the zero boundary values at `0` and `L`.
pub fn observation_rows(space: &Space, sensors: &[f64]) -> DMatrix<f64> {
    let n = space.dim();
    let h = space.mass()[0];
    let mut b = DMatrix::zeros(sensors.len(), n);
    for (row, &s) in sensors.iter().enumerate() {
        // position in the full node numbering 0..=n+1 (nodes 0 and n+1 are the boundary)
        let t = s / h;
        let k = (t.floor() as usize).min(n);
        let w = t - k as f64;
        if k >= 1 {
            b[(row, k - 1)] += 1.0 - w;
        }
        if k < n {
            b[(row, k)] += w;
        }
    }
    b
}

/// Solves `(I - dt kappa Laplacian) x = rhs` in place (Thomas algorithm).
fn implicit_euler_step(rhs: &mut [f64], r: f64, scratch: &mut [f64]) {
    // matrix: diag 1 + 2r, off-diagonals -r
    let n = rhs.len();
    let (a, b) = (-r, 1.0 + 2.0 * r);
    scratch[0] = a / b;
    rhs[0] /= b;
    for i in 1..n {
        let m = b - a * scratch[i - 1];
        scratch[i] = a / m;
        rhs[i] = (rhs[i] - a * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Applies the implicit-Euler propagator over the configured horizon.
pub fn propagate(space: &Space, cfg: &HeatModelConfig, u: &DVector<f64>) -> Result<DVector<f64>> {
    space.check(u)?;
    let mut x: Vec<f64> = u.iter().copied().collect();
    if cfg.n_steps > 0 && cfg.final_time > 0.0 {
        let h = space.mass()[0];
        let r = cfg.kappa * cfg.final_time / cfg.n_steps as f64 / (h * h);
        let mut scratch = vec![0.0; x.len()];
        for _ in 0..cfg.n_steps {
            implicit_euler_step(&mut x, r, &mut scratch);
        }
    }
    Ok(DVector::from_vec(x))
}

/// `G = B S_T`. The propagator is symmetric, so each row of `G` is the
/// propagated interpolation row.
pub fn build_forward(space: &Space, cfg: &HeatModelConfig) -> Result<OpExpr> {
    let b = observation_rows(space, &cfg.sensors);
    let mut g = DMatrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.nrows() {
        let row = propagate(space, cfg, &b.row(j).transpose())?;
        g.set_row(j, &row.transpose());
    }
    OpExpr::dense(g, space.clone(), Space::euclidean(cfg.sensors.len()))
}

/// A heat-model problem with a synthetic truth.
#[derive(Clone, Debug)]
pub struct HeatProblem {
    pub problem: InverseProblem,
    pub u_true: DVector<f64>,
    pub data: DVector<f64>,
}

/// Assembles the problem, draws `u_true` from the prior (stream 1 of `seed`)
/// and simulates data from it (stream 0).
pub fn build_problem(cfg: &HeatModelConfig, seed: u64) -> Result<HeatProblem> {
    cfg.validate()?;
    let space = build_grid(cfg.n, cfg.length)?;
    let prior = build_prior(&space, cfg.gamma, cfg.delta)?;
    let forward = build_forward(&space, cfg)?;
    let problem = InverseProblem::new(prior, forward, cfg.noise_var()?)?;
    let u_true = problem.prior().sample_with(&mut rng::stream_rng(seed, 1))?;
    let data = problem.simulate_data(&u_true, seed)?;
    Ok(HeatProblem { problem, u_true, data })
}
