//! Conditioned diffusion: infer the driving Brownian path of
//! `dp = f(p) dt + du`, `f(p) = βp(1 − p²)/(1 + p²)`, from noisy
//! observations of `p`, integrated by Euler–Maruyama.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::standard_normal;
use crate::model::{BayesModel, ForwardMap};
use crate::prior::{CovarianceSpec, PriorFactor};
use crate::problems::{synthesize_data, NoiseLevel};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    /// Number of time steps; the parameter dimension.
    pub steps: usize,
    pub horizon: f64,
    pub beta: f64,
    pub n_obs: usize,
    pub p0: f64,
}

impl DiffusionConfig {
    pub fn new(steps: usize) -> Self {
        Self { steps, horizon: 10.0, beta: 10.0, n_obs: 20, p0: 0.0 }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i = i T / n_obs`, `i = 1..=n_obs`.
    pub fn observation_times(&self) -> Vec<f64> {
        (1..=self.n_obs).map(|i| self.horizon * i as f64 / self.n_obs as f64).collect()
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::new(1000)
    }
}

pub fn drift(beta: f64, p: f64) -> f64 {
    let p2 = p * p;
    beta * p * (1.0 - p2) / (1.0 + p2)
}

pub fn drift_derivative(beta: f64, p: f64) -> f64 {
    let p2 = p * p;
    beta * (1.0 - 4.0 * p2 - p2 * p2) / ((1.0 + p2) * (1.0 + p2))
}

/// Forward map from the Brownian path `u_1..u_N` to `p` at the observation times.
#[derive(Debug, Clone)]
pub struct DiffusionForward {
    config: DiffusionConfig,
    /// Linear interpolation weights on path indices `0..=N`.
    readout: Vec<[(usize, f64); 2]>,
}

impl DiffusionForward {
    pub fn new(config: &DiffusionConfig) -> Result<Self> {
        if config.steps == 0 || !(config.horizon > 0.0) {
            return Err(Error::InvalidParameter("diffusion needs a positive horizon and at least one step".into()));
        }
        let dt = config.dt();
        let readout = config
            .observation_times()
            .into_iter()
            .map(|t| {
                let x = t / dt;
                let k0 = (x.floor() as usize).min(config.steps - 1);
                let frac = (x - k0 as f64).clamp(0.0, 1.0);
                [(k0, 1.0 - frac), (k0 + 1, frac)]
            })
            .collect();
        Ok(Self { config: config.clone(), readout })
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    /// Full path `p_0..p_N` for the Brownian path `u_1..u_N`.
    pub fn path(&self, u: &DVector<f64>) -> Vec<f64> {
        let dt = self.config.dt();
        let beta = self.config.beta;
        let mut p = Vec::with_capacity(u.len() + 1);
        p.push(self.config.p0);
        let mut prev_u = 0.0;
        for k in 0..u.len() {
            let last = p[k];
            p.push(last + drift(beta, last) * dt + (u[k] - prev_u));
            prev_u = u[k];
        }
        p
    }

    /// Brownian path that drives the recursion through `p_0..p_N` exactly.
    pub fn input_for_path(&self, path: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.config.steps + 1, path.len())?;
        let dt = self.config.dt();
        let mut u = DVector::zeros(self.config.steps);
        let mut acc = 0.0;
        for k in 0..self.config.steps {
            acc += path[k + 1] - path[k] - drift(self.config.beta, path[k]) * dt;
            u[k] = acc;
        }
        Ok(u)
    }

    /// Input whose path interpolates `y` linearly between observation times,
    /// starting from `p_0`. A starting point for optimization that avoids the
    /// unstable rest state `p ≡ 0`.
    pub fn interpolating_input(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.readout.len(), y.len())?;
        let mut knots = vec![(0.0, self.config.p0)];
        knots.extend(self.config.observation_times().into_iter().zip(y.iter().copied()));
        let dt = self.config.dt();
        let path: Vec<f64> = (0..=self.config.steps)
            .map(|k| {
                let t = k as f64 * dt;
                let j = knots.partition_point(|&(tk, _)| tk <= t).clamp(1, knots.len() - 1);
                let ((t0, y0), (t1, y1)) = (knots[j - 1], knots[j]);
                if t >= t1 {
                    y1
                } else {
                    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
                }
            })
            .collect();
        self.input_for_path(&path)
    }

    fn observe(&self, path: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.readout.len(), self.readout.iter().map(|w| w[0].1 * path[w[0].0] + w[1].1 * path[w[1].0]))
    }
}

impl ForwardMap for DiffusionForward {
    /// The path `p_0..p_N`.
    type Linearization = Vec<f64>;

    fn param_dim(&self) -> usize {
        self.config.steps
    }

    fn output_dim(&self) -> usize {
        self.readout.len()
    }

    fn forward(&self, u: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>)> {
        check_dim(self.config.steps, u.len())?;
        let path = self.path(u);
        if path.iter().any(|x| !x.is_finite()) {
            return Err(Error::Solver("path diverged".into()));
        }
        Ok((self.observe(&path), path))
    }

    fn jacobian_apply(&self, path: &Vec<f64>, du: &DVector<f64>) -> DVector<f64> {
        let dt = self.config.dt();
        let beta = self.config.beta;
        let mut dp = vec![0.0; du.len() + 1];
        let mut prev = 0.0;
        for k in 0..du.len() {
            dp[k + 1] = (1.0 + drift_derivative(beta, path[k]) * dt) * dp[k] + (du[k] - prev);
            prev = du[k];
        }
        self.observe(&dp)
    }

    fn jacobian_adjoint(&self, path: &Vec<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = self.config.steps;
        let dt = self.config.dt();
        let beta = self.config.beta;
        let mut source = vec![0.0; n + 1];
        for (i, pair) in self.readout.iter().enumerate() {
            for &(k, c) in pair {
                source[k] += c * w[i];
            }
        }
        // lam[k] = ∂(wᵀ δy)/∂(increment k), increments indexed 1..=N.
        let mut lam = vec![0.0; n + 2];
        for k in (1..=n).rev() {
            let carry = if k < n { (1.0 + drift_derivative(beta, path[k]) * dt) * lam[k + 1] } else { 0.0 };
            lam[k] = source[k] + carry;
        }
        DVector::from_iterator(n, (1..=n).map(|k| lam[k] - lam[k + 1]))
    }
}

/// Time steps of the fine grid the synthetic data are generated on.
pub const DATA_STEPS: usize = 10_000;
const TRUTH_SEED: u64 = 932;

/// Fixed-seed Brownian path on the data grid, sampled at `t = k T / steps`.
pub fn diffusion_truth(steps: usize) -> DVector<f64> {
    brownian_path(TRUTH_SEED, steps)
}

fn brownian_path(seed: u64, steps: usize) -> DVector<f64> {
    let config = DiffusionConfig::new(DATA_STEPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let increments = standard_normal(&mut rng, DATA_STEPS) * config.dt().sqrt();
    let mut fine = Vec::with_capacity(DATA_STEPS + 1);
    fine.push(0.0);
    for k in 0..DATA_STEPS {
        fine.push(fine[k] + increments[k]);
    }
    let ratio = DATA_STEPS as f64 / steps as f64;
    DVector::from_iterator(
        steps,
        (1..=steps).map(|k| {
            let x = k as f64 * ratio;
            let k0 = (x.floor() as usize).min(DATA_STEPS - 1);
            let f = x - k0 as f64;
            (1.0 - f) * fine[k0] + f * fine[k0 + 1]
        }),
    )
}

/// Whitened starting point for the MAP search (see [`DiffusionForward::interpolating_input`]).
pub fn diffusion_start(model: &BayesModel<DiffusionForward>) -> Result<DVector<f64>> {
    let u = model.forward.interpolating_input(model.observations.y())?;
    Ok(model.prior.whiten_values(&u))
}

pub fn diffusion_prior(config: &DiffusionConfig) -> Result<PriorFactor> {
    PriorFactor::build(&CovarianceSpec::Brownian { dt: config.dt(), steps: config.steps })
}

/// Posterior model with `steps` time steps; data come from the fine-grid truth.
pub fn diffusion_model(steps: usize, noise: NoiseLevel, data_seed: u64) -> Result<(BayesModel<DiffusionForward>, DVector<f64>)> {
    let data_config = DiffusionConfig::new(DATA_STEPS);
    let data_forward = DiffusionForward::new(&data_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let (obs, _) = synthesize_data(&data_forward, &diffusion_truth(DATA_STEPS), noise, &mut rng)?;
    let obs = obs.with_locations(data_config.observation_times().into_iter().map(|t| vec![t]).collect())?;
    let config = DiffusionConfig::new(steps);
    let model = BayesModel::new(diffusion_prior(&config)?, obs, DiffusionForward::new(&config)?)?;
    Ok((model, diffusion_truth(steps)))
}
