//! Configuration files, the experiment driver and post-hoc diagnostics.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{autocorrelation, iact, lag1_by_component, median};
use crate::error::{Error, Result};
use crate::io::{read_matrix, read_trace, write_lis, write_observations, write_vector, SampleWriter, TraceWriter};
use crate::lowrank::{EigSolver, LowRankEig, Thresholds};
use crate::model::{BayesModel, ForwardMap};
use crate::problems::diffusion::{diffusion_model, diffusion_start};
use crate::problems::elliptic::elliptic_model;
use crate::problems::NoiseLevel;
use crate::proposals::ProposalKind;
use crate::samplers::{run_sampler, AdaptationSchedule, IterationRecord, LisSource, RunReport, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Elliptic,
    Diffusion,
}

fn default_thin() -> usize {
    10
}

fn default_burn_in() -> f64 {
    0.5
}

fn default_max_lag() -> usize {
    100
}

/// An experiment as read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    /// Grid cells per side (elliptic) or time steps (diffusion).
    pub resolution: Option<usize>,
    pub proposal: ProposalKind,
    pub iterations: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dt_lis: Option<f64>,
    pub dt_cs: Option<f64>,
    pub pcn_a: Option<f64>,
    pub n_lag: Option<usize>,
    pub n_b: Option<usize>,
    pub n_max: Option<usize>,
    pub delta_lis: Option<f64>,
    pub lis_source: Option<LisSource>,
    pub preliminary_iterations: Option<usize>,
    pub tol_local: Option<f64>,
    pub tol_global: Option<f64>,
    pub tol_store: Option<f64>,
    pub eig_solver: Option<EigSolver>,
    pub cov_prior_weight: Option<f64>,
    /// Signal-to-noise ratio of the synthetic data. Exclusive with `noise_sigma`.
    pub snr: Option<f64>,
    pub noise_sigma: Option<f64>,
    /// Seed of the synthetic observation noise; defaults to `seed`.
    pub data_seed: Option<u64>,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    /// Store every `thin`-th state in the sample file.
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution.unwrap_or(match self.problem {
            ProblemKind::Elliptic => 40,
            ProblemKind::Diffusion => 1000,
        })
    }

    pub fn noise(&self) -> NoiseLevel {
        match (self.snr, self.noise_sigma) {
            (_, Some(s)) => NoiseLevel::Sigma(s),
            (Some(s), None) => NoiseLevel::Snr(s),
            (None, None) => match self.problem {
                ProblemKind::Elliptic => NoiseLevel::Snr(10.0),
                ProblemKind::Diffusion => NoiseLevel::Sigma(0.1),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("key `{key}`: {msg}")));
        if self.resolution == Some(0) {
            return bad("resolution", "must be at least 1");
        }
        if self.thin == 0 {
            return bad("thin", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad("burn_in_fraction", "must lie in [0, 1)");
        }
        if self.snr.is_some() && self.noise_sigma.is_some() {
            return bad("snr", "give either `snr` or `noise_sigma`, not both");
        }
        for (key, v) in [("snr", self.snr), ("noise_sigma", self.noise_sigma)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(key, "must be positive");
                }
            }
        }
        for (key, v) in [("dt_lis", self.dt_lis), ("dt_cs", self.dt_cs)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(key, "must be positive");
                }
            }
        }
        if let Some(a) = self.pcn_a {
            if !(-1.0..1.0).contains(&a) || a <= -1.0 {
                return bad("pcn_a", "must lie in (-1, 1)");
            }
        }
        for (key, v) in [("n_lag", self.n_lag), ("n_b", self.n_b)] {
            if v == Some(0) {
                return bad(key, "must be at least 1");
            }
        }
        for (key, v) in [
            ("delta_lis", self.delta_lis),
            ("tol_local", self.tol_local),
            ("tol_global", self.tol_global),
            ("tol_store", self.tol_store),
            ("cov_prior_weight", self.cov_prior_weight),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(key, "must be nonnegative");
                }
            }
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let mut s = SamplerConfig::new(self.proposal, self.iterations);
        s.dt_lis = self.dt_lis.unwrap_or(s.dt_lis);
        s.dt_cs = self.dt_cs.unwrap_or(s.dt_cs);
        s.pcn_a = self.pcn_a.unwrap_or(s.pcn_a);
        let d = AdaptationSchedule::default();
        s.schedule = AdaptationSchedule {
            n_lag: self.n_lag.unwrap_or(d.n_lag),
            n_b: self.n_b.unwrap_or(d.n_b),
            n_max: self.n_max.unwrap_or(d.n_max),
            delta_lis: self.delta_lis.unwrap_or(d.delta_lis),
            lis_source: self.lis_source.unwrap_or(d.lis_source),
            preliminary_iterations: self.preliminary_iterations.unwrap_or(d.preliminary_iterations),
        };
        let t = Thresholds::default();
        s.thresholds = Thresholds {
            local: self.tol_local.unwrap_or(t.local),
            global: self.tol_global.unwrap_or(t.global),
            store: self.tol_store.unwrap_or(t.store),
        };
        s.eig.solver = self.eig_solver.unwrap_or(s.eig.solver);
        s.cov_prior_weight = self.cov_prior_weight.unwrap_or(s.cov_prior_weight);
        s
    }
}

/// Post-hoc chain diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    /// Trace rows discarded as burn-in.
    pub burn_in: usize,
    /// Post-burn-in trace rows.
    pub trace_length: usize,
    pub acceptance_rate: Option<f64>,
    pub acceptance_rate_cs: Option<f64>,
    pub omf_acf: Option<Vec<f64>>,
    pub omf_degenerate: Option<bool>,
    pub omf_iact: Option<f64>,
    pub omf_ess: Option<f64>,
    /// Stored samples after burn-in.
    pub samples_used: usize,
    pub lag1: Vec<f64>,
    pub lag1_degenerate: usize,
    pub lag1_median: f64,
    pub lis_dim_trace: Vec<(usize, usize)>,
    pub d_f_trace: Vec<(usize, f64)>,
}

/// Compute diagnostics from a stored sample matrix (columns are states) and
/// an optional scalar trace. The first `burn_in_fraction` of each is dropped.
pub fn diagnose(samples: &DMatrix<f64>, trace: Option<&[IterationRecord]>, burn_in_fraction: f64, max_lag: usize) -> Result<DiagnosticsReport> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidParameter(format!("burn-in fraction {burn_in_fraction} outside [0, 1)")));
    }
    let skip = |n: usize| (burn_in_fraction * n as f64).floor() as usize;
    let s0 = skip(samples.ncols());
    let kept = samples.columns(s0, samples.ncols() - s0).into_owned();
    let (lag1, lag1_degenerate) = if kept.ncols() >= 2 {
        let l = lag1_by_component(&kept, None)?;
        let count = l.degenerate.iter().filter(|&&d| d).count();
        (l.values, count)
    } else {
        (Vec::new(), 0)
    };
    let mut report = DiagnosticsReport {
        burn_in: 0,
        trace_length: 0,
        acceptance_rate: None,
        acceptance_rate_cs: None,
        omf_acf: None,
        omf_degenerate: None,
        omf_iact: None,
        omf_ess: None,
        samples_used: kept.ncols(),
        lag1_median: median(&lag1),
        lag1,
        lag1_degenerate,
        lis_dim_trace: Vec::new(),
        d_f_trace: Vec::new(),
    };
    if let Some(trace) = trace {
        let t0 = skip(trace.len());
        let post = &trace[t0..];
        report.burn_in = t0;
        report.trace_length = post.len();
        if !post.is_empty() {
            let n = post.len() as f64;
            report.acceptance_rate = Some(post.iter().filter(|r| r.accepted).count() as f64 / n);
            if post[0].accepted_cs.is_some() {
                report.acceptance_rate_cs = Some(post.iter().filter(|r| r.accepted_cs == Some(true)).count() as f64 / n);
            }
        }
        let omf: Vec<f64> = post.iter().map(|r| r.omf).collect();
        if omf.len() > max_lag.max(3) {
            let acf = autocorrelation(&omf, max_lag)?;
            let tau = iact(&omf)?;
            report.omf_degenerate = Some(acf.degenerate);
            report.omf_acf = Some(acf.values);
            report.omf_iact = Some(tau);
            report.omf_ess = Some(omf.len() as f64 / tau);
        }
        for (i, r) in trace.iter().enumerate() {
            if i == 0 || r.lis_dim != trace[i - 1].lis_dim {
                report.lis_dim_trace.push((r.iteration, r.lis_dim));
            }
            let prev = if i == 0 { None } else { Some(trace[i - 1].d_f) };
            if !r.d_f.is_nan() && prev.is_none_or(|p| p.to_bits() != r.d_f.to_bits()) {
                report.d_f_trace.push((r.iteration, r.d_f));
            }
        }
    }
    Ok(report)
}

/// Diagnostics from files written by [`run_experiment`].
pub fn diagnose_files(samples: &Path, trace: Option<&Path>, burn_in_fraction: f64, max_lag: usize) -> Result<DiagnosticsReport> {
    let m = read_matrix(samples)?;
    let t = trace.map(read_trace).transpose()?;
    diagnose(&m, t.as_deref(), burn_in_fraction, max_lag)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dimension: usize,
    pub observations: usize,
    pub noise_sigma: f64,
    pub run: RunReport,
    pub diagnostics: DiagnosticsReport,
    pub stored_samples: u64,
    pub seconds: f64,
}

/// Output file names inside the experiment directory.
pub mod files {
    pub const TRACE: &str = "trace.csv";
    pub const SAMPLES: &str = "samples.bin";
    pub const LIS: &str = "lis.bin";
    pub const TRUTH: &str = "truth.bin";
    pub const MAP: &str = "map.bin";
    pub const OBSERVATIONS: &str = "observations.csv";
    pub const REPORT: &str = "report.json";
}

fn execute<F: ForwardMap>(
    cfg: &ExperimentConfig,
    model: &BayesModel<F>,
    truth: &DVector<f64>,
    noise_sigma: f64,
    map_init: Option<DVector<f64>>,
) -> Result<ExperimentReport> {
    let start = std::time::Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    write_vector(&dir.join(files::TRUTH), truth)?;
    write_observations(&dir.join(files::OBSERVATIONS), &model.observations)?;

    let mut sampler = cfg.sampler_config();
    sampler.map_init = map_init;
    let mut trace = TraceWriter::create(&dir.join(files::TRACE), cfg.proposal.is_gibbs())?;
    let mut samples = SampleWriter::create(&dir.join(files::SAMPLES), model.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut stored = Vec::new();
    let out = run_sampler(model, &sampler, &mut rng, |rec, v| {
        trace.push(rec)?;
        records.push(*rec);
        if rec.iteration % cfg.thin == 0 {
            samples.push(v)?;
            stored.extend_from_slice(v.as_slice());
        }
        Ok(())
    })?;
    trace.finish()?;
    let stored_samples = samples.finish()?;

    if let Some(map) = &out.report.map {
        write_vector(&dir.join(files::MAP), &map.v)?;
    }
    let lis = out.lis.as_ref().map_or_else(|| LowRankEig::empty(model.dim()), |s| s.lis.clone());
    write_lis(&dir.join(files::LIS), &lis)?;

    let sample_matrix = DMatrix::from_vec(model.dim(), stored_samples as usize, stored);
    let diagnostics = diagnose(&sample_matrix, Some(&records), cfg.burn_in_fraction, cfg.max_lag)?;
    let report = ExperimentReport {
        config: cfg.clone(),
        dimension: model.dim(),
        observations: model.n_obs(),
        noise_sigma,
        run: out.report,
        diagnostics,
        stored_samples,
        seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(dir.join(files::REPORT), json + "\n")?;
    Ok(report)
}

/// Build the configured problem, run the sampler and write every output file.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data_seed = cfg.data_seed.unwrap_or(cfg.seed);
    let n = cfg.resolution();
    match cfg.problem {
        ProblemKind::Elliptic => {
            let (model, truth) = elliptic_model(n, cfg.noise(), data_seed)?;
            let sigma = model.observations.noise_var()[0].sqrt();
            execute(cfg, &model, &truth, sigma, None)
        }
        ProblemKind::Diffusion => {
            let (model, truth) = diffusion_model(n, cfg.noise(), data_seed)?;
            let sigma = model.observations.noise_var()[0].sqrt();
            let start = diffusion_start(&model)?;
            execute(cfg, &model, &truth, sigma, Some(start))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LisInfo {
    pub dimension: usize,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    /// `max |ΨᵀΨ − I|`.
    pub orthonormality_error: f64,
}

pub fn lis_info(path: &Path) -> Result<LisInfo> {
    let lis = crate::io::read_lis(path)?;
    Ok(LisInfo {
        dimension: lis.dim(),
        rank: lis.rank(),
        eigenvalues: lis.values.iter().copied().collect(),
        orthonormality_error: crate::linalg::orthonormality_error(&lis.basis),
    })
}
