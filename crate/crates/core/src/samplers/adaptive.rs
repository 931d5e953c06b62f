//! Adaptive operator-weighted MCMC: all-at-once and Metropolis-within-Gibbs
//! drivers with on-line LIS construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{
    forstner_distance, local_gnh_eig, local_laplace_cov, update_cov, update_lis, CovarianceEstimate, EigOptions,
    ExpectedGnhState, LisState, LowRankCovariance, LowRankEig, Thresholds,
};
use crate::model::{BayesModel, ForwardMap};
use crate::proposals::{
    build_h_langevin, build_li_langevin, build_li_prior, build_mgli, build_pcn, ProposalKind, ProposalOperators,
};
use crate::samplers::{map_estimate, mh_step, ChainState, MapOptions, MapResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LisSource {
    /// Refine the LIS from chain samples.
    #[default]
    Adaptive,
    /// Keep the LIS computed at the MAP point.
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationSchedule {
    /// Iterations between LIS updates.
    pub n_lag: usize,
    /// Iterations between operator refreshes.
    pub n_b: usize,
    /// Maximum number of local Hessian decompositions (the MAP counts as one).
    pub n_max: usize,
    /// Stop adapting once the Förstner distance between successive LIS falls below this.
    pub delta_lis: f64,
    pub lis_source: LisSource,
    /// Iterations of an adaptation-only phase run before the recorded chain.
    /// Zero updates the LIS in line with the recorded chain.
    pub preliminary_iterations: usize,
}

impl Default for AdaptationSchedule {
    fn default() -> Self {
        Self { n_lag: 200, n_b: 50, n_max: 1000, delta_lis: 1e-5, lis_source: LisSource::Adaptive, preliminary_iterations: 0 }
    }
}

impl AdaptationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_lag == 0 || self.n_b == 0 {
            return Err(Error::InvalidParameter("n_lag and n_b must be at least 1".into()));
        }
        if !(self.delta_lis >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta_lis {} must be nonnegative", self.delta_lis)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: ProposalKind,
    /// LIS step size; also the H-Langevin step.
    pub dt_lis: f64,
    /// Complement step size.
    pub dt_cs: f64,
    /// pCN parameter `a`.
    pub pcn_a: f64,
    pub iterations: usize,
    pub schedule: AdaptationSchedule,
    pub thresholds: Thresholds,
    pub eig: EigOptions,
    pub map: MapOptions,
    /// Whitened starting point of the MAP search; zero when absent.
    pub map_init: Option<DVector<f64>>,
    /// Upper bound on the rank of the stored expected Hessian.
    pub rank_cap: usize,
    /// Pseudo-count of the MAP Laplace covariance blended into the sample
    /// covariance when operators are built. Zero uses the raw estimate.
    pub cov_prior_weight: f64,
}

impl SamplerConfig {
    pub fn new(kind: ProposalKind, iterations: usize) -> Self {
        Self {
            kind,
            dt_lis: 0.5,
            dt_cs: 0.5,
            pcn_a: 0.9,
            iterations,
            schedule: AdaptationSchedule::default(),
            thresholds: Thresholds::default(),
            eig: EigOptions::default(),
            map: MapOptions::default(),
            map_init: None,
            rank_cap: 5000,
            cov_prior_weight: 100.0,
        }
    }
}

/// One row of the scalar trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub misfit: f64,
    pub omf: f64,
    pub alpha: f64,
    pub accepted: bool,
    /// Complement step of a Gibbs iteration.
    pub alpha_cs: Option<f64>,
    pub accepted_cs: Option<bool>,
    pub lis_dim: usize,
    pub d_f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub proposal: ProposalKind,
    pub iterations: usize,
    pub accepted: usize,
    pub accepted_cs: Option<usize>,
    pub acceptance_rate: f64,
    pub acceptance_rate_cs: Option<f64>,
    pub likelihood_evaluations: usize,
    pub gradient_evaluations: usize,
    /// Local Hessian decompositions folded into the LIS (including the MAP).
    pub lis_updates: usize,
    /// `(iteration, dimension)` after each LIS change.
    pub lis_dim_trace: Vec<(usize, usize)>,
    /// `(iteration, d_F)` after each LIS update.
    pub d_f_trace: Vec<(usize, f64)>,
    /// Iteration after which the LIS was frozen, if adaptation stopped.
    pub frozen_at: Option<usize>,
    pub map: Option<MapResult>,
    /// `Σ(a_i² + b_i² − 1)²`; nonzero only for non-prior-reversible operators.
    pub condition4_sum: f64,
    /// Operator refreshes rejected by validation; the previous operators were kept.
    pub skipped_refreshes: usize,
    /// First rejected refresh.
    pub refresh_warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub lis: Option<LisState>,
    pub final_v: DVector<f64>,
}

enum Operators {
    Single(ProposalOperators),
    Gibbs(ProposalOperators, ProposalOperators),
}

fn check(ops: &ProposalOperators, kind: ProposalKind) -> Result<()> {
    match ops.validate() {
        Ok(()) => Ok(()),
        // The Hessian-preconditioned benchmark is not prior-reversible by design.
        Err(v) if v.condition == 4 && kind == ProposalKind::HLangevin => Ok(()),
        Err(v) => Err(Error::InvalidParameter(format!("{kind} operators rejected: {v}"))),
    }
}

struct Adaptation {
    gnh: ExpectedGnhState,
    state: LisState,
    laplace: LowRankCovariance,
    d_f: f64,
    frozen_at: Option<usize>,
}

impl Adaptation {
    /// Sample covariance blended with the Laplace covariance at the MAP.
    fn effective_cov(&self, weight: f64) -> DMatrix<f64> {
        let est = &self.state.estimate;
        let prior = self.laplace.project(self.state.theta());
        if weight <= 0.0 {
            return est.cov.clone();
        }
        let n = est.count as f64;
        (&est.cov * n + prior * weight) / (n + weight)
    }

    fn refresh(&mut self, weight: f64) -> Result<()> {
        let cov = self.effective_cov(weight);
        self.state.reweighted = update_cov(self.state.theta(), &cov)?;
        Ok(())
    }
}

fn build_operators(cfg: &SamplerConfig, adaptation: Option<&Adaptation>, map_eig: Option<&LowRankEig>, dim: usize) -> Result<Operators> {
    let ops = match cfg.kind {
        ProposalKind::PcnRw => Operators::Single(build_pcn(dim, cfg.pcn_a)?),
        ProposalKind::HLangevin => {
            Operators::Single(build_h_langevin(map_eig.expect("MAP decomposition computed"), cfg.dt_lis)?)
        }
        kind => {
            let rb = &adaptation.expect("LIS initialized").state.reweighted;
            match kind {
                ProposalKind::LiPrior => Operators::Single(build_li_prior(rb, cfg.dt_lis, cfg.dt_cs)?),
                ProposalKind::LiLangevin => Operators::Single(build_li_langevin(rb, cfg.dt_lis, cfg.dt_cs)?),
                _ => {
                    let (l, c) = build_mgli(rb, cfg.dt_lis, cfg.dt_cs, kind == ProposalKind::MgliLangevin)?;
                    Operators::Gibbs(l, c)
                }
            }
        }
    };
    match &ops {
        Operators::Single(o) => check(o, cfg.kind)?,
        Operators::Gibbs(l, c) => {
            check(l, cfg.kind)?;
            check(c, cfg.kind)?;
        }
    }
    Ok(ops)
}

/// Run the configured sampler. Every recorded iteration is passed to `sink`
/// together with the current state.
pub fn run_sampler<F, R, S>(model: &BayesModel<F>, cfg: &SamplerConfig, rng: &mut R, mut sink: S) -> Result<RunOutput>
where
    F: ForwardMap,
    R: Rng + ?Sized,
    S: FnMut(&IterationRecord, &DVector<f64>) -> Result<()>,
{
    cfg.schedule.validate()?;
    let n = model.dim();
    let kind = cfg.kind;
    let local_opts = EigOptions { threshold: cfg.thresholds.local, ..cfg.eig };

    let init = cfg.map_init.clone().unwrap_or_else(|| DVector::zeros(n));
    let map = map_estimate(model, &init, &cfg.map)?;
    let mut chain = ChainState::new(model, map.v.clone(), kind.is_langevin())?;
    let mut likelihood_evaluations = 0usize;
    let mut gradient_evaluations = 0usize;

    let mut map_eig = None;
    let mut adaptation = None;
    let mut lis_dim_trace = Vec::new();
    if kind == ProposalKind::HLangevin {
        map_eig = Some(local_gnh_eig(model, &chain.eval, &local_opts)?);
    } else if kind.uses_lis() {
        let mut gnh = ExpectedGnhState::new(n, cfg.thresholds.store, cfg.rank_cap);
        let local = local_gnh_eig(model, &chain.eval, &local_opts)?;
        gnh.update(&local)?;
        let lis = gnh.lis(cfg.thresholds.global);
        let r = lis.rank();
        let mut ad = Adaptation {
            gnh,
            state: LisState {
                reweighted: update_cov(&lis.basis, &DMatrix::identity(r, r))?,
                estimate: CovarianceEstimate::new(r),
                lis,
            },
            laplace: local_laplace_cov(&local),
            d_f: f64::INFINITY,
            frozen_at: None,
        };
        ad.refresh(cfg.cov_prior_weight)?;
        lis_dim_trace.push((0, r));
        adaptation = Some(ad);
    }
    let mut ops = build_operators(cfg, adaptation.as_ref(), map_eig.as_ref(), n)?;
    let condition4_sum = match &ops {
        Operators::Single(o) => o.condition4_sum(),
        Operators::Gibbs(l, c) => l.condition4_sum() + c.condition4_sum(),
    };

    let preliminary = if kind.uses_lis() { cfg.schedule.preliminary_iterations } else { 0 };
    let mut d_f_trace = Vec::new();
    let mut skipped_refreshes = 0usize;
    let mut refresh_warning = None;
    let (mut accepted, mut accepted_cs) = (0usize, 0usize);

    for step in 0..preliminary + cfg.iterations {
        let recording = step >= preliminary;
        let iteration = step.saturating_sub(preliminary);

        let (first, second) = match &ops {
            Operators::Single(o) => (mh_step(&mut chain, o, model, rng)?, None),
            Operators::Gibbs(l, c) => {
                let a = mh_step(&mut chain, l, model, rng)?;
                let b = mh_step(&mut chain, c, model, rng)?;
                (a, Some(b))
            }
        };
        for outcome in std::iter::once(&first).chain(second.as_ref()) {
            likelihood_evaluations += 1;
            gradient_evaluations += usize::from(outcome.gradient_evaluated);
        }
        if recording {
            accepted += usize::from(first.accepted);
            accepted_cs += second.map_or(0, |s| usize::from(s.accepted));
        }

        if let Some(ad) = adaptation.as_mut() {
            let refresh;
            let may_adapt = cfg.schedule.lis_source == LisSource::Adaptive
                && (preliminary == 0 || !recording)
                && ad.gnh.count() < cfg.schedule.n_max
                && ad.d_f >= cfg.schedule.delta_lis;
            if (step + 1) % cfg.schedule.n_lag == 0 && may_adapt {
                let new_lis = update_lis(&mut ad.gnh, model, &chain.eval, &local_opts, cfg.thresholds.global)?;
                let old = &ad.state.lis;
                ad.d_f = forstner_distance(&old.basis, &old.values, &new_lis.basis, &new_lis.values);
                ad.state.estimate = ad.state.estimate.project(&old.basis, &new_lis.basis);
                ad.state.lis = new_lis;
                d_f_trace.push((iteration, ad.d_f));
                lis_dim_trace.push((iteration, ad.state.rank()));
                refresh = true;
            } else {
                let w = ad.state.theta().tr_mul(&chain.v);
                ad.state.estimate.update(&w);
                refresh = (step + 1) % cfg.schedule.n_b == 0;
            }
            if ad.frozen_at.is_none()
                && cfg.schedule.lis_source == LisSource::Adaptive
                && (ad.gnh.count() >= cfg.schedule.n_max || ad.d_f < cfg.schedule.delta_lis)
            {
                ad.frozen_at = Some(iteration);
            }
            if refresh {
                ad.refresh(cfg.cov_prior_weight)?;
                // Fixed step sizes can become unstable for a refreshed
                // covariance; the previous operators stay in force.
                match build_operators(cfg, Some(ad), None, n) {
                    Ok(new_ops) => ops = new_ops,
                    Err(e) => {
                        skipped_refreshes += 1;
                        refresh_warning.get_or_insert_with(|| format!("iteration {iteration}: {e}"));
                    }
                }
            }
        }

        if recording {
            let record = IterationRecord {
                iteration,
                misfit: chain.eval.misfit,
                omf: chain.omf,
                alpha: first.alpha,
                accepted: first.accepted,
                alpha_cs: second.map(|s| s.alpha),
                accepted_cs: second.map(|s| s.accepted),
                lis_dim: adaptation.as_ref().map_or(0, |a| a.state.rank()),
                d_f: adaptation.as_ref().map_or(f64::NAN, |a| a.d_f),
            };
            sink(&record, &chain.v)?;
        }
    }

    let iterations = cfg.iterations;
    let rate = |k: usize| if iterations == 0 { 0.0 } else { k as f64 / iterations as f64 };
    let gibbs = kind.is_gibbs();
    let report = RunReport {
        proposal: kind,
        iterations,
        accepted,
        accepted_cs: gibbs.then_some(accepted_cs),
        acceptance_rate: rate(accepted),
        acceptance_rate_cs: gibbs.then(|| rate(accepted_cs)),
        likelihood_evaluations,
        gradient_evaluations,
        lis_updates: adaptation.as_ref().map_or(0, |a| a.gnh.count()),
        lis_dim_trace,
        d_f_trace,
        frozen_at: adaptation.as_ref().and_then(|a| a.frozen_at),
        map: Some(map),
        condition4_sum,
        skipped_refreshes,
        refresh_warning,
    };
    Ok(RunOutput { report, lis: adaptation.map(|a| a.state), final_v: chain.v })
}

/// All-at-once driver (pCN-RW, H-Langevin, LI-Prior, LI-Langevin).
pub fn run_adaptive_dili<F, R, S>(model: &BayesModel<F>, cfg: &SamplerConfig, rng: &mut R, sink: S) -> Result<RunOutput>
where
    F: ForwardMap,
    R: Rng + ?Sized,
    S: FnMut(&IterationRecord, &DVector<f64>) -> Result<()>,
{
    if cfg.kind.is_gibbs() {
        return Err(Error::InvalidParameter(format!("{} is a Gibbs proposal; use run_adaptive_mwg", cfg.kind)));
    }
    run_sampler(model, cfg, rng, sink)
}

/// Metropolis-within-Gibbs driver (MGLI-Prior, MGLI-Langevin).
pub fn run_adaptive_mwg<F, R, S>(model: &BayesModel<F>, cfg: &SamplerConfig, rng: &mut R, sink: S) -> Result<RunOutput>
where
    F: ForwardMap,
    R: Rng + ?Sized,
    S: FnMut(&IterationRecord, &DVector<f64>) -> Result<()>,
{
    if !cfg.kind.is_gibbs() {
        return Err(Error::InvalidParameter(format!("{} is not a Gibbs proposal; use run_adaptive_dili", cfg.kind)));
    }
    run_sampler(model, cfg, rng, sink)
}
