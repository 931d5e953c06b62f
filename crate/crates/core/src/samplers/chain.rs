use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::model::{BayesModel, ForwardMap, ModelEvaluation};
use crate::proposals::{PointEval, ProposalOperators};

/// Current state of one Markov chain.
#[derive(Debug, Clone)]
pub struct ChainState<L> {
    pub v: DVector<f64>,
    pub eval: ModelEvaluation<L>,
    pub omf: f64,
    pub iteration: usize,
    pub accepted: usize,
    /// Evaluate gradients at every candidate (needed when any operator in the
    /// run uses them, so accepted states always carry one).
    pub track_gradient: bool,
}

impl<L: Clone> ChainState<L> {
    pub fn new<F: ForwardMap<Linearization = L>>(model: &BayesModel<F>, v: DVector<f64>, track_gradient: bool) -> Result<Self> {
        let eval = model.evaluate(&v, track_gradient)?;
        let omf = model.prior.omf_whitened(&v, eval.misfit);
        Ok(Self { v, eval, omf, iteration: 0, accepted: 0, track_gradient })
    }
}

/// Result of one Metropolis–Hastings step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub alpha: f64,
    pub log_ratio: f64,
    pub gradient_evaluated: bool,
}

/// Propose, evaluate, accept or reject. On error the chain is left unchanged.
pub fn mh_step<F, R>(chain: &mut ChainState<F::Linearization>, ops: &ProposalOperators, model: &BayesModel<F>, rng: &mut R) -> Result<StepOutcome>
where
    F: ForwardMap,
    R: Rng + ?Sized,
{
    if ops.needs_gradient() {
        model.ensure_gradient(&mut chain.eval);
    }
    let candidate = ops.propose(&chain.v, chain.eval.gradient(), rng)?;
    let with_gradient = chain.track_gradient || ops.needs_gradient();
    let eval = model.evaluate(&candidate, with_gradient)?;
    let log_ratio = ops.acceptance_log_ratio(
        &PointEval { v: &chain.v, misfit: chain.eval.misfit, gradient: chain.eval.gradient() },
        &PointEval { v: &candidate, misfit: eval.misfit, gradient: eval.gradient() },
        model.prior.v_ref(),
    )?;
    let alpha = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let accepted = rng.random::<f64>() < alpha;
    if accepted {
        chain.omf = model.prior.omf_whitened(&candidate, eval.misfit);
        chain.v = candidate;
        chain.eval = eval;
        chain.accepted += 1;
    }
    chain.iteration += 1;
    Ok(StepOutcome { accepted, alpha, log_ratio, gradient_evaluated: with_gradient })
}
