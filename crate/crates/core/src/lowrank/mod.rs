//! Likelihood-informed subspaces: local and expected Gauss–Newton Hessian
//! eigendecompositions, low-rank covariance machinery and the convergence
//! diagnostic.

mod cov;
mod eig;
mod expected;
mod forstner;

pub use cov::{
    local_laplace_cov, project_cov, update_cov, CovarianceEstimate, LowRankCovariance, ReweightedBasis,
    VARIANCE_FLOOR,
};
pub use eig::{dense_eig, lanczos, local_gnh_eig, EigOptions, EigSolver, LowRankEig};
pub use expected::ExpectedGnhState;
pub use forstner::forstner_distance;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{BayesModel, ForwardMap, ModelEvaluation};

/// Truncation thresholds for local, global and stored eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub local: f64,
    pub global: f64,
    pub store: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { local: 0.1, global: 0.1, store: 1e-4 }
    }
}

/// Local decomposition at `eval`, folded into `state`; returns the new LIS.
pub fn update_lis<F: ForwardMap>(
    state: &mut ExpectedGnhState,
    model: &BayesModel<F>,
    eval: &ModelEvaluation<F::Linearization>,
    eig: &EigOptions,
    global_threshold: f64,
) -> Result<LowRankEig> {
    let local = local_gnh_eig(model, eval, eig)?;
    state.update(&local)?;
    Ok(state.lis(global_threshold))
}

/// Global LIS with its projected sample covariance and reweighted basis.
#[derive(Debug, Clone)]
pub struct LisState {
    pub lis: LowRankEig,
    pub estimate: CovarianceEstimate,
    pub reweighted: ReweightedBasis,
}

impl LisState {
    pub fn rank(&self) -> usize {
        self.lis.rank()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.lis.basis
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.lis.values
    }
}
