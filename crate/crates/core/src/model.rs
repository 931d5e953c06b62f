//! Forward-model contract: misfit, whitened gradient and matrix-free
//! Gauss–Newton Hessian actions.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::prior::{FunctionVector, PriorFactor, Space};

/// Data `y` with diagonal noise covariance.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    y: DVector<f64>,
    noise_var: DVector<f64>,
    /// Observation coordinates (a location or a time), one row per datum.
    pub locations: Vec<Vec<f64>>,
}

impl ObservationSet {
    pub fn new(y: DVector<f64>, noise_var: DVector<f64>) -> Result<Self> {
        check_dim(y.len(), noise_var.len())?;
        if let Some(i) = noise_var.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "noise variance {} at index {i} must be positive",
                noise_var[i]
            )));
        }
        Ok(Self { y, noise_var, locations: Vec::new() })
    }

    /// `Γ_obs = σ² I`.
    pub fn isotropic(y: DVector<f64>, sigma: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, DVector::from_element(n, sigma * sigma))
    }

    pub fn with_locations(mut self, locations: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(self.y.len(), locations.len())?;
        self.locations = locations;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_var(&self) -> &DVector<f64> {
        &self.noise_var
    }

    /// `Γ_obs⁻¹ w`.
    pub fn precision_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        w.component_div(&self.noise_var)
    }

    /// `η = ½ (F − y)ᵀ Γ_obs⁻¹ (F − y)`.
    pub fn misfit(&self, outputs: &DVector<f64>) -> f64 {
        let r = outputs - &self.y;
        0.5 * r.iter().zip(self.noise_var.iter()).map(|(r, s)| r * r / s).sum::<f64>()
    }
}

/// Parameter-to-observable map in physical (u) coordinates.
pub trait ForwardMap {
    /// State retained from a forward solve for Jacobian actions.
    type Linearization: Clone;

    fn param_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, u: &DVector<f64>) -> Result<(DVector<f64>, Self::Linearization)>;
    /// `J(u) δu`.
    fn jacobian_apply(&self, lin: &Self::Linearization, du: &DVector<f64>) -> DVector<f64>;
    /// `J(u)ᵀ w`.
    fn jacobian_adjoint(&self, lin: &Self::Linearization, w: &DVector<f64>) -> DVector<f64>;
}

/// Result of evaluating the model at a whitened point.
#[derive(Debug, Clone)]
pub struct ModelEvaluation<L> {
    pub outputs: DVector<f64>,
    pub misfit: f64,
    gradient: Option<DVector<f64>>,
    linearization: L,
}

impl<L> ModelEvaluation<L> {
    /// Whitened gradient `∇_v η`, if it was requested.
    pub fn gradient(&self) -> Option<&DVector<f64>> {
        self.gradient.as_ref()
    }

    pub fn require_gradient(&self) -> Result<&DVector<f64>> {
        self.gradient
            .as_ref()
            .ok_or_else(|| Error::Contract("gradient required but not evaluated".into()))
    }

    pub fn linearization(&self) -> &L {
        &self.linearization
    }
}

/// Outcome of a finite-difference Jacobian check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdCheck {
    pub error: f64,
    /// False when the reference norm vanished and `error` is absolute.
    pub relative: bool,
}

/// Posterior model: prior, data and forward map, evaluated in whitened coordinates.
#[derive(Debug, Clone)]
pub struct BayesModel<F> {
    pub prior: PriorFactor,
    pub observations: ObservationSet,
    pub forward: F,
}

impl<F: ForwardMap> BayesModel<F> {
    pub fn new(prior: PriorFactor, observations: ObservationSet, forward: F) -> Result<Self> {
        check_dim(prior.dim(), forward.param_dim())?;
        check_dim(observations.len(), forward.output_dim())?;
        Ok(Self { prior, observations, forward })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    /// Outputs, misfit and optionally `∇_v η = Lᵀ Jᵀ Γ_obs⁻¹ (F(u) − y)`.
    pub fn evaluate(&self, v: &DVector<f64>, with_gradient: bool) -> Result<ModelEvaluation<F::Linearization>> {
        check_dim(self.dim(), v.len())?;
        let u = self.prior.unwhiten_values(v);
        let (outputs, linearization) = self.forward.forward(&u)?;
        let misfit = self.observations.misfit(&outputs);
        if !misfit.is_finite() {
            return Err(Error::Solver(format!("non-finite misfit {misfit}")));
        }
        let gradient = with_gradient.then(|| {
            let w = self.observations.precision_apply(&(&outputs - self.observations.y()));
            self.prior.apply_sqrt_transpose(&self.forward.jacobian_adjoint(&linearization, &w))
        });
        Ok(ModelEvaluation { outputs, misfit, gradient, linearization })
    }

    /// Tag-checked variant of [`evaluate`](Self::evaluate).
    pub fn evaluate_function(&self, v: &FunctionVector, with_gradient: bool) -> Result<ModelEvaluation<F::Linearization>> {
        self.evaluate(v.expect(Space::V)?, with_gradient)
    }

    /// Fill in the gradient of an evaluation made without one.
    pub fn ensure_gradient(&self, eval: &mut ModelEvaluation<F::Linearization>) {
        if eval.gradient.is_none() {
            let w = self.observations.precision_apply(&(&eval.outputs - self.observations.y()));
            eval.gradient = Some(
                self.prior
                    .apply_sqrt_transpose(&self.forward.jacobian_adjoint(&eval.linearization, &w)),
            );
        }
    }

    /// `J L z`.
    pub fn jacobian_whitened(&self, eval: &ModelEvaluation<F::Linearization>, z: &DVector<f64>) -> DVector<f64> {
        self.forward.jacobian_apply(&eval.linearization, &self.prior.apply_sqrt(z))
    }

    /// `(J L)ᵀ w`.
    pub fn jacobian_whitened_adjoint(&self, eval: &ModelEvaluation<F::Linearization>, w: &DVector<f64>) -> DVector<f64> {
        self.prior.apply_sqrt_transpose(&self.forward.jacobian_adjoint(&eval.linearization, w))
    }

    /// Gauss–Newton Hessian action `Lᵀ Jᵀ Γ_obs⁻¹ J L z`.
    pub fn gnh_apply(&self, eval: &ModelEvaluation<F::Linearization>, z: &DVector<f64>) -> DVector<f64> {
        let jz = self.jacobian_whitened(eval, z);
        self.jacobian_whitened_adjoint(eval, &self.observations.precision_apply(&jz))
    }

    /// `‖(F(v+εz) − F(v−εz))/2ε − J L z‖ / ‖J L z‖`.
    pub fn jacobian_fd_check(&self, v: &DVector<f64>, z: &DVector<f64>, eps: f64) -> Result<FdCheck> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("finite-difference step {eps} must be positive")));
        }
        let center = self.evaluate(v, false)?;
        let plus = self.evaluate(&(v + z * eps), false)?;
        let minus = self.evaluate(&(v - z * eps), false)?;
        let fd = (plus.outputs - minus.outputs) / (2.0 * eps);
        let exact = self.jacobian_whitened(&center, z);
        let diff = (&fd - &exact).norm();
        let scale = exact.norm();
        Ok(if scale > 0.0 {
            FdCheck { error: diff / scale, relative: true }
        } else {
            FdCheck { error: diff, relative: false }
        })
    }

    /// Relative error of `⟨∇_v η, z⟩` against a central difference of `η`.
    pub fn gradient_fd_check(&self, v: &DVector<f64>, z: &DVector<f64>, eps: f64) -> Result<FdCheck> {
        let center = self.evaluate(v, true)?;
        let plus = self.evaluate(&(v + z * eps), false)?;
        let minus = self.evaluate(&(v - z * eps), false)?;
        let fd = (plus.misfit - minus.misfit) / (2.0 * eps);
        let exact = center.require_gradient()?.dot(z);
        let diff = (fd - exact).abs();
        Ok(if exact != 0.0 {
            FdCheck { error: diff / exact.abs(), relative: true }
        } else {
            FdCheck { error: diff, relative: false }
        })
    }
}
