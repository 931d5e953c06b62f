use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_dim, Result};
use crate::model::{BayesModel, ForwardMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    /// Stop when `‖∇J‖ ≤ gradient_tolerance · max(1, ‖∇J(init)‖)`.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Relative residual for the inner conjugate-gradient solve.
    pub cg_tolerance: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { gradient_tolerance: 1e-6, max_iterations: 200, cg_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MapResult {
    #[serde(skip)]
    pub v: DVector<f64>,
    /// `η + ½‖v + v_ref‖²` at `v`.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

fn objective<F: ForwardMap>(model: &BayesModel<F>, v: &DVector<f64>) -> Result<f64> {
    let eval = model.evaluate(v, false)?;
    Ok(eval.misfit + 0.5 * (v + model.prior.v_ref()).norm_squared())
}

/// Posterior mode in whitened coordinates by Gauss–Newton–CG with a
/// backtracking line search. Minimizes `η(v) + ½‖v + v_ref‖²`.
pub fn map_estimate<F: ForwardMap>(model: &BayesModel<F>, init: &DVector<f64>, opts: &MapOptions) -> Result<MapResult> {
    check_dim(model.dim(), init.len())?;
    let n = model.dim();
    let v_ref = model.prior.v_ref();
    let mut v = init.clone();
    let mut eval = model.evaluate(&v, true)?;
    let mut j = eval.misfit + 0.5 * (&v + v_ref).norm_squared();
    let mut g = eval.require_gradient()? + &v + v_ref;
    let stop = opts.gradient_tolerance * g.norm().max(1.0);
    let cg_max = n.min(2 * model.n_obs() + 50).max(1);

    for it in 0..opts.max_iterations {
        let gnorm = g.norm();
        if gnorm <= stop {
            return Ok(MapResult { v, objective: j, gradient_norm: gnorm, iterations: it, converged: true, warning: None });
        }
        // Solve (H + I) p = −g by conjugate gradients.
        let mut p = DVector::zeros(n);
        let mut r = -&g;
        let mut d = r.clone();
        let mut rr = r.norm_squared();
        let target = (opts.cg_tolerance * gnorm).powi(2);
        for _ in 0..cg_max {
            if rr <= target {
                break;
            }
            let hd = model.gnh_apply(&eval, &d) + &d;
            let dhd = d.dot(&hd);
            if dhd <= 0.0 {
                break;
            }
            let step = rr / dhd;
            p.axpy(step, &d, 1.0);
            r.axpy(-step, &hd, 1.0);
            let rr_new = r.norm_squared();
            d = &r + &d * (rr_new / rr);
            rr = rr_new;
        }
        let slope = g.dot(&p);
        if !(slope < 0.0) {
            p = -&g;
        }
        let slope = g.dot(&p);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &v + &p * t;
            if let Ok(jt) = objective(model, &trial) {
                if jt <= j + 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                v = next;
                eval = model.evaluate(&v, true)?;
                j = eval.misfit + 0.5 * (&v + v_ref).norm_squared();
                g = eval.require_gradient()? + &v + v_ref;
            }
            None => {
                let gradient_norm = g.norm();
                return Ok(MapResult {
                    v,
                    objective: j,
                    gradient_norm,
                    iterations: it,
                    converged: false,
                    warning: Some(format!("line search failed at iteration {it} (gradient norm {gradient_norm:e})")),
                });
            }
        }
    }
    let gradient_norm = g.norm();
    Ok(MapResult {
        v,
        objective: j,
        gradient_norm,
        iterations: opts.max_iterations,
        converged: gradient_norm <= stop,
        warning: (gradient_norm > stop).then(|| "iteration limit reached".to_string()),
    })
}
