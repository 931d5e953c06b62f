//! Local Gauss–Newton Hessian eigendecompositions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_sign, standard_normal, sym_eig_desc};
use crate::model::{BayesModel, ForwardMap, ModelEvaluation};

/// Truncated symmetric eigendecomposition `Φ Λ Φᵀ`, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankEig {
    pub basis: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl LowRankEig {
    pub fn empty(n: usize) -> Self {
        Self { basis: DMatrix::zeros(n, 0), values: DVector::zeros(0) }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Keep the pairs with eigenvalue at least `threshold`.
    pub fn truncated(&self, threshold: f64) -> Self {
        let k = self.values.iter().take_while(|&&x| x >= threshold).count();
        Self {
            basis: self.basis.columns(0, k).into_owned(),
            values: self.values.rows(0, k).into_owned(),
        }
    }

    /// `Φ Λ Φᵀ x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(x).component_mul(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EigSolver {
    /// Lanczos; kept as a separate name so configurations can state intent.
    #[default]
    Auto,
    Lanczos,
    /// Assemble the operator column by column (tests and tiny problems).
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigOptions {
    /// Retain eigenvalues at or above this value.
    pub threshold: f64,
    pub solver: EigSolver,
    /// Extra Krylov dimensions beyond the rank hint.
    pub oversampling: usize,
    /// Ritz residual tolerance relative to the largest eigenvalue.
    pub tolerance: f64,
    /// Hard cap on Lanczos iterations.
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            solver: EigSolver::Auto,
            oversampling: 10,
            tolerance: 1e-10,
            max_iterations: 5000,
            seed: 0x5eed_1a2c,
        }
    }
}

/// Dense eigendecomposition of a symmetric operator given by its action.
pub fn dense_eig<Op>(mut op: Op, n: usize, threshold: f64) -> LowRankEig
where
    Op: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut h = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        h.set_column(j, &op(&e));
        e[j] = 0.0;
    }
    let (vals, vecs) = sym_eig_desc(&h);
    LowRankEig { basis: vecs, values: vals }.truncated(threshold)
}

fn orthogonalize(w: &mut DVector<f64>, q: &[DVector<f64>]) {
    for _ in 0..2 {
        for qi in q {
            let c = qi.dot(w);
            w.axpy(-c, qi, 1.0);
        }
    }
}

/// Lanczos with full reorthogonalization for a symmetric positive
/// semidefinite operator whose rank is expected to be at most `rank_hint`.
///
/// Invariant subspaces are handled by restarting from a fresh random vector,
/// so repeated eigenvalues are recovered with their multiplicity.
pub fn lanczos<Op>(mut op: Op, n: usize, rank_hint: usize, opts: &EigOptions) -> Result<LowRankEig>
where
    Op: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Ok(LowRankEig::empty(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut target = n.min(rank_hint + opts.oversampling.max(1));
    let mut qs: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut scale = 0.0f64;
    let mut q = standard_normal(&mut rng, n);
    q.normalize_mut();
    let mut exhausted = false;

    loop {
        while qs.len() < target && !exhausted {
            qs.push(q.clone());
            let mut w = op(&q);
            let a = q.dot(&w);
            scale = scale.max(a.abs()).max(w.norm());
            orthogonalize(&mut w, &qs);
            let b = w.norm();
            alpha.push(a);
            if qs.len() == n {
                beta.push(0.0);
                exhausted = true;
            } else if b <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                // Invariant subspace found: restart with an orthogonal random vector.
                beta.push(0.0);
                let mut fresh = None;
                for _ in 0..5 {
                    let mut r = standard_normal(&mut rng, n);
                    orthogonalize(&mut r, &qs);
                    let norm = r.norm();
                    if norm > 1e-8 {
                        fresh = Some(r / norm);
                        break;
                    }
                }
                match fresh {
                    Some(r) => q = r,
                    None => exhausted = true,
                }
            } else {
                beta.push(b);
                q = w / b;
            }
        }

        let k = qs.len();
        let t = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (theta, y) = sym_eig_desc(&t);
        let top = theta.get(0).copied().unwrap_or(0.0).abs().max(opts.threshold);
        let coupling = beta[k - 1];
        let kept = theta.iter().take_while(|&&x| x >= opts.threshold).count();
        let residual = (0..kept).map(|i| (coupling * y[(k - 1, i)]).abs()).fold(0.0, f64::max);
        let converged = residual <= opts.tolerance * top && (kept < k || exhausted);
        if converged || exhausted {
            let qmat = DMatrix::from_columns(&qs);
            let mut basis = DMatrix::zeros(n, kept);
            for i in 0..kept {
                basis.set_column(i, &normalize_sign(&qmat * y.column(i)));
            }
            return Ok(LowRankEig { basis, values: theta.rows(0, kept).into_owned() });
        }
        if k >= opts.max_iterations {
            return Err(Error::EigenNonConvergence { iterations: k, residual });
        }
        target = n.min(opts.max_iterations).min(2 * target.max(1));
    }
}

/// Eigendecomposition of the prior-preconditioned GNH at an evaluated point,
/// truncated at `opts.threshold`.
pub fn local_gnh_eig<F: ForwardMap>(
    model: &BayesModel<F>,
    eval: &ModelEvaluation<F::Linearization>,
    opts: &EigOptions,
) -> Result<LowRankEig> {
    if !(opts.threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("local threshold {} must be positive", opts.threshold)));
    }
    let n = model.dim();
    let rank = model.n_obs().min(n);
    let op = |z: &DVector<f64>| model.gnh_apply(eval, z);
    let eig = match opts.solver {
        EigSolver::Dense => dense_eig(op, n, opts.threshold),
        EigSolver::Auto | EigSolver::Lanczos => lanczos(op, n, rank, opts)?,
    };
    // The GNH has rank at most N_y; anything beyond is round-off.
    Ok(if eig.rank() > rank {
        LowRankEig {
            basis: eig.basis.columns(0, rank).into_owned(),
            values: eig.values.rows(0, rank).into_owned(),
        }
    } else {
        eig
    })
}
