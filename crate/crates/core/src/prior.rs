//! Gaussian prior factors, whitening maps and the Onsager–Machlup functional.
//!
//! Whitened coordinates are `v = L⁻¹(u − u_ref)` with `L Lᵀ = Γ_pr` and
//! `u_ref = m_0 + m_ref`. For kernel covariances `L = U Λ^{1/2}` comes from a
//! symmetric eigendecomposition, so the components of `v` are coefficients on
//! the prior eigenfunctions ordered by decreasing prior variance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{asymmetry, standard_normal, sym_eig_desc};

/// Coordinate system a [`FunctionVector`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Physical parameter coordinates.
    U,
    /// Whitened coordinates; the prior is N(0, I).
    V,
    /// Coordinates on a (reweighted) likelihood-informed basis.
    W,
}

/// Coefficients of a discretized function tagged with their coordinate system.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionVector {
    values: DVector<f64>,
    space: Space,
}

impl FunctionVector {
    pub fn new(values: DVector<f64>, space: Space) -> Result<Self> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("non-finite entry at index {i}")));
        }
        Ok(Self { values, space })
    }

    pub fn zeros(n: usize, space: Space) -> Self {
        Self { values: DVector::zeros(n), space }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Borrow the values after checking the coordinate tag.
    pub fn expect(&self, space: Space) -> Result<&DVector<f64>> {
        if self.space == space {
            Ok(&self.values)
        } else {
            Err(Error::SpaceMismatch { expected: space, found: self.space })
        }
    }
}

/// Prior covariance specification.
#[derive(Debug, Clone)]
pub enum CovarianceSpec {
    Identity { dim: usize },
    /// Dense symmetric positive (semi-)definite matrix.
    Dense(DMatrix<f64>),
    /// `σ² exp(−‖s − s'‖ / (2 s₀))` evaluated on a point set.
    ExponentialKernel { points: Vec<[f64; 2]>, sigma: f64, length: f64 },
    /// Brownian motion sampled at `t_i = i Δt`, `i = 1..=steps`: `min(t_i, t_j)`.
    Brownian { dt: f64, steps: usize },
}

impl CovarianceSpec {
    /// Dense covariance matrix (used for kernel factorization and tests).
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            CovarianceSpec::Identity { dim } => DMatrix::identity(*dim, *dim),
            CovarianceSpec::Dense(m) => m.clone(),
            CovarianceSpec::ExponentialKernel { points, sigma, length } => {
                let n = points.len();
                DMatrix::from_fn(n, n, |i, j| {
                    let dx = points[i][0] - points[j][0];
                    let dy = points[i][1] - points[j][1];
                    sigma * sigma * (-(dx * dx + dy * dy).sqrt() / (2.0 * length)).exp()
                })
            }
            CovarianceSpec::Brownian { dt, steps } => {
                DMatrix::from_fn(*steps, *steps, |i, j| dt * ((i.min(j) + 1) as f64))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Identity,
    /// `L = U diag(s)` with `s = sqrt(eigenvalues)`.
    Spectral { vecs: DMatrix<f64>, sqrt_vals: DVector<f64> },
    /// `L[i][j] = √Δt` for `j ≤ i`.
    Brownian { sqrt_dt: f64 },
}

/// Gaussian prior `N(m_0, L Lᵀ)` with an optional reference shift.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    dim: usize,
    mean: DVector<f64>,
    m_ref: DVector<f64>,
    u_ref: DVector<f64>,
    v_ref: DVector<f64>,
    factor: Factor,
}

/// Relative floor applied to kernel eigenvalues before taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Eigenvalues more negative than this (relative) are rejected, not clipped.
const NEGATIVE_TOLERANCE: f64 = 1e-8;

impl PriorFactor {
    /// Factorize a covariance specification; the mean and shift start at zero.
    pub fn build(spec: &CovarianceSpec) -> Result<Self> {
        let (dim, factor) = match spec {
            CovarianceSpec::Identity { dim } => (*dim, Factor::Identity),
            CovarianceSpec::Brownian { dt, steps } => {
                if !(*dt > 0.0) {
                    return Err(Error::InvalidParameter(format!("Brownian step {dt} must be positive")));
                }
                (*steps, Factor::Brownian { sqrt_dt: dt.sqrt() })
            }
            CovarianceSpec::Dense(_) | CovarianceSpec::ExponentialKernel { .. } => {
                let c = spec.matrix();
                let scale = c.amax();
                let asym = asymmetry(&c);
                if asym > 1e-8 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotSymmetric { asymmetry: asym, tolerance: 1e-8 * scale });
                }
                let (vals, vecs) = sym_eig_desc(&c);
                let top = vals.get(0).copied().unwrap_or(0.0);
                if !(top > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: 0, value: top });
                }
                if let Some(i) = vals.iter().position(|&l| l < -NEGATIVE_TOLERANCE * top) {
                    return Err(Error::NotPositiveDefinite { index: i, value: vals[i] });
                }
                let floor = EIGEN_FLOOR * top;
                let sqrt_vals = vals.map(|l| l.max(floor).sqrt());
                (c.nrows(), Factor::Spectral { vecs, sqrt_vals })
            }
        };
        Ok(Self {
            dim,
            mean: DVector::zeros(dim),
            m_ref: DVector::zeros(dim),
            u_ref: DVector::zeros(dim),
            v_ref: DVector::zeros(dim),
            factor,
        })
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        check_dim(self.dim, mean.len())?;
        self.mean = mean;
        self.u_ref = &self.mean + &self.m_ref;
        Ok(self)
    }

    pub fn with_reference_shift(mut self, m_ref: DVector<f64>) -> Result<Self> {
        check_dim(self.dim, m_ref.len())?;
        self.v_ref = self.apply_inv_sqrt(&m_ref);
        self.m_ref = m_ref;
        self.u_ref = &self.mean + &self.m_ref;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn m_ref(&self) -> &DVector<f64> {
        &self.m_ref
    }

    pub fn u_ref(&self) -> &DVector<f64> {
        &self.u_ref
    }

    /// `v_ref = L⁻¹ m_ref`.
    pub fn v_ref(&self) -> &DVector<f64> {
        &self.v_ref
    }

    /// Prior eigenvalues (descending) when the factor is spectral.
    pub fn spectrum(&self) -> Option<DVector<f64>> {
        match &self.factor {
            Factor::Spectral { sqrt_vals, .. } => Some(sqrt_vals.map(|s| s * s)),
            _ => None,
        }
    }

    /// `L x`.
    pub fn apply_sqrt(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Identity => x.clone(),
            Factor::Spectral { vecs, sqrt_vals } => vecs * x.component_mul(sqrt_vals),
            Factor::Brownian { sqrt_dt } => {
                let mut out = DVector::zeros(x.len());
                let mut acc = 0.0;
                for i in 0..x.len() {
                    acc += x[i];
                    out[i] = sqrt_dt * acc;
                }
                out
            }
        }
    }

    /// `Lᵀ x`.
    pub fn apply_sqrt_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Identity => x.clone(),
            Factor::Spectral { vecs, sqrt_vals } => (vecs.tr_mul(x)).component_mul(sqrt_vals),
            Factor::Brownian { sqrt_dt } => {
                let mut out = DVector::zeros(x.len());
                let mut acc = 0.0;
                for i in (0..x.len()).rev() {
                    acc += x[i];
                    out[i] = sqrt_dt * acc;
                }
                out
            }
        }
    }

    /// `L⁻¹ x`.
    pub fn apply_inv_sqrt(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Identity => x.clone(),
            Factor::Spectral { vecs, sqrt_vals } => vecs.tr_mul(x).component_div(sqrt_vals),
            Factor::Brownian { sqrt_dt } => {
                let mut out = DVector::zeros(x.len());
                let mut prev = 0.0;
                for i in 0..x.len() {
                    out[i] = (x[i] - prev) / sqrt_dt;
                    prev = x[i];
                }
                out
            }
        }
    }

    /// `Γ_pr x = L Lᵀ x`.
    pub fn covariance_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_sqrt(&self.apply_sqrt_transpose(x))
    }

    /// Whiten raw u-coordinates.
    pub fn whiten_values(&self, u: &DVector<f64>) -> DVector<f64> {
        self.apply_inv_sqrt(&(u - &self.u_ref))
    }

    /// Map raw v-coordinates back to u.
    pub fn unwhiten_values(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_sqrt(v) + &self.u_ref
    }

    pub fn whiten(&self, u: &FunctionVector) -> Result<FunctionVector> {
        let values = u.expect(Space::U)?;
        check_dim(self.dim, values.len())?;
        FunctionVector::new(self.whiten_values(values), Space::V)
    }

    pub fn unwhiten(&self, v: &FunctionVector) -> Result<FunctionVector> {
        let values = v.expect(Space::V)?;
        check_dim(self.dim, values.len())?;
        FunctionVector::new(self.unwhiten_values(values), Space::U)
    }

    /// Onsager–Machlup functional `η + ‖v + v_ref‖²` evaluated from u.
    pub fn omf(&self, u: &FunctionVector, misfit: f64) -> Result<f64> {
        let v = self.whiten(u)?;
        Ok(self.omf_whitened(v.values(), misfit))
    }

    /// Onsager–Machlup functional from whitened coordinates.
    pub fn omf_whitened(&self, v: &DVector<f64>, misfit: f64) -> f64 {
        misfit + (v + &self.v_ref).norm_squared()
    }

    /// Draw `u ~ N(m_0, Γ_pr)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.apply_sqrt(&standard_normal(rng, self.dim)) + &self.mean
    }
}
