//! Low-rank posterior covariance approximations on the LIS.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{asymmetry, sym_eig_desc};
use crate::lowrank::LowRankEig;

/// Smallest diagonal entry allowed in `D_r`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `Σ_r = W D Wᵀ` and the reweighted basis `Ψ_r = Θ_r W`.
#[derive(Debug, Clone)]
pub struct ReweightedBasis {
    pub psi: DMatrix<f64>,
    pub d: DVector<f64>,
    pub w: DMatrix<f64>,
}

impl ReweightedBasis {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    /// `Ψ (D − I) Ψᵀ x + x`.
    pub fn covariance_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = self.psi.tr_mul(x).component_mul(&self.d.map(|d| d - 1.0));
        x + &self.psi * c
    }
}

/// Diagonalize the projected covariance and rotate the LIS basis accordingly.
pub fn update_cov(theta: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<ReweightedBasis> {
    check_dim(theta.ncols(), sigma.nrows())?;
    check_dim(sigma.nrows(), sigma.ncols())?;
    let asym = asymmetry(sigma);
    let tol = 1e-8 * sigma.amax().max(1.0);
    if asym > tol {
        return Err(Error::NotSymmetric { asymmetry: asym, tolerance: tol });
    }
    let (d, w) = sym_eig_desc(sigma);
    let d = d.map(|x| x.max(VARIANCE_FLOOR));
    Ok(ReweightedBasis { psi: theta * &w, d, w })
}

/// `T (Σ_r − I) Tᵀ + I` with `T = Θ'ᵀ Θ`.
pub fn project_cov(theta: &DMatrix<f64>, sigma: &DMatrix<f64>, theta_new: &DMatrix<f64>) -> DMatrix<f64> {
    let t = theta_new.tr_mul(theta);
    let r = sigma.nrows();
    let k = theta_new.ncols();
    &t * (sigma - DMatrix::identity(r, r)) * t.transpose() + DMatrix::identity(k, k)
}

/// Running mean and covariance of LIS coordinates (Welford recursion).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl CovarianceEstimate {
    /// Zero samples; the covariance starts at the prior `I_r`.
    pub fn new(r: usize) -> Self {
        Self { mean: DVector::zeros(r), cov: DMatrix::identity(r, r), count: 0 }
    }

    pub fn rank(&self) -> usize {
        self.mean.len()
    }

    /// Add one projected sample `w = Θ_rᵀ v`.
    pub fn update(&mut self, w: &DVector<f64>) {
        let n = self.count as f64;
        if self.count == 0 {
            self.mean.copy_from(w);
        } else {
            let delta = w - &self.mean;
            let new_mean = &self.mean + &delta / (n + 1.0);
            let delta2 = w - &new_mean;
            self.cov = (&self.cov * (n - 1.0) + &delta * delta2.transpose()) / n;
            self.mean = new_mean;
        }
        self.count += 1;
    }

    /// Re-express the estimate on a new basis (covariance as in
    /// [`project_cov`], mean by the same change of coordinates).
    pub fn project(&self, theta: &DMatrix<f64>, theta_new: &DMatrix<f64>) -> Self {
        let t = theta_new.tr_mul(theta);
        Self { mean: &t * &self.mean, cov: project_cov(theta, &self.cov, theta_new), count: self.count }
    }
}

/// Local Laplace covariance `I − Σ λ/(λ+1) φ φᵀ` in whitened coordinates.
#[derive(Debug, Clone)]
pub struct LowRankCovariance {
    pub basis: DMatrix<f64>,
    /// Shrink factors `λ_i/(λ_i + 1)`.
    pub shrink: DVector<f64>,
}

impl LowRankCovariance {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.basis * self.basis.tr_mul(x).component_mul(&self.shrink)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.basis.nrows();
        let mut scaled = self.basis.clone();
        for j in 0..self.shrink.len() {
            scaled.column_mut(j).scale_mut(self.shrink[j]);
        }
        DMatrix::identity(n, n) - scaled * self.basis.transpose()
    }

    /// Covariance restricted to the given orthonormal basis: `Θᵀ C Θ`.
    pub fn project(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.basis.tr_mul(theta);
        let mut scaled = p.clone();
        for i in 0..self.shrink.len() {
            scaled.row_mut(i).scale_mut(self.shrink[i]);
        }
        DMatrix::identity(theta.ncols(), theta.ncols()) - p.transpose() * scaled
    }
}

pub fn local_laplace_cov(local: &LowRankEig) -> LowRankCovariance {
    LowRankCovariance {
        basis: local.basis.clone(),
        shrink: local.values.map(|l| if l.is_infinite() { 1.0 } else { l / (l + 1.0) }),
    }
}
