//! Incremental Monte Carlo estimate of the expected Gauss–Newton Hessian.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{normalize_sign, sym_eig_desc};
use crate::lowrank::LowRankEig;

/// Truncated eigendecomposition `S_m ≈ Θ_m Ξ_m Θ_mᵀ` of the average of `m`
/// local Hessians.
#[derive(Debug, Clone)]
pub struct ExpectedGnhState {
    eig: LowRankEig,
    count: usize,
    store_threshold: f64,
    rank_cap: usize,
}

impl ExpectedGnhState {
    pub fn new(dim: usize, store_threshold: f64, rank_cap: usize) -> Self {
        Self { eig: LowRankEig::empty(dim), count: 0, store_threshold, rank_cap }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn eig(&self) -> &LowRankEig {
        &self.eig
    }

    /// Pairs with eigenvalue at least `global_threshold`: the LIS.
    pub fn lis(&self, global_threshold: f64) -> LowRankEig {
        self.eig.truncated(global_threshold)
    }

    /// Fold one more local decomposition into the running average.
    pub fn update(&mut self, local: &LowRankEig) -> Result<()> {
        check_dim(self.dim(), local.dim())?;
        let m = self.count as f64;
        let next = if self.count == 0 {
            local.clone()
        } else if local.rank() == 0 {
            LowRankEig { basis: self.eig.basis.clone(), values: &self.eig.values * (m / (m + 1.0)) }
        } else if self.eig.rank() == 0 {
            LowRankEig { basis: local.basis.clone(), values: &local.values / (m + 1.0) }
        } else {
            let (r0, r1) = (self.eig.rank(), local.rank());
            // [Θ Φ] = [Θ Q₁] R with Φ = Θ C + Q₁ R₁; Θ is already orthonormal so
            // only the new columns are orthogonalized (twice, for stability).
            let theta = &self.eig.basis;
            let mut c = theta.tr_mul(&local.basis);
            let mut resid = &local.basis - theta * &c;
            let c2 = theta.tr_mul(&resid);
            resid -= theta * &c2;
            c += c2;
            let qr = resid.qr();
            let mut q = DMatrix::zeros(self.dim(), r0 + r1);
            q.columns_mut(0, r0).copy_from(theta);
            q.columns_mut(r0, r1).copy_from(&qr.q());
            let mut r = DMatrix::identity(r0 + r1, r0 + r1);
            r.view_mut((0, r0), (r0, r1)).copy_from(&c);
            r.view_mut((r0, r0), (r1, r1)).copy_from(&qr.r());
            let weights = DVector::from_iterator(
                r0 + r1,
                self.eig.values.iter().map(|x| x * m).chain(local.values.iter().copied()),
            );
            let mut scaled = r.clone();
            for j in 0..r0 + r1 {
                scaled.column_mut(j).scale_mut(weights[j]);
            }
            let small = (scaled * r.transpose()) / (m + 1.0);
            let (vals, w) = sym_eig_desc(&small);
            let keep = vals.iter().take_while(|&&x| x >= self.store_threshold).count();
            let vals = vals.rows(0, keep).into_owned();
            let mut basis = q * w.columns(0, keep);
            for j in 0..basis.ncols() {
                let col = normalize_sign(basis.column(j).into_owned());
                basis.set_column(j, &col);
            }
            LowRankEig { basis, values: vals }
        };
        let next = next.truncated(self.store_threshold);
        if next.rank() > self.rank_cap {
            return Err(Error::RankExplosion { rank: next.rank(), cap: self.rank_cap });
        }
        self.eig = next;
        self.count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;
    use crate::lowrank::dense_eig;

    fn psd(n: usize, rank: usize, seed: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, rank, |i, j| ((i * 7 + j * 3) as f64 * seed).sin());
        &a * a.transpose()
    }

    #[test]
    fn first_update_copies_local() {
        let local = dense_eig(|x| psd(10, 3, 0.7) * x, 10, 1e-4);
        let mut s = ExpectedGnhState::new(10, 1e-4, 100);
        s.update(&local).unwrap();
        assert_eq!(s.eig(), &local);
        assert_eq!(s.count(), 1);
    }

    #[test]
    fn constant_operator_keeps_eigenvalues() {
        let local = dense_eig(|x| psd(15, 4, 0.3) * x, 15, 1e-4);
        let mut s = ExpectedGnhState::new(15, 1e-4, 100);
        for _ in 0..5 {
            s.update(&local).unwrap();
        }
        assert_eq!(s.eig().rank(), local.rank());
        for i in 0..local.rank() {
            assert!((s.eig().values[i] - local.values[i]).abs() <= 1e-10 * local.values[i]);
        }
        assert!(orthonormality_error(&s.eig().basis) < 1e-8);
    }

    #[test]
    fn incremental_matches_dense_average() {
        let hs: Vec<_> = [0.3, 0.71, 1.3].iter().map(|&c| psd(12, 4, c)).collect();
        let mut s = ExpectedGnhState::new(12, 1e-4, 100);
        for h in &hs {
            s.update(&dense_eig(|x| h * x, 12, 1e-12)).unwrap();
        }
        let avg = (&hs[0] + &hs[1] + &hs[2]) / 3.0;
        let oracle = dense_eig(|x| &avg * x, 12, 1e-4);
        assert_eq!(s.eig().rank(), oracle.rank());
        for i in 0..oracle.rank() {
            assert!((s.eig().values[i] - oracle.values[i]).abs() <= 1e-8 * oracle.values[i]);
        }
    }

    #[test]
    fn rank_cap_errors() {
        let mut s = ExpectedGnhState::new(12, 1e-4, 2);
        let a = DMatrix::from_fn(12, 4, |i, j| f64::from(u8::from(i == j)) + 0.1);
        let local = dense_eig(|x| &a * a.tr_mul(x), 12, 1e-4);
        let res = s.update(&local);
        assert!(matches!(res, Err(Error::RankExplosion { rank: 3.., cap: 2 })), "{res:?} {:?}", local.values);
    }

    #[test]
    fn empty_local_shrinks_average() {
        let local = dense_eig(|x| psd(8, 2, 0.4) * x, 8, 1e-4);
        let mut s = ExpectedGnhState::new(8, 1e-4, 100);
        s.update(&local).unwrap();
        s.update(&LowRankEig::empty(8)).unwrap();
        assert!((s.eig().values[0] - local.values[0] / 2.0).abs() < 1e-14);
    }
}
