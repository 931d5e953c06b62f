//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Flip the sign of `col` so that its largest-magnitude entry is positive.
pub fn normalize_sign(mut col: DVector<f64>) -> DVector<f64> {
    if let Some((idx, _)) = col
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    {
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
    col
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and each eigenvector sign-normalized.
pub fn sym_eig_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &normalize_sign(eig.eigenvectors.column(i).into_owned()));
    }
    (vals, vecs)
}

/// Max-abs deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Keep the leading columns of `m`.
pub fn leading_columns(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.columns(0, k).into_owned()
}

/// Cholesky factor of an SPD matrix; failure reports the first bad pivot.
pub fn cholesky_checked(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    // Locate the failing pivot for the diagnostic before handing off.
    match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let mut l = DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                let mut d = m[(j, j)];
                for k in 0..j {
                    d -= l[(j, k)] * l[(j, k)];
                }
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: j, value: d });
                }
                let djj = d.sqrt();
                l[(j, j)] = djj;
                for i in j + 1..n {
                    let mut s = m[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    l[(i, j)] = s / djj;
                }
            }
            Err(Error::NotPositiveDefinite { index: n, value: f64::NAN })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig_sorted_and_signed() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = sym_eig_desc(&m);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        for k in 0..3 {
            let c = vecs.column(k);
            let big = c.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(big > 0.0);
            let r = &m * c - c * vals[k];
            assert!(r.norm() < 1e-12);
        }
        assert!(orthonormality_error(&vecs) < 1e-12);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_checked(&m) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
