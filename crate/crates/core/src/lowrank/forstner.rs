//! Förstner distance between `I + Θ Ξ Θᵀ` and `I + Θ' Ξ' Θ'ᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::sym_eig_desc;

/// `sqrt(Σ ln² λ_i)` over the generalized eigenvalues of the pair, computed on
/// an orthonormal basis of `span(Θ) + span(Θ')` (both operators are the
/// identity on its complement).
pub fn forstner_distance(theta: &DMatrix<f64>, xi: &DVector<f64>, theta2: &DMatrix<f64>, xi2: &DVector<f64>) -> f64 {
    let (r1, r2) = (theta.ncols(), theta2.ncols());
    if r1 + r2 == 0 {
        return 0.0;
    }
    let n = theta.nrows().max(theta2.nrows());
    let mut c = DMatrix::zeros(n, r1 + r2);
    if r1 > 0 {
        c.columns_mut(0, r1).copy_from(theta);
    }
    if r2 > 0 {
        c.columns_mut(r1, r2).copy_from(theta2);
    }
    // Orthonormal basis of the joint span via the Gram matrix, which copes with
    // overlapping or identical subspaces.
    let (g_vals, g_vecs) = sym_eig_desc(&c.tr_mul(&c));
    let top = g_vals[0];
    let k = g_vals.iter().take_while(|&&x| x > 1e-12 * top).count();
    let mut coords = DMatrix::zeros(r1 + r2, k);
    for j in 0..k {
        coords.set_column(j, &(g_vecs.column(j) / g_vals[j].sqrt()));
    }
    let q = &c * coords;

    let project = |t: &DMatrix<f64>, x: &DVector<f64>| {
        let p = q.tr_mul(t);
        let mut scaled = p.clone();
        for j in 0..x.len() {
            scaled.column_mut(j).scale_mut(x[j]);
        }
        DMatrix::identity(k, k) + scaled * p.transpose()
    };
    let a = project(theta, xi);
    let b = project(theta2, xi2);
    let chol = match nalgebra::Cholesky::new(b) {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(&a).expect("triangular factor is nonsingular");
    let m = l
        .solve_lower_triangular(&linv_a.transpose())
        .expect("triangular factor is nonsingular");
    let (lam, _) = sym_eig_desc(&m);
    lam.iter().map(|&x| x.max(f64::MIN_POSITIVE).ln().powi(2)).sum::<f64>().sqrt()
}
