//! Small analytic forward maps used for oracle tests and toy runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::model::ForwardMap;

/// `F(u) = G u`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    g: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(g: DMatrix<f64>) -> Self {
        Self { g }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }
}

impl ForwardMap for LinearMap {
    type Linearization = ();

    fn param_dim(&self) -> usize {
        self.g.ncols()
    }

    fn output_dim(&self) -> usize {
        self.g.nrows()
    }

    fn forward(&self, u: &DVector<f64>) -> Result<(DVector<f64>, ())> {
        check_dim(self.g.ncols(), u.len())?;
        Ok((&self.g * u, ()))
    }

    fn jacobian_apply(&self, _: &(), du: &DVector<f64>) -> DVector<f64> {
        &self.g * du
    }

    fn jacobian_adjoint(&self, _: &(), w: &DVector<f64>) -> DVector<f64> {
        self.g.tr_mul(w)
    }
}

/// `F(u) = G u + c (G u)∘(G u)`: a mildly nonlinear map whose Gauss–Newton
/// Hessian varies with `u`.
#[derive(Debug, Clone)]
pub struct QuadraticMap {
    g: DMatrix<f64>,
    c: f64,
}

impl QuadraticMap {
    pub fn new(g: DMatrix<f64>, c: f64) -> Self {
        Self { g, c }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Dense Jacobian at `u`.
    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let s = &self.g * u;
        let mut j = self.g.clone();
        for i in 0..j.nrows() {
            let f = 1.0 + 2.0 * self.c * s[i];
            j.row_mut(i).scale_mut(f);
        }
        j
    }
}

impl ForwardMap for QuadraticMap {
    /// `G u` at the linearization point.
    type Linearization = DVector<f64>;

    fn param_dim(&self) -> usize {
        self.g.ncols()
    }

    fn output_dim(&self) -> usize {
        self.g.nrows()
    }

    fn forward(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim(self.g.ncols(), u.len())?;
        let s = &self.g * u;
        let out = s.map(|x| x + self.c * x * x);
        Ok((out, s))
    }

    fn jacobian_apply(&self, s: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        let gd = &self.g * du;
        gd.zip_map(s, |d, x| d * (1.0 + 2.0 * self.c * x))
    }

    fn jacobian_adjoint(&self, s: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let scaled = w.zip_map(s, |w, x| w * (1.0 + 2.0 * self.c * x));
        self.g.tr_mul(&scaled)
    }
}
