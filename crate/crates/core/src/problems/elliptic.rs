//! Log-permeability inversion for `−∇·(κ∇p) = f` on the unit square with
//! no-flux boundaries and a zero-mean boundary condition on `p`.
//!
//! Discretization: `n × n` bilinear (Q1) elements, one value of `u = ln κ`
//! per element, nodes numbered row-major (`node = j (n+1) + i`). The boundary
//! condition enters through a Lagrange multiplier; the bordered system is
//! solved exactly by a banded Cholesky factorization of the anchored
//! stiffness matrix plus a rank-one correction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{BayesModel, ForwardMap};
use crate::prior::{CovarianceSpec, PriorFactor};
use crate::problems::{synthesize_data, NoiseLevel};

/// Unit-coefficient Q1 stiffness on a square element, counter-clockwise
/// node order starting bottom-left. Independent of the element size.
const LOCAL_STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Gaussian source term `weight · N(center, std² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plume {
    pub center: [f64; 2],
    pub weight: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticConfig {
    /// Elements per side.
    pub n: usize,
    pub plumes: Vec<Plume>,
    pub sensors: Vec<[f64; 2]>,
    pub sigma_u: f64,
    pub length: f64,
}

impl EllipticConfig {
    pub fn new(n: usize) -> Self {
        let plume = |x, y, w| Plume { center: [x, y], weight: w, std: 0.05 };
        let lattice = (0..5)
            .flat_map(|j| (0..5).map(move |i| [0.1 + 0.2 * i as f64, 0.1 + 0.2 * j as f64]))
            .collect();
        Self {
            n,
            plumes: vec![plume(0.3, 0.3, 2.0), plume(0.7, 0.3, -3.0), plume(0.7, 0.7, -2.0), plume(0.3, 0.7, 3.0)],
            sensors: lattice,
            sigma_u: 1.25,
            length: 0.0625,
        }
    }
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self::new(40)
    }
}

/// Cell centres of an `n × n` grid, row-major.
pub fn cell_centers(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / n as f64;
    (0..n * n).map(|k| [((k % n) as f64 + 0.5) * h, ((k / n) as f64 + 0.5) * h]).collect()
}

/// Symmetric positive definite banded matrix and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + d] = L[i][i − d]`.
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factor a matrix given in the same lower-band layout.
    pub fn factor(n: usize, bw: usize, mut a: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = a[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= a[i * w + (i - k)] * a[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver(format!("stiffness matrix not positive definite at pivot {i} ({s:e})")));
                    }
                    a[i * w] = s.sqrt();
                } else {
                    a[i * w + (i - j)] = s / a[j * w];
                }
            }
        }
        Ok(Self { n, bw, l: a })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        x
    }
}

/// Forward map `u ↦ p(sensors)`.
#[derive(Debug, Clone)]
pub struct EllipticForward {
    n: usize,
    load: DVector<f64>,
    constraint: DVector<f64>,
    constraint_sum: f64,
    /// Four `(node, weight)` pairs per sensor.
    sensors: Vec<[(usize, f64); 4]>,
    sensor_points: Vec<[f64; 2]>,
}

/// Cached forward solve.
#[derive(Debug, Clone)]
pub struct EllipticLinearization {
    kappa: Vec<f64>,
    pub potential: DVector<f64>,
    factor: Arc<BandCholesky>,
}

impl EllipticForward {
    pub fn new(config: &EllipticConfig) -> Result<Self> {
        let n = config.n;
        if n == 0 {
            return Err(Error::InvalidParameter("grid must have at least one element".into()));
        }
        let h = 1.0 / n as f64;
        let nn = (n + 1) * (n + 1);

        // Load vector by 3×3 Gauss quadrature per element.
        let gauss = [(0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0)];
        let source = |x: f64, y: f64| {
            config
                .plumes
                .iter()
                .map(|p| {
                    let d2 = (x - p.center[0]).powi(2) + (y - p.center[1]).powi(2);
                    p.weight / (2.0 * std::f64::consts::PI * p.std * p.std) * (-d2 / (2.0 * p.std * p.std)).exp()
                })
                .sum::<f64>()
        };
        let mut load = DVector::zeros(nn);
        for ej in 0..n {
            for ei in 0..n {
                let nodes = element_nodes(n, ei, ej);
                for &(xi, wx) in &gauss {
                    for &(eta, wy) in &gauss {
                        let f = source((ei as f64 + xi) * h, (ej as f64 + eta) * h) * wx * wy * h * h;
                        let shape = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
                        for a in 0..4 {
                            load[nodes[a]] += f * shape[a];
                        }
                    }
                }
            }
        }

        let mut constraint = DVector::zeros(nn);
        for j in 0..=n {
            for i in 0..=n {
                if i == 0 || j == 0 || i == n || j == n {
                    constraint[j * (n + 1) + i] = h;
                }
            }
        }
        let constraint_sum = constraint.sum();

        let mut sensors = Vec::with_capacity(config.sensors.len());
        for s in &config.sensors {
            if !(0.0..=1.0).contains(&s[0]) || !(0.0..=1.0).contains(&s[1]) {
                return Err(Error::InvalidParameter(format!("sensor {s:?} outside the unit square")));
            }
            let ei = ((s[0] / h).floor() as usize).min(n - 1);
            let ej = ((s[1] / h).floor() as usize).min(n - 1);
            let xi = s[0] / h - ei as f64;
            let eta = s[1] / h - ej as f64;
            let nodes = element_nodes(n, ei, ej);
            let shape = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
            sensors.push([(nodes[0], shape[0]), (nodes[1], shape[1]), (nodes[2], shape[2]), (nodes[3], shape[3])]);
        }
        Ok(Self { n, load, constraint, constraint_sum, sensors, sensor_points: config.sensors.clone() })
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    pub fn constraint(&self) -> &DVector<f64> {
        &self.constraint
    }

    pub fn sensor_points(&self) -> &[[f64; 2]] {
        &self.sensor_points
    }

    /// Dense stiffness matrix for `κ = exp(u)` (test oracle).
    pub fn stiffness_dense(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut k = DMatrix::zeros(nn, nn);
        for ej in 0..self.n {
            for ei in 0..self.n {
                let kappa = u[ej * self.n + ei].exp();
                let nodes = element_nodes(self.n, ei, ej);
                for a in 0..4 {
                    for b in 0..4 {
                        k[(nodes[a], nodes[b])] += kappa * LOCAL_STIFFNESS[a][b];
                    }
                }
            }
        }
        k
    }

    /// Dense sensor operator `M` (test oracle).
    pub fn observation_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.sensors.len(), self.n_nodes());
        for (s, w) in self.sensors.iter().enumerate() {
            for &(node, weight) in w {
                m[(s, node)] += weight;
            }
        }
        m
    }

    fn observe(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.sensors.len(), self.sensors.iter().map(|w| w.iter().map(|&(k, c)| c * p[k]).sum()))
    }

    fn observe_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_nodes());
        for (s, pairs) in self.sensors.iter().enumerate() {
            for &(k, c) in pairs {
                out[k] += c * w[s];
            }
        }
        out
    }

    fn factor(&self, kappa: &[f64]) -> Result<BandCholesky> {
        let n = self.n;
        let nn = self.n_nodes();
        let bw = n + 2;
        let w = bw + 1;
        let mut band = vec![0.0; nn * w];
        for ej in 0..n {
            for ei in 0..n {
                let kap = kappa[ej * n + ei];
                let nodes = element_nodes(n, ei, ej);
                for a in 0..4 {
                    for b in 0..4 {
                        let (r, c) = (nodes[a], nodes[b]);
                        if r >= c {
                            band[r * w + (r - c)] += kap * LOCAL_STIFFNESS[a][b];
                        }
                    }
                }
            }
        }
        // Anchor one node; any positive value makes the singular Neumann matrix SPD.
        let mean_kappa = kappa.iter().sum::<f64>() / kappa.len() as f64;
        band[0] += mean_kappa;
        BandCholesky::factor(nn, bw, band)
    }

    /// Solve `K p + c λ = g`, `cᵀ p = 0` for `p`.
    fn saddle_solve(&self, factor: &BandCholesky, g: &DVector<f64>) -> DVector<f64> {
        let lambda = g.sum() / self.constraint_sum;
        let rhs = g - &self.constraint * lambda;
        let mut q = factor.solve(&rhs);
        let shift = self.constraint.dot(&q) / self.constraint_sum;
        q.add_scalar_mut(-shift);
        q
    }

    /// Nodal potential for the log-permeability `u`.
    pub fn solve_potential(&self, u: &DVector<f64>) -> Result<EllipticLinearization> {
        check_dim(self.n * self.n, u.len())?;
        let kappa: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        if kappa.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::Solver("permeability overflow".into()));
        }
        let factor = self.factor(&kappa)?;
        let potential = self.saddle_solve(&factor, &self.load);
        Ok(EllipticLinearization { kappa, potential, factor: Arc::new(factor) })
    }

    /// `−∇·(κ δu ∇p)` assembled: `−Σ_e δu_e κ_e K_e p_e`.
    fn tangent_rhs(&self, lin: &EllipticLinearization, du: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut rhs = DVector::zeros(self.n_nodes());
        for ej in 0..n {
            for ei in 0..n {
                let e = ej * n + ei;
                let nodes = element_nodes(n, ei, ej);
                let s = du[e] * lin.kappa[e];
                for a in 0..4 {
                    let kp: f64 = (0..4).map(|b| LOCAL_STIFFNESS[a][b] * lin.potential[nodes[b]]).sum();
                    rhs[nodes[a]] -= s * kp;
                }
            }
        }
        rhs
    }
}

fn element_nodes(n: usize, ei: usize, ej: usize) -> [usize; 4] {
    let row = n + 1;
    let n0 = ej * row + ei;
    [n0, n0 + 1, n0 + row + 1, n0 + row]
}

impl ForwardMap for EllipticForward {
    type Linearization = EllipticLinearization;

    fn param_dim(&self) -> usize {
        self.n * self.n
    }

    fn output_dim(&self) -> usize {
        self.sensors.len()
    }

    fn forward(&self, u: &DVector<f64>) -> Result<(DVector<f64>, EllipticLinearization)> {
        let lin = self.solve_potential(u)?;
        Ok((self.observe(&lin.potential), lin))
    }

    fn jacobian_apply(&self, lin: &EllipticLinearization, du: &DVector<f64>) -> DVector<f64> {
        let dp = self.saddle_solve(&lin.factor, &self.tangent_rhs(lin, du));
        self.observe(&dp)
    }

    fn jacobian_adjoint(&self, lin: &EllipticLinearization, w: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let z = self.saddle_solve(&lin.factor, &self.observe_adjoint(w));
        let mut out = DVector::zeros(n * n);
        for ej in 0..n {
            for ei in 0..n {
                let e = ej * n + ei;
                let nodes = element_nodes(n, ei, ej);
                let mut zkp = 0.0;
                for a in 0..4 {
                    let kp: f64 = (0..4).map(|b| LOCAL_STIFFNESS[a][b] * lin.potential[nodes[b]]).sum();
                    zkp += z[nodes[a]] * kp;
                }
                out[e] = -lin.kappa[e] * zkp;
            }
        }
        out
    }
}

/// Reference grid of the synthetic truth.
pub const TRUTH_GRID: usize = 20;
/// Grid on which synthetic data are generated.
pub const DATA_GRID: usize = 40;
const TRUTH_SEED: u64 = 20_141_023;
const TRUTH_SCALE: f64 = 1.2;

/// Bilinear interpolation of a cell-centred field between grids.
pub fn interpolate_cells(field: &DVector<f64>, from: usize, to: usize) -> DVector<f64> {
    let at = |i: usize, j: usize| field[j * from + i];
    DVector::from_iterator(
        to * to,
        cell_centers(to).into_iter().map(|[x, y]| {
            let fx = (x * from as f64 - 0.5).clamp(0.0, (from - 1) as f64);
            let fy = (y * from as f64 - 0.5).clamp(0.0, (from - 1) as f64);
            let (i0, j0) = ((fx.floor() as usize).min(from.saturating_sub(2)), (fy.floor() as usize).min(from.saturating_sub(2)));
            if from == 1 {
                return at(0, 0);
            }
            let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
            (1.0 - tx) * (1.0 - ty) * at(i0, j0)
                + tx * (1.0 - ty) * at(i0 + 1, j0)
                + tx * ty * at(i0 + 1, j0 + 1)
                + (1.0 - tx) * ty * at(i0, j0 + 1)
        }),
    )
}

pub fn elliptic_prior(config: &EllipticConfig) -> Result<PriorFactor> {
    PriorFactor::build(&CovarianceSpec::ExponentialKernel {
        points: cell_centers(config.n),
        sigma: config.sigma_u,
        length: config.length,
    })
}

/// Deterministic synthetic log-permeability on an `n × n` grid: a fixed-seed
/// prior draw on the reference grid, scaled by 1.2 and interpolated.
pub fn elliptic_truth(n: usize) -> Result<DVector<f64>> {
    let reference = elliptic_prior(&EllipticConfig::new(TRUTH_GRID))?;
    let mut rng = ChaCha8Rng::seed_from_u64(TRUTH_SEED);
    let draw = reference.sample(&mut rng) * TRUTH_SCALE;
    Ok(if n == TRUTH_GRID { draw } else { interpolate_cells(&draw, TRUTH_GRID, n) })
}

/// Posterior model on an `n × n` grid with data synthesized on the fixed data grid.
pub fn elliptic_model(n: usize, noise: NoiseLevel, data_seed: u64) -> Result<(BayesModel<EllipticForward>, DVector<f64>)> {
    let data_forward = EllipticForward::new(&EllipticConfig::new(DATA_GRID))?;
    let truth_data = elliptic_truth(DATA_GRID)?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let (obs, _) = synthesize_data(&data_forward, &truth_data, noise, &mut rng)?;
    let locations = data_forward.sensor_points().iter().map(|p| p.to_vec()).collect();
    let obs = obs.with_locations(locations)?;
    let config = EllipticConfig::new(n);
    let model = BayesModel::new(elliptic_prior(&config)?, obs, EllipticForward::new(&config)?)?;
    Ok((model, elliptic_truth(n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::standard_normal;

    fn dense_saddle(fwd: &EllipticForward, u: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let nn = fwd.n_nodes();
        let k = fwd.stiffness_dense(u);
        let mut s = DMatrix::zeros(nn + 1, nn + 1);
        s.view_mut((0, 0), (nn, nn)).copy_from(&k);
        for i in 0..nn {
            s[(i, nn)] = fwd.constraint()[i];
            s[(nn, i)] = fwd.constraint()[i];
        }
        let mut rhs = DVector::zeros(nn + 1);
        rhs.rows_mut(0, nn).copy_from(g);
        s.lu().solve(&rhs).unwrap().rows(0, nn).into_owned()
    }

    #[test]
    fn stiffness_symmetric_and_load_balanced() {
        let fwd = EllipticForward::new(&EllipticConfig::new(8)).unwrap();
        let u = DVector::from_fn(64, |i, _| (i as f64 * 0.3).sin());
        let k = fwd.stiffness_dense(&u);
        assert!(crate::linalg::asymmetry(&k) < 1e-14);
        assert!((k * DVector::from_element(81, 1.0)).amax() < 1e-12);
        assert!(fwd.load().sum().abs() < 1e-6 * fwd.load().amax());
    }

    #[test]
    fn banded_solve_matches_dense_saddle() {
        let fwd = EllipticForward::new(&EllipticConfig::new(6)).unwrap();
        let u = DVector::from_fn(36, |i, _| (i as f64 * 0.7).cos());
        let lin = fwd.solve_potential(&u).unwrap();
        let oracle = dense_saddle(&fwd, &u, fwd.load());
        assert!((&lin.potential - &oracle).amax() <= 1e-8 * oracle.amax());
        // Pure projection: pseudo-inverse of K then shift to the constraint.
        let k = fwd.stiffness_dense(&u);
        let ones = DVector::from_element(49, 1.0);
        let reg = &k + &ones * ones.transpose();
        let q = reg.lu().solve(fwd.load()).unwrap();
        let shift = fwd.constraint().dot(&q) / fwd.constraint().sum();
        let projected = q.add_scalar(-shift);
        assert!((&lin.potential - projected).amax() <= 1e-8 * oracle.amax());
        assert!(fwd.constraint().dot(&lin.potential).abs() < 1e-12);
    }

    #[test]
    fn zero_source_gives_zero_potential() {
        let mut cfg = EllipticConfig::new(5);
        cfg.plumes.clear();
        let fwd = EllipticForward::new(&cfg).unwrap();
        let (out, _) = fwd.forward(&DVector::zeros(25)).unwrap();
        assert_eq!(out.amax(), 0.0);
    }

    #[test]
    fn constant_shift_scales_potential() {
        let fwd = EllipticForward::new(&EllipticConfig::new(10)).unwrap();
        let u = DVector::from_fn(100, |i, _| (i as f64 * 0.21).sin());
        let c = 0.8;
        let (a, _) = fwd.forward(&u).unwrap();
        let (b, _) = fwd.forward(&u.add_scalar(c)).unwrap();
        assert!((&a * (-c).exp() - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn adjoint_identity_and_zero_direction() {
        let fwd = EllipticForward::new(&EllipticConfig::new(10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = standard_normal(&mut rng, 100);
        let (_, lin) = fwd.forward(&u).unwrap();
        let du = standard_normal(&mut rng, 100);
        let w = standard_normal(&mut rng, 25);
        let lhs = fwd.jacobian_apply(&lin, &du).dot(&w);
        let rhs = du.dot(&fwd.jacobian_adjoint(&lin, &w));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-3));
        assert_eq!(fwd.jacobian_apply(&lin, &DVector::zeros(100)).amax(), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let fwd = EllipticForward::new(&EllipticConfig::new(10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = standard_normal(&mut rng, 100);
        let du = standard_normal(&mut rng, 100);
        let (_, lin) = fwd.forward(&u).unwrap();
        let eps = 1e-5;
        let (p, _) = fwd.forward(&(&u + &du * eps)).unwrap();
        let (m, _) = fwd.forward(&(&u - &du * eps)).unwrap();
        let fd = (p - m) / (2.0 * eps);
        let exact = fwd.jacobian_apply(&lin, &du);
        assert!((fd - &exact).norm() <= 1e-5 * exact.norm());
    }

    #[test]
    fn sensors_on_nodes_read_exact_values() {
        let fwd = EllipticForward::new(&EllipticConfig::new(10)).unwrap();
        let lin = fwd.solve_potential(&DVector::zeros(100)).unwrap();
        let (out, _) = fwd.forward(&DVector::zeros(100)).unwrap();
        // Sensor (0.1, 0.1) sits on node (1, 1) of the 10×10 grid.
        assert!((out[0] - lin.potential[11 + 1]).abs() < 1e-14);
    }

    #[test]
    fn misfit_converges_under_refinement() {
        let field = |n: usize| {
            let c = cell_centers(n);
            DVector::from_fn(n * n, |k, _| (3.0 * c[k][0]).sin() * (2.0 * c[k][1]).cos())
        };
        let outputs = |n: usize| EllipticForward::new(&EllipticConfig::new(n)).unwrap().forward(&field(n)).unwrap().0;
        let reference = outputs(80);
        let errs: Vec<f64> = [10, 20, 40].iter().map(|&n| (outputs(n) - &reference).norm()).collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn interpolation_preserves_constants_and_identity() {
        let f = DVector::from_element(16, 2.5);
        assert!((interpolate_cells(&f, 4, 9).add_scalar(-2.5)).amax() < 1e-14);
        let g = DVector::from_fn(16, |i, _| i as f64);
        assert!((interpolate_cells(&g, 4, 4) - &g).amax() < 1e-12);
    }
}
