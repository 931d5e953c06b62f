//! Operator-weighted proposals `v' = A v − G ∇η + B ξ`.
//!
//! `A`, `B` and `G` share the eigenbasis `[Ψ_r, Ψ_⊥]`: on the columns of
//! `Ψ_r` they act by the diagonals `a`, `b`, `g`, and on the orthogonal
//! complement by the scalars `a_⊥`, `b_⊥`, `g_⊥`. `Ψ_⊥` is never formed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::standard_normal;
use crate::lowrank::{LowRankEig, ReweightedBasis};

/// Entries larger than this violate the boundedness condition.
pub const OPERATOR_BOUND: f64 = 1e8;
/// Nonzero noise weights must be at least this large.
pub const NOISE_FLOOR: f64 = 1e-8;
/// Allowed movement along a noiseless direction in the acceptance ratio.
pub const FROZEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    PcnRw,
    HLangevin,
    LiPrior,
    LiLangevin,
    MgliPrior,
    MgliLangevin,
}

impl ProposalKind {
    pub const ALL: [ProposalKind; 6] = [
        ProposalKind::PcnRw,
        ProposalKind::HLangevin,
        ProposalKind::LiPrior,
        ProposalKind::LiLangevin,
        ProposalKind::MgliPrior,
        ProposalKind::MgliLangevin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProposalKind::PcnRw => "pcn-rw",
            ProposalKind::HLangevin => "h-langevin",
            ProposalKind::LiPrior => "li-prior",
            ProposalKind::LiLangevin => "li-langevin",
            ProposalKind::MgliPrior => "mgli-prior",
            ProposalKind::MgliLangevin => "mgli-langevin",
        }
    }

    /// Uses an adaptively built LIS.
    pub fn uses_lis(self) -> bool {
        !matches!(self, ProposalKind::PcnRw | ProposalKind::HLangevin)
    }

    /// Metropolis-within-Gibbs over LIS and CS.
    pub fn is_gibbs(self) -> bool {
        matches!(self, ProposalKind::MgliPrior | ProposalKind::MgliLangevin)
    }

    pub fn is_langevin(self) -> bool {
        matches!(self, ProposalKind::HLangevin | ProposalKind::LiLangevin | ProposalKind::MgliLangevin)
    }
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProposalKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown proposal '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    AllAtOnce,
    /// Moves only the LIS coordinates.
    GibbsLis,
    /// Moves only the complement.
    GibbsCs,
}

/// First violated well-posedness condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Condition number 1–4.
    pub condition: u8,
    /// LIS index, or `None` for the complement.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "condition {} at LIS index {i}: {}", self.condition, self.message),
            None => write!(f, "condition {} on the complement: {}", self.condition, self.message),
        }
    }
}

/// Spectral representation of `A`, `B`, `G`.
#[derive(Debug, Clone)]
pub struct ProposalOperators {
    pub psi: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub g: DVector<f64>,
    pub a_perp: f64,
    pub b_perp: f64,
    pub g_perp: f64,
    pub dt_lis: f64,
    pub dt_cs: f64,
    pub mode: Mode,
}

/// A point with its misfit and (optional) whitened gradient.
#[derive(Debug, Clone, Copy)]
pub struct PointEval<'a> {
    pub v: &'a DVector<f64>,
    pub misfit: f64,
    pub gradient: Option<&'a DVector<f64>>,
}

impl ProposalOperators {
    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn rank(&self) -> usize {
        self.psi.ncols()
    }

    pub fn needs_gradient(&self) -> bool {
        self.g_perp != 0.0 || self.g.iter().any(|&g| g != 0.0)
    }

    /// `Σ (a_i² + b_i² − 1)²` over all `N` directions.
    pub fn condition4_sum(&self) -> f64 {
        let lis: f64 = self.a.iter().zip(self.b.iter()).map(|(a, b)| (a * a + b * b - 1.0).powi(2)).sum();
        let perp = (self.a_perp * self.a_perp + self.b_perp * self.b_perp - 1.0).powi(2);
        lis + (self.dim() - self.rank()) as f64 * perp
    }

    /// Check the four well-posedness conditions; returns the first violation.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let entries = (0..self.rank())
            .map(|i| (Some(i), self.a[i], self.b[i], self.g[i]))
            .chain(std::iter::once((None, self.a_perp, self.b_perp, self.g_perp)));
        for (index, a, b, g) in entries {
            if ![a, b, g].iter().all(|x| x.is_finite() && x.abs() <= OPERATOR_BOUND) {
                return Err(Violation { condition: 1, index, message: format!("unbounded entry (a={a}, b={b}, g={g})") });
            }
            if b != 0.0 && a.abs() >= 1.0 {
                return Err(Violation { condition: 1, index, message: format!("unstable diagonal |a| = {} ≥ 1", a.abs()) });
            }
            if b == 0.0 {
                if a != 1.0 || g != 0.0 {
                    return Err(Violation {
                        condition: 2,
                        index,
                        message: format!("b = 0 requires a = 1 and g = 0, found a={a}, g={g}"),
                    });
                }
            } else if b.abs() < NOISE_FLOOR {
                return Err(Violation { condition: 3, index, message: format!("noise weight {b:e} below {NOISE_FLOOR:e}") });
            }
        }
        let perp = self.a_perp * self.a_perp + self.b_perp * self.b_perp - 1.0;
        if perp.abs() > 1e-12 && self.dim() > self.rank() {
            return Err(Violation {
                condition: 4,
                index: None,
                message: format!(
                    "a_perp² + b_perp² − 1 = {perp:e} on {} directions; sum = {:e}",
                    self.dim() - self.rank(),
                    self.condition4_sum()
                ),
            });
        }
        Ok(())
    }

    /// Deterministic proposal for a given `N`-dimensional noise vector.
    pub fn propose_with_noise(&self, v: &DVector<f64>, grad: Option<&DVector<f64>>, xi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), xi.len())?;
        let xi_w = self.psi.tr_mul(xi);
        self.propose_split(v, grad, Some(xi), &xi_w)
    }

    /// Draw a proposal. When the complement is frozen only `r` normals are drawn.
    pub fn propose<R: Rng + ?Sized>(&self, v: &DVector<f64>, grad: Option<&DVector<f64>>, rng: &mut R) -> Result<DVector<f64>> {
        if self.b_perp == 0.0 {
            let xi_w = standard_normal(rng, self.rank());
            self.propose_split(v, grad, None, &xi_w)
        } else {
            let xi = standard_normal(rng, self.dim());
            self.propose_with_noise(v, grad, &xi)
        }
    }

    fn propose_split(
        &self,
        v: &DVector<f64>,
        grad: Option<&DVector<f64>>,
        xi: Option<&DVector<f64>>,
        xi_w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        let w = self.psi.tr_mul(v);
        let mut out = v * self.a_perp;
        let mut coef = DVector::zeros(self.rank());
        for i in 0..self.rank() {
            coef[i] = (self.a[i] - self.a_perp) * w[i] + (self.b[i] - self.b_perp) * xi_w[i];
        }
        if self.needs_gradient() {
            let grad = grad.ok_or_else(|| Error::Contract("proposal requires the gradient".into()))?;
            check_dim(self.dim(), grad.len())?;
            let gw = self.psi.tr_mul(grad);
            for i in 0..self.rank() {
                coef[i] -= (self.g[i] - self.g_perp) * gw[i];
            }
            if self.g_perp != 0.0 {
                out.axpy(-self.g_perp, grad, 1.0);
            }
        }
        if self.b_perp != 0.0 {
            let xi = xi.ok_or_else(|| Error::Contract("complement noise missing".into()))?;
            out.axpy(self.b_perp, xi, 1.0);
        }
        out.gemv(1.0, &self.psi, &coef, 1.0);
        Ok(out)
    }

    /// `ρ(x, y) + η(x) + ⟨v_ref, x⟩` for the move `x → y`: the part of `ρ`
    /// that does not cancel between the two directions.
    fn rho(&self, x: &PointEval, y: &DVector<f64>) -> Result<f64> {
        let w = self.psi.tr_mul(x.v);
        let w_to = self.psi.tr_mul(y);
        let c = x.v - &self.psi * &w;
        let c_to = y - &self.psi * &w_to;
        let mut value = 0.0;

        let gw = if self.needs_gradient() {
            let g = x.gradient.ok_or_else(|| Error::Contract("acceptance ratio requires the gradient".into()))?;
            Some((self.psi.tr_mul(g), g))
        } else {
            None
        };

        for i in 0..self.rank() {
            let (a, b) = (self.a[i], self.b[i]);
            if b == 0.0 {
                let moved = (w_to[i] - w[i]).abs();
                if moved > FROZEN_TOLERANCE * w[i].abs().max(1.0) {
                    return Err(Error::Contract(format!("LIS index {i} has b = 0 but moved by {moved:e}")));
                }
                continue;
            }
            let b2 = b * b;
            value -= 0.5 * (a * a + b2 - 1.0) / b2 * w[i] * w[i];
            if let Some((gw, _)) = &gw {
                let gg = self.g[i] * gw[i];
                value -= gg / b2 * (w_to[i] - a * w[i]) + 0.5 * gg * gg / b2;
            }
        }

        if self.b_perp == 0.0 {
            let moved = (&c_to - &c).norm();
            if moved > FROZEN_TOLERANCE * c.norm().max(1.0) {
                return Err(Error::Contract(format!("complement has b = 0 but moved by {moved:e}")));
            }
        } else {
            let (a, b2) = (self.a_perp, self.b_perp * self.b_perp);
            value -= 0.5 * (a * a + b2 - 1.0) / b2 * c.norm_squared();
            if self.g_perp != 0.0 {
                let (gw, g) = gw.as_ref().expect("gradient checked above");
                let gc = *g - &self.psi * gw;
                let step = &c_to - &c * a;
                value -= self.g_perp / b2 * gc.dot(&step) + 0.5 * self.g_perp * self.g_perp / b2 * gc.norm_squared();
            }
        }
        Ok(value)
    }

    /// `ρ(v', v) − ρ(v, v')`: log of the Metropolis–Hastings ratio. The
    /// misfit and reference terms are differenced first to limit cancellation.
    pub fn acceptance_log_ratio(&self, current: &PointEval, proposed: &PointEval, v_ref: &DVector<f64>) -> Result<f64> {
        let correction = self.rho(proposed, current.v)? - self.rho(current, proposed.v)?;
        Ok(simplified_log_ratio(current, proposed, v_ref) + correction)
    }
}

/// `η(v) − η(v') + ⟨v_ref, v − v'⟩`, valid for prior-reversible operators.
pub fn simplified_log_ratio(current: &PointEval, proposed: &PointEval, v_ref: &DVector<f64>) -> f64 {
    current.misfit - proposed.misfit + v_ref.dot(&(current.v - proposed.v))
}

fn check_steps(dt_lis: f64, dt_cs: f64) -> Result<()> {
    if !(dt_lis > 0.0 && dt_cs > 0.0 && dt_lis.is_finite() && dt_cs.is_finite()) {
        return Err(Error::InvalidParameter(format!("step sizes must be positive (got {dt_lis}, {dt_cs})")));
    }
    Ok(())
}

fn crank_nicolson(dt: f64) -> (f64, f64) {
    let a = (2.0 - dt) / (2.0 + dt);
    (a, ((1.0 - a) * (1.0 + a)).max(0.0).sqrt())
}

struct Triple {
    a: DVector<f64>,
    b: DVector<f64>,
    g: DVector<f64>,
}

fn prior_triple(d: &DVector<f64>, dt: f64) -> Triple {
    let (a, b): (Vec<f64>, Vec<f64>) = d.iter().map(|&d| crank_nicolson(dt * d)).unzip();
    Triple { a: DVector::from_vec(a), b: DVector::from_vec(b), g: DVector::zeros(d.len()) }
}

fn langevin_triple(d: &DVector<f64>, dt: f64) -> Triple {
    Triple {
        a: d.map(|d| 1.0 - dt * d),
        b: d.map(|d| (2.0 * dt * d).sqrt()),
        g: d.map(|d| dt * d),
    }
}

fn from_triple(rb: &ReweightedBasis, t: Triple, perp: (f64, f64, f64), dt_lis: f64, dt_cs: f64, mode: Mode) -> ProposalOperators {
    ProposalOperators {
        psi: rb.psi.clone(),
        a: t.a,
        b: t.b,
        g: t.g,
        a_perp: perp.0,
        b_perp: perp.1,
        g_perp: perp.2,
        dt_lis,
        dt_cs,
        mode,
    }
}

/// Crank–Nicolson in both subspaces, scaled by the LIS covariance.
pub fn build_li_prior(rb: &ReweightedBasis, dt_lis: f64, dt_cs: f64) -> Result<ProposalOperators> {
    check_steps(dt_lis, dt_cs)?;
    let (a, b) = crank_nicolson(dt_cs);
    Ok(from_triple(rb, prior_triple(&rb.d, dt_lis), (a, b, 0.0), dt_lis, dt_cs, Mode::AllAtOnce))
}

/// Explicit Langevin in the LIS, Crank–Nicolson in the complement.
pub fn build_li_langevin(rb: &ReweightedBasis, dt_lis: f64, dt_cs: f64) -> Result<ProposalOperators> {
    check_steps(dt_lis, dt_cs)?;
    let (a, b) = crank_nicolson(dt_cs);
    Ok(from_triple(rb, langevin_triple(&rb.d, dt_lis), (a, b, 0.0), dt_lis, dt_cs, Mode::AllAtOnce))
}

/// Metropolis-within-Gibbs pair: LIS-only and complement-only operators.
pub fn build_mgli(rb: &ReweightedBasis, dt_lis: f64, dt_cs: f64, langevin: bool) -> Result<(ProposalOperators, ProposalOperators)> {
    check_steps(dt_lis, dt_cs)?;
    let triple = if langevin { langevin_triple(&rb.d, dt_lis) } else { prior_triple(&rb.d, dt_lis) };
    let lis = from_triple(rb, triple, (1.0, 0.0, 0.0), dt_lis, dt_cs, Mode::GibbsLis);
    let r = rb.rank();
    let (a, b) = crank_nicolson(dt_cs);
    let frozen = Triple { a: DVector::from_element(r, 1.0), b: DVector::zeros(r), g: DVector::zeros(r) };
    let cs = from_triple(rb, frozen, (a, b, 0.0), dt_lis, dt_cs, Mode::GibbsCs);
    Ok((lis, cs))
}

/// pCN random walk `v' = a v + √(1−a²) ξ`.
pub fn build_pcn(dim: usize, a: f64) -> Result<ProposalOperators> {
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("pCN parameter {a} must lie in (-1, 1)")));
    }
    Ok(ProposalOperators {
        psi: DMatrix::zeros(dim, 0),
        a: DVector::zeros(0),
        b: DVector::zeros(0),
        g: DVector::zeros(0),
        a_perp: a,
        b_perp: ((1.0 - a) * (1.0 + a)).sqrt(),
        g_perp: 0.0,
        dt_lis: 0.0,
        dt_cs: (2.0 * (1.0 - a)) / (1.0 + a),
        mode: Mode::AllAtOnce,
    })
}

/// Explicit Langevin preconditioned by the Laplace covariance at the MAP.
pub fn build_h_langevin(map_eig: &LowRankEig, dt: f64) -> Result<ProposalOperators> {
    check_steps(dt, dt)?;
    let p = map_eig.values.map(|l| 1.0 / (1.0 + l));
    Ok(ProposalOperators {
        psi: map_eig.basis.clone(),
        a: p.map(|p| 1.0 - dt * p),
        b: p.map(|p| (2.0 * dt * p).sqrt()),
        g: p.map(|p| dt * p),
        a_perp: 1.0 - dt,
        b_perp: (2.0 * dt).sqrt(),
        g_perp: dt,
        dt_lis: dt,
        dt_cs: dt,
        mode: Mode::AllAtOnce,
    })
}
