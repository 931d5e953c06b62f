//! Benchmark inverse problems and synthetic data generation.

pub mod diffusion;
pub mod elliptic;
pub mod linear;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::standard_normal;
use crate::model::{ForwardMap, ObservationSet};

/// How the observational noise level is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    /// `σ = max(noise-free observations) / snr`.
    Snr(f64),
    /// Explicit standard deviation.
    Sigma(f64),
}

/// Noise-free data `F(u_true)` plus `N(0, σ² I)` noise. Returns the data and
/// `σ`. A zero `σ` yields exact data with unit nominal variance.
pub fn synthesize_data<F: ForwardMap, R: Rng + ?Sized>(
    forward: &F,
    truth: &DVector<f64>,
    noise: NoiseLevel,
    rng: &mut R,
) -> Result<(ObservationSet, f64)> {
    let (clean, _) = forward.forward(truth)?;
    let sigma = match noise {
        NoiseLevel::Sigma(s) => s,
        NoiseLevel::Snr(snr) => {
            if !(snr > 0.0) {
                return Err(Error::InvalidParameter(format!("SNR {snr} must be positive")));
            }
            let peak = clean.max();
            let peak = if peak > 0.0 { peak } else { clean.amax() };
            peak / snr
        }
    };
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level {sigma} must be nonnegative")));
    }
    let noise = standard_normal(rng, clean.len()) * sigma;
    let y = clean + noise;
    let var = if sigma > 0.0 { sigma * sigma } else { 1.0 };
    let n = y.len();
    Ok((ObservationSet::new(y, DVector::from_element(n, var))?, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::linear::LinearMap;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_gives_zero_misfit() {
        let map = LinearMap::new(DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0));
        let truth = DVector::from_vec(vec![0.3, -0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (obs, sigma) = synthesize_data(&map, &truth, NoiseLevel::Sigma(0.0), &mut rng).unwrap();
        assert_eq!(sigma, 0.0);
        assert_eq!(obs.misfit(&map.forward(&truth).unwrap().0), 0.0);
    }

    #[test]
    fn snr_ratio() {
        let map = LinearMap::new(DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 - 1.0));
        let truth = DVector::from_vec(vec![1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, s10) = synthesize_data(&map, &truth, NoiseLevel::Snr(10.0), &mut rng).unwrap();
        let (_, s50) = synthesize_data(&map, &truth, NoiseLevel::Snr(50.0), &mut rng).unwrap();
        assert!((s10 / s50 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn expected_misfit_is_half_data_count() {
        let map = LinearMap::new(DMatrix::from_fn(25, 3, |i, j| ((i + 3 * j) as f64).sin()));
        let truth = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let clean = map.forward(&truth).unwrap().0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let reps = 4000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let (obs, _) = synthesize_data(&map, &truth, NoiseLevel::Sigma(0.2), &mut rng).unwrap();
            acc += obs.misfit(&clean);
        }
        let mean = acc / reps as f64;
        // η is χ²₂₅/2: variance 25/2.
        let se = (12.5f64 / reps as f64).sqrt();
        assert!((mean - 12.5).abs() < 3.0 * se, "mean {mean}");
    }
}
