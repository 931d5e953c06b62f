//! Chain diagnostics: autocorrelation, integrated autocorrelation time,
//! effective sample size and batch-means standard errors.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};

/// Sample autocorrelation function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Acf {
    pub values: Vec<f64>,
    /// The series was constant; `values` is 1 at lag 0 and 0 elsewhere.
    pub degenerate: bool,
}

/// Autocovariance sums `Σ_t x_t x_{t+k}` of the centred series, lags `0..=max_lag`.
fn autocovariance_sums(centered: &[f64], max_lag: usize) -> Vec<f64> {
    let n = centered.len();
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = centered.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(max_lag + 1).map(|z| z.re / size as f64).collect()
}

/// Mean-removed ACF with the biased (`1/n`) normalization.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Acf> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::InvalidParameter(format!("series of length {n} too short for lag {max_lag}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    let scale = series.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(c0 > (1e-14 * scale).powi(2) * n as f64) {
        let mut values = vec![0.0; max_lag + 1];
        values[0] = 1.0;
        return Ok(Acf { values, degenerate: true });
    }
    let sums = autocovariance_sums(&centered, max_lag);
    let values = sums.iter().map(|s| (s / c0).clamp(-1.0, 1.0)).collect();
    Ok(Acf { values, degenerate: false })
}

/// Integrated autocorrelation time by Geyer's initial monotone sequence.
/// Constant series give `+∞`.
pub fn iact(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 4 {
        return Err(Error::InvalidParameter(format!("series of length {n} too short for IACT")));
    }
    let acf = autocorrelation(series, n - 1)?;
    if acf.degenerate {
        return Ok(f64::INFINITY);
    }
    let rho = &acf.values;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = rho[2 * k] + rho[2 * k + 1];
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        k += 1;
    }
    Ok((2.0 * sum - 1.0).max(1.0 / n as f64))
}

/// Effective sample size `n / τ`.
pub fn ess(series: &[f64]) -> Result<f64> {
    Ok(series.len() as f64 / iact(series)?)
}

/// Standard error of the mean from `⌊√n⌋` non-overlapping batches.
pub fn batch_means_se(series: &[f64]) -> Result<f64> {
    let n = series.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return Err(Error::InvalidParameter(format!("series of length {n} too short for batch means")));
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Lag-1 autocorrelation per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lag1 {
    pub values: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Lag-1 autocorrelation of every coordinate of the samples (columns of
/// `samples`, one per iteration), optionally after projecting onto the
/// columns of `basis`.
pub fn lag1_by_component(samples: &DMatrix<f64>, basis: Option<&DMatrix<f64>>) -> Result<Lag1> {
    let projected;
    let coords = match basis {
        Some(b) => {
            projected = b.tr_mul(samples);
            &projected
        }
        None => samples,
    };
    let mut values = Vec::with_capacity(coords.nrows());
    let mut degenerate = Vec::with_capacity(coords.nrows());
    for i in 0..coords.nrows() {
        let row: Vec<f64> = coords.row(i).iter().copied().collect();
        let acf = autocorrelation(&row, 1)?;
        values.push(acf.values[1]);
        degenerate.push(acf.degenerate);
    }
    Ok(Lag1 { values, degenerate })
}

/// Median of the finite values.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sample mean and unbiased variance of each row of a sample matrix.
pub fn moments(samples: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = samples.ncols() as f64;
    let mean = samples.column_mean();
    let var = DVector::from_iterator(
        samples.nrows(),
        (0..samples.nrows()).map(|i| samples.row(i).iter().map(|x| (x - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)),
    );
    (mean, var)
}
