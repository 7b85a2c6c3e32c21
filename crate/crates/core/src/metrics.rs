//! Model-quality measurements for a measured/simulated output pair.
//!
//! * fit: `100 (1 - |y - ŷ| / |y - mean(y)|)`, unfitness is `100 - fit`
//! * loss: mean squared simulation error `V`
//! * FPE: `V (1 + d/N) / (1 - d/N)`
//! * MSE: normalized, `Σe² / Σ(y - mean(y))²`; the plain mean is kept as
//!   `mse_plain`
//!
//! Metrics that cannot be computed (one sample, constant output, `N <= d`)
//! come back as `None` instead of aborting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{mean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("sample count must exceed parameter count")]
    DegenerateSampleCount,
    #[error("length mismatch between measured and simulated output")]
    LengthMismatch,
}

fn check_pair<T>(y: &[T], yhat: &[T], min_len: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch);
    }
    if y.len() < min_len {
        return Err(MetricError::Undefined("too few samples"));
    }
    Ok(())
}

fn sum_sq_err<T: Scalar>(y: &[T], yhat: &[T]) -> T {
    y.iter().zip(yhat).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
}

fn sum_sq_dev<T: Scalar>(y: &[T]) -> T {
    let m = mean(y);
    y.iter().map(|v| (*v - m) * (*v - m)).sum()
}

/// NRMSE fit percentage. Can be negative for models worse than the mean.
pub fn nrmse_fit<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    check_pair(y, yhat, 2)?;
    let dev = sum_sq_dev(y);
    if dev == T::zero() {
        return Err(MetricError::Undefined("measured output is constant"));
    }
    let ratio = (sum_sq_err(y, yhat) / dev).sqrt();
    Ok(T::lit(100.0) * (T::one() - ratio))
}

pub fn unfitness<T: Scalar>(fit: T) -> T {
    T::lit(100.0) - fit
}

pub fn loss_fn<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    check_pair(y, yhat, 1)?;
    Ok(sum_sq_err(y, yhat) / T::from_usize_lossy(y.len()))
}

/// Akaike's final prediction error.
pub fn fpe<T: Scalar>(loss: T, d: usize, n: usize) -> Result<T, MetricError> {
    if n == 0 || n <= d {
        return Err(MetricError::DegenerateSampleCount);
    }
    let ratio = T::from_usize_lossy(d) / T::from_usize_lossy(n);
    Ok(loss * (T::one() + ratio) / (T::one() - ratio))
}

pub fn mse_plain<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    loss_fn(y, yhat)
}

pub fn mse_normalized<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T, MetricError> {
    check_pair(y, yhat, 2)?;
    let dev = sum_sq_dev(y);
    if dev == T::zero() {
        return Err(MetricError::Undefined("measured output is constant"));
    }
    Ok(sum_sq_err(y, yhat) / dev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics<T> {
    pub fit: Option<T>,
    pub unfit: Option<T>,
    #[serde(rename = "V")]
    pub loss: Option<T>,
    pub fpe: Option<T>,
    pub mse: Option<T>,
    pub mse_plain: Option<T>,
    pub n: usize,
    pub d: usize,
}

impl<T: Scalar> QualityMetrics<T> {
    /// Scores `yhat` against `y` for a model with `d` free parameters.
    pub fn compute(y: &[T], yhat: &[T], d: usize) -> Self {
        let fit = nrmse_fit(y, yhat).ok();
        let loss = loss_fn(y, yhat).ok();
        Self {
            fit,
            unfit: fit.map(unfitness),
            loss,
            fpe: loss.and_then(|v| fpe(v, d, y.len()).ok()),
            mse: mse_normalized(y, yhat).ok(),
            mse_plain: mse_plain(y, yhat).ok(),
            n: y.len(),
            d,
        }
    }

    /// Whether the percentage fit could be computed.
    pub fn is_defined(&self) -> bool {
        self.fit.is_some()
    }
}
