//! Entry points shared by the command line and the HTTP service, so both
//! produce identical numbers for identical inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estim::FitOptions;
use crate::io::ModelFile;
use crate::lti::LtiError;
use crate::metrics::QualityMetrics;
use crate::protocol::{identify_at_split, ProtocolError};
use crate::series::{normalize, SampledSeries};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOutput {
    pub model: ModelFile,
    pub est: QualityMetrics<f64>,
    pub val: Option<QualityMetrics<f64>>,
}

/// Normalizes `series`, estimates on `[0, split_h]` and validates on the rest.
pub fn identify_series(
    series: &SampledSeries<f64>,
    order: usize,
    split_h: f64,
    candidates: usize,
) -> Result<IdentifyOutput, WorkflowError> {
    let pair = normalize(series);
    let options = FitOptions {
        order,
        ..FitOptions::default()
    };
    let (_, id) = identify_at_split(&pair, split_h, &options, candidates)?;
    Ok(IdentifyOutput {
        model: ModelFile::from_tf(
            &id.best.tf,
            pair.offset_u(),
            pair.offset_y(),
            series.period(),
        ),
        est: id.estimation,
        val: id.validation,
    })
}

/// Simulates absolute goal depths through a stored model: the input offset
/// is removed before simulation and the output offset added back.
pub fn simulate_absolute(
    model: &ModelFile,
    u_abs: &[f64],
    period: f64,
) -> Result<Vec<f64>, WorkflowError> {
    let tf = model.tf().map_err(|_| LtiError::NonFinite)?;
    let base: Vec<f64> = u_abs.iter().map(|v| v - model.offset_u).collect();
    let y = tf.discretize_zoh(period)?.run(&base);
    Ok(y.into_iter().map(|v| v + model.offset_y).collect())
}
