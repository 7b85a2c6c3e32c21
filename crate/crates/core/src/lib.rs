//! Identification, validation and step analysis of continuous-time
//! transfer-function models for repetitive production processes.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod estim;
pub mod io;
pub mod lti;
pub mod metrics;
pub mod protocol;
pub mod scalar;
pub mod series;
pub mod stepan;
pub mod synth;
pub mod workflow;

pub use scalar::Scalar;

pub use estim::{CandidateModel, EstimError, FitOptions};
pub use lti::{LtiError, Response, TransferFunction};
pub use metrics::{MetricError, QualityMetrics};
pub use protocol::{ProtocolError, ProtocolOptions, ProtocolReport};
pub use series::{NormalizedPair, Partition, SampledSeries, SeriesError};
pub use stepan::{StateClass, StepError, StepMetrics};

pub type TransferFunction64 = TransferFunction<f64>;
pub type TransferFunction32 = TransferFunction<f32>;
pub type SampledSeries64 = SampledSeries<f64>;
pub type NormalizedPair64 = NormalizedPair<f64>;
pub type CandidateModel64 = CandidateModel<f64>;
pub type FitOptions64 = FitOptions<f64>;
pub type QualityMetrics64 = QualityMetrics<f64>;
pub type StepMetrics64 = StepMetrics<f64>;
pub type ProtocolReport64 = ProtocolReport<f64>;
pub type Response64 = Response<f64>;
