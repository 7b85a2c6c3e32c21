//! Partitioned estimate → select → refine → cross-validate study.
//!
//! For every split hour on the partition grid the leading window is used for
//! estimation and the remainder for validation. Validation simulates the
//! model from `t = 0` across the whole input record so its state at the split
//! comes from its own dynamics, then scores only the validation samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estim::{multistart, refine, select_candidates, CandidateModel, EstimError, FitOptions};
use crate::lti::TransferFunction;
use crate::metrics::QualityMetrics;
use crate::scalar::Scalar;
use crate::series::{partition_grid, split_at, NormalizedPair, Partition, SeriesError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Estim(#[from] EstimError),
    #[error("estimation output has zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolOptions<T> {
    /// Partition spacing, hours.
    pub step_h: T,
    /// Candidates kept per partition for refinement.
    pub candidates: usize,
    /// Validation unfitness (percent) below which a partition qualifies as
    /// the early predictor.
    pub predictor_threshold: T,
}

impl<T: Scalar> Default for ProtocolOptions<T> {
    fn default() -> Self {
        Self {
            step_h: T::lit(20.0),
            candidates: 3,
            predictor_threshold: T::lit(15.0),
        }
    }
}

/// Best model for one estimation window with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identified<T> {
    pub best: CandidateModel<T>,
    pub refined: Vec<CandidateModel<T>>,
    pub ranked: Vec<CandidateModel<T>>,
    pub estimation: QualityMetrics<T>,
    pub validation: Option<QualityMetrics<T>>,
}

/// Scores `tf` on the validation samples of `part`. `None` when the fit
/// percentage cannot be computed there (fewer than two samples or constant
/// output).
pub fn validate_model<T: Scalar>(
    tf: &TransferFunction<T>,
    pair: &NormalizedPair<T>,
    part: &Partition<T>,
) -> Option<QualityMetrics<T>> {
    let base = pair.base();
    let yhat = tf.discretize_zoh(base.period()).ok()?.run(base.u());
    let range = part.validation();
    let q = QualityMetrics::compute(&base.y()[range.clone()], &yhat[range], tf.param_count());
    q.is_defined().then_some(q)
}

/// Multistart on the estimation window, keep the best `count`, refine each,
/// and return the one with the lowest estimation cost.
pub fn identify_partition<T: Scalar>(
    pair: &NormalizedPair<T>,
    part: &Partition<T>,
    options: &FitOptions<T>,
    count: usize,
) -> Result<Identified<T>, ProtocolError> {
    let seg = pair.segment(part.estimation());
    let ranked = multistart(&seg, options)?;
    let refined: Vec<CandidateModel<T>> = select_candidates(&ranked, count.max(1))
        .iter()
        .map(|c| refine(c, &seg, options))
        .collect();
    let best = refined
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.cost
                .partial_cmp(&b.cost)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(j))
        })
        .map(|(_, c)| c.clone())
        .ok_or(EstimError::AllStartsFailed)?;
    let yhat = best
        .tf
        .discretize_zoh(seg.period)
        .map_err(EstimError::from)?
        .run(seg.u);
    let estimation = QualityMetrics::compute(seg.y, &yhat, best.d);
    if !estimation.is_defined() {
        return Err(ProtocolError::ZeroVariance);
    }
    let validation = validate_model(&best.tf, pair, part);
    Ok(Identified {
        best,
        refined,
        ranked,
        estimation,
        validation,
    })
}

/// Single-split identification, as used by the `identify` command and the
/// HTTP endpoint.
pub fn identify_at_split<T: Scalar>(
    pair: &NormalizedPair<T>,
    split_h: T,
    options: &FitOptions<T>,
    count: usize,
) -> Result<(Partition<T>, Identified<T>), ProtocolError> {
    let (_, part) = split_at(pair, split_h)?;
    let id = identify_partition(pair, &part, options, count)?;
    Ok((part, id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult<T> {
    pub partition: usize,
    pub split_h: T,
    pub model: Option<CandidateModel<T>>,
    pub est: Option<QualityMetrics<T>>,
    pub val: Option<QualityMetrics<T>>,
    /// Set when the partition could not be estimated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReportConfig<T> {
    pub fit: FitOptions<T>,
    pub protocol: ProtocolOptions<T>,
    pub samples: usize,
    pub period_h: T,
    pub offset_u: T,
    pub offset_y: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProtocolReport<T> {
    pub fingerprint: String,
    pub config: ReportConfig<T>,
    pub partitions: Vec<PartitionResult<T>>,
    /// Partition whose model best reproduces its estimation data.
    pub overall: Option<usize>,
    /// Earliest partition whose validation unfitness is under the threshold.
    pub predictor: Option<usize>,
}

/// SHA-256 over the sample grid and the absolute sample values, as
/// little-endian `f64`.
pub fn fingerprint<T: Scalar>(pair: &NormalizedPair<T>) -> String {
    let s = pair.denormalize();
    let mut h = Sha256::new();
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.t0().as_f64().to_le_bytes());
    h.update(s.period().as_f64().to_le_bytes());
    for (u, y) in s.u().iter().zip(s.y()) {
        h.update(u.as_f64().to_le_bytes());
        h.update(y.as_f64().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn run_protocol<T: Scalar>(
    pair: &NormalizedPair<T>,
    fit: &FitOptions<T>,
    options: &ProtocolOptions<T>,
) -> Result<ProtocolReport<T>, ProtocolError> {
    fit.validate()?;
    let base = pair.base();
    let parts = partition_grid(base.len(), base.period(), options.step_h)?;
    let partitions: Vec<PartitionResult<T>> = parts
        .par_iter()
        .enumerate()
        .map(
            |(i, part)| match identify_partition(pair, part, fit, options.candidates) {
                Ok(id) => PartitionResult {
                    partition: i + 1,
                    split_h: part.split_hour,
                    model: Some(id.best),
                    est: Some(id.estimation),
                    val: id.validation,
                    error: None,
                },
                Err(e) => PartitionResult {
                    partition: i + 1,
                    split_h: part.split_hour,
                    model: None,
                    est: None,
                    val: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    let choice = choose_overall(&partitions, options.predictor_threshold);
    Ok(ProtocolReport {
        fingerprint: fingerprint(pair),
        config: ReportConfig {
            fit: fit.clone(),
            protocol: options.clone(),
            samples: base.len(),
            period_h: base.period(),
            offset_u: pair.offset_u(),
            offset_y: pair.offset_y(),
        },
        partitions,
        overall: choice.overall,
        predictor: choice.predictor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub overall: Option<usize>,
    pub predictor: Option<usize>,
}

/// Lowest estimation unfitness wins overall, earliest partition on ties. The
/// predictor is the earliest partition whose validation unfitness is below
/// `threshold`.
pub fn choose_overall<T: Scalar>(results: &[PartitionResult<T>], threshold: T) -> Choice {
    let mut overall: Option<(T, usize)> = None;
    for r in results {
        if let Some(u) = r.est.and_then(|e| e.unfit) {
            if overall.is_none_or(|(best, _)| u < best) {
                overall = Some((u, r.partition));
            }
        }
    }
    let predictor = results
        .iter()
        .find(|r| r.val.and_then(|v| v.unfit).is_some_and(|u| u < threshold))
        .map(|r| r.partition);
    Choice {
        overall: overall.map(|(_, p)| p),
        predictor,
    }
}

impl<T: Scalar> ProtocolReport<T> {
    /// Pretty JSON with a trailing newline; floats use shortest round-trip
    /// formatting, so equal reports serialize to equal bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn cell<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| format!("{}", x.as_f64())).unwrap_or_default()
}

/// Flat per-partition table: `partition,val_unfit,est_unfit,fpe,loss,mse`.
/// FPE, loss and MSE refer to the estimation window; undefined cells are empty.
pub fn figure2_csv<T: Scalar>(report: &ProtocolReport<T>) -> String {
    let mut out = String::from("partition,val_unfit,est_unfit,fpe,loss,mse\n");
    for r in &report.partitions {
        let est = r.est.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.partition,
            cell(r.val.and_then(|v| v.unfit)),
            cell(est.and_then(|e| e.unfit)),
            cell(est.and_then(|e| e.fpe)),
            cell(est.and_then(|e| e.loss)),
            cell(est.and_then(|e| e.mse)),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::simulate;
    use crate::series::{normalize, SampledSeries};

    fn pair_from(tf: &TransferFunction<f64>, n: usize) -> NormalizedPair<f64> {
        let mut u = vec![0.0];
        for k in 1..n {
            u.push(u[k - 1] + [2.0, 0.0, 3.0, 1.5, 2.5][k % 5]);
        }
        let y = simulate(tf, &u, 1.0).unwrap().values;
        normalize(&SampledSeries::new(0.0, 1.0, u, y).unwrap())
    }

    fn result(p: usize, est: f64, val: Option<f64>) -> PartitionResult<f64> {
        let q = |u: f64| QualityMetrics {
            fit: Some(100.0 - u),
            unfit: Some(u),
            loss: Some(0.0),
            fpe: Some(0.0),
            mse: Some(0.0),
            mse_plain: Some(0.0),
            n: 10,
            d: 2,
        };
        PartitionResult {
            partition: p,
            split_h: 20.0 * p as f64,
            model: None,
            est: Some(q(est)),
            val: val.map(q),
            error: None,
        }
    }

    #[test]
    fn choice_rules() {
        let rs = vec![
            result(1, 5.0, Some(20.0)),
            result(2, 3.0, Some(9.0)),
            result(3, 3.0, None),
        ];
        assert_eq!(
            choose_overall(&rs, 15.0),
            Choice {
                overall: Some(2),
                predictor: Some(2)
            }
        );
        let same = vec![result(1, 4.0, Some(4.0)), result(2, 4.0, Some(4.0))];
        assert_eq!(
            choose_overall(&same, 15.0),
            Choice {
                overall: Some(1),
                predictor: Some(1)
            }
        );
        let one = vec![result(1, 7.0, Some(8.0))];
        assert_eq!(
            choose_overall(&one, 15.0),
            Choice {
                overall: Some(1),
                predictor: Some(1)
            }
        );
    }

    #[test]
    fn validation_of_generator_is_perfect() {
        let tf = TransferFunction::first_order(0.6646, 0.6687).unwrap();
        let pair = pair_from(&tf, 61);
        let part = partition_grid(61, 1.0, 20.0).unwrap()[0];
        let q = validate_model(&tf, &pair, &part).unwrap();
        assert!(q.unfit.unwrap() < 1e-9);
        assert_eq!(q.n, 40);

        let wrong = TransferFunction::first_order(2.0 * 0.6646, 0.6687).unwrap();
        let qw = validate_model(&wrong, &pair, &part).unwrap();
        assert!(qw.unfit.unwrap() > q.unfit.unwrap());
    }

    #[test]
    fn last_partition_single_sample_is_undefined() {
        let tf = TransferFunction::first_order(0.6646, 0.6687).unwrap();
        let pair = pair_from(&tf, 42);
        let report =
            run_protocol(&pair, &FitOptions::default(), &ProtocolOptions::default()).unwrap();
        assert_eq!(report.partitions.len(), 2);
        assert_eq!(report.partitions[1].split_h, 40.0);
        assert!(report.partitions[1].val.is_none());
        assert!(report.partitions[0].val.is_some());
    }

    #[test]
    fn step_too_large() {
        let tf = TransferFunction::first_order(0.6646, 0.6687).unwrap();
        let pair = pair_from(&tf, 15);
        let err =
            run_protocol(&pair, &FitOptions::default(), &ProtocolOptions::default()).unwrap_err();
        assert_eq!(err, ProtocolError::Series(SeriesError::StepTooLarge));
    }

    #[test]
    fn figure2_table_blank_for_undefined() {
        let rs = vec![result(1, 5.0, Some(20.0)), result(2, 3.0, None)];
        let report = ProtocolReport {
            fingerprint: String::new(),
            config: ReportConfig {
                fit: FitOptions::default(),
                protocol: ProtocolOptions::default(),
                samples: 0,
                period_h: 1.0,
                offset_u: 0.0,
                offset_y: 0.0,
            },
            partitions: rs,
            overall: None,
            predictor: None,
        };
        let csv = figure2_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "partition,val_unfit,est_unfit,fpe,loss,mse");
        assert_eq!(lines[1], "1,20,5,0,0,0");
        assert_eq!(lines[2], "2,,3,0,0,0");
    }
}
