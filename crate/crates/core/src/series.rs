//! Sampled cumulative input/output data: ingestion of raw operational events,
//! offset normalization, and estimation/validation partitioning.
//!
//! Times are in hours and depths in meters. Split hours are measured as
//! elapsed time from the first sample of a series.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{all_finite, is_non_decreasing, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("no events or samples supplied")]
    EmptyInput,
    #[error("depth decreases at event {0}")]
    NonMonotoneDepth(usize),
    #[error("timestamp decreases at event {0}")]
    NonMonotoneTime(usize),
    #[error("non-finite or negative value at index {0}")]
    InvalidValue(usize),
    #[error("input and output lengths differ ({u} vs {y})")]
    LengthMismatch { u: usize, y: usize },
    #[error("series needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample period must be positive and finite")]
    InvalidPeriod,
    #[error("{channel} channel is not non-decreasing at index {index}")]
    NotCumulative { channel: &'static str, index: usize },
    #[error("partition step does not fit inside the series")]
    StepTooLarge,
    #[error("split hour {0} is not on the sample grid")]
    SplitOffGrid(f64),
    #[error("split hour {0} leaves no estimation or validation data")]
    SplitOutOfRange(f64),
}

/// One row of an operational report, before resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawEvent<T> {
    pub timestamp: T,
    pub goal_depth: T,
    pub actual_depth: T,
}

/// Uniformly sampled cumulative input/output pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries<T> {
    t0: T,
    period: T,
    u: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> SampledSeries<T> {
    pub fn new(t0: T, period: T, u: Vec<T>, y: Vec<T>) -> Result<Self, SeriesError> {
        if !(period.is_finite() && period > T::zero()) || !t0.is_finite() {
            return Err(SeriesError::InvalidPeriod);
        }
        if u.len() != y.len() {
            return Err(SeriesError::LengthMismatch {
                u: u.len(),
                y: y.len(),
            });
        }
        if u.len() < 2 {
            return Err(SeriesError::TooFewSamples(u.len()));
        }
        for (name, ch) in [("input", &u), ("output", &y)] {
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(SeriesError::InvalidValue(i));
            }
            if let Some(i) = ch.windows(2).position(|w| w[1] < w[0]) {
                return Err(SeriesError::NotCumulative {
                    channel: name,
                    index: i + 1,
                });
            }
        }
        Ok(Self { t0, period, u, y })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn period(&self) -> T {
        self.period
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.period * T::from_usize_lossy(k)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Elapsed hours covered by the series, `(N - 1) * T`.
    pub fn span(&self) -> T {
        self.period * T::from_usize_lossy(self.len() - 1)
    }
}

/// Resamples raw events onto a uniform grid by carrying the last observation
/// forward.
///
/// The grid starts at the first timestamp rounded down to a whole period and
/// includes every grid point up to the last event timestamp.
pub fn ingest_events<T: Scalar>(
    events: &[RawEvent<T>],
    period: T,
) -> Result<SampledSeries<T>, SeriesError> {
    if events.is_empty() {
        return Err(SeriesError::EmptyInput);
    }
    if !(period.is_finite() && period > T::zero()) {
        return Err(SeriesError::InvalidPeriod);
    }
    for (i, e) in events.iter().enumerate() {
        let vals = [e.timestamp, e.goal_depth, e.actual_depth];
        if !all_finite(&vals) || vals.iter().any(|v| *v < T::zero()) {
            return Err(SeriesError::InvalidValue(i));
        }
        if i > 0 {
            let prev = &events[i - 1];
            if e.timestamp < prev.timestamp {
                return Err(SeriesError::NonMonotoneTime(i));
            }
            if e.goal_depth < prev.goal_depth || e.actual_depth < prev.actual_depth {
                return Err(SeriesError::NonMonotoneDepth(i));
            }
        }
    }

    let first = events[0].timestamp;
    let last = events[events.len() - 1].timestamp;
    let t0 = (first / period).floor() * period;
    // Grid points land exactly on integer multiples; allow a hair of rounding slack.
    let slack = T::epsilon() * T::lit(16.0) * (T::one() + last.abs());
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut cursor = 0usize;
    let mut k = 0usize;
    loop {
        let t = t0 + period * T::from_usize_lossy(k);
        if t > last + slack {
            break;
        }
        while cursor + 1 < events.len() && events[cursor + 1].timestamp <= t + slack {
            cursor += 1;
        }
        // The grid origin can precede the first event only by less than one
        // period; the first event then stands in for the pre-history.
        u.push(events[cursor].goal_depth);
        y.push(events[cursor].actual_depth);
        k += 1;
    }
    SampledSeries::new(t0, period, u, y)
}

/// A series shifted so both channels start at zero, plus the removed offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPair<T> {
    base: SampledSeries<T>,
    offset_u: T,
    offset_y: T,
}

impl<T: Scalar> NormalizedPair<T> {
    pub fn base(&self) -> &SampledSeries<T> {
        &self.base
    }

    pub fn offset_u(&self) -> T {
        self.offset_u
    }

    pub fn offset_y(&self) -> T {
        self.offset_y
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn segment(&self, range: Range<usize>) -> Segment<'_, T> {
        Segment {
            u: &self.base.u[range.clone()],
            y: &self.base.y[range],
            period: self.base.period,
        }
    }

    pub fn full(&self) -> Segment<'_, T> {
        self.segment(0..self.len())
    }

    /// Restores absolute values.
    pub fn denormalize(&self) -> SampledSeries<T> {
        SampledSeries {
            t0: self.base.t0,
            period: self.base.period,
            u: self.base.u.iter().map(|v| *v + self.offset_u).collect(),
            y: self.base.y.iter().map(|v| *v + self.offset_y).collect(),
        }
    }
}

/// Subtracts the first sample of each channel so the data starts at rest.
pub fn normalize<T: Scalar>(series: &SampledSeries<T>) -> NormalizedPair<T> {
    let offset_u = series.u[0];
    let offset_y = series.y[0];
    let base = SampledSeries {
        t0: series.t0,
        period: series.period,
        u: series.u.iter().map(|v| *v - offset_u).collect(),
        y: series.y.iter().map(|v| *v - offset_y).collect(),
    };
    debug_assert!(is_non_decreasing(&base.u) && is_non_decreasing(&base.y));
    NormalizedPair {
        base,
        offset_u,
        offset_y,
    }
}

/// Borrowed input/output window, starting at rest, used for estimation and
/// scoring.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a, T> {
    pub u: &'a [T],
    pub y: &'a [T],
    pub period: T,
}

impl<'a, T: Scalar> Segment<'a, T> {
    pub fn new(u: &'a [T], y: &'a [T], period: T) -> Self {
        assert_eq!(u.len(), y.len(), "segment channels must have equal length");
        Self { u, y, period }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Estimation/validation split of a sampled series at a whole grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition<T> {
    pub split_hour: T,
    pub split_index: usize,
    pub len: usize,
}

impl<T: Scalar> Partition<T> {
    /// Indices `0..=split_index`.
    pub fn estimation(&self) -> Range<usize> {
        0..self.split_index + 1
    }

    /// Indices `split_index + 1..len`.
    pub fn validation(&self) -> Range<usize> {
        self.split_index + 1..self.len
    }
}

/// Splits at every multiple of `step` strictly inside the sampled span.
pub fn partition_grid<T: Scalar>(
    n: usize,
    period: T,
    step: T,
) -> Result<Vec<Partition<T>>, SeriesError> {
    if !(period.is_finite() && period > T::zero()) || n < 2 {
        return Err(SeriesError::InvalidPeriod);
    }
    if !(step.is_finite() && step > T::zero()) {
        return Err(SeriesError::StepTooLarge);
    }
    let span = period * T::from_usize_lossy(n - 1);
    let mut out = Vec::new();
    let mut m = 1usize;
    loop {
        let split = step * T::from_usize_lossy(m);
        if split >= span {
            break;
        }
        out.push(grid_partition(n, period, split)?);
        m += 1;
    }
    if out.is_empty() {
        return Err(SeriesError::StepTooLarge);
    }
    Ok(out)
}

fn grid_partition<T: Scalar>(
    n: usize,
    period: T,
    split_hour: T,
) -> Result<Partition<T>, SeriesError> {
    let ratio = split_hour / period;
    let k = ratio.round();
    let tol = T::lit(1e-9) * (T::one() + ratio.abs());
    if !split_hour.is_finite() || (ratio - k).abs() > tol {
        return Err(SeriesError::SplitOffGrid(split_hour.as_f64()));
    }
    let k = k.to_usize().filter(|k| *k >= 1 && *k + 1 < n);
    match k {
        Some(split_index) => Ok(Partition {
            split_hour,
            split_index,
            len: n,
        }),
        None => Err(SeriesError::SplitOutOfRange(split_hour.as_f64())),
    }
}

/// Returns the estimation window `[0, split]` and the validation index range.
pub fn split_at<T: Scalar>(
    pair: &NormalizedPair<T>,
    split_hour: T,
) -> Result<(Segment<'_, T>, Partition<T>), SeriesError> {
    let part = grid_partition(pair.len(), pair.base.period, split_hour)?;
    Ok((pair.segment(part.estimation()), part))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, g: f64, d: f64) -> RawEvent<f64> {
        RawEvent {
            timestamp: t,
            goal_depth: g,
            actual_depth: d,
        }
    }

    #[test]
    fn locf_hand_trace() {
        let events = [
            ev(0.0, 3305.0, 3305.0),
            ev(0.5, 3306.0, 3305.4),
            ev(1.4, 3307.1, 3306.0),
        ];
        let s = ingest_events(&events, 1.0).unwrap();
        assert_eq!(s.times(), vec![0.0, 1.0]);
        assert_eq!(s.u(), &[3305.0, 3306.0]);
        assert_eq!(s.y(), &[3305.0, 3305.4]);
    }

    #[test]
    fn integer_hour_events_pass_through() {
        let events: Vec<_> = (0..5)
            .map(|k| ev(k as f64 + 3.0, 10.0 + k as f64, 9.0 + k as f64 * 0.5))
            .collect();
        let s = ingest_events(&events, 1.0).unwrap();
        assert_eq!(s.t0(), 3.0);
        assert_eq!(s.u(), &[10.0, 11.0, 12.0, 13.0, 14.0]);
        assert_eq!(s.y(), &[9.0, 9.5, 10.0, 10.5, 11.0]);
    }

    #[test]
    fn decreasing_depth_reports_event_index() {
        let events = [
            ev(0.0, 1.0, 1.0),
            ev(1.0, 2.0, 2.0),
            ev(2.0, 3.0, 3.0),
            ev(3.0, 4.0, 2.5),
            ev(4.0, 5.0, 5.0),
        ];
        assert_eq!(
            ingest_events(&events, 1.0),
            Err(SeriesError::NonMonotoneDepth(3))
        );
    }

    #[test]
    fn ingest_rejects_empty_and_single_grid_point() {
        assert_eq!(ingest_events::<f64>(&[], 1.0), Err(SeriesError::EmptyInput));
        assert_eq!(
            ingest_events(&[ev(0.2, 1.0, 1.0), ev(0.9, 2.0, 2.0)], 1.0),
            Err(SeriesError::TooFewSamples(1))
        );
    }

    #[test]
    fn normalize_offsets() {
        let s = SampledSeries::new(0.0, 1.0, vec![3305.0, 3307.0], vec![3305.0, 3306.0]).unwrap();
        let p = normalize(&s);
        assert_eq!(p.base().u(), &[0.0, 2.0]);
        assert_eq!(p.base().y(), &[0.0, 1.0]);
        assert_eq!((p.offset_u(), p.offset_y()), (3305.0, 3305.0));
        assert_eq!(p.denormalize(), s);

        let z = SampledSeries::new(0.0, 1.0, vec![0.0, 2.0], vec![0.0, 1.0]).unwrap();
        let pz = normalize(&z);
        assert_eq!((pz.offset_u(), pz.offset_y()), (0.0, 0.0));
        assert_eq!(pz.base(), &z);
    }

    #[test]
    fn series_rejects_bad_input() {
        assert!(matches!(
            SampledSeries::new(0.0, 1.0, vec![0.0, 1.0, 0.5], vec![0.0, 1.0, 2.0]),
            Err(SeriesError::NotCumulative {
                channel: "input",
                index: 2
            })
        ));
        assert_eq!(
            SampledSeries::new(0.0, 1.0, vec![0.0], vec![0.0]),
            Err(SeriesError::TooFewSamples(1))
        );
        assert_eq!(
            SampledSeries::new(0.0, 0.0, vec![0.0, 1.0], vec![0.0, 1.0]),
            Err(SeriesError::InvalidPeriod)
        );
    }

    #[test]
    fn nine_partitions_on_182_hourly_samples() {
        let parts = partition_grid(182, 1.0, 20.0).unwrap();
        let splits: Vec<f64> = parts.iter().map(|p| p.split_hour).collect();
        assert_eq!(
            splits,
            vec![20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0]
        );
        assert_eq!(parts[8].validation().len(), 1);
    }

    #[test]
    fn partition_boundaries() {
        assert_eq!(
            partition_grid(181, 1.0, 200.0),
            Err(SeriesError::StepTooLarge)
        );
        let p: Vec<f64> = partition_grid(41, 1.0, 20.0)
            .unwrap()
            .iter()
            .map(|p| p.split_hour)
            .collect();
        assert_eq!(p, vec![20.0]);
        // 180 coincides with the last sample of 181, leaving nothing to validate.
        assert_eq!(partition_grid(181, 1.0, 20.0).unwrap().len(), 8);
    }

    #[test]
    fn split_ranges() {
        let n = 181;
        let u: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let s = SampledSeries::new(0.0, 1.0, u.clone(), u).unwrap();
        let p = normalize(&s);
        let (est, part) = split_at(&p, 20.0).unwrap();
        assert_eq!(est.len(), 21);
        assert_eq!(part.validation().len(), 160);
        assert_eq!(
            split_at(&p, 20.5).unwrap_err(),
            SeriesError::SplitOffGrid(20.5)
        );
        assert_eq!(
            split_at(&p, 180.0).unwrap_err(),
            SeriesError::SplitOutOfRange(180.0)
        );
        assert_eq!(
            split_at(&p, 0.0).unwrap_err(),
            SeriesError::SplitOutOfRange(0.0)
        );
    }
}
