//! Text file formats: dataset and raw-event CSV, trajectories, model files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{LtiError, TransferFunction};
use crate::series::{RawEvent, SampledSeries, SeriesError};

pub const DATASET_HEADER: [&str; 3] = ["t_h", "u_goal_m", "y_depth_m"];
pub const EVENTS_HEADER: [&str; 3] = ["t_h", "goal_m", "depth_m"];
pub const TRAJECTORY_HEADER: [&str; 2] = ["t_h", "y"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected header `{found}`, expected `{expected}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("time column is not a uniform grid at line {0}")]
    NonUniformGrid(usize),
    #[error("file has no data rows")]
    Empty,
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("invalid model: {0}")]
    Model(String),
}

impl From<LtiError> for IoError {
    fn from(e: LtiError) -> Self {
        IoError::Model(e.to_string())
    }
}

fn read_rows(text: &str, accepted: &[&[&str]]) -> Result<(usize, Vec<Vec<f64>>), IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let Some(cols) = accepted
        .iter()
        .find(|h| h.len() == header.len() && h.iter().zip(&header).all(|(a, b)| *a == b))
        .map(|h| h.len())
    else {
        return Err(IoError::Header {
            expected: accepted[0].join(","),
            found: header.join(","),
        });
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != cols {
            return Err(IoError::Parse {
                line,
                msg: format!("expected {cols} fields, got {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IoError::Parse {
                        line,
                        msg: format!("invalid number `{f}`"),
                    })
            })
            .collect::<Result<Vec<f64>, IoError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Empty);
    }
    Ok((cols, rows))
}

/// Checks that `t` is uniformly spaced and returns `(t0, period)`.
fn grid(t: &[f64], fallback_period: Option<f64>) -> Result<(f64, f64), IoError> {
    let t0 = t[0];
    if t.len() == 1 {
        return fallback_period
            .map(|p| (t0, p))
            .ok_or(IoError::NonUniformGrid(2));
    }
    let period = t[1] - t[0];
    if period.is_nan() || period <= 0.0 {
        return Err(IoError::NonUniformGrid(3));
    }
    for (k, tk) in t.iter().enumerate() {
        let want = t0 + period * k as f64;
        if (tk - want).abs() > 1e-6 * period.max(1.0) {
            return Err(IoError::NonUniformGrid(k + 2));
        }
    }
    Ok((t0, period))
}

pub fn parse_dataset(text: &str) -> Result<SampledSeries<f64>, IoError> {
    let (_, rows) = read_rows(text, &[&DATASET_HEADER])?;
    let column = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    series_from_columns(&column(0), column(1), column(2))
}

/// Builds a series from dataset columns; `t` must be a uniform grid.
pub fn series_from_columns(
    t: &[f64],
    u: Vec<f64>,
    y: Vec<f64>,
) -> Result<SampledSeries<f64>, IoError> {
    if t.is_empty() {
        return Err(IoError::Empty);
    }
    if t.len() != u.len() {
        return Err(IoError::Parse {
            line: 0,
            msg: "time and goal columns differ in length".into(),
        });
    }
    if !t.iter().chain(&u).chain(&y).all(|v| v.is_finite()) {
        return Err(IoError::Parse {
            line: 0,
            msg: "non-finite value".into(),
        });
    }
    let (t0, period) = grid(t, None)?;
    Ok(SampledSeries::new(t0, period, u, y)?)
}

pub fn read_dataset(path: &Path) -> Result<SampledSeries<f64>, IoError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn dataset_csv(series: &SampledSeries<f64>) -> String {
    let mut out = DATASET_HEADER.join(",");
    out.push('\n');
    for k in 0..series.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            series.time(k),
            series.u()[k],
            series.y()[k]
        ));
    }
    out
}

/// A goal plan: the dataset format with the output column optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub t0: f64,
    pub period: f64,
    pub u: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

pub fn parse_plan(text: &str, fallback_period: f64) -> Result<Plan, IoError> {
    let (cols, rows) = read_rows(text, &[&DATASET_HEADER, &DATASET_HEADER[..2]])?;
    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let (t0, period) = grid(&t, Some(fallback_period))?;
    let u: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    if let Some(i) = u.windows(2).position(|w| w[1] < w[0]) {
        return Err(IoError::Parse {
            line: i + 3,
            msg: "goal decreases".into(),
        });
    }
    Ok(Plan {
        t0,
        period,
        u,
        y: (cols == 3).then(|| rows.iter().map(|r| r[2]).collect()),
    })
}

pub fn parse_events(text: &str) -> Result<Vec<RawEvent<f64>>, IoError> {
    let (_, rows) = read_rows(text, &[&EVENTS_HEADER])?;
    Ok(rows
        .into_iter()
        .map(|r| RawEvent {
            timestamp: r[0],
            goal_depth: r[1],
            actual_depth: r[2],
        })
        .collect())
}

pub fn trajectory_csv(t: &[f64], y: &[f64]) -> String {
    let mut out = TRAJECTORY_HEADER.join(",");
    out.push('\n');
    for (a, b) in t.iter().zip(y) {
        out.push_str(&format!("{a},{b}\n"));
    }
    out
}

/// Persisted model: coefficients in ascending powers of `s`, monic
/// denominator, plus the offsets removed before estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub order: usize,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub offset_u: f64,
    pub offset_y: f64,
    pub period_h: f64,
}

impl ModelFile {
    pub fn from_tf(
        tf: &TransferFunction<f64>,
        offset_u: f64,
        offset_y: f64,
        period_h: f64,
    ) -> Self {
        Self {
            order: tf.order(),
            num: tf.num().to_vec(),
            den: tf.den().to_vec(),
            offset_u,
            offset_y,
            period_h,
        }
    }

    pub fn validate(&self) -> Result<TransferFunction<f64>, IoError> {
        let tf = TransferFunction::new(&self.num, &self.den)?;
        if tf.order() != self.order {
            return Err(IoError::Model(format!(
                "order {} does not match denominator degree {}",
                self.order,
                tf.order()
            )));
        }
        if self.den.last() != Some(&1.0) {
            return Err(IoError::Model("denominator must be monic".into()));
        }
        if !(self.period_h.is_finite() && self.period_h > 0.0) {
            return Err(IoError::Model("period_h must be positive".into()));
        }
        if !(self.offset_u.is_finite() && self.offset_y.is_finite()) {
            return Err(IoError::Model("offsets must be finite".into()));
        }
        Ok(tf)
    }

    pub fn tf(&self) -> Result<TransferFunction<f64>, IoError> {
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let m: ModelFile = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip_text() {
        let text = "t_h,u_goal_m,y_depth_m\n0,3305,3305\n1,3307.1,3306.25\n2,3309.5,3308\n";
        let s = parse_dataset(text).unwrap();
        assert_eq!(s.period(), 1.0);
        assert_eq!(s.u(), &[3305.0, 3307.1, 3309.5]);
        assert_eq!(dataset_csv(&s), text);
    }

    #[test]
    fn dataset_rejects_bad_files() {
        assert!(matches!(
            parse_dataset("t,u,y\n0,1,1\n1,2,2\n"),
            Err(IoError::Header { .. })
        ));
        assert!(matches!(
            parse_dataset("t_h,u_goal_m,y_depth_m\n"),
            Err(IoError::Empty)
        ));
        assert!(matches!(
            parse_dataset("t_h,u_goal_m,y_depth_m\n0,1,1\n1,2,x\n"),
            Err(IoError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_dataset("t_h,u_goal_m,y_depth_m\n0,1,1\n1,2,2\n3,3,3\n"),
            Err(IoError::NonUniformGrid(4))
        ));
        assert!(matches!(
            parse_dataset("t_h,u_goal_m,y_depth_m\n0,1,1\n1,2,0.5\n"),
            Err(IoError::Series(SeriesError::NotCumulative { .. }))
        ));
    }

    #[test]
    fn plans_with_and_without_output() {
        let p = parse_plan("t_h,u_goal_m\n0,0\n1,2\n2,4\n", 1.0).unwrap();
        assert_eq!(p.u, vec![0.0, 2.0, 4.0]);
        assert!(p.y.is_none());
        let single = parse_plan("t_h,u_goal_m\n5,3\n", 0.5).unwrap();
        assert_eq!((single.t0, single.period), (5.0, 0.5));
        assert!(matches!(
            parse_plan("t_h,u_goal_m\n", 1.0),
            Err(IoError::Empty)
        ));
    }

    #[test]
    fn events_header() {
        let ev = parse_events("t_h,goal_m,depth_m\n0,1,1\n0.5,2,1.5\n").unwrap();
        assert_eq!(ev.len(), 2);
        assert!(matches!(
            parse_events("t_h,u_goal_m,y_depth_m\n0,1,1\n"),
            Err(IoError::Header { .. })
        ));
    }

    #[test]
    fn model_file_digits_survive() {
        let text = r#"{
  "order": 1,
  "num": [
    0.6646
  ],
  "den": [
    0.6687,
    1.0
  ],
  "offset_u": 3305.0,
  "offset_y": 3305.0,
  "period_h": 1.0
}
"#;
        let m = ModelFile::parse(text).unwrap();
        assert_eq!(m.to_json(), text);
        assert_eq!(m.tf().unwrap().dc_gain().unwrap(), 0.6646 / 0.6687);
    }

    #[test]
    fn model_file_validation() {
        let bad =
            r#"{"order":2,"num":[1.0],"den":[1.0,1.0],"offset_u":0,"offset_y":0,"period_h":1}"#;
        assert!(matches!(ModelFile::parse(bad), Err(IoError::Model(_))));
        let not_monic =
            r#"{"order":1,"num":[1.0],"den":[1.0,2.0],"offset_u":0,"offset_y":0,"period_h":1}"#;
        assert!(matches!(
            ModelFile::parse(not_monic),
            Err(IoError::Model(_))
        ));
        assert!(matches!(ModelFile::parse("{"), Err(IoError::Json(_))));
    }
}
