//! Transient and steady-state descriptors of sampled responses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{step_response, LtiError, Response, TransferFunction};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("response leaves the settling band at the end of the horizon")]
    NeverSettles,
    #[error("model is not stable; no steady-state value exists")]
    NotStable,
    #[error("empty response")]
    EmptyResponse,
    #[error(transparent)]
    Lti(#[from] LtiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateClass {
    Transient,
    Steady,
    Unsteady,
}

impl std::fmt::Display for StateClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StateClass::Transient => "transient",
            StateClass::Steady => "steady",
            StateClass::Unsteady => "unsteady",
        })
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics<T> {
    pub amplitude: T,
    pub dc_gain: Option<T>,
    /// Hours; first-order stable models only.
    pub time_constant: Option<T>,
    pub settling_time: Option<T>,
    pub peak_value: T,
    pub peak_time: T,
    pub steady_state: Option<T>,
    pub state: StateClass,
    pub threshold: T,
    pub horizon: T,
}

fn band<T: Scalar>(final_value: T, threshold: T) -> T {
    threshold * final_value.abs()
}

/// First time after which the response stays within `threshold * |final|`
/// of `final_value`. The crossing into the band is located by linear
/// interpolation between the bracketing samples.
pub fn settling_time<T: Scalar>(
    response: &Response<T>,
    final_value: T,
    threshold: T,
) -> Result<T, StepError> {
    let y = &response.values;
    if y.is_empty() {
        return Err(StepError::EmptyResponse);
    }
    let tol = band(final_value, threshold);
    let outside = |v: T| (v - final_value).abs() > tol;
    let Some(j) = y.iter().rposition(|v| outside(*v)) else {
        return Ok(response.t0);
    };
    if j + 1 == y.len() {
        return Err(StepError::NeverSettles);
    }
    let (y0, y1) = (y[j], y[j + 1]);
    let target = if y0 > final_value {
        final_value + tol
    } else {
        final_value - tol
    };
    let frac = if y1 == y0 {
        T::one()
    } else {
        ((target - y0) / (y1 - y0)).max(T::zero()).min(T::one())
    };
    Ok(response.time(j) + frac * response.period)
}

/// Largest absolute value and the first time it is attained to within
/// `1e-9 * max(1, |peak|)`.
pub fn peak<T: Scalar>(response: &Response<T>) -> Result<(T, T), StepError> {
    let y = &response.values;
    let sup = y
        .iter()
        .map(|v| v.abs())
        .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(StepError::EmptyResponse)?;
    let tol = T::lit(1e-9) * sup.max(T::one());
    let k = y.iter().position(|v| v.abs() >= sup - tol).unwrap_or(0);
    Ok((y[k], response.time(k)))
}

/// `amplitude * G(0)` for stable models.
pub fn steady_state_value<T: Scalar>(
    tf: &TransferFunction<T>,
    amplitude: T,
) -> Result<T, StepError> {
    if !tf.is_stable() {
        return Err(StepError::NotStable);
    }
    Ok(amplitude * tf.dc_gain()?)
}

/// Three-way state classification over samples up to `horizon`.
///
/// * steady: inside the band from some sample through the last one
/// * transient: never inside the band, with the distance to the final value
///   shrinking monotonically
/// * unsteady: leaves the band after entering it, or drifts away
pub fn classify_state<T: Scalar>(
    response: &Response<T>,
    final_value: T,
    threshold: T,
    horizon: T,
) -> StateClass {
    let slack = response.period * T::lit(1e-9);
    let y: Vec<T> = response
        .values
        .iter()
        .enumerate()
        .take_while(|(k, _)| response.time(*k) - response.t0 <= horizon + slack)
        .map(|(_, v)| *v)
        .collect();
    if y.is_empty() || !final_value.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return StateClass::Unsteady;
    }
    let tol = band(final_value, threshold);
    let err: Vec<T> = y.iter().map(|v| (*v - final_value).abs()).collect();
    match err.iter().position(|e| *e <= tol) {
        Some(first) => {
            if err[first..].iter().all(|e| *e <= tol) {
                StateClass::Steady
            } else {
                StateClass::Unsteady
            }
        }
        None => {
            let eps = T::epsilon() * T::lit(64.0) * (T::one() + final_value.abs());
            let approaching = err.windows(2).all(|w| w[1] <= w[0] + eps);
            if approaching && err.len() > 1 && err[err.len() - 1] < err[0] {
                StateClass::Transient
            } else {
                StateClass::Unsteady
            }
        }
    }
}

/// First time the response reaches `level`, interpolated between samples.
pub fn first_crossing<T: Scalar>(response: &Response<T>, level: T) -> Option<T> {
    let y = &response.values;
    let first = *y.first()?;
    if first == level {
        return Some(response.t0);
    }
    let above = first > level;
    y.windows(2).enumerate().find_map(|(k, w)| {
        let crossed = if above { w[1] <= level } else { w[1] >= level };
        crossed.then(|| {
            let frac = (level - w[0]) / (w[1] - w[0]);
            response.time(k) + frac * response.period
        })
    })
}

/// Closed-form time at which `A b/(s+a)` reaches `level`, if ever.
pub fn first_order_time_to_level<T: Scalar>(b: T, a: T, amplitude: T, level: T) -> Option<T> {
    let final_value = amplitude * b / a;
    let ratio = level / final_value;
    if a <= T::zero() || !(ratio >= T::zero() && ratio < T::one()) {
        return None;
    }
    Some(-(-ratio).ln_1p() / a)
}

/// Closed-form 2%-style settling time `ln(1/threshold) / a` of a stable
/// first-order model.
pub fn first_order_settling_time<T: Scalar>(a: T, threshold: T) -> Option<T> {
    (a > T::zero() && threshold > T::zero() && threshold < T::one()).then(|| -threshold.ln() / a)
}

/// Step response of `amplitude` over `[0, horizon]` sampled every `dt`,
/// together with its descriptors.
pub fn analyze_step<T: Scalar>(
    tf: &TransferFunction<T>,
    amplitude: T,
    horizon: T,
    dt: T,
    threshold: T,
) -> Result<(StepMetrics<T>, Response<T>), StepError> {
    let response = step_response(tf, amplitude, horizon, dt)?;
    let (peak_value, peak_time) = peak(&response)?;
    let steady_state = steady_state_value(tf, amplitude).ok();
    let (settling, state) = match steady_state {
        Some(f) => (
            settling_time(&response, f, threshold).ok(),
            classify_state(&response, f, threshold, horizon),
        ),
        None => (None, StateClass::Unsteady),
    };
    let metrics = StepMetrics {
        amplitude,
        dc_gain: tf.dc_gain().ok(),
        time_constant: tf.time_constant(),
        settling_time: settling,
        peak_value,
        peak_time,
        steady_state,
        state,
        threshold,
        horizon,
    };
    Ok((metrics, response))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::InputKind;

    fn g9() -> TransferFunction<f64> {
        TransferFunction::first_order(0.6646, 0.6687).unwrap()
    }

    fn resp(values: Vec<f64>, period: f64) -> Response<f64> {
        Response {
            t0: 0.0,
            period,
            values,
            input: InputKind::Sequence,
        }
    }

    #[test]
    fn g9_settling_time() {
        let analytic = first_order_settling_time(0.6687, 0.02).unwrap();
        assert!((analytic - 50f64.ln() / 0.6687).abs() < 1e-12);
        assert!((analytic - 5.85).abs() < 0.005);
        for amp in [1.0, 2.06] {
            let r = step_response(&g9(), amp, 24.0, 0.05).unwrap();
            let f = steady_state_value(&g9(), amp).unwrap();
            let ts = settling_time(&r, f, 0.02).unwrap();
            assert!((ts - analytic).abs() < 0.05, "{ts}");
        }
    }

    #[test]
    fn settling_converges_with_finer_grids() {
        let analytic = first_order_settling_time(0.6687, 0.02).unwrap();
        let mut last = f64::INFINITY;
        for dt in [1.0, 0.5, 0.1, 0.01] {
            let r = step_response(&g9(), 1.0, 30.0, dt).unwrap();
            let ts = settling_time(&r, steady_state_value(&g9(), 1.0).unwrap(), 0.02).unwrap();
            let err = (ts - analytic).abs();
            assert!(err <= dt, "dt={dt}: {ts}");
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn constant_and_diverging_responses() {
        assert_eq!(settling_time(&resp(vec![2.0; 5], 1.0), 2.0, 0.02), Ok(0.0));
        let unstable = TransferFunction::first_order(1.0, -0.5).unwrap();
        let r = step_response(&unstable, 1.0, 20.0, 0.1).unwrap();
        assert_eq!(settling_time(&r, -2.0, 0.02), Err(StepError::NeverSettles));
        assert_eq!(
            steady_state_value(&unstable, 1.0),
            Err(StepError::NotStable)
        );
    }

    #[test]
    fn peaks() {
        assert_eq!(peak(&resp(vec![0.0, 3.0, 1.0], 1.0)), Ok((3.0, 1.0)));
        let r = step_response(&g9(), 2.06, 24.0, 0.01).unwrap();
        let (yp, tp) = peak(&r).unwrap();
        assert!((yp - 2.0474).abs() < 1e-4);
        let last = *r.values.last().unwrap();
        assert!(last - yp <= 1e-9 * last && yp <= last);
        // Monotone: the band around the supremum is only entered near the end.
        assert!(tp > 23.5 && tp <= 24.0, "{tp}");
        assert_eq!(peak(&resp(vec![], 1.0)), Err(StepError::EmptyResponse));
    }

    #[test]
    fn steady_state_scaling() {
        let unit = steady_state_value(&g9(), 1.0).unwrap();
        assert!((unit - 0.99387).abs() < 1e-5);
        assert_eq!(steady_state_value(&g9(), 2.06).unwrap(), 2.06 * unit);
        assert!((steady_state_value(&g9(), 2.06).unwrap() - 2.0474).abs() < 1e-4);
    }

    #[test]
    fn classification() {
        let f = steady_state_value(&g9(), 2.06).unwrap();
        let r = step_response(&g9(), 2.06, 24.0, 0.05).unwrap();
        assert_eq!(classify_state(&r, f, 0.02, 24.0), StateClass::Steady);

        let unit = step_response(&g9(), 1.0, 1.0, 0.01).unwrap();
        let fu = steady_state_value(&g9(), 1.0).unwrap();
        assert_eq!(classify_state(&unit, fu, 0.02, 1.0), StateClass::Transient);
        assert!((unit.at(1.0).unwrap() - 0.4846).abs() < 1e-3);

        let osc = TransferFunction::new(&[1.0], &[1.0, 0.0, 1.0]).unwrap();
        let r = step_response(&osc, 1.0, 30.0, 0.05).unwrap();
        assert_eq!(classify_state(&r, 1.0, 0.02, 30.0), StateClass::Unsteady);
    }

    #[test]
    fn classification_switches_at_settling_time() {
        let dt = 0.1;
        let ts = first_order_settling_time(0.6687, 0.02).unwrap();
        let f = steady_state_value(&g9(), 1.0).unwrap();
        let r = step_response(&g9(), 1.0, 30.0, dt).unwrap();
        for h in [1.0, 3.0, 5.0, 5.8] {
            assert_eq!(
                classify_state(&r, f, 0.02, h),
                StateClass::Transient,
                "h={h}"
            );
        }
        for h in [ts + dt, 8.0, 30.0] {
            assert_eq!(classify_state(&r, f, 0.02, h), StateClass::Steady, "h={h}");
        }
    }

    #[test]
    fn unit_step_reaches_average_level() {
        let t: f64 = first_order_time_to_level(0.6646, 0.6687, 1.0, 0.55).unwrap();
        assert!((t - 1.205).abs() < 0.001, "{t}");
        let r = step_response(&g9(), 1.0, 8.0, 0.01).unwrap();
        let sampled = first_crossing(&r, 0.55).unwrap();
        assert!((sampled - t).abs() < 1e-3);
        assert_eq!(first_order_time_to_level(0.6646, 0.6687, 1.0, 2.0), None);
    }

    #[test]
    fn analyze_g9() {
        let (m, r) = analyze_step(&g9(), 2.06, 24.0, 0.01, 0.02).unwrap();
        assert_eq!(r.len(), 2401);
        assert!((m.steady_state.unwrap() - 2.0474).abs() < 1e-4);
        assert!((m.settling_time.unwrap() - 5.85).abs() < 0.05);
        assert!((m.time_constant.unwrap() - 1.0 / 0.6687).abs() < 1e-12);
        assert_eq!(m.state, StateClass::Steady);

        let (z, _) = analyze_step(&g9(), 0.0, 8.0, 0.01, 0.02).unwrap();
        assert_eq!(z.settling_time, Some(0.0));
        assert_eq!(z.peak_value, 0.0);

        let unstable = TransferFunction::first_order(1.0, -0.2).unwrap();
        let (u, _) = analyze_step(&unstable, 1.0, 10.0, 0.1, 0.02).unwrap();
        assert_eq!(u.state, StateClass::Unsteady);
        assert_eq!(u.steady_state, None);
        assert_eq!(u.settling_time, None);
    }
}
