//! Synthetic cumulative datasets from a known transfer function, used as
//! ground truth for estimation and protocol tests.
//!
//! Random numbers come from ChaCha8 (RFC 7539 block function, 8 rounds)
//! seeded through `rand_core`'s `seed_from_u64`. Stream 0 drives the input
//! plan and stream 1 the output noise. A uniform draw takes the top 53 bits
//! of `next_u64` scaled by 2⁻⁵³; Gaussian draws use the Box–Muller cosine
//! branch, one normal per pair of uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::estim::{multistart, EstimError, FitOptions};
use crate::lti::{simulate, LtiError, TransferFunction};
use crate::metrics::nrmse_fit;
use crate::scalar::Scalar;
use crate::series::{normalize, SampledSeries, SeriesError};

pub const PRNG_ALGORITHM: &str =
    "chacha8/seed_from_u64;plan=stream0;noise=stream1;uniform=u64>>11*2^-53;normal=box-muller-cos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputPlan<T> {
    /// Explicit goal increment issued at each hour after the first.
    Increments { increments: Vec<T> },
    /// Irregular drilling-goal staircase: each hour the goal is held with
    /// probability `hold_probability`, otherwise raised by a uniform amount
    /// in `mean * [1 - spread, 1 + spread]`; increments are then rescaled so
    /// their mean is exactly `mean_increment`.
    Drilling {
        mean_increment: T,
        hold_probability: T,
        spread: T,
    },
}

/// Multiplies output increments after `at_hour` by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainShift<T> {
    pub at_hour: T,
    pub factor: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec<T> {
    pub tf: TransferFunction<T>,
    pub plan: InputPlan<T>,
    /// Noise standard deviation as a fraction of the clean output range.
    pub noise: T,
    pub seed: u64,
    pub samples: usize,
    pub period: T,
    /// Absolute depth at the first sample, both channels.
    pub start_depth: T,
    pub gain_shift: Option<GainShift<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord<T> {
    pub num: Vec<T>,
    pub den: Vec<T>,
    pub seed: u64,
    pub prng: String,
    pub noise_fraction: T,
    pub noise_sigma_m: T,
    pub samples: usize,
    pub period_h: T,
    pub start_depth_m: T,
    pub plan: InputPlan<T>,
    pub gain_shift: Option<GainShift<T>>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Estim(#[from] EstimError),
}

/// Portable seeded source of uniform and normal draws.
pub struct Prng {
    rng: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn plan_increments<T: Scalar>(
    plan: &InputPlan<T>,
    steps: usize,
    seed: u64,
) -> Result<Vec<T>, SynthError> {
    match plan {
        InputPlan::Increments { increments } => {
            if increments.len() != steps {
                return Err(SynthError::InvalidSpec(
                    "increment count must equal samples - 1",
                ));
            }
            if increments
                .iter()
                .any(|v| !(v.is_finite() && *v >= T::zero()))
            {
                return Err(SynthError::InvalidSpec(
                    "increments must be finite and non-negative",
                ));
            }
            Ok(increments.clone())
        }
        InputPlan::Drilling {
            mean_increment,
            hold_probability,
            spread,
        } => {
            let (mean, hold, spread) = (
                mean_increment.as_f64(),
                hold_probability.as_f64(),
                spread.as_f64(),
            );
            if !(mean > 0.0 && (0.0..1.0).contains(&hold) && (0.0..=1.0).contains(&spread)) {
                return Err(SynthError::InvalidSpec(
                    "drilling plan parameters out of range",
                ));
            }
            let mut rng = Prng::new(seed, 0);
            let mut raw: Vec<f64> = (0..steps)
                .map(|_| {
                    let held = rng.uniform() < hold;
                    let amount = mean * (1.0 - spread + 2.0 * spread * rng.uniform());
                    if held {
                        0.0
                    } else {
                        amount
                    }
                })
                .collect();
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                let scale = mean * steps as f64 / total;
                raw.iter_mut().for_each(|v| *v *= scale);
            }
            Ok(raw.into_iter().map(T::lit).collect())
        }
    }
}

/// Builds the dataset described by `spec` and the record needed to check
/// estimates against the generator.
pub fn generate<T: Scalar>(
    spec: &SynthSpec<T>,
) -> Result<(SampledSeries<T>, TruthRecord<T>), SynthError> {
    if spec.samples < 3 {
        return Err(SynthError::InvalidSpec("at least 3 samples required"));
    }
    if !(spec.noise.is_finite() && spec.noise >= T::zero()) {
        return Err(SynthError::InvalidSpec(
            "noise fraction must be non-negative",
        ));
    }
    if !(spec.period.is_finite() && spec.period > T::zero()) {
        return Err(SynthError::InvalidSpec("period must be positive"));
    }
    let increments = plan_increments(&spec.plan, spec.samples - 1, spec.seed)?;
    let mut u = Vec::with_capacity(spec.samples);
    u.push(T::zero());
    for inc in &increments {
        let last = *u.last().unwrap();
        u.push(last + *inc);
    }

    let mut y = simulate(&spec.tf, &u, spec.period)?.values;
    if let Some(shift) = spec.gain_shift {
        let k = (shift.at_hour / spec.period)
            .round()
            .to_usize()
            .unwrap_or(usize::MAX);
        if k < y.len() {
            let anchor = y[k];
            for v in &mut y[k + 1..] {
                *v = anchor + shift.factor * (*v - anchor);
            }
        }
    }
    let (lo, hi) = y
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let sigma = spec.noise * (hi - lo);
    if sigma > T::zero() {
        let mut rng = Prng::new(spec.seed, 1);
        for v in &mut y[1..] {
            *v = *v + sigma * T::lit(rng.normal());
        }
    }
    let mut running = T::neg_infinity();
    for v in &mut y {
        running = running.max(*v);
        *v = running;
    }

    let shift = |xs: Vec<T>| {
        xs.into_iter()
            .map(|v| v + spec.start_depth)
            .collect::<Vec<T>>()
    };
    let series = SampledSeries::new(T::zero(), spec.period, shift(u), shift(y))?;
    let truth = TruthRecord {
        num: spec.tf.num().to_vec(),
        den: spec.tf.den().to_vec(),
        seed: spec.seed,
        prng: PRNG_ALGORITHM.to_string(),
        noise_fraction: spec.noise,
        noise_sigma_m: sigma,
        samples: spec.samples,
        period_h: spec.period,
        start_depth_m: spec.start_depth,
        plan: spec.plan.clone(),
        gain_shift: spec.gain_shift,
    };
    Ok((series, truth))
}

pub const FIXTURE_SEED: u64 = 20_181;
pub const FIXTURE_SAMPLES: usize = 182;
pub const FIXTURE_MEAN_INCREMENT: f64 = 2.2;
pub const FIXTURE_START_DEPTH: f64 = 3305.0;
/// Calibrated with [`calibrate_noise`] so the full-record fit is about 93 %.
pub const FIXTURE_NOISE: f64 = 0.028;

/// Generator settings of the committed regression fixture: 182 hourly
/// samples of `0.6646 / (s + 0.6687)` driven by an irregular drilling-goal
/// staircase.
pub fn reference_spec() -> SynthSpec<f64> {
    SynthSpec {
        tf: TransferFunction::first_order(0.6646, 0.6687).expect("valid generator"),
        plan: InputPlan::Drilling {
            mean_increment: FIXTURE_MEAN_INCREMENT,
            hold_probability: 0.2,
            spread: 0.6,
        },
        noise: FIXTURE_NOISE,
        seed: FIXTURE_SEED,
        samples: FIXTURE_SAMPLES,
        period: 1.0,
        start_depth: FIXTURE_START_DEPTH,
        gain_shift: None,
    }
}

pub fn reference_fixture() -> (SampledSeries<f64>, TruthRecord<f64>) {
    generate(&reference_spec()).expect("fixture spec is valid")
}

/// Estimation fit (percent) of the best multistart model over the whole
/// record of `series`.
pub fn full_record_fit<T: Scalar>(
    series: &SampledSeries<T>,
    options: &FitOptions<T>,
) -> Result<T, SynthError> {
    let pair = normalize(series);
    let seg = pair.full();
    let best = multistart(&seg, options)?.swap_remove(0);
    let yhat = best.tf.discretize_zoh(seg.period)?.run(seg.u);
    nrmse_fit(seg.y, &yhat).map_err(|_| SynthError::InvalidSpec("output has zero variance"))
}

/// Bisects the noise fraction in `[lo, hi]` until the full-record fit of the
/// generated data is within `tol` percentage points of `target_fit`.
pub fn calibrate_noise<T: Scalar>(
    spec: &SynthSpec<T>,
    target_fit: T,
    mut lo: T,
    mut hi: T,
    tol: T,
) -> Result<T, SynthError> {
    let options = FitOptions::default();
    let fit_at = |noise: T| -> Result<T, SynthError> {
        let s = SynthSpec {
            noise,
            ..spec.clone()
        };
        full_record_fit(&generate(&s)?.0, &options)
    };
    let mut mid = (lo + hi) / T::lit(2.0);
    for _ in 0..60 {
        mid = (lo + hi) / T::lit(2.0);
        let fit = fit_at(mid)?;
        if (fit - target_fit).abs() <= tol {
            break;
        }
        // More noise, lower fit.
        if fit > target_fit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}
