//! Continuous-time transfer functions and their exact zero-order-hold
//! simulation on a uniform sample grid.
//!
//! Coefficients are stored in ascending powers of `s`, and the denominator is
//! kept monic. `G(s) = Y(s) / U(s)`, output over input.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    #[error("model is not strictly proper (numerator degree {num} >= denominator degree {den})")]
    ImproperModel { num: usize, den: usize },
    #[error("denominator leading coefficient is zero or missing")]
    ZeroDenominator,
    #[error("pole at the origin")]
    PoleAtOrigin,
    #[error("coefficients must be finite")]
    NonFinite,
    #[error("sample period must be positive")]
    InvalidPeriod,
}

/// Strictly proper rational model `num(s) / den(s)` with monic `den`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction<T> {
    num: Vec<T>,
    den: Vec<T>,
}

impl<T: Scalar> TransferFunction<T> {
    /// Builds a model from ascending coefficients, normalizing the
    /// denominator to be monic.
    pub fn new(num: &[T], den: &[T]) -> Result<Self, LtiError> {
        if num.iter().chain(den).any(|c| !c.is_finite()) {
            return Err(LtiError::NonFinite);
        }
        let lead = *den.last().ok_or(LtiError::ZeroDenominator)?;
        if lead == T::zero() {
            return Err(LtiError::ZeroDenominator);
        }
        let mut num: Vec<T> = num.to_vec();
        while num.len() > 1 && *num.last().unwrap() == T::zero() {
            num.pop();
        }
        if num.is_empty() {
            num.push(T::zero());
        }
        let den_deg = den.len() - 1;
        let num_deg = num.len() - 1;
        if den_deg == 0 || num_deg >= den_deg {
            return Err(LtiError::ImproperModel {
                num: num_deg,
                den: den_deg,
            });
        }
        let num = num.iter().map(|c| *c / lead).collect();
        let mut den: Vec<T> = den.iter().map(|c| *c / lead).collect();
        *den.last_mut().unwrap() = T::one();
        Ok(Self { num, den })
    }

    /// `b / (s + a)`.
    pub fn first_order(b: T, a: T) -> Result<Self, LtiError> {
        Self::new(&[b], &[a, T::one()])
    }

    pub fn num(&self) -> &[T] {
        &self.num
    }

    pub fn den(&self) -> &[T] {
        &self.den
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Number of free coefficients (the monic leading term is fixed).
    pub fn param_count(&self) -> usize {
        self.num.len() + self.den.len() - 1
    }

    /// `(b, a)` for first-order models of the form `b / (s + a)`.
    pub fn first_order_params(&self) -> Option<(T, T)> {
        (self.order() == 1).then(|| (self.num[0], self.den[0]))
    }

    pub fn dc_gain(&self) -> Result<T, LtiError> {
        if self.den[0] == T::zero() {
            return Err(LtiError::PoleAtOrigin);
        }
        Ok(self.num[0] / self.den[0])
    }

    /// `1 / a` for stable first-order models.
    pub fn time_constant(&self) -> Option<T> {
        self.first_order_params()
            .filter(|(_, a)| *a > T::zero())
            .map(|(_, a)| T::one() / a)
    }

    pub fn poles(&self) -> Vec<Complex<T>> {
        polynomial_roots(&self.den)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < T::zero())
    }

    pub fn discretize_zoh(&self, period: T) -> Result<DiscreteRecursion<T>, LtiError> {
        discretize_zoh(self, period)
    }
}

/// Roots of a monic polynomial given in ascending order.
fn polynomial_roots<T: Scalar>(monic: &[T]) -> Vec<Complex<T>> {
    let n = monic.len() - 1;
    let two = T::lit(2.0);
    match n {
        0 => Vec::new(),
        1 => vec![Complex::new(-monic[0], T::zero())],
        2 => {
            let (c, b) = (monic[0], monic[1]);
            let disc = b * b - T::lit(4.0) * c;
            if disc >= T::zero() {
                let sq = disc.sqrt();
                // Cancellation-free pair.
                let q = -(b + b.signum() * sq) / two;
                if q == T::zero() {
                    vec![Complex::new(T::zero(), T::zero()); 2]
                } else {
                    vec![Complex::new(q, T::zero()), Complex::new(c / q, T::zero())]
                }
            } else {
                let im = (-disc).sqrt() / two;
                vec![Complex::new(-b / two, im), Complex::new(-b / two, -im)]
            }
        }
        _ => durand_kerner(monic),
    }
}

fn durand_kerner<T: Scalar>(monic: &[T]) -> Vec<Complex<T>> {
    let n = monic.len() - 1;
    let eval = |z: Complex<T>| {
        monic
            .iter()
            .rev()
            .fold(Complex::new(T::zero(), T::zero()), |acc, c| {
                acc * z + Complex::new(*c, T::zero())
            })
    };
    let radius = T::one() + monic[..n].iter().fold(T::zero(), |m, c| m.max(c.abs()));
    let seed = Complex::new(T::lit(0.4), T::lit(0.9));
    let mut roots: Vec<Complex<T>> = (0..n)
        .map(|k| seed.powu(k as u32) * Complex::new(radius, T::zero()))
        .collect();
    for _ in 0..500 {
        let mut delta = T::zero();
        for i in 0..n {
            let zi = roots[i];
            let denom = roots
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(Complex::new(T::one(), T::zero()), |acc, (_, zj)| {
                    acc * (zi - zj)
                });
            let step = eval(zi) / denom;
            roots[i] = zi - step;
            delta = delta.max(step.norm());
        }
        if delta <= T::epsilon() * radius {
            break;
        }
    }
    roots
}

/// Exact sampled-data realization of a transfer function under a
/// zero-order-hold input.
///
/// `x[k+1] = phi x[k] + gamma u[k]`, `y[k] = c x[k]`, state dimension `n`.
/// First-order models use the output itself as the state, so `phi = [a_d]`,
/// `gamma = [b_d]` and `c = [1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRecursion<T> {
    period: T,
    n: usize,
    phi: Vec<T>,
    gamma: Vec<T>,
    c: Vec<T>,
}

impl<T: Scalar> DiscreteRecursion<T> {
    pub fn period(&self) -> T {
        self.period
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Row-major `n x n` transition matrix.
    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn output_row(&self) -> &[T] {
        &self.c
    }

    /// `(a_d, b_d)` of the scalar recursion `y[k+1] = a_d y[k] + b_d u[k]`.
    pub fn first_order(&self) -> Option<(T, T)> {
        (self.n == 1).then(|| (self.phi[0], self.gamma[0] * self.c[0]))
    }

    /// Runs the recursion from rest; `y[0] = 0`.
    pub fn run(&self, u: &[T]) -> Vec<T> {
        let mut y = Vec::with_capacity(u.len());
        if u.is_empty() {
            return y;
        }
        if self.n == 1 {
            let (ad, bd) = (self.phi[0], self.gamma[0]);
            let mut x = T::zero();
            for &uk in u {
                y.push(self.c[0] * x);
                x = ad * x + bd * uk;
            }
            return y;
        }
        let n = self.n;
        let mut x = vec![T::zero(); n];
        let mut next = vec![T::zero(); n];
        for &uk in u {
            y.push(dot(&self.c, &x));
            for (i, xi) in next.iter_mut().enumerate() {
                *xi = dot(&self.phi[i * n..(i + 1) * n], &x) + self.gamma[i] * uk;
            }
            std::mem::swap(&mut x, &mut next);
        }
        y
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn discretize_zoh<T: Scalar>(
    tf: &TransferFunction<T>,
    period: T,
) -> Result<DiscreteRecursion<T>, LtiError> {
    if !(period.is_finite() && period > T::zero()) {
        return Err(LtiError::InvalidPeriod);
    }
    let n = tf.order();
    if n == 1 {
        let (b, a) = (tf.num[0], tf.den[0]);
        let ad = (-a * period).exp();
        let bd = if a == T::zero() {
            b * period
        } else {
            // b/a * (1 - e^{-aT}) without cancellation for small aT.
            -(b / a) * (-a * period).exp_m1()
        };
        return Ok(DiscreteRecursion {
            period,
            n,
            phi: vec![ad],
            gamma: vec![bd],
            c: vec![T::one()],
        });
    }

    // Controllable canonical form, augmented with the input so that a single
    // matrix exponential yields both phi and gamma.
    let m = n + 1;
    let mut aug = vec![T::zero(); m * m];
    for i in 0..n - 1 {
        aug[i * m + i + 1] = period;
    }
    for j in 0..n {
        aug[(n - 1) * m + j] = -tf.den[j] * period;
    }
    aug[(n - 1) * m + n] = period;
    let e = expm(&aug, m);
    let mut phi = vec![T::zero(); n * n];
    let mut gamma = vec![T::zero(); n];
    for i in 0..n {
        phi[i * n..(i + 1) * n].copy_from_slice(&e[i * m..i * m + n]);
        gamma[i] = e[i * m + n];
    }
    let mut c = vec![T::zero(); n];
    c[..tf.num.len()].copy_from_slice(&tf.num);
    Ok(DiscreteRecursion {
        period,
        n,
        phi,
        gamma,
        c,
    })
}

/// Matrix exponential of a small dense row-major matrix by scaling and
/// squaring around a truncated Taylor series.
pub(crate) fn expm<T: Scalar>(a: &[T], m: usize) -> Vec<T> {
    let norm = (0..m)
        .map(|j| (0..m).fold(T::zero(), |s, i| s + a[i * m + j].abs()))
        .fold(T::zero(), T::max);
    let mut squarings = 0i32;
    let half = T::lit(0.5);
    let mut scale = T::one();
    while norm * scale > half {
        scale = scale * half;
        squarings += 1;
    }
    let scaled: Vec<T> = a.iter().map(|v| *v * scale).collect();
    let mut result = identity(m);
    let mut term = identity(m);
    for k in 1..=24 {
        term = matmul(&term, &scaled, m);
        let inv = T::one() / T::from_usize_lossy(k);
        term.iter_mut().for_each(|v| *v = *v * inv);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r = *r + *t);
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, m);
    }
    result
}

fn identity<T: Scalar>(m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * m];
    for i in 0..m {
        out[i * m + i] = T::one();
    }
    out
}

fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..m {
                out[i * m + j] = out[i * m + j] + aik * b[k * m + j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind<T> {
    Step { amplitude: T },
    Sequence,
}

/// Sampled model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response<T> {
    pub t0: T,
    pub period: T,
    pub values: Vec<T>,
    pub input: InputKind<T>,
}

impl<T: Scalar> Response<T> {
    pub fn time(&self, k: usize) -> T {
        self.t0 + self.period * T::from_usize_lossy(k)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.values.len()).map(|k| self.time(k)).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at sample nearest to `t`.
    pub fn at(&self, t: T) -> Option<T> {
        let k = ((t - self.t0) / self.period).round().to_usize()?;
        self.values.get(k).copied()
    }
}

/// Simulates the model from rest with the input held over each interval.
pub fn simulate<T: Scalar>(
    tf: &TransferFunction<T>,
    u: &[T],
    period: T,
) -> Result<Response<T>, LtiError> {
    let rec = discretize_zoh(tf, period)?;
    Ok(Response {
        t0: T::zero(),
        period,
        values: rec.run(u),
        input: InputKind::Sequence,
    })
}

/// Response to a step of `amplitude` applied at `t = 0`, sampled every
/// `period` up to and including `horizon`.
pub fn step_response<T: Scalar>(
    tf: &TransferFunction<T>,
    amplitude: T,
    horizon: T,
    period: T,
) -> Result<Response<T>, LtiError> {
    if !(period.is_finite() && period > T::zero()) || horizon.is_nan() || horizon < period {
        return Err(LtiError::InvalidPeriod);
    }
    let steps = (horizon / period + T::lit(1e-9))
        .floor()
        .to_usize()
        .unwrap_or(0);
    let u = vec![amplitude; steps + 1];
    let rec = discretize_zoh(tf, period)?;
    Ok(Response {
        t0: T::zero(),
        period,
        values: rec.run(&u),
        input: InputKind::Step { amplitude },
    })
}

/// Closed-form step response `A (b/a) (1 - e^{-a t})` of `b / (s + a)`.
pub fn first_order_step_value<T: Scalar>(b: T, a: T, amplitude: T, t: T) -> T {
    if a == T::zero() {
        return amplitude * b * t;
    }
    -amplitude * (b / a) * (-a * t).exp_m1()
}
