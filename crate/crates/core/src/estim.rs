//! Output-error identification: Levenberg–Marquardt minimization of the mean
//! squared simulation error, started from a grid of time constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{LtiError, TransferFunction};
use crate::scalar::Scalar;
use crate::series::Segment;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimError {
    #[error("segment has {len} samples, at least {need} required")]
    SegmentTooShort { len: usize, need: usize },
    #[error("every multistart initialization failed")]
    AllStartsFailed,
    #[error("initial parameters give a non-finite cost")]
    NonFiniteStart,
    #[error("invalid fit options: {0}")]
    InvalidOptions(&'static str),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions<T> {
    pub order: usize,
    pub max_iterations: usize,
    pub cost_tolerance: T,
    pub stability_constraint: bool,
    /// Initial time constants, hours.
    pub tau_grid: Vec<T>,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            order: 1,
            max_iterations: 200,
            cost_tolerance: T::lit(1e-10),
            stability_constraint: true,
            tau_grid: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
                .map(T::lit)
                .to_vec(),
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    pub fn validate(&self) -> Result<(), EstimError> {
        if self.order == 0 {
            return Err(EstimError::InvalidOptions("order must be at least 1"));
        }
        if self.tau_grid.is_empty() {
            return Err(EstimError::InvalidOptions("time-constant grid is empty"));
        }
        if self
            .tau_grid
            .iter()
            .any(|t| !(t.is_finite() && *t > T::zero()))
        {
            return Err(EstimError::InvalidOptions(
                "time constants must be positive",
            ));
        }
        if !(self.cost_tolerance.is_finite() && self.cost_tolerance > T::zero()) {
            return Err(EstimError::InvalidOptions(
                "cost tolerance must be positive",
            ));
        }
        if self.max_iterations == 0 {
            return Err(EstimError::InvalidOptions(
                "iteration budget must be positive",
            ));
        }
        Ok(())
    }

    pub fn parameterization(&self) -> Parameterization {
        Parameterization {
            order: self.order,
            stable: self.stability_constraint,
        }
    }
}

/// A fitted model and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel<T> {
    pub tf: TransferFunction<T>,
    /// Mean squared simulation error on the estimation segment.
    pub cost: T,
    pub d: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Map between a transfer function and the unconstrained vector that LM
/// searches over.
///
/// First order: `[b, ln a]` when stability is enforced, `[b, a]` otherwise.
/// Higher orders: `[b_0..b_{n-1}, a_0..a_{n-1}]`; with stability enforced,
/// vectors whose denominator has a root with non-negative real part decode to
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parameterization {
    pub order: usize,
    pub stable: bool,
}

impl Parameterization {
    pub fn len(&self) -> usize {
        2 * self.order
    }

    pub fn is_empty(&self) -> bool {
        self.order == 0
    }

    pub fn encode<T: Scalar>(&self, tf: &TransferFunction<T>) -> Option<Vec<T>> {
        if tf.order() != self.order {
            return None;
        }
        let n = self.order;
        let mut theta = vec![T::zero(); 2 * n];
        theta[..tf.num().len()].copy_from_slice(tf.num());
        theta[n..].copy_from_slice(&tf.den()[..n]);
        if self.stable && n == 1 {
            if theta[1] <= T::zero() {
                return None;
            }
            theta[1] = theta[1].ln();
        }
        Some(theta)
    }

    pub fn decode<T: Scalar>(&self, theta: &[T]) -> Option<TransferFunction<T>> {
        let n = self.order;
        if theta.len() != 2 * n || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut den: Vec<T> = theta[n..].to_vec();
        if self.stable && n == 1 {
            den[0] = den[0].exp();
        }
        den.push(T::one());
        let tf = TransferFunction::new(&theta[..n], &den).ok()?;
        if self.stable && n > 1 && !tf.is_stable() {
            return None;
        }
        Some(tf)
    }
}

fn min_len(order: usize) -> usize {
    // d + 1 samples, and never fewer than 3.
    (2 * order + 1).max(3)
}

/// Mean squared simulation error of `tf` over `seg`, simulated from rest.
pub fn sim_error_cost<T: Scalar>(
    tf: &TransferFunction<T>,
    seg: &Segment<'_, T>,
) -> Result<T, EstimError> {
    let need = tf.param_count() + 1;
    if seg.len() < need {
        return Err(EstimError::SegmentTooShort {
            len: seg.len(),
            need,
        });
    }
    let yhat = tf.discretize_zoh(seg.period)?.run(seg.u);
    Ok(mean_sq_residual(seg.y, &yhat))
}

fn mean_sq_residual<T: Scalar>(y: &[T], yhat: &[T]) -> T {
    let s: T = y.iter().zip(yhat).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    s / T::from_usize_lossy(y.len())
}

struct Problem<'s, 'a, T> {
    seg: &'s Segment<'a, T>,
    param: Parameterization,
}

impl<T: Scalar> Problem<'_, '_, T> {
    fn residuals(&self, theta: &[T]) -> Option<Vec<T>> {
        let tf = self.param.decode(theta)?;
        let yhat = tf.discretize_zoh(self.seg.period).ok()?.run(self.seg.u);
        let r: Vec<T> = self
            .seg
            .y
            .iter()
            .zip(&yhat)
            .map(|(y, yh)| *y - *yh)
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn cost_of(&self, r: &[T]) -> T {
        r.iter().map(|v| *v * *v).sum::<T>() / T::from_usize_lossy(r.len())
    }

    fn fd_step(theta_i: T, rel: T) -> T {
        rel * theta_i.abs().max(T::one())
    }

    /// Central-difference Jacobian of the residual vector, row-major `N x p`.
    fn jacobian(&self, theta: &[T], rel: T) -> Option<Vec<T>> {
        let p = theta.len();
        let n = self.seg.len();
        let mut jac = vec![T::zero(); n * p];
        let mut probe = theta.to_vec();
        for j in 0..p {
            let h = Self::fd_step(theta[j], rel);
            probe[j] = theta[j] + h;
            let plus = self.residuals(&probe)?;
            probe[j] = theta[j] - h;
            let minus = self.residuals(&probe)?;
            probe[j] = theta[j];
            let inv = T::one() / (h + h);
            for i in 0..n {
                jac[i * p + j] = (plus[i] - minus[i]) * inv;
            }
        }
        Some(jac)
    }
}

/// Central-difference gradient of the cost in parameter space, with step
/// `rel_step * max(|θ_i|, 1)`.
pub fn cost_gradient<T: Scalar>(
    seg: &Segment<'_, T>,
    param: Parameterization,
    theta: &[T],
    rel_step: T,
) -> Option<Vec<T>> {
    let prob = Problem { seg, param };
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let h = Problem::<T>::fd_step(theta[j], rel_step);
        probe[j] = theta[j] + h;
        let plus = prob.cost_of(&prob.residuals(&probe)?);
        probe[j] = theta[j] - h;
        let minus = prob.cost_of(&prob.residuals(&probe)?);
        probe[j] = theta[j];
        grad.push((plus - minus) / (h + h));
    }
    Some(grad)
}

const FD_REL_STEP: f64 = 1e-6;

/// Levenberg–Marquardt from `init`. A run that exhausts its iteration budget
/// returns the best point found with `converged == false`.
pub fn fit<T: Scalar>(
    seg: &Segment<'_, T>,
    options: &FitOptions<T>,
    init: &TransferFunction<T>,
) -> Result<CandidateModel<T>, EstimError> {
    options.validate()?;
    let need = min_len(options.order);
    if seg.len() < need {
        return Err(EstimError::SegmentTooShort {
            len: seg.len(),
            need,
        });
    }
    let param = options.parameterization();
    let prob = Problem { seg, param };
    let mut theta = param.encode(init).ok_or(EstimError::NonFiniteStart)?;
    let mut r = prob.residuals(&theta).ok_or(EstimError::NonFiniteStart)?;
    let mut cost = prob.cost_of(&r);

    let y_scale = seg.y.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let floor = {
        let e = T::lit(64.0) * T::epsilon() * y_scale;
        e * e
    };
    let rel = T::lit(FD_REL_STEP);
    let lambda_max = T::lit(1e16);
    let mut lambda = T::lit(1e-3);
    let mut iterations = 0;
    let mut converged = false;
    let p = theta.len();
    let n = seg.len();

    while iterations < options.max_iterations {
        if cost <= floor {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(jac) = prob.jacobian(&theta, rel) else {
            break;
        };
        // Normal equations: (JᵀJ + λ D) δ = -Jᵀr
        let mut jtj = vec![T::zero(); p * p];
        let mut jtr = vec![T::zero(); p];
        for i in 0..n {
            let row = &jac[i * p..(i + 1) * p];
            for a in 0..p {
                jtr[a] = jtr[a] + row[a] * r[i];
                for b in 0..p {
                    jtj[a * p + b] = jtj[a * p + b] + row[a] * row[b];
                }
            }
        }
        let diag_max = (0..p).fold(T::zero(), |m, i| m.max(jtj[i * p + i]));
        if diag_max == T::zero() {
            converged = true;
            break;
        }
        let diag_floor = diag_max * T::lit(1e-12);

        let mut accepted = false;
        while lambda <= lambda_max {
            let mut lhs = jtj.clone();
            for i in 0..p {
                lhs[i * p + i] = lhs[i * p + i] + lambda * jtj[i * p + i].max(diag_floor);
            }
            let rhs: Vec<T> = jtr.iter().map(|g| -*g).collect();
            let step = solve(lhs, rhs, p);
            let trial_theta: Option<Vec<T>> =
                step.map(|d| theta.iter().zip(&d).map(|(t, d)| *t + *d).collect());
            let trial = trial_theta.and_then(|t| {
                let rr = prob.residuals(&t)?;
                let c = prob.cost_of(&rr);
                Some((t, rr, c))
            });
            match trial {
                Some((t, rr, c)) if c < cost => {
                    let decrease = cost - c;
                    theta = t;
                    r = rr;
                    let prev = cost;
                    cost = c;
                    lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                    accepted = true;
                    if decrease <= options.cost_tolerance * prev {
                        converged = true;
                    }
                    break;
                }
                _ => lambda = lambda * T::lit(10.0),
            }
        }
        if !accepted {
            // No descent direction left at finite-difference resolution.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged && cost <= floor {
        converged = true;
    }

    let tf = param.decode(&theta).ok_or(EstimError::NonFiniteStart)?;
    Ok(CandidateModel {
        d: tf.param_count(),
        tf,
        cost,
        iterations,
        converged,
    })
}

/// First-order fit of `b / (s + a)` from `(b0, a0)`.
pub fn fit_first_order<T: Scalar>(
    seg: &Segment<'_, T>,
    options: &FitOptions<T>,
    init: (T, T),
) -> Result<CandidateModel<T>, EstimError> {
    let opts = FitOptions {
        order: 1,
        ..options.clone()
    };
    let tf = TransferFunction::first_order(init.0, init.1)?;
    fit(seg, &opts, &tf)
}

/// Gaussian elimination with partial pivoting on a row-major `p x p` system.
fn solve<T: Scalar>(mut a: Vec<T>, mut b: Vec<T>, p: usize) -> Option<Vec<T>> {
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| {
            a[i * p + col]
                .abs()
                .partial_cmp(&a[j * p + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot * p + col] == T::zero() || !a[pivot * p + col].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..p {
                a.swap(pivot * p + k, col * p + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..p {
            let f = a[row * p + col] / a[col * p + col];
            for k in col..p {
                a[row * p + k] = a[row * p + k] - f * a[col * p + k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); p];
    for row in (0..p).rev() {
        let s = (row + 1..p).fold(b[row], |s, k| s - a[row * p + k] * x[k]);
        x[row] = s / a[row * p + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Starting model for one grid time constant: poles at `-1/τ` and the DC
/// gain matched to `Δy / Δu` over the segment (1 when the input is flat).
pub fn initial_guess<T: Scalar>(
    seg: &Segment<'_, T>,
    order: usize,
    tau: T,
) -> Result<TransferFunction<T>, EstimError> {
    let last = seg.len() - 1;
    let du = seg.u[last] - seg.u[0];
    let gain = if du == T::zero() {
        T::one()
    } else {
        (seg.y[last] - seg.y[0]) / du
    };
    let a0 = T::one() / tau;
    // (s + a0)^order, ascending.
    let mut den = vec![T::one()];
    for _ in 0..order {
        let mut next = vec![T::zero(); den.len() + 1];
        for (i, c) in den.iter().enumerate() {
            next[i] = next[i] + *c * a0;
            next[i + 1] = next[i + 1] + *c;
        }
        den = next;
    }
    Ok(TransferFunction::new(&[gain * den[0]], &den)?)
}

/// Fits once per grid time constant and ranks the results by cost, ties
/// broken by the smaller denominator constant term.
pub fn multistart<T: Scalar>(
    seg: &Segment<'_, T>,
    options: &FitOptions<T>,
) -> Result<Vec<CandidateModel<T>>, EstimError> {
    options.validate()?;
    let need = min_len(options.order);
    if seg.len() < need {
        return Err(EstimError::SegmentTooShort {
            len: seg.len(),
            need,
        });
    }
    let results: Vec<Result<CandidateModel<T>, EstimError>> = options
        .tau_grid
        .par_iter()
        .map(|tau| {
            let init = initial_guess(seg, options.order, *tau)?;
            fit(seg, options, &init)
        })
        .collect();
    let mut ranked: Vec<CandidateModel<T>> = results
        .into_iter()
        .filter_map(Result::ok)
        .filter(|c| c.cost.is_finite())
        .collect();
    if ranked.is_empty() {
        return Err(EstimError::AllStartsFailed);
    }
    ranked.sort_by(|x, y| {
        x.cost
            .partial_cmp(&y.cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                x.tf.den()[0]
                    .partial_cmp(&y.tf.den()[0])
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    Ok(ranked)
}

pub fn select_candidates<T: Clone>(
    ranked: &[CandidateModel<T>],
    count: usize,
) -> Vec<CandidateModel<T>> {
    ranked.iter().take(count).cloned().collect()
}

/// Restarts LM from `candidate` with a 100x tighter tolerance and twice the
/// iteration budget. Never returns a higher cost than it was given.
pub fn refine<T: Scalar>(
    candidate: &CandidateModel<T>,
    seg: &Segment<'_, T>,
    options: &FitOptions<T>,
) -> CandidateModel<T> {
    let opts = FitOptions {
        order: candidate.tf.order(),
        max_iterations: options.max_iterations * 2,
        cost_tolerance: options.cost_tolerance / T::lit(100.0),
        ..options.clone()
    };
    match fit(seg, &opts, &candidate.tf) {
        Ok(r) if r.cost <= candidate.cost => CandidateModel {
            iterations: candidate.iterations + r.iterations,
            ..r
        },
        _ => candidate.clone(),
    }
}
