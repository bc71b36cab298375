//! Dormand–Prince 5(4) with Hairer's fourth-order continuous extension.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute / relative local error tolerance pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-10 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    /// Both components scaled by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self { abs: self.abs * factor, rel: self.rel * factor }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 2_000_000;

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseStep {
    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    fn lo(&self) -> f64 {
        self.t0.min(self.t0 + self.h)
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        let mut inner = r4 + r5 * th1;
        inner = r3 + inner * th;
        inner = r2 + inner * th1;
        r1 + inner * th
    }
}

/// Raw output of one integration run, in integration order.
#[derive(Debug, Clone)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub steps: Vec<DenseStep>,
    /// Accumulated Euclidean norm of the embedded local error estimates.
    pub error_estimate: f64,
    pub evaluations: usize,
}

impl Solution {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().expect("solution has at least the initial state")
    }
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, tol: Tolerance) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = tol.abs + tol.rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F>(f: &F, y0: &DVector<f64>, f0: &DVector<f64>, dir: f64, span: f64, tol: Tolerance) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let zero = DVector::zeros(y0.len());
    let d0 = error_norm(y0, y0, &zero, tol).max(1e-300);
    let d1 = error_norm(f0, y0, &zero, tol).max(1e-300);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1 = y0 + f0 * (dir * h0);
    let f1 = f(&y1);
    let d2 = error_norm(&(f1 - f0), y0, &zero, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates the autonomous system `y' = f(y)` from time 0 to `t_end`
/// (which may be negative). Dense coefficients are kept when `dense` is set.
pub fn solve<F>(f: &F, y0: &DVector<f64>, t_end: f64, tol: Tolerance, dense: bool) -> Result<Solution>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut sol = Solution {
        times: vec![0.0],
        states: vec![y0.clone()],
        steps: Vec::new(),
        error_estimate: 0.0,
        evaluations: 0,
    };
    if t_end == 0.0 {
        return Ok(sol);
    }
    let dir = t_end.signum();
    let span = t_end.abs();
    let mut t = 0.0f64;
    let mut y = y0.clone();
    let mut k1 = f(&y);
    sol.evaluations += 1;
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(Error::StepFailure { t, reason: "non-finite vector field at initial point".into() });
    }
    let mut h = initial_step(f, &y, &k1, dir, span, tol);
    sol.evaluations += 1;
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        let remaining = (t_end - t).abs();
        if remaining <= 1e-15 * span.max(1.0) {
            return Ok(sol);
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        let k2 = f(&(&y + &k1 * (hs * A21)));
        let k3 = f(&(&y + (&k1 * A31 + &k2 * A32) * hs));
        let k4 = f(&(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * hs));
        let k5 = f(&(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * hs));
        let k6 = f(&(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * hs));
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * hs;
        let k7 = f(&y_new);
        sol.evaluations += 6;
        let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * hs;
        let en = error_norm(&err, &y, &y_new, tol);

        if !en.is_finite() || !y_new.iter().all(|v| v.is_finite()) {
            h *= FAC_MIN;
            rejected_last = true;
        } else if en <= 1.0 {
            let t_new = if last { t_end } else { t + hs };
            if dense {
                let ydiff = &y_new - &y;
                let bspl = &k1 * hs - &ydiff;
                let r4 = &ydiff - &k7 * hs - &bspl;
                let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * hs;
                sol.steps.push(DenseStep { t0: t, h: t_new - t, rcont: [y.clone(), ydiff, bspl, r4, r5] });
            }
            sol.error_estimate += err.norm();
            t = t_new;
            y = y_new;
            k1 = k7;
            sol.times.push(t);
            sol.states.push(y.clone());
            let mut fac = (SAFETY * en.max(1e-10).powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h *= fac;
            rejected_last = false;
            if last {
                return Ok(sol);
            }
        } else {
            h *= (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, 1.0);
            rejected_last = true;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepFailure { t, reason: format!("step size underflow (h = {h:e})") });
        }
    }
    Err(Error::StepFailure { t, reason: format!("more than {MAX_STEPS} steps") })
}

/// Dense steps sorted by increasing time, with lookup.
#[derive(Debug, Clone)]
pub(crate) struct DenseOutput {
    steps: Vec<DenseStep>,
}

impl DenseOutput {
    pub(crate) fn new(mut steps: Vec<DenseStep>) -> Self {
        steps.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
        Self { steps }
    }

    pub(crate) fn eval(&self, t: f64) -> Option<DVector<f64>> {
        if self.steps.is_empty() {
            return None;
        }
        let idx = self.steps.partition_point(|s| s.lo() <= t).saturating_sub(1);
        let s = &self.steps[idx];
        let hi = s.lo() + s.h.abs();
        let slack = 1e-12 * s.h.abs();
        if t < s.lo() - slack || t > hi + slack {
            return None;
        }
        Some(s.eval(t))
    }
}
