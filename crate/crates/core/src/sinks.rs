//! Periodic orbits, uniform-sink certificates, and the contracted points
//! extracted from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::flow::{self, Tolerance};
use crate::linalg;
use crate::pliss::{self, WeightSequence, SUM_EPS};
use crate::poincare::{self, PartitionSchedule, REGULAR_EPS};

pub const REFINE_RESIDUAL: f64 = 1e-8;
pub const REFINE_MAX_ITER: usize = 50;
/// Below this `sigma_min / sigma_max` the Newton system is treated as singular.
pub const SINGULAR_RATIO: f64 = 1e-6;
pub const DEFAULT_PHASES: usize = 16;
pub const DEFAULT_M_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub anchor: DVector<f64>,
    pub period: f64,
    /// `|phi_period(anchor) - anchor|`.
    pub residual: f64,
}

/// Newton on `(y, tau) -> phi_tau(g + B y) - (g + B y)`, with `B` an
/// orthonormal basis of the hyperplane through the guess normal to `X`.
pub fn refine_orbit(
    model: &VectorFieldModel,
    guess: &DVector<f64>,
    period_guess: f64,
    tol: Tolerance,
) -> Result<PeriodicOrbit> {
    model.check_dim(guess)?;
    let fx = model.eval(guess);
    if fx.norm() <= REGULAR_EPS {
        return Err(Error::SingularPoint { norm: fx.norm() });
    }
    if !(period_guess > 0.0) {
        return Err(Error::BadParameters("period guess must be positive".into()));
    }
    let b = linalg::columns(&linalg::orthonormal_complement(&fx), guess.len());
    let d = guess.len();
    let mut y = DVector::zeros(d - 1);
    let mut tau = period_guess;
    let mut residual = f64::INFINITY;
    for _ in 0..REFINE_MAX_ITER {
        let p = guess + &b * &y;
        let tm = flow::tangent_map(model, &p, tau, tol)?;
        let f = &tm.endpoint - &p;
        residual = f.norm();
        let mut jac = DMatrix::zeros(d, d);
        jac.view_mut((0, 0), (d, d - 1)).copy_from(&(&tm.matrix * &b - &b));
        jac.set_column(d - 1, &model.eval(&tm.endpoint));
        let sv = jac.singular_values();
        let ratio = sv.min() / sv.max();
        if !(ratio > SINGULAR_RATIO) {
            return Err(Error::SingularJacobian { ratio });
        }
        if residual <= REFINE_RESIDUAL * 1e-2 {
            return Ok(PeriodicOrbit { anchor: p, period: tau, residual });
        }
        let step = jac.lu().solve(&(-f)).ok_or(Error::SingularJacobian { ratio: 0.0 })?;
        y += step.rows(0, d - 1);
        tau += step[d - 1];
        if !(tau > 0.0) {
            break;
        }
    }
    // accept a final iterate that meets the contract even if not the polished one
    let p = guess + &b * &y;
    if tau > 0.0 {
        let r = (flow::flow_to(model, &p, tau, tol)? - &p).norm();
        if r <= REFINE_RESIDUAL {
            return Ok(PeriodicOrbit { anchor: p, period: tau, residual: r });
        }
        residual = r;
    }
    Err(Error::NoConvergence { iterations: REFINE_MAX_ITER, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkCertificate {
    pub orbit: PeriodicOrbit,
    pub alpha: f64,
    pub gap_bound: f64,
    pub m: usize,
    pub schedule: PartitionSchedule,
    /// Leg norms of `psi` along the schedule from the anchor.
    pub leg_norms: Vec<f64>,
    /// Worst log-product over the sampled phases.
    pub log_product: f64,
    pub phase_log_products: Vec<f64>,
    /// `log_product + alpha m period`; certified iff `<= 0`.
    pub margin: f64,
    pub certified: bool,
}

impl SinkCertificate {
    /// `-log_product / (m period)`.
    pub fn exponent(&self) -> f64 {
        -self.log_product / self.schedule.span()
    }
}

/// Uniform schedule for `m` periods: the largest step `<= gap_bound` that
/// divides `m period` evenly.
pub fn sink_schedule(period: f64, m: usize, gap_bound: f64) -> Result<PartitionSchedule> {
    PartitionSchedule::uniform(period * m as f64, gap_bound)
}

/// Orbit points at `phases` equally spaced times along one period.
pub fn phase_points(
    model: &VectorFieldModel,
    orbit: &PeriodicOrbit,
    phases: usize,
    tol: Tolerance,
) -> Result<Vec<DVector<f64>>> {
    let mut pts = vec![orbit.anchor.clone()];
    for k in 1..phases {
        let t = orbit.period * k as f64 / phases as f64;
        pts.push(flow::flow_to(model, &orbit.anchor, t, tol)?);
    }
    Ok(pts)
}

/// Tries `m = 1..=m_max` and certifies at the first `m` whose worst-phase
/// log-product of `psi` is at most `-alpha m period`.
pub fn certify_sink(
    model: &VectorFieldModel,
    orbit: &PeriodicOrbit,
    alpha: f64,
    gap_bound: f64,
    m_max: usize,
    phases: usize,
    tol: Tolerance,
) -> Result<SinkCertificate> {
    if !(alpha > 0.0) || !(gap_bound > 0.0) || m_max == 0 || phases == 0 {
        return Err(Error::BadParameters("need alpha > 0, T > 0, m_max >= 1, phases >= 1".into()));
    }
    let starts = phase_points(model, orbit, phases, tol)?;
    let mut best: Option<SinkCertificate> = None;
    for m in 1..=m_max {
        let schedule = sink_schedule(orbit.period, m, gap_bound)?;
        let mut phase_log_products = Vec::with_capacity(phases);
        let mut leg_norms = Vec::new();
        for (k, x) in starts.iter().enumerate() {
            let chain = poincare::chain_product(model, x, &schedule, false, tol)?;
            if k == 0 {
                leg_norms = chain.leg_norms.clone();
            }
            phase_log_products.push(chain.log_product);
        }
        let log_product = phase_log_products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let margin = log_product + alpha * m as f64 * orbit.period;
        let cert = SinkCertificate {
            orbit: orbit.clone(),
            alpha,
            gap_bound,
            m,
            schedule,
            leg_norms,
            log_product,
            phase_log_products,
            margin,
            certified: margin <= 0.0,
        };
        if cert.certified {
            return Ok(cert);
        }
        // normalise margins per unit time so different m compare fairly
        let rate = |c: &SinkCertificate| c.margin / c.schedule.span();
        if best.as_ref().is_none_or(|b| rate(&cert) < rate(b)) {
            best = Some(cert);
        }
    }
    Ok(best.expect("m_max >= 1"))
}

/// A point of a certified orbit from which all rescaled partial products
/// along the (shifted, repeated) schedule stay below `e^{-eta t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedPoint {
    pub point: DVector<f64>,
    pub eta: f64,
    /// Index of the starting leg in the certificate schedule.
    pub start_index: usize,
    pub start_time: f64,
    /// Schedule from `point`, repeated over `copies` spans.
    pub schedule: PartitionSchedule,
    /// Log rescaled leg norms along `schedule`.
    pub leg_logs: Vec<f64>,
}

impl ContractedPoint {
    /// `max_j (S_j + eta t_j)` over the stored legs; `<= 0` means `(1, eta, T)`.
    pub fn worst_excess(&self) -> f64 {
        worst_excess(&self.leg_logs, self.schedule.times(), self.eta)
    }
}

pub(crate) fn worst_excess(leg_logs: &[f64], times: &[f64], eta: f64) -> f64 {
    let mut s = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (i, a) in leg_logs.iter().enumerate() {
        s += a;
        worst = worst.max(s + eta * times[i + 1]);
    }
    worst
}

pub const DEFAULT_COPIES: usize = 8;

/// Pliss point of the rescaled leg data of a certified orbit.
pub fn extract_contracted_point(
    model: &VectorFieldModel,
    cert: &SinkCertificate,
    eta: f64,
    copies: usize,
    tol: Tolerance,
) -> Result<ContractedPoint> {
    if !cert.certified {
        return Err(Error::BadParameters("certificate is not certified".into()));
    }
    if !(eta > 0.0 && eta < cert.alpha) {
        return Err(Error::BadParameters(format!("need 0 < eta < alpha = {}, got {eta}", cert.alpha)));
    }
    let chain = poincare::chain_product(model, &cert.orbit.anchor, &cert.schedule, true, tol)?;
    let logs: Vec<f64> = chain.leg_norms.iter().map(|n| n.ln()).collect();
    let durations = cert.schedule.durations();
    let seq = WeightSequence::new(logs.clone(), durations.clone(), cert.gap_bound)?;
    let candidates = pliss::pliss_point(&seq, eta, copies)?;
    let k = *candidates
        .first()
        .ok_or_else(|| Error::NoPlissPoint("no qualifying phase despite eta < alpha".into()))?;
    let n = logs.len();
    let mut times = vec![0.0];
    let mut leg_logs = Vec::with_capacity(n * copies);
    for i in 0..n * copies {
        let j = (k + i) % n;
        times.push(times[i] + durations[j]);
        leg_logs.push(logs[j]);
    }
    let schedule = PartitionSchedule::new(times, cert.gap_bound)?;
    Ok(ContractedPoint {
        point: chain.points[k].clone(),
        eta,
        start_index: k,
        start_time: cert.schedule.times()[k],
        schedule,
        leg_logs,
    })
}

/// Outcome of [`shift_to_uniform_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformShift {
    pub z: DVector<f64>,
    pub offset: usize,
    pub shift_time: f64,
    /// Offset guaranteed by the tail-sum bound when `x` meets its premise.
    pub offset_bound: u64,
    /// Largest `exp(S_j + eta t_j)` along the data of `x`: the constant `x`
    /// actually achieves.
    pub measured_c: f64,
    /// Every tail from `z` stays below `e^{-eta t / 2}`.
    pub success: bool,
    pub leg_logs: Vec<f64>,
}

/// Offset from log rescaled leg norms over a uniform step `step`: the first
/// `L` with all tail sums `<= -(eta/2) step n`.
pub fn uniform_offset(leg_logs: &[f64], eta: f64, step: f64) -> Option<usize> {
    pliss::find_tail_offset(&WeightSequence::unit(leg_logs.to_vec()), -eta * step / 2.0).map(|s| s.offset)
}

/// Moves a `(C, eta, T)`-contracted point forward to one that is
/// `(1, eta/2, T)`-contracted over a uniform step-`T` schedule.
pub fn shift_to_uniform_scale(
    model: &VectorFieldModel,
    x: &DVector<f64>,
    c: f64,
    eta: f64,
    step: f64,
    horizon: f64,
    tol: Tolerance,
) -> Result<UniformShift> {
    if !(c >= 1.0) || !(eta > 0.0) || !(step > 0.0) {
        return Err(Error::BadParameters("need C >= 1, eta > 0, T > 0".into()));
    }
    let legs = (horizon / step * (1.0 + 1e-12)).floor() as usize;
    if legs == 0 {
        return Err(Error::NoneFound(format!("horizon {horizon} is shorter than one leg of length {step}")));
    }
    let times: Vec<f64> = (0..=legs).map(|i| i as f64 * step).collect();
    let schedule = PartitionSchedule::new(times.clone(), step)?;
    let chain = poincare::chain_product(model, x, &schedule, true, tol)?;
    let leg_logs: Vec<f64> = chain.leg_norms.iter().map(|n| n.ln()).collect();
    let offset_bound = pliss::pliss_bound(c.ln(), -eta * step, -eta * step / 2.0)?;
    let measured_c = worst_excess(&leg_logs, &times, eta).max(0.0).exp();
    match uniform_offset(&leg_logs, eta, step) {
        Some(offset) => {
            let tail = &leg_logs[offset..];
            let tail_times: Vec<f64> = (0..=tail.len()).map(|i| i as f64 * step).collect();
            let success = worst_excess(tail, &tail_times, eta / 2.0) <= SUM_EPS;
            Ok(UniformShift {
                z: chain.points[offset].clone(),
                offset,
                shift_time: times[offset],
                offset_bound,
                measured_c,
                success,
                leg_logs,
            })
        }
        None => Ok(UniformShift {
            z: x.clone(),
            offset: 0,
            shift_time: 0.0,
            offset_bound,
            measured_c,
            success: false,
            leg_logs,
        }),
    }
}
