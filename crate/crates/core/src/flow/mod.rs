//! The flow `phi_t`, the tangent flow `Phi_t`, the induced flow on unit
//! vectors and the frame flows.

mod integrator;

pub use integrator::{DenseStep, Solution, Tolerance};
pub(crate) use integrator::DenseOutput;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::linalg;

/// Points whose field norm is at most this are treated as equilibria when
/// choosing between the variational equation and the matrix exponential.
pub const SINGULAR_EPS: f64 = 1e-14;

/// Threshold below which a tangent image is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-300;

/// Orbit samples over a flow-time interval with dense output.
#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    times: Vec<f64>,
    points: Vec<DVector<f64>>,
    dense: DenseOutput,
    flow_time: f64,
    tol_used: Tolerance,
    error_estimate: f64,
}

impl TrajectorySegment {
    /// Sample times, strictly increasing.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// The requested flow time (the end of the segment opposite to 0).
    pub fn flow_time(&self) -> f64 {
        self.flow_time
    }

    /// `phi_t(x0)` for the requested `t`.
    pub fn endpoint(&self) -> &DVector<f64> {
        if self.flow_time >= 0.0 {
            self.points.last().expect("non-empty")
        } else {
            &self.points[0]
        }
    }

    pub fn tol_used(&self) -> Tolerance {
        self.tol_used
    }

    /// Accumulated local error estimate of the run.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    /// Interpolated state; returns stored samples verbatim at sample times.
    pub fn at(&self, t: f64) -> Option<DVector<f64>> {
        if let Ok(i) = self.times.binary_search_by(|s| s.total_cmp(&t)) {
            return Some(self.points[i].clone());
        }
        if t < self.times[0] || t > *self.times.last().expect("non-empty") {
            return None;
        }
        self.dense.eval(t)
    }
}

/// Integrates the orbit of `x0` for flow time `t` (negative for backward).
pub fn integrate(model: &VectorFieldModel, x0: &DVector<f64>, t: f64, tol: Tolerance) -> Result<TrajectorySegment> {
    model.check_dim(x0)?;
    let f = |y: &DVector<f64>| model.eval(y);
    let sol = integrator::solve(&f, x0, t, tol, true)?;
    let Solution { mut times, mut states, steps, error_estimate, .. } = sol;
    if t < 0.0 {
        times.reverse();
        states.reverse();
    }
    Ok(TrajectorySegment {
        times,
        points: states,
        dense: DenseOutput::new(steps),
        flow_time: t,
        tol_used: tol,
        error_estimate,
    })
}

/// `phi_t(x0)` without keeping dense output.
pub fn flow_to(model: &VectorFieldModel, x0: &DVector<f64>, t: f64, tol: Tolerance) -> Result<DVector<f64>> {
    model.check_dim(x0)?;
    let f = |y: &DVector<f64>| model.eval(y);
    Ok(integrator::solve(&f, x0, t, tol, false)?.endpoint().clone())
}

/// Endpoint of the orbit and the matrix of `Phi_t` at `x0`.
#[derive(Debug, Clone)]
pub struct TangentMap {
    pub endpoint: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub error_estimate: f64,
}

fn is_equilibrium(model: &VectorFieldModel, x: &DVector<f64>) -> bool {
    model.eval(x).norm() <= SINGULAR_EPS
}

/// Integrates the variational equation `V' = DX(phi_s x0) V`, `V(0) = I`,
/// jointly with the orbit. At an equilibrium this is `exp(t DX(x0))`.
pub fn tangent_map(model: &VectorFieldModel, x0: &DVector<f64>, t: f64, tol: Tolerance) -> Result<TangentMap> {
    model.check_dim(x0)?;
    let d = model.dim();
    if is_equilibrium(model, x0) {
        let a = model.jacobian(x0) * t;
        return Ok(TangentMap { endpoint: x0.clone(), matrix: linalg::expm(&a), error_estimate: 0.0 });
    }
    let rhs = |y: &DVector<f64>| {
        let x = y.rows(0, d).into_owned();
        let v = DMatrix::from_column_slice(d, d, &y.as_slice()[d..]);
        let dv = model.jacobian(&x) * v;
        let mut out = DVector::zeros(d + d * d);
        out.rows_mut(0, d).copy_from(&model.eval(&x));
        out.rows_mut(d, d * d).copy_from_slice(dv.as_slice());
        out
    };
    let mut y0 = DVector::zeros(d + d * d);
    y0.rows_mut(0, d).copy_from(x0);
    for i in 0..d {
        y0[d + i * d + i] = 1.0;
    }
    let sol = integrator::solve(&rhs, &y0, t, tol, false)?;
    let y = sol.endpoint();
    Ok(TangentMap {
        endpoint: y.rows(0, d).into_owned(),
        matrix: DMatrix::from_column_slice(d, d, &y.as_slice()[d..]),
        error_estimate: sol.error_estimate,
    })
}

/// Matrix of the tangent flow `Phi_t` at `x0`.
pub fn tangent_flow(model: &VectorFieldModel, x0: &DVector<f64>, t: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
    Ok(tangent_map(model, x0, t, tol)?.matrix)
}

fn unit(v: DVector<f64>) -> Result<DVector<f64>> {
    let n = v.norm();
    if !(n >= DEGENERATE_NORM) || !n.is_finite() {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(v / n)
}

fn require_unit(u: &DVector<f64>) -> Result<()> {
    if (u.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::BadParameters(format!("expected a unit vector, |u| = {}", u.norm())));
    }
    Ok(())
}

/// `Phi_t(u) / |Phi_t(u)|`, based at `phi_t(x0)`.
pub fn sphere_flow(
    model: &VectorFieldModel,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    tol: Tolerance,
) -> Result<DVector<f64>> {
    model.check_dim(u)?;
    require_unit(u)?;
    let phi = tangent_flow(model, x0, t, tol)?;
    unit(phi * u)
}

/// The second component of the frame flow:
/// `Phi v - (<Phi u, Phi v> / |Phi u|^2) Phi u`.
pub fn frame_second_component(phi: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let pu = phi * u;
    let n2 = pu.norm_squared();
    if !(n2.sqrt() >= DEGENERATE_NORM) {
        return Err(Error::DegenerateVector { norm: n2.sqrt() });
    }
    let pv = phi * v;
    let c = pu.dot(&pv) / n2;
    Ok(pv - pu * c)
}

/// A tangent 2-frame `(u, v)` with `u != 0` and `u ⊥ v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub base: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl FramePair {
    pub fn new(base: DVector<f64>, u: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        let nu = u.norm();
        if nu < DEGENERATE_NORM {
            return Err(Error::DegenerateVector { norm: nu });
        }
        if u.dot(&v).abs() > 1e-10 * nu * v.norm().max(DEGENERATE_NORM) {
            return Err(Error::BadParameters("frame vectors are not orthogonal".into()));
        }
        Ok(Self { base, u, v })
    }

    pub fn is_normalized(&self) -> bool {
        (self.u.norm() - 1.0).abs() <= 1e-12
    }
}

/// The frame flow (`normalized = false`) or its normalised variant.
pub fn frame_flow(
    model: &VectorFieldModel,
    pair: &FramePair,
    t: f64,
    normalized: bool,
    tol: Tolerance,
) -> Result<FramePair> {
    let tm = tangent_map(model, &pair.base, t, tol)?;
    let first = &tm.matrix * &pair.u;
    let second = frame_second_component(&tm.matrix, &pair.u, &pair.v)?;
    let first = if normalized { unit(first)? } else { first };
    Ok(FramePair { base: tm.endpoint, u: first, v: second })
}

/// The linear map `v -> proj_2 chi_t(u, v)` restricted to `u^⊥`, expressed
/// from an orthonormal basis of `u^⊥` into R^d, together with `|Phi_t u|`.
pub fn frame_second_map(phi: &DMatrix<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
    let pu = phi * u;
    let norm = pu.norm();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateVector { norm });
    }
    let w = &pu / norm;
    let basis = linalg::orthonormal_complement(u);
    let q = linalg::columns(&basis, u.len());
    let pq = phi * q;
    let proj = &pq - &w * (w.transpose() * &pq);
    Ok((proj, norm))
}

/// `|proj_2 chi_t(u, ·)| / |Phi_t(u)|` at the singularity `sigma` for each
/// time in `t_grid`.
pub fn domination_ratio(
    model: &VectorFieldModel,
    sigma: &DVector<f64>,
    u: &DVector<f64>,
    t_grid: &[f64],
    tol: Tolerance,
) -> Result<Vec<f64>> {
    model.check_dim(sigma)?;
    model.check_dim(u)?;
    require_unit(u)?;
    let residual = model.eval(sigma).norm();
    if residual > 1e-9 {
        return Err(Error::NotASingularity { residual, tol: 1e-9 });
    }
    t_grid
        .iter()
        .map(|&t| {
            let phi = tangent_flow(model, sigma, t, tol)?;
            let (m, n) = frame_second_map(&phi, u)?;
            Ok(linalg::op_norm(&m) / n)
        })
        .collect()
}

/// Constants of a fit `ratio(t) ≈ C e^{-lambda t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub c: f64,
    pub lambda: f64,
}

/// Least-squares fit of `log ratio = log C - lambda t`, ignoring
/// non-positive samples. Returns `None` with fewer than two usable samples.
pub fn fit_exponential(ts: &[f64], ratios: &[f64]) -> Option<ExponentialFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ratios)
        .filter(|(_, r)| **r > 0.0 && r.is_finite())
        .map(|(t, r)| (*t, r.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(ExponentialFit { c: (my - slope * mt).exp(), lambda: -slope })
}
