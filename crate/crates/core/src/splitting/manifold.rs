use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{SplittingReport, EIGEN_TOL};
use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::flow::{self, Tolerance};
use crate::poincare::REGULAR_EPS;

/// Target number of polyline segments along a curve.
const SEGMENTS: usize = 512;
/// Taylor coefficients are trusted while `|a_k| s^k` stays below this.
const TAYLOR_EPS: f64 = 1e-13;
/// `disk_meets_wf` counts a hit when the distance is below this times the scale.
pub const CROSSING_REL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Polyline approximation of one branch `W^{F,±}(sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCurve {
    pub sigma: DVector<f64>,
    pub side: Side,
    /// Cumulative arclength of `points`, starting at 0.
    pub params: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub tangent_at_sigma: DVector<f64>,
    /// Parameter up to which the local Taylor expansion was used (0 for
    /// analytic curves).
    pub taylor_radius: f64,
}

impl ManifoldCurve {
    pub fn arclength(&self) -> f64 {
        *self.params.last().unwrap_or(&0.0)
    }

    pub fn tip(&self) -> &DVector<f64> {
        self.points.last().expect("curve has points")
    }

    /// Euclidean distance from `p` to the polyline.
    pub fn distance_to(&self, p: &DVector<f64>) -> f64 {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Angle between the first chord and `tangent_at_sigma`.
    pub fn initial_angle(&self) -> f64 {
        let chord = &self.points[1] - &self.points[0];
        let c = chord.dot(&self.tangent_at_sigma) / chord.norm();
        c.clamp(-1.0, 1.0).acos()
    }
}

fn point_segment_distance(p: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let tau = if l2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) };
    (p - (a + ab * tau)).norm()
}

/// Branch of `W^F` through `sigma` on the given side, up to `arclength`.
///
/// Expanding `F`: the parametrization `K(s) = sigma + Σ a_k s^k` solving
/// `X(K(s)) = λ s K'(s)` order by order (`(kλ - A) a_k = R_k`), then
/// continued by the forward flow. Non-expanding `F`: the model's analytic
/// centre curve.
pub fn approximate_wf(
    model: &VectorFieldModel,
    report: &SplittingReport,
    side: Side,
    arclength: f64,
    order: usize,
    tol: Tolerance,
) -> Result<ManifoldCurve> {
    if !(arclength > 0.0) || order == 0 {
        return Err(Error::BadParameters("need arclength > 0 and order >= 1".into()));
    }
    let tangent = &report.f_vector * side.sign();
    if report.f_eigenvalue > EIGEN_TOL {
        unstable_branch(model, report, &tangent, side, arclength, order, tol)
    } else {
        centre_branch(model, report, &tangent, side, arclength)
    }
}

fn unstable_branch(
    model: &VectorFieldModel,
    report: &SplittingReport,
    tangent: &DVector<f64>,
    side: Side,
    arclength: f64,
    order: usize,
    tol: Tolerance,
) -> Result<ManifoldCurve> {
    let poly = model
        .polynomial()
        .ok_or_else(|| Error::Unsupported(format!("{}: no polynomial form for the Taylor solve", model.name())))?;
    let d = report.dim();
    let lambda = report.f_eigenvalue;
    let a = model.jacobian(&report.sigma);
    let mut series: Vec<Vec<f64>> = (0..d).map(|i| vec![report.sigma[i], tangent[i]]).collect();
    for k in 2..=order {
        let composed = poly.compose_series(&series, k);
        let rhs = DVector::from_iterator(d, composed.iter().map(|c| c[k]));
        let m = DMatrix::identity(d, d) * (k as f64 * lambda) - &a;
        let sv = m.singular_values();
        if sv.min() <= 1e-10 * sv.max().max(1.0) {
            return Err(Error::ResonanceObstruction { order: k });
        }
        let ak = m.lu().solve(&rhs).ok_or(Error::ResonanceObstruction { order: k })?;
        for (i, c) in series.iter_mut().enumerate() {
            c.push(ak[i]);
        }
    }
    let coeff_norm = |k: usize| (0..d).map(|i| series[i][k].powi(2)).sum::<f64>().sqrt();
    let mut radius = arclength;
    if order == 1 {
        radius = radius.min(1e-6);
    }
    for k in (order / 2).max(2)..=order {
        let n = coeff_norm(k);
        if n > 0.0 {
            radius = radius.min((TAYLOR_EPS / n).powf(1.0 / k as f64));
        }
    }
    let eval = |s: f64| DVector::from_iterator(d, series.iter().map(|c| c.iter().rev().fold(0.0, |acc, &ck| acc * s + ck)));

    let h = arclength / SEGMENTS as f64;
    let taylor_pts = ((radius / h).ceil() as usize).clamp(8, SEGMENTS);
    let mut points: Vec<DVector<f64>> = (0..=taylor_pts).map(|j| eval(radius * j as f64 / taylor_pts as f64)).collect();
    points[0] = report.sigma.clone();
    let mut params = cumulative(&points);
    let mut p = points.last().cloned().expect("non-empty");
    let mut guard = 0;
    while *params.last().expect("non-empty") < arclength {
        guard += 1;
        if guard > 50 * SEGMENTS {
            return Err(Error::NoConvergence { iterations: guard, residual: arclength - params.last().unwrap() });
        }
        let speed = model.eval(&p).norm();
        if speed <= REGULAR_EPS {
            break;
        }
        p = flow::flow_to(model, &p, h / speed, tol)?;
        let last = params.last().copied().expect("non-empty");
        params.push(last + (&p - points.last().expect("non-empty")).norm());
        points.push(p.clone());
    }
    Ok(ManifoldCurve { sigma: report.sigma.clone(), side, params, points, tangent_at_sigma: tangent.clone(), taylor_radius: radius })
}

fn centre_branch(
    model: &VectorFieldModel,
    report: &SplittingReport,
    tangent: &DVector<f64>,
    side: Side,
    arclength: f64,
) -> Result<ManifoldCurve> {
    let cc = model.center_curve().ok_or_else(|| {
        Error::Unsupported(format!("{}: F is not expanding and no centre curve is known", model.name()))
    })?;
    let curve = &cc.curve;
    if (curve(0.0) - &report.sigma).norm() > 1e-9 {
        return Err(Error::Unsupported("the known centre curve does not pass through this singularity".into()));
    }
    let eps = 1e-6;
    let dir = (curve(eps) - curve(-eps)) / (2.0 * eps);
    let sign = if dir.dot(tangent) >= 0.0 { 1.0 } else { -1.0 };
    let ds = arclength / SEGMENTS as f64 / dir.norm().max(1e-12);
    let mut points = vec![report.sigma.clone()];
    let mut params = vec![0.0];
    let mut j = 1;
    while *params.last().expect("non-empty") < arclength {
        if j > 50 * SEGMENTS {
            break;
        }
        let p = curve(sign * ds * j as f64);
        let last = params.last().copied().expect("non-empty");
        params.push(last + (&p - points.last().expect("non-empty")).norm());
        points.push(p);
        j += 1;
    }
    Ok(ManifoldCurve { sigma: report.sigma.clone(), side, params, points, tangent_at_sigma: tangent.clone(), taylor_radius: 0.0 })
}

fn cumulative(points: &[DVector<f64>]) -> Vec<f64> {
    let mut out = vec![0.0];
    for w in points.windows(2) {
        let last = *out.last().expect("non-empty");
        out.push(last + (&w[1] - &w[0]).norm());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskHit {
    pub hit: bool,
    pub distance: f64,
    /// Point of the polyline closest to the disk.
    pub closest: DVector<f64>,
    pub scale: f64,
}

/// Distance between the normal disk `{z + v : v ⊥ X(z), |v| <= delta |X(z)|}`
/// and the curve.
pub fn disk_meets_wf(model: &VectorFieldModel, curve: &ManifoldCurve, z: &DVector<f64>, delta: f64) -> Result<DiskHit> {
    model.check_dim(z)?;
    let fz = model.eval(z);
    let speed = fz.norm();
    if speed <= REGULAR_EPS {
        return Err(Error::SingularPoint { norm: speed });
    }
    let u = fz / speed;
    let r = delta * speed;
    let dist = |p: &DVector<f64>| {
        let w = p - z;
        let along = w.dot(&u);
        let perp = (w - &u * along).norm();
        if perp <= r {
            along.abs()
        } else {
            (along * along + (perp - r).powi(2)).sqrt()
        }
    };
    let mut best = (f64::INFINITY, curve.points[0].clone());
    for seg in curve.points.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let at = |t: f64| a + (b - a) * t;
        // distance to a convex set is convex along the segment
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if dist(&at(m1)) <= dist(&at(m2)) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        for t in [0.0, 0.5 * (lo + hi), 1.0] {
            let p = at(t);
            let dp = dist(&p);
            if dp < best.0 {
                best = (dp, p);
            }
        }
    }
    let scale = (z - &curve.sigma).norm().max(r);
    Ok(DiskHit { hit: best.0 <= CROSSING_REL_TOL * scale, distance: best.0, closest: best.1, scale })
}
