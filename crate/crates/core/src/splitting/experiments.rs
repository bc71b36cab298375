use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{approximate_wf, cone_contains, decompose, disk_meets_wf, region_membership, ConeKind, ConeSpec};
use super::{Decomposition, Side, SplittingReport};
use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::flow::{self, Tolerance};
use crate::linalg;
use crate::poincare;
use crate::sampling;

/// Cap on sampling attempts per accepted sample.
const ATTEMPTS_PER_SAMPLE: usize = 2000;
const MAX_COUNTEREXAMPLES: usize = 20;

fn uniform_ball<R: Rng>(center: &DVector<f64>, radius: f64, rng: &mut R) -> DVector<f64> {
    let d = center.len();
    let u: f64 = rng.random();
    center + sampling::unit_vector(d, rng) * (radius * u.powf(1.0 / d as f64))
}

fn unit_in_e<R: Rng>(report: &SplittingReport, rng: &mut R) -> DVector<f64> {
    let k = report.e_basis.len();
    let c = sampling::unit_vector(k, rng);
    let v = report.e_basis.iter().zip(c.iter()).fold(DVector::zeros(report.dim()), |acc, (b, ci)| acc + b * *ci);
    &v / v.norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeClaimParams {
    pub alpha: f64,
    pub t_step: f64,
    pub eps: f64,
    /// Initial neighbourhood radius; halved after each run with a counterexample.
    pub radius: f64,
    pub trials: usize,
    pub seed: u64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// 1: cone invariance of the tangent map; 2: cone invariance or doubling
    /// of the backward difference.
    pub item: u8,
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeClaimReport {
    pub alpha: f64,
    pub t_step: f64,
    pub eps: f64,
    pub radius: f64,
    pub trials: usize,
    pub halvings: usize,
    /// Smallest `|phi_{-T} x - phi_{-T} y| / |x - y|` seen at the final radius.
    pub min_expansion: f64,
    /// Largest `|w_F| / (alpha |w_E|)` of `w = Phi_{-T}(x) (y - x)` at the final radius.
    pub max_cone_ratio: f64,
    pub counterexamples: Vec<Counterexample>,
    /// No counterexample at the final radius.
    pub valid: bool,
}

/// Random pairs `y = x + v` near `sigma` with `v` in the `E`-cone, kept when
/// both backward orbits stay in the neighbourhood; checks that the backward
/// tangent map keeps the `E`-cone and that the backward difference stays in
/// the cone with length more than doubled.
pub fn cone_claim_check(
    model: &VectorFieldModel,
    report: &SplittingReport,
    params: &ConeClaimParams,
    tol: Tolerance,
) -> Result<ConeClaimReport> {
    let p = *params;
    if !(p.alpha > 0.0 && p.t_step > 0.0 && p.eps > 0.0 && p.radius > 0.0) || p.trials == 0 {
        return Err(Error::BadParameters("cone claim needs positive alpha, T, eps, radius and trials".into()));
    }
    let cone = ConeSpec::new(p.alpha, ConeKind::E)?;
    let sigma = &report.sigma;
    let mut radius = p.radius;
    let mut counterexamples = Vec::new();
    let mut halvings = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut accepted = 0;
        let mut attempts = 0;
        let mut min_expansion = f64::INFINITY;
        let mut max_cone_ratio: f64 = 0.0;
        let mut failed = false;
        while accepted < p.trials {
            attempts += 1;
            if attempts > p.trials * ATTEMPTS_PER_SAMPLE {
                return Err(Error::BadParameters(format!(
                    "could not sample pairs whose backward orbits stay within radius {radius}"
                )));
            }
            let x = uniform_ball(sigma, radius, &mut rng);
            let a: f64 = rng.random_range(-p.alpha..=p.alpha);
            let dir = unit_in_e(report, &mut rng) + &report.f_vector * a;
            let len: f64 = rng.random_range(0.05..=1.0) * p.eps;
            let v = &dir / dir.norm() * len;
            let y = &x + &v;
            if (&y - sigma).norm() >= radius {
                continue;
            }
            let tm = flow::tangent_map(model, &x, -p.t_step, tol)?;
            let yb = flow::flow_to(model, &y, -p.t_step, tol)?;
            if (&tm.endpoint - sigma).norm() >= radius || (&yb - sigma).norm() >= radius {
                continue;
            }
            accepted += 1;
            let w = &tm.matrix * &v;
            let (we, wf) = decompose(&report.e_basis, &report.f_vector, &w, cone.decomposition)?;
            let ratio = wf.norm() / (p.alpha * we.norm());
            max_cone_ratio = max_cone_ratio.max(ratio);
            let push = |cs: &mut Vec<Counterexample>, item: u8, value: f64| {
                if cs.len() < MAX_COUNTEREXAMPLES {
                    cs.push(Counterexample { x: x.clone(), y: y.clone(), item, radius, value });
                }
            };
            if !cone_contains(&cone, &report.e_basis, &report.f_vector, &w)? {
                failed = true;
                push(&mut counterexamples, 1, ratio);
            }
            let diff = &yb - &tm.endpoint;
            let expansion = diff.norm() / len;
            min_expansion = min_expansion.min(expansion);
            if !(expansion > 2.0) || !cone_contains(&cone, &report.e_basis, &report.f_vector, &diff)? {
                failed = true;
                push(&mut counterexamples, 2, expansion);
            }
        }
        if !failed || halvings >= p.max_halvings {
            return Ok(ConeClaimReport {
                alpha: p.alpha,
                t_step: p.t_step,
                eps: p.eps,
                radius,
                trials: p.trials,
                halvings,
                min_expansion,
                max_cone_ratio,
                counterexamples,
                valid: !failed,
            });
        }
        radius /= 2.0;
        halvings += 1;
    }
}

/// Random point of `D^F_alpha(beta)`: an offset `s F` along the axis plus an
/// `E` offset of random direction and length up to what the linear part
/// allows, kept only if it passes the membership test.
pub fn sample_region<R: Rng>(
    model: &VectorFieldModel,
    report: &SplittingReport,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let a_e_min = e_block_min_singular(model, report)?;
    for _ in 0..ATTEMPTS_PER_SAMPLE * 10 {
        let s: f64 = rng.random_range(-beta..beta);
        let base = &report.sigma + &report.f_vector * s;
        let (_, xf) = decompose(&report.e_basis, &report.f_vector, &model.eval(&base), Decomposition::Oblique)?;
        let reach = if a_e_min > 1e-12 { alpha * xf.norm() / a_e_min } else { beta };
        let rho: f64 = rng.random_range(0.0..=1.0) * reach.min(beta);
        let z = base + unit_in_e(report, rng) * rho;
        if model.eval(&z).norm() > poincare::REGULAR_EPS
            && region_membership(model, report, alpha, beta, &z, Decomposition::Oblique)?
        {
            return Ok(z);
        }
    }
    Err(Error::BadParameters(format!("could not sample the cone-like region (alpha {alpha}, beta {beta})")))
}

/// Smallest singular value of `DX(sigma)` restricted to `E`, in `E` coordinates.
fn e_block_min_singular(model: &VectorFieldModel, report: &SplittingReport) -> Result<f64> {
    let a = model.jacobian(&report.sigma);
    let k = report.e_basis.len();
    let mut block = DMatrix::zeros(k, k);
    for (j, b) in report.e_basis.iter().enumerate() {
        let (ve, _) = decompose(&report.e_basis, &report.f_vector, &(&a * b), Decomposition::Oblique)?;
        for (i, bi) in report.e_basis.iter().enumerate() {
            block[(i, j)] = bi.dot(&ve);
        }
    }
    Ok(linalg::min_singular_value(&block))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleParams {
    pub delta: f64,
    pub beta: f64,
    pub samples: usize,
    /// Points used to measure `c` and `c0`.
    pub calibration_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleReport {
    /// `max |x_E| / |X_E(x)|` over the `beta`-ball.
    pub c: f64,
    /// `min` over the region of the smallest singular value of the `E`
    /// projection restricted to the normal space.
    pub c0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub samples: usize,
    pub hits: usize,
    pub max_distance: f64,
    pub all_hit: bool,
}

/// `c`: the constant with `|x_E| <= c |X_E(x)|` on the `beta`-ball.
pub fn measure_c<R: Rng>(model: &VectorFieldModel, report: &SplittingReport, beta: f64, n: usize, rng: &mut R) -> Result<f64> {
    let mut c: f64 = 0.0;
    for _ in 0..n {
        let x = uniform_ball(&report.sigma, beta, rng);
        let (xe, _) = decompose(&report.e_basis, &report.f_vector, &(&x - &report.sigma), Decomposition::Oblique)?;
        let (fe, _) = decompose(&report.e_basis, &report.f_vector, &model.eval(&x), Decomposition::Oblique)?;
        if xe.norm() > 0.0 {
            c = c.max(xe.norm() / fe.norm());
        }
    }
    Ok(c)
}

/// `c0(alpha)`: over points of the region, the least factor by which the
/// `E` projection shrinks normal vectors.
pub fn measure_c0<R: Rng>(
    model: &VectorFieldModel,
    report: &SplittingReport,
    alpha: f64,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let k = report.e_basis.len();
    let mut c0 = f64::INFINITY;
    for _ in 0..n {
        let z = sample_region(model, report, alpha, beta, rng)?;
        let basis = poincare::normal_basis(model, &z)?;
        let mut m = DMatrix::zeros(k, k);
        for (j, v) in basis.vectors.iter().enumerate() {
            let (ve, _) = decompose(&report.e_basis, &report.f_vector, v, Decomposition::Oblique)?;
            for (i, b) in report.e_basis.iter().enumerate() {
                m[(i, j)] = b.dot(&ve);
            }
        }
        c0 = c0.min(linalg::min_singular_value(&m));
    }
    Ok(c0)
}

/// Measures `c`, picks `alpha` with `alpha c / c0(alpha) <= delta`, then
/// checks that the normal disk of radius `delta |X(z)|` meets `W^F` for
/// random `z` in `D^F_alpha(beta)`.
pub fn small_scale_experiment(
    model: &VectorFieldModel,
    report: &SplittingReport,
    params: &SmallScaleParams,
    tol: Tolerance,
) -> Result<SmallScaleReport> {
    let p = *params;
    if !(p.delta > 0.0 && p.beta > 0.0) || p.samples == 0 || p.calibration_samples == 0 {
        return Err(Error::BadParameters("need delta, beta > 0 and positive sample counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let c = measure_c(model, report, p.beta, p.calibration_samples, &mut rng)?;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::BadParameters(format!("|x_E| <= c |X_E| fails on this ball (c = {c})")));
    }
    // c0 grows as alpha shrinks, so shrinking alpha to delta c0 / c settles quickly
    let mut alpha = p.delta;
    let mut c0 = measure_c0(model, report, alpha, p.beta, p.calibration_samples, &mut rng)?;
    for _ in 0..20 {
        if alpha * c / c0 <= p.delta {
            break;
        }
        alpha = p.delta * c0 / c * 0.999;
        c0 = measure_c0(model, report, alpha, p.beta, p.calibration_samples, &mut rng)?;
    }
    let order = 12;
    let curves = [
        approximate_wf(model, report, Side::Plus, 2.0 * p.beta, order, tol)?,
        approximate_wf(model, report, Side::Minus, 2.0 * p.beta, order, tol)?,
    ];
    let mut hits = 0;
    let mut max_distance: f64 = 0.0;
    for _ in 0..p.samples {
        let z = sample_region(model, report, alpha, p.beta, &mut rng)?;
        let mut best: Option<super::DiskHit> = None;
        for curve in &curves {
            let h = disk_meets_wf(model, curve, &z, p.delta)?;
            if best.as_ref().is_none_or(|b| h.distance < b.distance) {
                best = Some(h);
            }
        }
        let best = best.expect("two curves");
        max_distance = max_distance.max(best.distance);
        hits += usize::from(best.hit);
    }
    Ok(SmallScaleReport {
        c,
        c0,
        alpha,
        beta: p.beta,
        delta: p.delta,
        samples: p.samples,
        hits,
        max_distance,
        all_hit: hits == p.samples,
    })
}

/// Points `x_n = sigma + s_n F + s_n^2 Σ w_i e_i` with `s_n = s0 ratio^n`:
/// a sequence tending to `sigma` whose field directions `X(x_n) / |X(x_n)|`
/// converge (for a quadratic centre direction) to a vector outside `E`.
pub fn synthesize_sequence(report: &SplittingReport, s0: f64, ratio: f64, count: usize, w_e: &[f64]) -> Result<Vec<DVector<f64>>> {
    if w_e.len() != report.e_basis.len() {
        return Err(Error::DimensionMismatch { expected: report.e_basis.len(), got: w_e.len() });
    }
    if !(s0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::BadParameters("need s0 > 0 and 0 < ratio < 1".into()));
    }
    let offset = report.e_basis.iter().zip(w_e).fold(DVector::zeros(report.dim()), |acc, (b, w)| acc + b * *w);
    Ok((0..count)
        .map(|n| {
            let s = s0 * ratio.powi(n as i32);
            &report.sigma + &report.f_vector * s + &offset * (s * s)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryTimeParams {
    pub alpha: f64,
    pub beta: f64,
    pub l_max: f64,
    pub t_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryInterval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryTimeReport {
    pub times: Vec<f64>,
    /// Maximal runs of sample times inside the region, per point.
    pub intervals: Vec<Vec<EntryInterval>>,
    /// Points from this index on form the tail used for stabilisation.
    pub tail_start: usize,
    /// Latest first entry over the tail.
    pub stabilized_l: Option<f64>,
    /// Earliest exit of the first run over the tail.
    pub stabilized_l_prime: Option<f64>,
    pub stable: bool,
    /// `X(x_n) / |X(x_n)|` for the last point.
    pub limit_direction: DVector<f64>,
    /// First sample time after which `e^{tA} v` stays strictly in the `F`-cone.
    pub predicted_l: Option<f64>,
}

/// Samples `phi_t(x_n)` on `[0, l_max]` with step `t_step` and records when it
/// lies in `D^F_alpha(beta)`.
pub fn entry_time_experiment(
    model: &VectorFieldModel,
    report: &SplittingReport,
    points: &[DVector<f64>],
    params: &EntryTimeParams,
    tol: Tolerance,
) -> Result<EntryTimeReport> {
    let p = *params;
    if points.is_empty() || !(p.t_step > 0.0 && p.l_max > 0.0 && p.alpha > 0.0 && p.beta > 0.0) {
        return Err(Error::BadParameters("entry-time experiment needs points and positive parameters".into()));
    }
    let n_steps = (p.l_max / p.t_step * (1.0 + 1e-12)).floor() as usize;
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * p.t_step).collect();
    let mut intervals = Vec::with_capacity(points.len());
    for x in points {
        let seg = flow::integrate(model, x, times[n_steps], tol)?;
        let mut runs: Vec<EntryInterval> = Vec::new();
        let mut open: Option<f64> = None;
        for &t in &times {
            let y = seg.at(t).ok_or(Error::StepFailure { t, reason: "dense output gap".into() })?;
            let inside = region_membership(model, report, p.alpha, p.beta, &y, Decomposition::Oblique)?;
            match (inside, open) {
                (true, None) => open = Some(t),
                (false, Some(s)) => {
                    runs.push(EntryInterval { start: s, end: t - p.t_step });
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            runs.push(EntryInterval { start: s, end: times[n_steps] });
        }
        intervals.push(runs);
    }
    let tail_start = points.len() / 2;
    let tail = &intervals[tail_start..];
    let all_enter = tail.iter().all(|r| !r.is_empty());
    let (stabilized_l, stabilized_l_prime) = if all_enter {
        (
            Some(tail.iter().map(|r| r[0].start).fold(f64::NEG_INFINITY, f64::max)),
            Some(tail.iter().map(|r| r[0].end).fold(f64::INFINITY, f64::min)),
        )
    } else {
        (None, None)
    };
    let stable = matches!((stabilized_l, stabilized_l_prime), (Some(l), Some(lp)) if l < lp);

    let last = points.last().expect("non-empty");
    let fx = model.eval(last);
    let limit_direction = &fx / fx.norm();
    let a = model.jacobian(&report.sigma);
    let cone = ConeSpec::new(p.alpha, ConeKind::F)?;
    let mut predicted_l = None;
    for &t in times.iter().rev() {
        let w = linalg::expm(&(&a * t)) * &limit_direction;
        let (we, wf) = decompose(&report.e_basis, &report.f_vector, &w, cone.decomposition)?;
        if we.norm() < p.alpha * wf.norm() {
            predicted_l = Some(t);
        } else {
            break;
        }
    }
    Ok(EntryTimeReport {
        times,
        intervals,
        tail_start,
        stabilized_l,
        stabilized_l_prime,
        stable,
        limit_direction,
        predicted_l,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{split_at_singularity, time_grid};
    use super::*;
    use crate::field::{build_model, diag, ModelSpec};

    #[test]
    fn entry_time_stabilizes_on_centre_sequence() {
        let m = build_model(&ModelSpec::new("splitting_normal_form").with("lambda_f", 0.0)).unwrap();
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 3.0, 8), tol()).unwrap();
        let xs = synthesize_sequence(&r, 0.05, 0.7, 20, &[1.0, 1.0]).unwrap();
        let p = EntryTimeParams { alpha: 0.5, beta: 0.5, l_max: 6.0, t_step: 0.05 };
        let rep = entry_time_experiment(&m, &r, &xs, &p, tol()).unwrap();
        assert!(rep.stable);
        let (l, pred) = (rep.stabilized_l.unwrap(), rep.predicted_l.unwrap());
        assert!(((l - pred) / p.t_step).round().abs() <= 1.0, "{l} vs {pred}");
        assert!(l > 0.0);
    }

    fn tol() -> Tolerance {
        Tolerance::new(1e-12, 1e-12)
    }

    #[test]
    fn linear_cone_claim() {
        let m = diag("cd", &[0.0, -1.0]);
        let r = split_at_singularity(&m, &DVector::zeros(2), &[0.0, 1.0], tol()).unwrap();
        let params = ConeClaimParams { alpha: 0.2, t_step: 1.0, eps: 1e-3, radius: 0.5, trials: 200, seed: 1, max_halvings: 0 };
        let rep = cone_claim_check(&m, &r, &params, tol()).unwrap();
        assert!(rep.valid, "{:?}", rep.counterexamples.first());
        // the cone ratio of Phi_{-T} v shrinks by e^{-T}
        assert!(rep.max_cone_ratio <= (-1.0f64).exp() + 1e-9);
        assert!(rep.min_expansion >= 1.0f64.exp() / (1.0f64 + 0.04).sqrt() - 1e-9);
        // doubling fails below T = ln 2
        let short = ConeClaimParams { t_step: 0.5, ..params };
        assert!(!cone_claim_check(&m, &r, &short, tol()).unwrap().valid);
    }

    #[test]
    fn normal_form_cone_claim() {
        let m = build_model(&ModelSpec::new("splitting_normal_form")).unwrap();
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.0, 3.0, 7), tol()).unwrap();
        let params = ConeClaimParams { alpha: 0.3, t_step: 1.0, eps: 1e-4, radius: 0.2, trials: 100, seed: 7, max_halvings: 4 };
        let rep = cone_claim_check(&m, &r, &params, tol()).unwrap();
        assert!(rep.valid);
        assert!(rep.radius <= 0.2);
    }

    #[test]
    fn small_scale_on_normal_form() {
        let m = build_model(&ModelSpec::new("splitting_normal_form")).unwrap();
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.0, 3.0, 7), tol()).unwrap();
        let params = SmallScaleParams { delta: 0.2, beta: 0.05, samples: 20, calibration_samples: 200, seed: 3 };
        let rep = small_scale_experiment(&m, &r, &params, tol()).unwrap();
        assert!(rep.alpha * rep.c / rep.c0 <= rep.delta * (1.0 + 1e-12));
        assert!(rep.all_hit, "{rep:?}");
    }

    #[test]
    fn entry_times() {
        // invariant E-plane: X has no F component, never enters
        let m = build_model(&ModelSpec::new("splitting_normal_form").with("lambda_f", 0.0)).unwrap();
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.0, 3.0, 7), tol()).unwrap();
        let p = EntryTimeParams { alpha: 0.5, beta: 0.5, l_max: 4.0, t_step: 0.1 };
        let e_only: Vec<DVector<f64>> = (1..5).map(|n| DVector::from_vec(vec![0.0, 0.1 / n as f64, 0.05])).collect();
        let rep = entry_time_experiment(&m, &r, &e_only, &p, tol()).unwrap();
        assert!(rep.intervals.iter().all(|i| i.is_empty()));
        assert!(!rep.stable);

        // on the expanding axis: inside from t = 0
        let m = build_model(&ModelSpec::new("splitting_normal_form")).unwrap();
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.0, 3.0, 7), tol()).unwrap();
        let on_axis = vec![DVector::from_vec(vec![1e-3, 0.0, 0.0])];
        let p = EntryTimeParams { alpha: 0.5, beta: 0.5, l_max: 2.0, t_step: 0.1 };
        let rep = entry_time_experiment(&m, &r, &on_axis, &p, tol()).unwrap();
        assert_eq!(rep.intervals[0][0].start, 0.0);
    }
}
