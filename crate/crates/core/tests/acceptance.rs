//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinkflow::field::{build_model, builtin_models, diag, hopf, lorenz, ModelSpec, VectorFieldModel};
use sinkflow::flow::{self, Tolerance};
use sinkflow::pliss::{self, WeightSequence};
use sinkflow::poincare::{self, PartitionSchedule, SectionalOptions};
use sinkflow::sampling;
use sinkflow::sinks;
use sinkflow::splitting::{self, time_grid, ConeClaimParams, EntryTimeParams, SmallScaleParams};

type Outcome = Result<String, String>;

fn tight() -> Tolerance {
    Tolerance::new(1e-12, 1e-12)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Sampling box for random base points; keeps orbits bounded over unit times.
fn sample_point<R: Rng>(model: &VectorFieldModel, rng: &mut R) -> DVector<f64> {
    let d = model.dim();
    loop {
        let x = match model.name() {
            "lorenz" => DVector::from_fn(3, |i, _| {
                let c = [0.0, 0.0, 25.0][i];
                c + rng.random_range(-12.0..12.0)
            }),
            "hopf" => DVector::from_fn(d, |_, _| rng.random_range(-1.2..1.2)),
            _ => DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5)),
        };
        if model.eval(&x).norm() > 1e-3 {
            return x;
        }
    }
}

/// 1. `|psi*_t| = 1` on the radial field.
fn rescaling_identity() -> Outcome {
    let m = build_model(&ModelSpec::new("radial")).unwrap();
    let x = DVector::from_vec(vec![1.0, 0.5]);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let t = 5.0 * i as f64 / 49.0;
        let op = poincare::linear_poincare(&m, &x, t, true, Tolerance::default()).map_err(|e| e.to_string())?;
        worst = worst.max((op.norm() - 1.0).abs());
    }
    check(worst <= 1e-6, format!("max | |psi*_t| - 1 | = {worst:.2e} over 50 times in [0, 5]"))
}

/// 2. Rescaled and plain chain products agree on the Hopf cycle.
fn telescoping() -> Outcome {
    let m = hopf(0.5);
    let o = sinks::refine_orbit(&m, &DVector::from_vec(vec![0.5f64.sqrt() + 0.01, 0.0]), 6.28, tight())
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for k in 1..=4 {
        let s = PartitionSchedule::uniform(k as f64 * o.period, 1.0).unwrap();
        let plain = poincare::chain_product(&m, &o.anchor, &s, false, tight()).unwrap();
        let resc = poincare::chain_product(&m, &o.anchor, &s, true, tight()).unwrap();
        worst = worst.max((resc.log_product - plain.log_product).abs());
        // the exact identity: the |X| ratios telescope to |X(x)| / |X(end)|
        let end = plain.points.last().unwrap();
        let ratio = (m.eval(&o.anchor).norm() / m.eval(end).norm()).ln();
        worst_identity = worst_identity.max((resc.log_product - plain.log_product - ratio).abs());
    }
    check(
        worst <= 1e-8 && worst_identity <= 1e-8,
        format!("max |log prod* - log prod| = {worst:.2e}, telescoping defect {worst_identity:.2e} (m = 1..4)"),
    )
}

/// 3. Cocycle identities for Phi, psi and psi*.
fn cocycles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = tight();
    let mut worst: (f64, String) = (0.0, String::new());
    for m in builtin_models() {
        for _ in 0..100 {
            let x = sample_point(&m, &mut rng);
            let t: f64 = rng.random_range(0.0..0.5);
            let s: f64 = rng.random_range(0.0..0.5);
            let a = flow::tangent_map(&m, &x, t, tol).unwrap();
            let b = flow::tangent_map(&m, &a.endpoint, s, tol).unwrap();
            let ab = flow::tangent_map(&m, &x, t + s, tol).unwrap();
            let e = rel(&(&b.matrix * &a.matrix), &ab.matrix);
            if e > worst.0 {
                worst = (e, format!("Phi on {}", m.name()));
            }
            for rescaled in [false, true] {
                let p1 = poincare::linear_poincare(&m, &x, t, rescaled, tol).unwrap();
                let p2 = poincare::linear_poincare(&m, &p1.to.base, s, rescaled, tol).unwrap();
                let p12 = poincare::linear_poincare(&m, &x, t + s, rescaled, tol).unwrap();
                let comp = p1.then(&p2).unwrap();
                // bases at the shared end point differ by integration error only: compare in ambient coordinates
                let amb = |op: &poincare::NormalOperator| op.to.matrix() * &op.matrix * op.from.matrix().transpose();
                let e = rel(&amb(&comp), &amb(&p12));
                if e > worst.0 {
                    worst = (e, format!("{} on {}", if rescaled { "psi*" } else { "psi" }, m.name()));
                }
            }
        }
    }
    check(worst.0 <= 1e-5, format!("worst relative defect {:.2e} ({}) over 100 triples x {} models", worst.0, worst.1, builtin_models().len()))
}

/// 4. Variational equation against central differences of the flow.
fn variational() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = tight();
    let mut worst: (f64, String) = (0.0, String::new());
    for m in builtin_models() {
        let d = m.dim();
        for _ in 0..100 {
            let x = sample_point(&m, &mut rng);
            let t: f64 = rng.random_range(0.05..0.5);
            let phi = flow::tangent_flow(&m, &x, t, tol).unwrap();
            let mut fd = DMatrix::zeros(d, d);
            for j in 0..d {
                let h = 1e-5 * (1.0 + x.norm());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let col = (flow::flow_to(&m, &xp, t, tol).unwrap() - flow::flow_to(&m, &xm, t, tol).unwrap()) / (2.0 * h);
                fd.set_column(j, &col);
            }
            let e = (&fd - &phi).norm() / phi.norm();
            if e > worst.0 {
                worst = (e, m.name().to_string());
            }
        }
    }
    check(worst.0 <= 1e-3, format!("worst relative error {:.2e} ({}) over 100 samples per model", worst.0, worst.1))
}

/// Premise-satisfying sequence: random entries clipped so `S_n <= C + n λ1`.
fn premise_sequence<R: Rng>(c: f64, l1: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let mut s = 0.0;
    let spread: f64 = rng.random_range(0.1..3.0);
    let drift: f64 = rng.random_range(-1.0..1.0);
    (1..=len)
        .map(|n| {
            let raw = l1 + drift + spread * sampling::gaussian(rng);
            let a = raw.min(c + n as f64 * l1 - s);
            s += a;
            a
        })
        .collect()
}

/// 5. Offsets never exceed the bound, on random and on worst-case grid sequences.
fn tail_offsets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10_000 {
        let c: f64 = rng.random_range(0.0..5.0);
        let l1: f64 = rng.random_range(-1.0..1.0);
        let l2 = l1 + rng.random_range(0.05..1.0);
        let n = pliss::pliss_bound(c, l1, l2).unwrap();
        let seq = premise_sequence(c, l1, 200, &mut rng);
        match pliss::find_tail_offset(&WeightSequence::unit(seq), l2) {
            Some(sel) if (sel.offset as u64) <= n => worst_ratio = worst_ratio.max(sel.offset as f64 / n as f64),
            Some(sel) => return Err(format!("offset {} > bound {n} (C {c}, l1 {l1}, l2 {l2})", sel.offset)),
            None => return Err(format!("no offset found (C {c}, l1 {l1}, l2 {l2})")),
        }
    }
    let mut adversarial = Vec::new();
    for (c, l1, l2) in [(1.0, 0.1, 0.2), (0.5, -0.3, 0.1), (2.0, -0.5, -0.25), (1.5, 0.0, 0.3)] {
        let n = pliss::pliss_bound(c, l1, l2).unwrap();
        let r = pliss::adversarial_search(c, l1, l2, 30, 0.05, usize::MAX).unwrap();
        if !r.complete || r.worst_offset as u64 > n {
            return Err(format!("adversarial offset {} vs bound {n} at ({c}, {l1}, {l2})", r.worst_offset));
        }
        adversarial.push(format!("{}/{n}", r.worst_offset));
    }
    Ok(format!(
        "10000 random sequences: max L/N = {worst_ratio:.3}; exhaustive worst L/N at length 30: {}",
        adversarial.join(", ")
    ))
}

fn hopf_cycle(mu: f64) -> (VectorFieldModel, sinks::PeriodicOrbit) {
    let m = hopf(mu);
    let o = sinks::refine_orbit(&m, &DVector::from_vec(vec![mu.sqrt() + 0.01, 0.0]), 6.28, tight()).unwrap();
    (m, o)
}

/// 6. Hopf cycle certified at alpha = 0.5 and rejected at alpha = 3.
fn certification() -> Outcome {
    let (m, o) = hopf_cycle(0.5);
    let yes = sinks::certify_sink(&m, &o, 0.5, 1.0, 8, 16, Tolerance::default()).map_err(|e| e.to_string())?;
    let no = sinks::certify_sink(&m, &o, 3.0, 1.0, 8, 16, Tolerance::default()).map_err(|e| e.to_string())?;
    let rel_err = (yes.exponent() - 1.0).abs();
    check(
        yes.certified && !no.certified && rel_err <= 0.02,
        format!("alpha 0.5: certified={} (m = {}, exponent {:.5}); alpha 3.0: certified={}", yes.certified, yes.m, yes.exponent(), no.certified),
    )
}

/// 7. The extracted point re-verifies over 8 periods.
fn extraction() -> Outcome {
    let (m, o) = hopf_cycle(0.5);
    let cert = sinks::certify_sink(&m, &o, 0.9, 1.0, 8, 16, tight()).unwrap();
    let eta = 0.5;
    let p = sinks::extract_contracted_point(&m, &cert, eta, 8, tight()).map_err(|e| e.to_string())?;
    let fresh = poincare::chain_product(&m, &p.point, &p.schedule, true, tight()).unwrap();
    let mut s = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (i, n) in fresh.leg_norms.iter().enumerate() {
        s += n.ln();
        worst = worst.max(s + eta * p.schedule.times()[i + 1]);
    }
    let periods = p.schedule.span() / o.period;
    check(
        worst <= 1e-6 && periods >= 8.0 - 1e-9,
        format!("start leg {}, max_j (log prod_j + eta t_j) = {worst:.3e} over {periods:.1} periods", p.start_index),
    )
}

/// 8. Fitted domination exponent against the spectral gap.
fn domination() -> Outcome {
    let tol = Tolerance::default();
    let cd = diag("center_dissipative", &[0.0, -1.0, -2.0]);
    let r1 = splitting::split_at_singularity(&cd, &DVector::zeros(3), &time_grid(0.5, 4.0, 16), tol).map_err(|e| e.to_string())?;
    let (s, rho, b) = (10.0, 28.0, 8.0 / 3.0);
    let lz = lorenz(s, rho, b);
    let r2 = splitting::split_at_singularity(&lz, &DVector::zeros(3), &time_grid(0.5, 2.0, 16), tol).map_err(|e| e.to_string())?;
    // eigenvalues of the Lorenz origin: -beta and the roots of l^2 + (s+1) l + s(1-rho)
    let disc = ((s + 1.0f64).powi(2) - 4.0 * s * (1.0 - rho)).sqrt();
    let (lu, ls) = ((-(s + 1.0) + disc) / 2.0, (-(s + 1.0) - disc) / 2.0);
    let next = (-b).max(ls);
    let gap = lu - next;
    let e1 = (r1.fitted_lambda - 1.0).abs();
    let e2 = (r2.fitted_lambda - gap).abs() / gap;
    check(
        e1 <= 0.05 && e2 <= 0.05,
        format!("diag(0,-1,-2): {:.5} vs 1; Lorenz origin: {:.5} vs oracle gap {gap:.5}", r1.fitted_lambda, r2.fitted_lambda),
    )
}

/// 9. Derivative of the sphere flow equals proj_2 chi_t / |Phi_t u|.
fn sphere_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tol = tight();
    let models: Vec<VectorFieldModel> = vec![
        lorenz(10.0, 28.0, 8.0 / 3.0),
        diag("center_dissipative", &[0.0, -1.0, -2.0]),
        build_model(&ModelSpec::new("splitting_normal_form")).unwrap(),
        build_model(&ModelSpec::new("saddle")).unwrap(),
        hopf(0.5),
    ];
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let m = &models[k % models.len()];
        let d = m.dim();
        let sigma = m.singularities()[0].clone();
        let u = sampling::unit_vector(d, &mut rng);
        let t: f64 = rng.random_range(0.1..1.0);
        let phi = flow::tangent_flow(m, &sigma, t, tol).unwrap();
        let pu = (&phi * &u).norm();
        for v in sinkflow::linalg::orthonormal_complement(&u) {
            let predicted = flow::frame_second_component(&phi, &u, &v).unwrap() / pu;
            let h = 1e-6;
            let up = (&u + &v * h).normalize();
            let um = (&u - &v * h).normalize();
            let fd = (flow::sphere_flow(m, &sigma, &up, t, tol).unwrap() - flow::sphere_flow(m, &sigma, &um, t, tol).unwrap()) / (2.0 * h);
            let scale = predicted.norm().max(1e-8);
            worst = worst.max((fd - &predicted).norm() / scale);
        }
    }
    check(worst <= 1e-3, format!("worst relative mismatch {worst:.2e} over 20 (model, u, t) draws"))
}

/// 10. Backward cone invariance and doubling near the singularity.
fn cone_claim() -> Outcome {
    let tol = Tolerance::default();
    let mut parts = Vec::new();
    for lf in [1.0, 0.0] {
        let m = build_model(&ModelSpec::new("splitting_normal_form").with("lambda_f", lf)).unwrap();
        let r = splitting::split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 2.0, 8), tol).unwrap();
        let params = ConeClaimParams { alpha: 0.3, t_step: 1.0, eps: 1e-4, radius: 0.2, trials: 1000, seed: 10, max_halvings: 6 };
        let rep = splitting::cone_claim_check(&m, &r, &params, tol).map_err(|e| e.to_string())?;
        if !rep.valid {
            return Err(format!("lambda_f {lf}: counterexamples remain at radius {}", rep.radius));
        }
        parts.push(format!(
            "lambda_f {lf}: 1000/1000 at (alpha 0.3, T 1, radius {:.3}), min expansion {:.3}",
            rep.radius, rep.min_expansion
        ));
    }
    Ok(parts.join("; "))
}

/// 11. Normal disks of region points meet W^F.
fn small_scale() -> Outcome {
    let tol = Tolerance::default();
    let m = build_model(&ModelSpec::new("splitting_normal_form")).unwrap();
    let r = splitting::split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 2.0, 8), tol).unwrap();
    let params = SmallScaleParams { delta: 0.2, beta: 0.05, samples: 100, calibration_samples: 500, seed: 11 };
    let rep = splitting::small_scale_experiment(&m, &r, &params, tol).map_err(|e| e.to_string())?;
    check(
        rep.all_hit && rep.alpha * rep.c / rep.c0 <= rep.delta * (1.0 + 1e-12),
        format!("c = {:.4}, c0 = {:.4}, alpha = {:.4}, {}/{} hits", rep.c, rep.c0, rep.alpha, rep.hits, rep.samples),
    )
}

/// 12. Entry intervals stabilise and match the linear alignment prediction.
fn entry_times() -> Outcome {
    let tol = Tolerance::default();
    let m = build_model(&ModelSpec::new("splitting_normal_form").with("lambda_f", 0.0)).unwrap();
    let r = splitting::split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 2.0, 8), tol).unwrap();
    let xs = splitting::synthesize_sequence(&r, 0.05, 0.7, 20, &[1.0, 1.0]).unwrap();
    let p = EntryTimeParams { alpha: 0.5, beta: 0.5, l_max: 6.0, t_step: 0.05 };
    let rep = splitting::entry_time_experiment(&m, &r, &xs, &p, tol).map_err(|e| e.to_string())?;
    let (Some(l), Some(lp), Some(pred)) = (rep.stabilized_l, rep.stabilized_l_prime, rep.predicted_l) else {
        return Err(format!("no stabilised interval: {:?} {:?} {:?}", rep.stabilized_l, rep.stabilized_l_prime, rep.predicted_l));
    };
    let steps = ((l - pred) / p.t_step).round().abs();
    check(rep.stable && steps <= 1.0, format!("[L, L'] = [{l:.2}, {lp:.2}] over the tail, predicted L = {pred:.2} ({steps} steps apart)"))
}

/// 13. Finite-difference Jacobian of the sectional map against psi_t.
fn sectional_linearization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let models: Vec<VectorFieldModel> = vec![
        hopf(0.5),
        lorenz(10.0, 28.0, 8.0 / 3.0),
        build_model(&ModelSpec::new("splitting_normal_form")).unwrap(),
        build_model(&ModelSpec::new("linear_sink")).unwrap(),
        build_model(&ModelSpec::new("saddle")).unwrap(),
    ];
    let opts = SectionalOptions { crossing_tol: 1e-14, tol: Tolerance::new(1e-13, 1e-13), ..SectionalOptions::default() };
    let mut worst: (f64, String) = (0.0, String::new());
    for k in 0..50 {
        let m = &models[k % models.len()];
        let x = sample_point(m, &mut rng);
        let t: f64 = rng.random_range(0.2..1.0);
        let op = poincare::linear_poincare(m, &x, t, false, opts.tol).unwrap();
        let h = 1e-5 * m.eval(&x).norm();
        let mut fd = DMatrix::zeros(op.matrix.nrows(), op.matrix.ncols());
        for (j, b) in op.from.vectors.iter().enumerate() {
            let yp = poincare::sectional_map(m, &x, t, &(&x + b * h), &opts).map_err(|e| e.to_string())?;
            let ym = poincare::sectional_map(m, &x, t, &(&x - b * h), &opts).map_err(|e| e.to_string())?;
            fd.set_column(j, &op.to.coords(&((yp - ym) / (2.0 * h))));
        }
        let e = (&fd - &op.matrix).norm() / op.matrix.norm();
        if e > worst.0 {
            worst = (e, m.name().to_string());
        }
    }
    check(worst.0 <= 1e-3, format!("worst relative error {:.2e} ({}) over 50 samples", worst.0, worst.1))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 13] = [
        ("rescaling identity", rescaling_identity, 1),
        ("telescoping", telescoping, 5),
        ("cocycle suite", cocycles, 30),
        ("variational check", variational, 30),
        ("tail-offset bound", tail_offsets, 120),
        ("sink certification", certification, 10),
        ("Pliss extraction", extraction, 10),
        ("domination", domination, 10),
        ("sphere-flow derivative identity", sphere_identity, 10),
        ("cone claim", cone_claim, 30),
        ("small-scale disks meet W^F", small_scale, 60),
        ("entry-time stabilisation", entry_times, 60),
        ("sectional-map linearization", sectional_linearization, 30),
    ];
    let mut failures = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.2}s, budget {budget}s{})",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
