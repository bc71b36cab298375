use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::*;
use super::report::{RunReport, Series, Stage, Toolkit, Verdict, SCHEMA_VERSION};
use super::CliError;
use crate::error::Error;
use crate::field::{self, ModelSpec, VectorFieldModel};
use crate::flow::Tolerance;
use crate::poincare::{self, SectionalOptions, ShrinkParams};
use crate::sinks::{self, PeriodicOrbit, SinkCertificate};
use crate::splitting::{self, SplittingReport};

/// Contraction slack when re-verifying extracted points.
const LOG_TOL: f64 = 1e-6;

struct Outcome {
    results: Value,
    verdicts: Vec<Verdict>,
    series: Vec<(String, Series)>,
    stages: Vec<Stage>,
}

impl Outcome {
    fn new(results: Value, verdicts: Vec<Verdict>) -> Self {
        Self { results, verdicts, series: Vec::new(), stages: Vec::new() }
    }

    fn with_series(mut self, name: &str, s: Series) -> Self {
        self.series.push((name.into(), s));
        self
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

/// Runs one scenario.
pub fn run(config: &ScenarioConfig) -> Result<RunReport, CliError> {
    let model = field::build_model(&config.model)?;
    let tol = config.tolerance;
    if !(tol.abs > 0.0 && tol.rel > 0.0) {
        return Err(CliError::Config("tolerances must be positive".into()));
    }
    let out = match &config.experiment {
        Experiment::Classify(a) => classify(&model, a)?,
        Experiment::CertifySink(a) => certify(&model, &config.model, a, tol)?,
        Experiment::PlissExtract(a) => pliss_extract(&model, &config.model, a, tol)?,
        Experiment::Splitting(a) => split(&model, a, tol)?,
        Experiment::ConeClaim(a) => cone_claim(&model, a, config.seed, tol)?,
        Experiment::DiskIntersection(a) => disk(&model, a, config.seed, tol)?,
        Experiment::EntryTime(a) => entry_time(&model, a, tol)?,
        Experiment::ShrinkProbe(a) => shrink(&model, a, tol)?,
        Experiment::Pipeline(a) => pipeline(&model, &config.model, a, config.seed, tol)?,
    };
    Ok(RunReport {
        schema_version: SCHEMA_VERSION.into(),
        toolkit: Toolkit::current(),
        experiment: config.experiment.kind().into(),
        config: config.clone(),
        results: out.results,
        verdicts: out.verdicts,
        stages: out.stages,
        series: out.series.into_iter().collect(),
    })
}

fn point(model: &VectorFieldModel, v: &[f64], what: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != model.dim() {
        return Err(CliError::Config(format!("`{what}` has dimension {}, model has {}", v.len(), model.dim())));
    }
    Ok(DVector::from_column_slice(v))
}

fn singularity(model: &VectorFieldModel, given: &Option<Vec<f64>>) -> Result<DVector<f64>, CliError> {
    match given {
        Some(v) => point(model, v, "singularity"),
        None => model
            .singularities()
            .first()
            .cloned()
            .ok_or_else(|| CliError::Config(format!("model `{}` lists no singularity; set `singularity`", model.name()))),
    }
}

/// Starting guess for orbit refinement on catalog models with a known cycle.
pub fn default_orbit_guess(spec: &ModelSpec) -> Option<(Vec<f64>, f64)> {
    let p = |k: &str, d: f64| spec.params.get(k).copied().unwrap_or(d);
    match spec.name.as_str() {
        "hopf" if p("mu", 0.5) > 0.0 => Some((vec![p("mu", 0.5).sqrt(), 0.0], std::f64::consts::TAU)),
        "rotation" => Some((vec![1.0, 0.0], std::f64::consts::TAU)),
        "lorenz" if spec.params.is_empty() => Some((vec![-13.7636106821, -19.5787519424, 27.0], 1.5586522107)),
        _ => None,
    }
}

/// Refines the configured orbit. A family of neutral cycles (a singular Newton
/// system) whose guess already closes up is kept unrefined and flagged.
fn orbit(
    model: &VectorFieldModel,
    spec: &ModelSpec,
    guess: &Option<Vec<f64>>,
    period_guess: Option<f64>,
    tol: Tolerance,
) -> Result<(PeriodicOrbit, Option<String>), CliError> {
    let (g, tau) = match (guess, period_guess, default_orbit_guess(spec)) {
        (Some(g), Some(t), _) => (g.clone(), t),
        (Some(g), None, Some((_, t))) => (g.clone(), t),
        (None, pg, Some((g, t))) => (g, pg.unwrap_or(t)),
        _ => return Err(CliError::Config(format!("model `{}` needs `guess` and `period_guess`", spec.name))),
    };
    let g = point(model, &g, "guess")?;
    match sinks::refine_orbit(model, &g, tau, tol) {
        Ok(o) => Ok((o, None)),
        Err(Error::SingularJacobian { ratio }) => {
            let residual = (crate::flow::flow_to(model, &g, tau, tol)? - &g).norm();
            if residual <= sinks::REFINE_RESIDUAL {
                let note = format!("return map not hyperbolic (ratio {ratio:e}); closed guess used unrefined");
                Ok((PeriodicOrbit { anchor: g, period: tau, residual }, Some(note)))
            } else {
                Err(CliError::Numerical(Error::SingularJacobian { ratio }))
            }
        }
        Err(e) => Err(e.into()),
    }
}

fn classify(model: &VectorFieldModel, a: &ClassifyArgs) -> Result<Outcome, CliError> {
    let points = match &a.singularity {
        Some(v) => vec![point(model, v, "singularity")?],
        None => model.singularities().to_vec(),
    };
    if points.is_empty() {
        return Err(CliError::Config(format!("model `{}` lists no singularity; set `singularity`", model.name())));
    }
    let mut results = Vec::new();
    let mut verdicts = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let c = field::classify_singularity(model, p, field::DEFAULT_CLASSIFY_TOL)?;
        verdicts.push(Verdict::new(
            &format!("singularity_{i}_sectionally_dissipative"),
            c.is_sectionally_dissipative,
            format!("hyperbolic: {}, max real part {:.6}", c.is_hyperbolic, c.max_real_part),
        ));
        results.push(json!({ "point": p, "class": c }));
    }
    Ok(Outcome::new(json!({ "singularities": results }), verdicts))
}

fn leg_series(model: &VectorFieldModel, cert: &SinkCertificate, tol: Tolerance) -> Result<Series, CliError> {
    let chain = poincare::chain_product(model, &cert.orbit.anchor, &cert.schedule, true, tol)?;
    let mut s = Series::new(&["i", "t_i", "log_norm"]);
    for (i, n) in chain.leg_norms.iter().enumerate() {
        s.push(vec![(i + 1) as f64, cert.schedule.times()[i + 1], n.ln()]);
    }
    Ok(s)
}

fn certify_with(
    model: &VectorFieldModel,
    spec: &ModelSpec,
    a: &SinkArgs,
    tol: Tolerance,
) -> Result<(SinkCertificate, Option<String>), CliError> {
    let (o, note) = orbit(model, spec, &a.guess, a.period_guess, tol)?;
    let cert = sinks::certify_sink(model, &o, a.alpha, a.gap, a.m_max, a.phases, tol)?;
    Ok((cert, note))
}

fn certificate_verdict(cert: &SinkCertificate) -> Verdict {
    Verdict::new(
        "certified",
        cert.certified,
        format!("m = {}, exponent {:.6}, margin {:.3e}", cert.m, cert.exponent(), cert.margin),
    )
}

fn certify(model: &VectorFieldModel, spec: &ModelSpec, a: &SinkArgs, tol: Tolerance) -> Result<Outcome, CliError> {
    let (cert, note) = certify_with(model, spec, a, tol)?;
    let series = leg_series(model, &cert, tol)?;
    let results = json!({ "certificate": cert, "exponent": cert.exponent(), "refinement_note": note });
    Ok(Outcome::new(results, vec![certificate_verdict(&cert)]).with_series("leg_norms", series))
}

/// Extracts and independently re-verifies a contracted point.
fn extract(model: &VectorFieldModel, cert: &SinkCertificate, eta: f64, copies: usize, tol: Tolerance) -> Result<(Value, Verdict), CliError> {
    let p = sinks::extract_contracted_point(model, cert, eta, copies, tol)?;
    let fresh = poincare::chain_product(model, &p.point, &p.schedule, true, tol)?;
    let mut s = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (i, n) in fresh.leg_norms.iter().enumerate() {
        s += n.ln();
        worst = worst.max(s + eta * p.schedule.times()[i + 1]);
    }
    let verdict = Verdict::new("contracted", worst <= LOG_TOL, format!("worst log excess {worst:.3e} over {} legs", fresh.leg_norms.len()));
    Ok((json!({ "contracted_point": p, "reverified_worst_excess": worst }), verdict))
}

fn pliss_extract(model: &VectorFieldModel, spec: &ModelSpec, a: &PlissArgs, tol: Tolerance) -> Result<Outcome, CliError> {
    let (cert, note) = certify_with(model, spec, &a.sink(), tol)?;
    let series = leg_series(model, &cert, tol)?;
    let mut verdicts = vec![certificate_verdict(&cert)];
    let mut results = json!({ "certificate": cert, "refinement_note": note });
    if cert.certified {
        let (r, v) = extract(model, &cert, a.eta, a.copies, tol)?;
        results["extraction"] = r;
        verdicts.push(v);
    } else {
        verdicts.push(Verdict::new("contracted", false, "orbit not certified; nothing to extract"));
    }
    Ok(Outcome::new(results, verdicts).with_series("leg_norms", series))
}

fn split_report(model: &VectorFieldModel, sigma: &DVector<f64>, a: &SplittingArgs, tol: Tolerance) -> Result<SplittingReport, CliError> {
    if a.t_count < 2 || !(a.t_max > a.t_min) {
        return Err(CliError::Config("need t_count >= 2 and t_max > t_min".into()));
    }
    Ok(splitting::split_at_singularity(model, sigma, &splitting::time_grid(a.t_min, a.t_max, a.t_count), tol)?)
}

fn default_grid(singularity: &Option<Vec<f64>>) -> SplittingArgs {
    SplittingArgs { singularity: singularity.clone(), t_min: 0.5, t_max: 2.0, t_count: 16 }
}

fn split(model: &VectorFieldModel, a: &SplittingArgs, tol: Tolerance) -> Result<Outcome, CliError> {
    let sigma = singularity(model, &a.singularity)?;
    let r = split_report(model, &sigma, a, tol)?;
    let mut s = Series::new(&["t", "ratio"]);
    for (t, q) in r.t_grid.iter().zip(&r.ratios) {
        s.push(vec![*t, *q]);
    }
    let v = Verdict::new(
        "dominated",
        r.dominated,
        format!("gap {:.6}, fitted exponent {:.6}", r.spectral_gap, r.fitted_lambda),
    );
    Ok(Outcome::new(json!({ "splitting": r }), vec![v]).with_series("domination_ratio", s))
}

fn cone_claim(model: &VectorFieldModel, a: &ConeClaimArgs, seed: u64, tol: Tolerance) -> Result<Outcome, CliError> {
    let sigma = singularity(model, &a.singularity)?;
    let r = split_report(model, &sigma, &default_grid(&a.singularity), tol)?;
    let params = splitting::ConeClaimParams {
        alpha: a.alpha,
        t_step: a.gap,
        eps: a.eps,
        radius: a.radius,
        trials: a.trials,
        seed,
        max_halvings: a.max_halvings,
    };
    let rep = splitting::cone_claim_check(model, &r, &params, tol)?;
    let v = Verdict::new(
        "claim_holds",
        rep.valid,
        format!("radius {:.3e} after {} halvings; min expansion {:.4}", rep.radius, rep.halvings, rep.min_expansion),
    );
    Ok(Outcome::new(json!({ "splitting": r, "cone_claim": rep }), vec![v]))
}

fn disk(model: &VectorFieldModel, a: &DiskArgs, seed: u64, tol: Tolerance) -> Result<Outcome, CliError> {
    let sigma = singularity(model, &a.singularity)?;
    let r = split_report(model, &sigma, &default_grid(&a.singularity), tol)?;
    let params = splitting::SmallScaleParams {
        delta: a.delta,
        beta: a.beta,
        samples: a.samples,
        calibration_samples: a.calibration_samples,
        seed,
    };
    let rep = splitting::small_scale_experiment(model, &r, &params, tol)?;
    let v = Verdict::new("disks_meet_wf", rep.all_hit, format!("{}/{} hits at alpha {:.4e}", rep.hits, rep.samples, rep.alpha));
    Ok(Outcome::new(json!({ "splitting": r, "disk_intersection": rep }), vec![v]))
}

fn entry_series(rep: &splitting::EntryTimeReport) -> Series {
    let mut s = Series::new(&["n", "t", "inside"]);
    for (n, runs) in rep.intervals.iter().enumerate() {
        for &t in &rep.times {
            let inside = runs.iter().any(|r| r.start <= t && t <= r.end);
            s.push(vec![n as f64, t, f64::from(u8::from(inside))]);
        }
    }
    s
}

fn entry_verdict(rep: &splitting::EntryTimeReport, t_step: f64) -> Verdict {
    let matched = match (rep.stabilized_l, rep.predicted_l) {
        (Some(l), Some(p)) => ((l - p) / t_step).round().abs() <= 1.0,
        _ => false,
    };
    Verdict::new(
        "entry_stabilizes",
        rep.stable && matched,
        format!("L = {:?}, L' = {:?}, predicted {:?}", rep.stabilized_l, rep.stabilized_l_prime, rep.predicted_l),
    )
}

fn sequence(r: &SplittingReport, s0: f64, ratio: f64, count: usize, w_e: &Option<Vec<f64>>) -> Result<Vec<DVector<f64>>, CliError> {
    let w = w_e.clone().unwrap_or_else(|| vec![1.0; r.e_basis.len()]);
    Ok(splitting::synthesize_sequence(r, s0, ratio, count, &w)?)
}

fn entry_time(model: &VectorFieldModel, a: &EntryArgs, tol: Tolerance) -> Result<Outcome, CliError> {
    let sigma = singularity(model, &a.singularity)?;
    let r = split_report(model, &sigma, &default_grid(&a.singularity), tol)?;
    let xs = sequence(&r, a.s0, a.ratio, a.count, &a.w_e)?;
    let params = splitting::EntryTimeParams { alpha: a.alpha, beta: a.beta, l_max: a.l_max, t_step: a.t_step };
    let rep = splitting::entry_time_experiment(model, &r, &xs, &params, tol)?;
    let s = entry_series(&rep);
    let v = entry_verdict(&rep, a.t_step);
    Ok(Outcome::new(json!({ "splitting": r, "points": xs, "entry_time": rep }), vec![v]).with_series("entry_time", s))
}

fn shrink(model: &VectorFieldModel, a: &ShrinkArgs, tol: Tolerance) -> Result<Outcome, CliError> {
    let x = point(model, &a.point, "point")?;
    let params = ShrinkParams { c: a.c, eta: a.eta, gap: a.gap, radius: a.radius, horizon: a.horizon, samples: a.samples };
    let opts = SectionalOptions { tol, ..SectionalOptions::default() };
    let probe = poincare::shrink_probe(model, &x, &params, &opts)?;
    let mut s = Series::new(&["t", "diameter"]);
    for (t, d) in probe.times.iter().zip(&probe.diameters) {
        s.push(vec![*t, *d]);
    }
    let v = Verdict::new(
        "shrinks",
        probe.shrinks,
        format!("contraction verified: {}, failing radius {:?}", probe.contracted_verified, probe.failing_radius),
    );
    Ok(Outcome::new(json!({ "shrink_probe": probe }), vec![v]).with_series("shrink_probe", s))
}

fn stage<T>(stages: &mut Vec<Stage>, name: &str, r: Result<(T, Value), CliError>) -> Option<T> {
    match r {
        Ok((v, result)) => {
            stages.push(Stage { name: name.into(), ok: true, error: None, result });
            Some(v)
        }
        Err(e) => {
            stages.push(Stage { name: name.into(), ok: false, error: Some(e.to_string()), result: Value::Null });
            None
        }
    }
}

/// Sink, contracted point and uniform shift on the configured model; then
/// split, entry-time and disk stages on a sequence tending to the
/// singularity of `singular_model`.
fn pipeline(model: &VectorFieldModel, spec: &ModelSpec, a: &PipelineArgs, seed: u64, tol: Tolerance) -> Result<Outcome, CliError> {
    let mut stages = Vec::new();
    let mut verdicts = Vec::new();
    let mut series = Vec::new();
    let sink_args = SinkArgs {
        alpha: a.alpha,
        gap: a.gap,
        guess: a.guess.clone(),
        period_guess: a.period_guess,
        m_max: a.m_max,
        phases: a.phases,
    };

    let cert = stage(&mut stages, "certify_sink", certify_with(model, spec, &sink_args, tol).map(|(c, note)| {
        let v = json!({ "certificate": c, "exponent": c.exponent(), "refinement_note": note });
        (c, v)
    }));
    if let Some(c) = &cert {
        verdicts.push(certificate_verdict(c));
        if let Ok(s) = leg_series(model, c, tol) {
            series.push(("leg_norms".to_string(), s));
        }
    }
    let contracted = cert.as_ref().filter(|c| c.certified).and_then(|c| {
        stage(&mut stages, "extract_contracted_point", extract(model, c, a.eta, a.copies, tol).and_then(|(v, verdict)| {
            let p: sinks::ContractedPoint = serde_json::from_value(v["contracted_point"].clone())
                .map_err(|e| CliError::Io(e.to_string()))?;
            verdicts.push(verdict);
            Ok((p, v))
        }))
    });
    if let Some(p) = &contracted {
        let horizon = p.schedule.span();
        let shifted = sinks::shift_to_uniform_scale(model, &p.point, 1.0, a.eta, a.gap, horizon, tol)
            .map_err(CliError::from)
            .map(|s| {
                let v = to_value(&s);
                (s, v)
            });
        if let Some(s) = stage(&mut stages, "shift_to_uniform_scale", shifted) {
            verdicts.push(Verdict::new(
                "uniform_scale",
                s.success,
                format!("offset {} (bound {}), measured C {:.4}", s.offset, s.offset_bound, s.measured_c),
            ));
        }
    }

    // local stages at the singularity
    let local = field::build_model(&a.singular_model).map_err(CliError::from).and_then(|m| {
        let sigma = singularity(&m, &None)?;
        let r = split_report(&m, &sigma, &default_grid(&None), tol)?;
        Ok((m, r))
    });
    let local = stage(&mut stages, "split_at_singularity", local.map(|(m, r)| {
        let v = json!({ "model": a.singular_model, "splitting": r });
        ((m, r), v)
    }));
    if let Some((m, r)) = &local {
        verdicts.push(Verdict::new("dominated", r.dominated, format!("gap {:.6}", r.spectral_gap)));
        // pick alpha by the small-scale recipe, then watch the sequence enter the region
        let small = splitting::small_scale_experiment(
            m,
            r,
            &splitting::SmallScaleParams { delta: a.delta, beta: a.beta, samples: 10, calibration_samples: a.calibration_samples, seed },
            tol,
        )
        .map_err(CliError::from)
        .map(|rep| {
            let v = to_value(&rep);
            (rep, v)
        });
        if let Some(small) = stage(&mut stages, "choose_alpha", small) {
            let entry = sequence(r, a.s0, a.ratio, a.count, &a.w_e).and_then(|xs| {
                let params = splitting::EntryTimeParams { alpha: small.alpha, beta: a.beta, l_max: a.l_max, t_step: a.t_step };
                let rep = splitting::entry_time_experiment(m, r, &xs, &params, tol)?;
                let v = json!({ "points": xs, "entry_time": rep });
                Ok(((xs, rep), v))
            });
            if let Some((xs, rep)) = stage(&mut stages, "entry_time", entry) {
                verdicts.push(entry_verdict(&rep, a.t_step));
                series.push(("entry_time".to_string(), entry_series(&rep)));
                if let Some(l) = rep.stabilized_l {
                    let disks = disk_stage(m, r, &xs[rep.tail_start..], l, a.delta, tol);
                    if let Some((hits, total)) = stage(&mut stages, "disk_meets_wf", disks) {
                        verdicts.push(Verdict::new("disks_meet_wf", hits == total, format!("{hits}/{total} hits")));
                    }
                }
            }
        }
    }
    let results = json!({ "stages_completed": stages.iter().filter(|s| s.ok).count() });
    Ok(Outcome { results, verdicts, series, stages })
}

/// Flows each point to time `l` and tests its normal disk against both
/// branches of `W^F`.
fn disk_stage(
    m: &VectorFieldModel,
    r: &SplittingReport,
    xs: &[DVector<f64>],
    l: f64,
    delta: f64,
    tol: Tolerance,
) -> Result<((usize, usize), Value), CliError> {
    let reach = xs.iter().map(|x| (x - &r.sigma).norm()).fold(0.0, f64::max).max(1e-3) * 4.0;
    let curves = [
        splitting::approximate_wf(m, r, splitting::Side::Plus, reach, 12, tol)?,
        splitting::approximate_wf(m, r, splitting::Side::Minus, reach, 12, tol)?,
    ];
    let mut hits = 0;
    let mut distances = Vec::new();
    for x in xs {
        let z = crate::flow::flow_to(m, x, l, tol)?;
        let d = curves
            .iter()
            .map(|c| splitting::disk_meets_wf(m, c, &z, delta))
            .collect::<Result<Vec<_>, _>>()?;
        let best = d.iter().min_by(|a, b| a.distance.total_cmp(&b.distance)).expect("two curves");
        hits += usize::from(best.hit);
        distances.push(best.distance);
    }
    Ok(((hits, xs.len()), json!({ "time": l, "distances": distances, "hits": hits })))
}
