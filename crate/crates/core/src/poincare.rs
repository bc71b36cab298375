//! Linear Poincaré flow `psi_t`, its rescaled version `psi*_t`, chained
//! products over time partitions and the sectional Poincaré map.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::flow::{self, Tolerance, TrajectorySegment};
use crate::linalg;
use crate::sampling;

/// Field norms at or below this make the normal space undefined.
pub const REGULAR_EPS: f64 = 1e-12;

/// Orthonormal basis of the normal space `N_x = X(x)^⊥` at a regular point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalBasis {
    pub base: DVector<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl NormalBasis {
    /// `d × (d-1)` matrix with the basis vectors as columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        linalg::columns(&self.vectors, self.base.len())
    }

    /// Ambient vector with the given normal coordinates.
    pub fn embed(&self, coords: &DVector<f64>) -> DVector<f64> {
        self.matrix() * coords
    }

    /// Normal coordinates of an ambient vector (orthogonal projection).
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.matrix().transpose() * v
    }
}

fn regular_field(model: &VectorFieldModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(x)?;
    let fx = model.eval(x);
    let norm = fx.norm();
    if !(norm > REGULAR_EPS) {
        return Err(Error::SingularPoint { norm });
    }
    Ok(fx)
}

/// Deterministic orthonormal basis of `X(x)^⊥` (Householder completion of
/// `X(x)/|X(x)|`, each vector with its first nonzero coordinate positive).
pub fn normal_basis(model: &VectorFieldModel, x: &DVector<f64>) -> Result<NormalBasis> {
    let fx = regular_field(model, x)?;
    Ok(NormalBasis { base: x.clone(), vectors: linalg::orthonormal_complement(&fx) })
}

/// Matrix of `psi_t` (or `psi*_t`) between two normal bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalOperator {
    pub from: NormalBasis,
    pub to: NormalBasis,
    pub matrix: DMatrix<f64>,
    pub rescaled: bool,
    pub elapsed: f64,
}

impl NormalOperator {
    pub fn norm(&self) -> f64 {
        linalg::op_norm(&self.matrix)
    }

    /// Maps an ambient vector of `N_from` to the ambient vector of `N_to`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.to.embed(&(&self.matrix * self.from.coords(v)))
    }

    /// The operator `next ∘ self`; `next` must start where `self` ends.
    pub fn then(&self, next: &NormalOperator) -> Result<NormalOperator> {
        let gap = (&next.from.base - &self.to.base).norm();
        if gap > 1e-8 * self.to.base.norm().max(1.0) || next.rescaled != self.rescaled {
            return Err(Error::BadParameters("operators do not chain".into()));
        }
        // the two bases of the shared normal space may differ by an orthogonal change
        let change = next.from.matrix().transpose() * self.to.matrix();
        Ok(NormalOperator {
            from: self.from.clone(),
            to: next.to.clone(),
            matrix: &next.matrix * change * &self.matrix,
            rescaled: self.rescaled,
            elapsed: self.elapsed + next.elapsed,
        })
    }
}

/// Linear Poincaré flow at `x` over time `t`:
/// `v -> Phi_t v - <Phi_t v, X(phi_t x)> / |X(phi_t x)|^2 X(phi_t x)`,
/// multiplied by `|X(x)| / |X(phi_t x)|` when `rescaled`.
pub fn linear_poincare(
    model: &VectorFieldModel,
    x: &DVector<f64>,
    t: f64,
    rescaled: bool,
    tol: Tolerance,
) -> Result<NormalOperator> {
    let fx = regular_field(model, x)?;
    let tm = flow::tangent_map(model, x, t, tol)?;
    let fy = regular_field(model, &tm.endpoint)?;
    let from = NormalBasis { base: x.clone(), vectors: linalg::orthonormal_complement(&fx) };
    let to = NormalBasis { base: tm.endpoint.clone(), vectors: linalg::orthonormal_complement(&fy) };
    // the to-basis is orthogonal to X(phi_t x), so projecting first is implicit
    let mut matrix = to.matrix().transpose() * &tm.matrix * from.matrix();
    if rescaled {
        matrix *= fx.norm() / fy.norm();
    }
    Ok(NormalOperator { from, to, matrix, rescaled, elapsed: t })
}

/// Partition `0 = t_0 < t_1 < ... < t_n` with gaps at most `gap_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSchedule {
    times: Vec<f64>,
    gap_bound: f64,
}

impl PartitionSchedule {
    pub fn new(times: Vec<f64>, gap_bound: f64) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::BadParameters("schedule must start at 0 and have at least one leg".into()));
        }
        if !(gap_bound > 0.0) {
            return Err(Error::BadParameters("gap bound must be positive".into()));
        }
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) || gap > gap_bound * (1.0 + 1e-12) {
                return Err(Error::BadParameters(format!("invalid gap {gap} (bound {gap_bound})")));
            }
        }
        Ok(Self { times, gap_bound })
    }

    /// Uniform grid over `[0, span]` with step `span / ceil(span / gap_bound)`.
    pub fn uniform(span: f64, gap_bound: f64) -> Result<Self> {
        if !(span > 0.0) || !(gap_bound > 0.0) {
            return Err(Error::BadParameters("span and gap bound must be positive".into()));
        }
        let n = (span / gap_bound * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let step = span / n as f64;
        let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        times[n] = span;
        Self::new(times, gap_bound)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn gap_bound(&self) -> f64 {
        self.gap_bound
    }

    pub fn legs(&self) -> usize {
        self.times.len() - 1
    }

    pub fn span(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn durations(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Per-leg operator norms along a schedule and their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainProduct {
    pub leg_norms: Vec<f64>,
    pub log_product: f64,
    pub product: f64,
    /// `phi_{t_i}(x)` for `i = 0..=n`.
    #[serde(skip)]
    pub points: Vec<DVector<f64>>,
}

/// `prod_i |psi_{t_i - t_{i-1}}(phi_{t_{i-1}} x)|` (or with `psi*`), each leg
/// computed from fresh normal bases at its endpoints.
pub fn chain_product(
    model: &VectorFieldModel,
    x: &DVector<f64>,
    schedule: &PartitionSchedule,
    rescaled: bool,
    tol: Tolerance,
) -> Result<ChainProduct> {
    let mut start = x.clone();
    let mut points = vec![start.clone()];
    let mut leg_norms = Vec::with_capacity(schedule.legs());
    for dt in schedule.durations() {
        let op = linear_poincare(model, &start, dt, rescaled, tol)?;
        leg_norms.push(op.norm());
        start = op.to.base;
        points.push(start.clone());
    }
    let log_product: f64 = leg_norms.iter().map(|n| n.ln()).sum();
    Ok(ChainProduct { leg_norms, log_product, product: log_product.exp(), points })
}

/// Options for [`sectional_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionalOptions {
    /// Radius of admissible disks; `None` means `0.25 |X(x)|`.
    pub radius_check: Option<f64>,
    /// Largest allowed distance between `phi_s(y)` and `phi_s(x)`.
    pub max_deviation: f64,
    /// Target for `|<phi_s(y) - phi_t(x), X(phi_t x)>|` at the crossing.
    pub crossing_tol: f64,
    pub tol: Tolerance,
}

impl Default for SectionalOptions {
    fn default() -> Self {
        Self { radius_check: None, max_deviation: 1.0, crossing_tol: 1e-10, tol: Tolerance::default() }
    }
}

/// Reference orbit of `x` reused across many sectional-map evaluations.
struct ReferenceOrbit<'a> {
    model: &'a VectorFieldModel,
    x: DVector<f64>,
    seg: TrajectorySegment,
    opts: SectionalOptions,
}

impl<'a> ReferenceOrbit<'a> {
    fn new(model: &'a VectorFieldModel, x: &DVector<f64>, s_max: f64, opts: SectionalOptions) -> Result<Self> {
        let seg = flow::integrate(model, x, s_max, opts.tol)?;
        Ok(Self { model, x: x.clone(), seg, opts })
    }

    fn check_on_disk(&self, y: &DVector<f64>, radius: f64) -> Result<()> {
        let fx = regular_field(self.model, &self.x)?;
        let off = y - &self.x;
        if off.norm() > radius * (1.0 + 1e-12) {
            return Err(Error::BadParameters(format!("|y - x| = {} exceeds radius {radius}", off.norm())));
        }
        if off.dot(&fx).abs() > 1e-8 * off.norm() * fx.norm() {
            return Err(Error::BadParameters("y is not on the normal disk at x".into()));
        }
        Ok(())
    }

    /// Crossing of the orbit of `y` (given by `yseg`) with the section at
    /// `phi_t(x)`.
    fn crossing(&self, y: &DVector<f64>, yseg: &TrajectorySegment, t: f64) -> Result<DVector<f64>> {
        let p = flow::flow_to(self.model, &self.x, t, self.opts.tol)?;
        if y == &self.x {
            return Ok(p);
        }
        let n = regular_field(self.model, &p)?;
        let g = |q: &DVector<f64>| (q - &p).dot(&n);
        let (lo_s, hi_s) = (0.5 * t, 2.0 * t + 1.0);

        // candidate sample times: integrator nodes refined 4x inside the window
        let mut grid = vec![lo_s];
        for w in yseg.times().windows(2) {
            if w[1] <= lo_s || w[0] >= hi_s {
                continue;
            }
            for k in 0..4 {
                let s = w[0] + (w[1] - w[0]) * k as f64 / 4.0;
                if s > lo_s && s < hi_s {
                    grid.push(s);
                }
            }
        }
        grid.push(hi_s);
        let at = |s: f64| yseg.at(s).ok_or(Error::NoCrossing { from: lo_s, to: hi_s });
        let mut best: Option<(f64, f64)> = None;
        let mut prev = (grid[0], g(&at(grid[0])?));
        for &s in &grid[1..] {
            let cur = (s, g(&at(s)?));
            if prev.1 < 0.0 && cur.1 >= 0.0 {
                let mid = 0.5 * (prev.0 + cur.0);
                if best.is_none_or(|b| (mid - t).abs() < (0.5 * (b.0 + b.1) - t).abs()) {
                    best = Some((prev.0, cur.0));
                }
            }
            prev = cur;
        }
        if best.is_none() && g(y).abs() <= self.opts.crossing_tol && t == 0.0 {
            return Ok(y.clone());
        }
        let (mut a, mut b) = best.ok_or(Error::NoCrossing { from: lo_s, to: hi_s })?;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let gm = g(&at(m)?);
            if gm.abs() <= self.opts.crossing_tol || (b - a) < 1e-15 * b.abs().max(1.0) {
                a = m;
                b = m;
                break;
            }
            if gm < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let mut s = 0.5 * (a + b);

        // re-integrate to the crossing time and Newton-polish off the dense output
        let mut q = flow::flow_to(self.model, y, s, self.opts.tol)?;
        for _ in 0..4 {
            let gq = g(&q);
            if gq.abs() <= self.opts.crossing_tol {
                break;
            }
            let rate = self.model.eval(&q).dot(&n);
            if rate.abs() < 1e-300 {
                break;
            }
            let ds = -gq / rate;
            q = flow::flow_to(self.model, &q, ds, self.opts.tol)?;
            s += ds;
        }

        // deviation from the reference orbit up to the crossing
        let mut deviation = 0.0f64;
        for (&si, yi) in yseg.times().iter().zip(yseg.points()) {
            if si > s {
                break;
            }
            if let Some(xi) = self.seg.at(si) {
                deviation = deviation.max((yi - xi).norm());
            }
        }
        if deviation > self.opts.max_deviation {
            return Err(Error::LeftDomain { deviation, bound: self.opts.max_deviation });
        }
        Ok(q)
    }
}

/// Sectional Poincaré map from the normal disk at `x` to the normal
/// hyperplane at `phi_t(x)` (`t >= 0`).
pub fn sectional_map(
    model: &VectorFieldModel,
    x: &DVector<f64>,
    t: f64,
    y: &DVector<f64>,
    opts: &SectionalOptions,
) -> Result<DVector<f64>> {
    model.check_dim(y)?;
    if !(t >= 0.0) {
        return Err(Error::BadParameters("sectional map needs t >= 0".into()));
    }
    let fx = regular_field(model, x)?;
    let radius = opts.radius_check.unwrap_or(0.25 * fx.norm());
    let s_max = 2.0 * t + 1.0;
    let reference = ReferenceOrbit::new(model, x, s_max, *opts)?;
    reference.check_on_disk(y, radius)?;
    let yseg = flow::integrate(model, y, s_max, opts.tol)?;
    reference.crossing(y, &yseg, t)
}

/// Result of [`shrink_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkProbe {
    /// Schedule times at which images were measured (starting with 0).
    pub times: Vec<f64>,
    /// Diameter of the image of the sampled disk boundary.
    pub diameters: Vec<f64>,
    /// Diameters divided by `|X|` at the moving base point.
    pub rescaled_diameters: Vec<f64>,
    pub shrinks: bool,
    /// Whether the leg data confirmed `(C, eta, T)`-contraction up to the horizon.
    pub contracted_verified: bool,
    /// Disk radius factor that made an orbit leave the domain, if any.
    pub failing_radius: Option<f64>,
}

fn diameter(points: &[DVector<f64>]) -> f64 {
    let mut d = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max((p - q).norm());
        }
    }
    d
}

/// Parameters of [`shrink_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkParams {
    pub c: f64,
    pub eta: f64,
    pub gap: f64,
    pub radius: f64,
    pub horizon: f64,
    pub samples: usize,
}

/// Tracks the image diameter of the boundary of `N_x(r |X(x)|)` under the
/// sectional map at the uniform schedule times with step `gap` up to the
/// horizon. `shrinks` is set once the diameter falls below a tenth of its
/// initial value.
pub fn shrink_probe(
    model: &VectorFieldModel,
    x: &DVector<f64>,
    p: &ShrinkParams,
    opts: &SectionalOptions,
) -> Result<ShrinkProbe> {
    let fx = regular_field(model, x)?;
    if !(p.horizon > 0.0) || !(p.gap > 0.0) || !(p.radius > 0.0) || p.samples < 2 {
        return Err(Error::BadParameters("shrink probe needs positive horizon, gap, radius and >= 2 samples".into()));
    }
    let schedule = PartitionSchedule::uniform(p.horizon, p.gap)?;

    let contracted_verified = match chain_product(model, x, &schedule, true, opts.tol) {
        Ok(chain) => {
            let log_c = p.c.ln();
            let mut acc = 0.0;
            chain.leg_norms.iter().zip(&schedule.times()[1..]).all(|(n, t)| {
                acc += n.ln();
                acc <= log_c - p.eta * t + 1e-9
            })
        }
        Err(Error::SingularPoint { .. }) => false,
        Err(e) => return Err(e),
    };

    let basis = normal_basis(model, x)?;
    let radius = p.radius * fx.norm();
    let dirs = sampling::sphere_directions(basis.vectors.len(), p.samples, &mut ChaCha8Rng::seed_from_u64(0));
    let starts: Vec<DVector<f64>> = dirs.iter().map(|c| x + basis.embed(c) * radius).collect();

    let s_max = 2.0 * p.horizon + 1.0;
    let wide = SectionalOptions { radius_check: Some(radius), ..*opts };
    let reference = ReferenceOrbit::new(model, x, s_max, wide)?;
    let mut traj = Vec::with_capacity(starts.len());
    let mut failing_radius = None;
    for y in &starts {
        match flow::integrate(model, y, s_max, opts.tol) {
            Ok(seg) => traj.push(seg),
            Err(Error::StepFailure { .. }) => {
                failing_radius = Some(p.radius);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let d0 = diameter(&starts);
    let mut out = ShrinkProbe {
        times: vec![0.0],
        diameters: vec![d0],
        rescaled_diameters: vec![d0 / fx.norm()],
        shrinks: false,
        contracted_verified,
        failing_radius,
    };
    if failing_radius.is_some() {
        return Ok(out);
    }
    'times: for &t in &schedule.times()[1..] {
        let mut images = Vec::with_capacity(starts.len());
        for (y, seg) in starts.iter().zip(&traj) {
            match reference.crossing(y, seg, t) {
                Ok(q) => images.push(q),
                Err(Error::LeftDomain { .. }) => {
                    out.failing_radius = Some(p.radius);
                    break 'times;
                }
                Err(e) => return Err(e),
            }
        }
        let base = reference.seg.at(t).expect("reference covers the horizon");
        let dt = diameter(&images);
        out.times.push(t);
        out.diameters.push(dt);
        out.rescaled_diameters.push(dt / model.eval(&base).norm());
        if dt < 0.1 * d0 {
            out.shrinks = true;
        }
    }
    if out.failing_radius.is_some() {
        out.shrinks = false;
    }
    Ok(out)
}
