//! Dominated splittings `E ⊕ F` (with `dim F = 1`) at singularities, the
//! cones and cone-like regions built from them, the curve `W^F`, and the
//! local experiments around a singularity.

mod experiments;
mod manifold;

pub use experiments::{
    cone_claim_check, entry_time_experiment, small_scale_experiment, ConeClaimParams, ConeClaimReport,
    Counterexample, EntryInterval, EntryTimeParams, EntryTimeReport, SmallScaleParams, SmallScaleReport,
};
pub use experiments::{measure_c, measure_c0, sample_region, synthesize_sequence};
pub use manifold::{approximate_wf, disk_meets_wf, DiskHit, ManifoldCurve, Side};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorFieldModel;
use crate::flow::{self, Tolerance};
use crate::linalg;

/// Real parts closer than this count as equal when looking for a simple top
/// eigenvalue.
pub const EIGEN_TOL: f64 = 1e-8;
/// Fitted decay must match the spectral gap to this relative accuracy.
pub const FIT_REL_TOL: f64 = 0.1;
/// Cone inclusion slack.
pub const CONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub sigma: DVector<f64>,
    /// Orthonormal basis of `E`.
    pub e_basis: Vec<DVector<f64>>,
    /// Unit vector spanning `F`.
    pub f_vector: DVector<f64>,
    pub f_eigenvalue: f64,
    pub spectral_gap: f64,
    pub fitted_c: f64,
    pub fitted_lambda: f64,
    pub dominated: bool,
    /// Relative invariance defect of `E` and `F` under `DX(sigma)`.
    pub invariance_residual: f64,
    pub t_grid: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl SplittingReport {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `[E | F]` as columns.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let mut vs = self.e_basis.clone();
        vs.push(self.f_vector.clone());
        linalg::columns(&vs, self.dim())
    }
}

/// Evenly spaced times on `[a, b]`.
pub fn time_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// `F` is the eigendirection of the simple real eigenvalue of `DX(sigma)`
/// with the largest real part; `E` is the invariant complement (orthogonal
/// to the left eigenvector). Domination is read off the spectral gap and
/// cross-checked by fitting the decay of the domination ratio on `t_grid`.
pub fn split_at_singularity(
    model: &VectorFieldModel,
    sigma: &DVector<f64>,
    t_grid: &[f64],
    tol: Tolerance,
) -> Result<SplittingReport> {
    model.check_dim(sigma)?;
    let residual = model.eval(sigma).norm();
    if residual > 1e-9 {
        return Err(Error::NotASingularity { residual, tol: 1e-9 });
    }
    let d = sigma.len();
    if d < 2 {
        return Err(Error::BadParameters("a splitting needs dimension >= 2".into()));
    }
    let a = model.jacobian(sigma);
    let eig = linalg::eigenvalues(&a)?;
    let scale = linalg::op_norm(&a).max(1.0);
    let top = eig[0];
    if top.im.abs() > EIGEN_TOL * scale {
        return Err(Error::NoDominatedF(format!("top eigenvalue {top} is complex")));
    }
    if eig[1].re >= top.re - EIGEN_TOL * scale {
        return Err(Error::NoDominatedF(format!("top real part {} is not simple", top.re)));
    }
    let lambda_f = top.re;
    let shifted = &a - DMatrix::identity(d, d) * lambda_f;
    let mut f = linalg::null_vector(&shifted);
    f /= f.norm();
    let mut w = linalg::null_vector(&shifted.transpose());
    w /= w.norm();
    let e_basis = linalg::orthonormal_complement(&w);

    let spectral_gap = lambda_f - eig[1].re;
    let ratios = flow::domination_ratio(model, sigma, &f, t_grid, tol)?;
    let fit = flow::fit_exponential(t_grid, &ratios);
    let (fitted_c, fitted_lambda) = fit.map_or((f64::NAN, f64::NAN), |f| (f.c, f.lambda));
    let dominated = spectral_gap > EIGEN_TOL * scale
        && fit.is_some_and(|f| (f.lambda - spectral_gap).abs() <= FIT_REL_TOL * spectral_gap);

    let mut report = SplittingReport {
        sigma: sigma.clone(),
        e_basis,
        f_vector: f,
        f_eigenvalue: lambda_f,
        spectral_gap,
        fitted_c,
        fitted_lambda,
        dominated,
        invariance_residual: 0.0,
        t_grid: t_grid.to_vec(),
        ratios,
    };
    report.invariance_residual = invariance_residual(&a, &report);
    Ok(report)
}

/// `max` over basis vectors of the cross-component of `A b` in `E ⊕ F`
/// coordinates, relative to `|A|`.
fn invariance_residual(a: &DMatrix<f64>, report: &SplittingReport) -> f64 {
    let basis = report.basis_matrix();
    let Some(inv) = basis.clone().try_inverse() else {
        return f64::INFINITY;
    };
    let coords = inv * a * &basis;
    let d = report.dim();
    let mut worst: f64 = 0.0;
    for j in 0..d - 1 {
        worst = worst.max(coords[(d - 1, j)].abs());
        worst = worst.max(coords[(j, d - 1)].abs());
    }
    worst / linalg::op_norm(a).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// Projections along the actual `E ⊕ F` pair.
    #[default]
    Oblique,
    /// `v_F` is the orthogonal projection on `F`, `v_E = v - v_F`.
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    /// `|v_E| <= alpha |v_F|`.
    F,
    /// `|v_F| <= alpha |v_E|`.
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub alpha: f64,
    pub which: ConeKind,
    #[serde(default)]
    pub decomposition: Decomposition,
}

impl ConeSpec {
    pub fn new(alpha: f64, which: ConeKind) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::BadParameters(format!("cone aperture must be positive, got {alpha}")));
        }
        Ok(Self { alpha, which, decomposition: Decomposition::Oblique })
    }

    pub fn with_decomposition(mut self, d: Decomposition) -> Self {
        self.decomposition = d;
        self
    }
}

/// Splits `v = v_E + v_F`.
pub fn decompose(
    e_basis: &[DVector<f64>],
    f_vector: &DVector<f64>,
    v: &DVector<f64>,
    mode: Decomposition,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if v.len() != f_vector.len() {
        return Err(Error::DimensionMismatch { expected: f_vector.len(), got: v.len() });
    }
    match mode {
        Decomposition::Orthogonal => {
            let f = f_vector / f_vector.norm();
            let vf = &f * f.dot(v);
            Ok((v - &vf, vf))
        }
        Decomposition::Oblique => {
            let mut vs = e_basis.to_vec();
            vs.push(f_vector.clone());
            let b = linalg::columns(&vs, v.len());
            let c = b.lu().solve(v).ok_or(Error::SingularJacobian { ratio: 0.0 })?;
            let k = e_basis.len();
            let vf = f_vector * c[k];
            Ok((v - &vf, vf))
        }
    }
}

/// Non-strict cone membership.
pub fn cone_contains(
    spec: &ConeSpec,
    e_basis: &[DVector<f64>],
    f_vector: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<bool> {
    if v.norm() == 0.0 {
        return Err(Error::ZeroVector);
    }
    let (ve, vf) = decompose(e_basis, f_vector, v, spec.decomposition)?;
    let slack = CONE_SLACK * v.norm();
    Ok(match spec.which {
        ConeKind::F => ve.norm() <= spec.alpha * vf.norm() + slack,
        ConeKind::E => vf.norm() <= spec.alpha * ve.norm() + slack,
    })
}

/// `|x - sigma| < beta` and `|X_E(x)| < alpha |X_F(x)|`, with `E`, `F`
/// extended as constants off `sigma`.
pub fn region_membership(
    model: &VectorFieldModel,
    report: &SplittingReport,
    alpha: f64,
    beta: f64,
    x: &DVector<f64>,
    mode: Decomposition,
) -> Result<bool> {
    model.check_dim(x)?;
    if !((x - &report.sigma).norm() < beta) {
        return Ok(false);
    }
    let fx = model.eval(x);
    let (xe, xf) = decompose(&report.e_basis, &report.f_vector, &fx, mode)?;
    Ok(xe.norm() < alpha * xf.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{diag, lorenz};

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn center_dissipative_split() {
        let m = diag("cd", &[0.0, -1.0, -2.0]);
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.0, 4.0, 9), tol()).unwrap();
        assert!((r.f_vector.dot(&e(3, 0)).abs() - 1.0).abs() < 1e-12);
        for b in &r.e_basis {
            assert!(b[0].abs() < 1e-12);
        }
        assert!((r.spectral_gap - 1.0).abs() < 1e-12);
        assert!((r.fitted_lambda - 1.0).abs() < 1e-6);
        assert!(r.dominated);
        assert!(r.invariance_residual < 1e-8);
    }

    #[test]
    fn lorenz_origin_split() {
        let (s, rho, b) = (10.0, 28.0, 8.0 / 3.0);
        let m = lorenz(s, rho, b);
        let r = split_at_singularity(&m, &DVector::zeros(3), &time_grid(0.5, 2.0, 16), tol()).unwrap();
        // roots of l^2 + (s+1) l + s(1-rho): the unstable one dominates -beta
        let lu = (-(s + 1.0) + ((s + 1.0f64).powi(2) - 4.0 * s * (1.0 - rho)).sqrt()) / 2.0;
        assert!((r.f_eigenvalue - lu).abs() < 1e-9);
        assert!((r.spectral_gap - (lu + b)).abs() < 1e-9);
        assert!(r.dominated, "{} vs {}", r.fitted_lambda, r.spectral_gap);
        assert!(r.invariance_residual < 1e-8);
        let a = m.jacobian(&DVector::zeros(3));
        assert!((&a * &r.f_vector - &r.f_vector * lu).norm() < 1e-8);
    }

    #[test]
    fn complex_top_has_no_f() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
        let m = VectorFieldModel::linear("rot_plus", a);
        let r = split_at_singularity(&m, &DVector::zeros(3), &[0.0, 1.0], tol());
        assert!(matches!(r, Err(Error::NoDominatedF(_))));
        let m = diag("double", &[1.0, 1.0, -1.0]);
        assert!(matches!(split_at_singularity(&m, &DVector::zeros(3), &[0.0, 1.0], tol()), Err(Error::NoDominatedF(_))));
    }

    #[test]
    fn cone_examples() {
        let eb = vec![e(3, 1), e(3, 2)];
        let f = e(3, 0);
        let fc = ConeSpec::new(0.5, ConeKind::F).unwrap();
        let ec = ConeSpec::new(0.5, ConeKind::E).unwrap();
        for a in [1e-3, 0.5, 10.0] {
            assert!(cone_contains(&ConeSpec::new(a, ConeKind::F).unwrap(), &eb, &f, &f).unwrap());
        }
        assert!(!cone_contains(&fc, &eb, &f, &e(3, 1)).unwrap());
        assert!(cone_contains(&ec, &eb, &f, &e(3, 1)).unwrap());
        let edge = &f + e(3, 2) * 0.5;
        assert!(cone_contains(&fc, &eb, &f, &edge).unwrap());
        assert_eq!(cone_contains(&fc, &eb, &f, &DVector::zeros(3)), Err(Error::ZeroVector));
        assert!(ConeSpec::new(0.0, ConeKind::F).is_err());
    }

    #[test]
    fn oblique_and_orthogonal_differ() {
        // E = span(1, 1), F = e1: v = e2 is pure E obliquely (minus its F part)
        let eb = vec![DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt()];
        let f = e(2, 0);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let ob = ConeSpec::new(0.1, ConeKind::E).unwrap();
        let or = ob.with_decomposition(Decomposition::Orthogonal);
        assert!(cone_contains(&ob, &eb, &f, &v).unwrap());
        assert!(!cone_contains(&or, &eb, &f, &v).unwrap());
    }

    #[test]
    fn region_examples() {
        let m = diag("cd", &[0.0, -1.0, -2.0]);
        let r = split_at_singularity(&m, &DVector::zeros(3), &[0.0, 1.0, 2.0], tol()).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.01, 0.0]);
        assert!(!region_membership(&m, &r, 0.5, 1.0, &x, Decomposition::Oblique).unwrap());
        let sad = diag("saddle", &[1.0, -1.0]);
        let r = split_at_singularity(&sad, &DVector::zeros(2), &[0.0, 1.0], tol()).unwrap();
        let on_wf = DVector::from_vec(vec![0.05, 0.0]);
        assert!(region_membership(&sad, &r, 0.3, 0.1, &on_wf, Decomposition::Oblique).unwrap());
        assert!(!region_membership(&sad, &r, 0.3, 0.05, &on_wf, Decomposition::Oblique).unwrap());
    }
}
