//! Vector-field models, the built-in catalog and singularity classification.

mod poly;

pub use poly::{Monomial, PolynomialField};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance on real parts when classifying singularities.
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-9;

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type CurveFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// A known analytic locally invariant curve through a singularity, tangent to
/// the dominating direction there. `curve(s)` is signed so that `s > 0` is the
/// plus side.
#[derive(Clone)]
pub struct CenterCurve {
    pub singularity: usize,
    pub curve: Arc<CurveFn>,
}

/// A smooth vector field on R^d together with its Jacobian and the
/// equilibria known in closed form.
///
/// Models are immutable once built and cheap to clone.
#[derive(Clone)]
pub struct VectorFieldModel {
    name: String,
    dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Arc<JacFn>,
    singularities: Vec<DVector<f64>>,
    polynomial: Option<Arc<PolynomialField>>,
    center_curve: Option<CenterCurve>,
}

impl fmt::Debug for VectorFieldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("singularities", &self.singularities)
            .field("polynomial", &self.polynomial.is_some())
            .finish()
    }
}

impl VectorFieldModel {
    /// A user-defined model from closures.
    pub fn from_closures<F, J>(name: impl Into<String>, dim: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
            singularities: Vec::new(),
            polynomial: None,
            center_curve: None,
        }
    }

    /// A polynomial model; evaluation and Jacobian come from the monomials.
    pub fn from_polynomial(name: impl Into<String>, poly: PolynomialField) -> Self {
        let poly = Arc::new(poly);
        let (pe, pj) = (poly.clone(), poly.clone());
        Self {
            name: name.into(),
            dim: poly.dim(),
            eval: Arc::new(move |x| pe.eval(x)),
            jacobian: Arc::new(move |x| pj.jacobian(x)),
            singularities: Vec::new(),
            polynomial: Some(poly),
            center_curve: None,
        }
    }

    /// The linear field `x -> A x` (origin listed as a singularity).
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "linear field needs a square matrix");
        let d = a.nrows();
        Self::from_polynomial(name, PolynomialField::linear(&a)).with_singularities(vec![DVector::zeros(d)])
    }

    pub fn with_singularities(mut self, s: Vec<DVector<f64>>) -> Self {
        self.singularities = s;
        self
    }

    pub fn with_center_curve<C>(mut self, singularity: usize, curve: C) -> Self
    where
        C: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.center_curve = Some(CenterCurve { singularity, curve: Arc::new(curve) });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    pub fn singularities(&self) -> &[DVector<f64>] {
        &self.singularities
    }

    pub fn polynomial(&self) -> Option<&PolynomialField> {
        self.polynomial.as_deref()
    }

    pub fn center_curve(&self) -> Option<&CenterCurve> {
        self.center_curve.as_ref()
    }

    pub(crate) fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

/// Spectral classification of a singularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityClass {
    pub eigenvalues: Vec<Complex<f64>>,
    pub is_hyperbolic: bool,
    pub is_sectionally_dissipative: bool,
    pub max_real_part: f64,
}

/// Eigenvalues of `DX(sigma)` and the hyperbolic / sectionally dissipative
/// flags. A pair sum exactly at `tol` counts as dissipative.
pub fn classify_singularity(model: &VectorFieldModel, sigma: &DVector<f64>, tol: f64) -> Result<SingularityClass> {
    model.check_dim(sigma)?;
    let residual = model.eval(sigma).norm();
    if residual > tol {
        return Err(Error::NotASingularity { residual, tol });
    }
    let eigenvalues = linalg::eigenvalues(&model.jacobian(sigma))?;
    let is_hyperbolic = eigenvalues.iter().all(|z| z.re.abs() > tol);
    let re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
    // eigenvalues are sorted by real part, so the largest pair sum is re[0] + re[1]
    let is_sectionally_dissipative = re.len() < 2 || re[0] + re[1] <= tol;
    let max_real_part = re.first().copied().unwrap_or(f64::NAN);
    Ok(SingularityClass { eigenvalues, is_hyperbolic, is_sectionally_dissipative, max_real_part })
}

/// Name and parameters selecting a catalog model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Names understood by [`build_model`].
pub const CATALOG: &[&str] = &[
    "linear_sink",
    "radial",
    "rotation",
    "hopf",
    "lorenz",
    "splitting_normal_form",
    "center_dissipative",
    "saddle",
    "saddle_node",
];

struct Params<'a> {
    spec: &'a ModelSpec,
    used: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    fn get(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.used.insert(key);
        let v = self.spec.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::BadParameters(format!("{}: parameter `{key}` is not finite", self.spec.name)));
        }
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.spec.params.keys().find(|k| !self.used.contains(k.as_str())) {
            return Err(Error::BadParameters(format!("{}: unknown parameter `{k}`", self.spec.name)));
        }
        Ok(())
    }
}

/// Builds a catalog model by name.
///
/// | name | field | parameters |
/// |---|---|---|
/// | `linear_sink` | `diag(-1,-2)` | |
/// | `radial` | `-x` on R^d | `dim` (2) |
/// | `rotation` | `(-y, x)` | |
/// | `hopf` | Hopf normal form | `mu` (0.5) |
/// | `lorenz` | Lorenz system | `sigma` (10), `rho` (28), `beta` (8/3) |
/// | `splitting_normal_form` | `x_F' = l_f x_F + q_f x_F^2`, `x_Ei' = l_ei x_Ei + q_x x_F x_Ei + q_g x_F^2` | `lambda_f` (1), `lambda_e1` (-1), `lambda_e2` (-2), `qf` (0.5), `qx` (0.5), `qg` (0) |
/// | `center_dissipative` | `diag(0,-1,-2)` | |
/// | `saddle` | `diag(1,-1)` | |
/// | `saddle_node` | `(x^2, -y)` | |
pub fn build_model(spec: &ModelSpec) -> Result<VectorFieldModel> {
    let mut p = Params { spec, used: BTreeSet::new() };
    let model = match spec.name.as_str() {
        "linear_sink" => diag("linear_sink", &[-1.0, -2.0]),
        "radial" => {
            let d = p.get("dim", 2.0)?;
            if d < 1.0 || d.fract() != 0.0 {
                return Err(Error::BadParameters("radial: dim must be a positive integer".into()));
            }
            let d = d as usize;
            VectorFieldModel::linear("radial", -DMatrix::identity(d, d))
        }
        "rotation" => VectorFieldModel::linear("rotation", DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])),
        "hopf" => hopf(p.get("mu", 0.5)?),
        "lorenz" => lorenz(p.get("sigma", 10.0)?, p.get("rho", 28.0)?, p.get("beta", 8.0 / 3.0)?),
        "splitting_normal_form" => splitting_normal_form(NormalFormParams {
            lambda_f: p.get("lambda_f", 1.0)?,
            lambda_e: [p.get("lambda_e1", -1.0)?, p.get("lambda_e2", -2.0)?],
            qf: p.get("qf", 0.5)?,
            qx: p.get("qx", 0.5)?,
            qg: p.get("qg", 0.0)?,
        }),
        "center_dissipative" => diag("center_dissipative", &[0.0, -1.0, -2.0]),
        "saddle" => diag("saddle", &[1.0, -1.0]),
        "saddle_node" => {
            let poly = PolynomialField::new(2).term(0, 1.0, &[2, 0]).term(1, -1.0, &[0, 1]);
            VectorFieldModel::from_polynomial("saddle_node", poly)
                .with_singularities(vec![DVector::zeros(2)])
                .with_center_curve(0, |s| DVector::from_vec(vec![s, 0.0]))
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    p.finish()?;
    Ok(model)
}

/// Every catalog model with default parameters.
pub fn builtin_models() -> Vec<VectorFieldModel> {
    CATALOG
        .iter()
        .map(|name| build_model(&ModelSpec::new(*name)).expect("catalog defaults are valid"))
        .collect()
}

/// Diagonal linear field.
pub fn diag(name: &str, entries: &[f64]) -> VectorFieldModel {
    VectorFieldModel::linear(name, DMatrix::from_diagonal(&DVector::from_row_slice(entries)))
}

/// Hopf normal form `x' = mu x - y - x r^2`, `y' = x + mu y - y r^2`.
pub fn hopf(mu: f64) -> VectorFieldModel {
    let poly = PolynomialField::new(2)
        .term(0, mu, &[1, 0])
        .term(0, -1.0, &[0, 1])
        .term(0, -1.0, &[3, 0])
        .term(0, -1.0, &[1, 2])
        .term(1, 1.0, &[1, 0])
        .term(1, mu, &[0, 1])
        .term(1, -1.0, &[2, 1])
        .term(1, -1.0, &[0, 3]);
    VectorFieldModel::from_polynomial("hopf", poly).with_singularities(vec![DVector::zeros(2)])
}

/// Lorenz system; lists the origin and, for `rho > 1`, the two symmetric
/// equilibria.
pub fn lorenz(sigma: f64, rho: f64, beta: f64) -> VectorFieldModel {
    let poly = PolynomialField::new(3)
        .term(0, -sigma, &[1, 0, 0])
        .term(0, sigma, &[0, 1, 0])
        .term(1, rho, &[1, 0, 0])
        .term(1, -1.0, &[0, 1, 0])
        .term(1, -1.0, &[1, 0, 1])
        .term(2, 1.0, &[1, 1, 0])
        .term(2, -beta, &[0, 0, 1]);
    let mut sing = vec![DVector::zeros(3)];
    if rho > 1.0 {
        let c = (beta * (rho - 1.0)).sqrt();
        sing.push(DVector::from_vec(vec![c, c, rho - 1.0]));
        sing.push(DVector::from_vec(vec![-c, -c, rho - 1.0]));
    }
    VectorFieldModel::from_polynomial("lorenz", poly).with_singularities(sing)
}

/// Parameters of the splitting normal form, coordinates `(x_F, x_E1, x_E2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalFormParams {
    pub lambda_f: f64,
    pub lambda_e: [f64; 2],
    pub qf: f64,
    pub qx: f64,
    pub qg: f64,
}

/// `x_F' = lambda_f x_F + qf x_F^2`,
/// `x_Ei' = lambda_ei x_Ei + qx x_F x_Ei + qg x_F^2`.
///
/// The linear part is `diag(lambda_f, lambda_e1, lambda_e2)`. When `qg = 0`
/// the F-axis is invariant and is attached as the known center curve.
pub fn splitting_normal_form(p: NormalFormParams) -> VectorFieldModel {
    let mut poly = PolynomialField::new(3)
        .term(0, p.lambda_f, &[1, 0, 0])
        .term(0, p.qf, &[2, 0, 0]);
    for (i, &le) in p.lambda_e.iter().enumerate() {
        let mut lin = [0u32; 3];
        lin[i + 1] = 1;
        let mut mixed = [1u32, 0, 0];
        mixed[i + 1] = 1;
        poly = poly.term(i + 1, le, &lin).term(i + 1, p.qx, &mixed).term(i + 1, p.qg, &[2, 0, 0]);
    }
    let mut sing = vec![DVector::zeros(3)];
    if p.lambda_f != 0.0 && p.qf != 0.0 {
        let xf = -p.lambda_f / p.qf;
        let denoms: Vec<f64> = p.lambda_e.iter().map(|le| le + p.qx * xf).collect();
        if denoms.iter().all(|d| d.abs() > 1e-12) {
            sing.push(DVector::from_vec(vec![xf, -p.qg * xf * xf / denoms[0], -p.qg * xf * xf / denoms[1]]));
        }
    }
    let model = VectorFieldModel::from_polynomial("splitting_normal_form", poly).with_singularities(sing);
    if p.qg == 0.0 {
        model.with_center_curve(0, |s| DVector::from_vec(vec![s, 0.0, 0.0]))
    } else {
        model
    }
}
