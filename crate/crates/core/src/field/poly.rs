//! Polynomial vector fields and truncated power-series composition.

use nalgebra::{DMatrix, DVector};

/// One monomial `coeff * x_0^p_0 * ... * x_{d-1}^p_{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// A vector field whose components are polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialField {
    dim: usize,
    components: Vec<Vec<Monomial>>,
}

impl PolynomialField {
    pub fn new(dim: usize) -> Self {
        Self { dim, components: vec![Vec::new(); dim] }
    }

    /// Adds `coeff * x^powers` to component `i`. Zero coefficients are dropped.
    pub fn term(mut self, i: usize, coeff: f64, powers: &[u32]) -> Self {
        assert_eq!(powers.len(), self.dim, "monomial arity");
        if coeff != 0.0 {
            self.components[i].push(Monomial { coeff, powers: powers.to_vec() });
        }
        self
    }

    /// Linear field `x -> A x`.
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let d = a.nrows();
        let mut p = Self::new(d);
        for i in 0..d {
            for j in 0..d {
                let mut pw = vec![0; d];
                pw[j] = 1;
                p = p.term(i, a[(i, j)], &pw);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Vec<Monomial>] {
        &self.components
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            self.components.iter().map(|terms| {
                terms
                    .iter()
                    .map(|m| m.coeff * m.powers.iter().zip(x.iter()).map(|(&p, &xi)| xi.powi(p as i32)).product::<f64>())
                    .sum::<f64>()
            }),
        )
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        for (i, terms) in self.components.iter().enumerate() {
            for m in terms {
                for j in 0..d {
                    let pj = m.powers[j];
                    if pj == 0 {
                        continue;
                    }
                    let mut v = m.coeff * pj as f64;
                    for (k, (&p, &xk)) in m.powers.iter().zip(x.iter()).enumerate() {
                        let e = if k == j { p - 1 } else { p };
                        v *= xk.powi(e as i32);
                    }
                    jac[(i, j)] += v;
                }
            }
        }
        jac
    }

    /// Composes the field with a vector of truncated power series
    /// (`series[k][n]` is the coefficient of `s^n` in coordinate `k`) and
    /// returns the series of `X(K(s))` truncated at `order`.
    pub fn compose_series(&self, series: &[Vec<f64>], order: usize) -> Vec<Vec<f64>> {
        let len = order + 1;
        let padded: Vec<Vec<f64>> = series
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(len, 0.0);
                c
            })
            .collect();
        self.components
            .iter()
            .map(|terms| {
                let mut acc = vec![0.0; len];
                for m in terms {
                    let mut prod = vec![0.0; len];
                    prod[0] = m.coeff;
                    for (k, &p) in m.powers.iter().enumerate() {
                        for _ in 0..p {
                            prod = series_mul(&prod, &padded[k], len);
                        }
                    }
                    for (a, b) in acc.iter_mut().zip(prod) {
                        *a += b;
                    }
                }
                acc
            })
            .collect()
    }
}

fn series_mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().enumerate().take(len) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(len - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}
