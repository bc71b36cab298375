//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone().singular_values().max()
}

/// Smallest singular value.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.ncols() == 1 {
        return m.norm();
    }
    m.clone().singular_values().min()
}

/// Eigenvalues of a real square matrix, sorted by decreasing real part
/// (ties broken by decreasing imaginary part).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-15, 100_000).ok_or(Error::EigenFailure)?;
    let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenFailure);
    }
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(eig)
}

/// Unit vector spanning (approximately) the kernel of `m`: the right singular
/// vector of the smallest singular value.
pub fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols();
    // pad to square so the thin SVD returns a full V
    let mut sq = DMatrix::zeros(n.max(m.nrows()), n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut v: DVector<f64> = v_t.row(idx).transpose();
    v /= v.norm();
    sign_normalize(&mut v);
    v
}

/// Flip `v` so that its first non-negligible coordinate is positive.
pub fn sign_normalize(v: &mut DVector<f64>) {
    let scale = v.amax();
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Orthonormal basis of the orthogonal complement of `v` (which must be
/// nonzero), by Householder completion. The result is deterministic and each
/// basis vector has its first nonzero coordinate positive.
pub fn orthonormal_complement(v: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = v.len();
    let n = v / v.norm();
    // w = n + sign(n_0) e_0; H = I - 2 w w^T / |w|^2 maps e_0 to -sign(n_0) n
    let mut w = n.clone();
    let s = if n[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += s;
    let ww = w.norm_squared();
    (1..d)
        .map(|j| {
            let mut col = DVector::from_fn(d, |i, _| if i == j { 1.0 } else { 0.0 });
            let c = 2.0 * w[j] / ww;
            col.axpy(-c, &w, 1.0);
            // re-orthogonalise against n to kill rounding
            let p = col.dot(&n);
            col.axpy(-p, &n, 1.0);
            col /= col.norm();
            sign_normalize(&mut col);
            col
        })
        .collect()
}

/// Columns stacked into a matrix.
pub fn columns(vs: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, vs.len());
    for (j, v) in vs.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}
