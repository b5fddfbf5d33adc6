//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `ln |det A|` via partial-pivot LU; `-inf` for exactly singular input.
pub fn log_abs_det(a: &DMatrix<Complex64>) -> f64 {
    assert!(a.is_square());
    if a.nrows() == 0 {
        return 0.0;
    }
    let lu = a.clone().lu();
    lu.u().diagonal().iter().map(|d| d.norm().ln()).sum()
}

/// Determinant of a small square matrix stored row-major in `buf`
/// (overwritten), by Gaussian elimination with partial pivoting.
pub fn det_in_place(buf: &mut [Complex64], n: usize) -> Complex64 {
    debug_assert_eq!(buf.len(), n * n);
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| buf[a * n + col].norm().total_cmp(&buf[b * n + col].norm()))
            .unwrap();
        let pv = buf[pivot * n + col];
        if pv.norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if pivot != col {
            for j in 0..n {
                buf.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= pv;
        for r in col + 1..n {
            let f = buf[r * n + col] / pv;
            if f.norm() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = buf[col * n + j];
                buf[r * n + j] -= f * v;
            }
        }
    }
    det
}

/// Sum of `ln ||row||`; `-inf` if any row vanishes.
pub fn log_row_norm_product(a: &DMatrix<Complex64>) -> f64 {
    a.row_iter().map(|r| r.norm().ln()).sum()
}

/// `ln det(I + rho B^H B)` through a Cholesky factorization of the
/// `Q x Q` Gram form.
pub fn log_det_gram(b: &DMatrix<Complex64>, rho: f64) -> f64 {
    let q = b.ncols();
    let gram = b.adjoint() * b * Complex64::new(rho, 0.0) + DMatrix::identity(q, q);
    match gram.cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>(),
        None => log_abs_det(&(b.adjoint() * b * Complex64::new(rho, 0.0) + DMatrix::identity(q, q))),
    }
}

/// `ln det(I + rho B B^H)` on the full `2N x 2N` form.
pub fn log_det_outer(b: &DMatrix<Complex64>, rho: f64) -> f64 {
    let r = b.nrows();
    log_abs_det(&(b * b.adjoint() * Complex64::new(rho, 0.0) + DMatrix::identity(r, r)))
}

/// Right null vector of a wide or square matrix: the right singular vector of
/// the smallest singular value, with `(sigma_min, sigma_max)`.
pub fn smallest_right_singular_vector(a: &DMatrix<Complex64>) -> (DVector<Complex64>, f64, f64) {
    let cols = a.ncols();
    let mut padded = DMatrix::zeros(a.nrows().max(cols), cols);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s))
        .unwrap();
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let v = vt.row(imin).adjoint();
    (v, smin, smax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{complex_normal_vec, stream_rng};

    #[test]
    fn small_det_matches_lu() {
        let mut rng = stream_rng(1, 0);
        for n in 1..6 {
            let vals = complex_normal_vec(&mut rng, n * n);
            let m = DMatrix::from_row_slice(n, n, &vals);
            let mut buf = vals.clone();
            let d = det_in_place(&mut buf, n);
            assert!((d.norm().ln() - log_abs_det(&m)).abs() < 1e-12);
            assert!((d - m.determinant()).norm() < 1e-10 * d.norm().max(1.0));
        }
    }

    #[test]
    fn null_vector_of_wide_matrix() {
        let mut rng = stream_rng(2, 0);
        let a = DMatrix::from_row_slice(2, 3, &complex_normal_vec(&mut rng, 6));
        let (v, smin, smax) = smallest_right_singular_vector(&a);
        assert!(smin < 1e-12 * smax);
        assert!((&a * &v).norm() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
