//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::DMatrix;

pub type Matrix = DMatrix<f64>;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// Spectral norm `sqrt(lambda_max(M^T M))`, with the largest Gram eigenvalue
/// found by power iteration (relative tolerance 1e-10).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let scale = m.amax();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let scaled = m / scale;
    let gram = if scaled.nrows() >= scaled.ncols() {
        scaled.transpose() * &scaled
    } else {
        &scaled * scaled.transpose()
    };
    scale * largest_symmetric_eigenvalue(&gram).max(0.0).sqrt()
}

fn largest_symmetric_eigenvalue(gram: &Matrix) -> f64 {
    let n = gram.nrows();
    if n == 1 {
        return gram[(0, 0)];
    }
    // start on the column of largest norm, perturbed off any invariant subspace
    let best = (0..n)
        .max_by(|&a, &b| gram.column(a).norm().total_cmp(&gram.column(b).norm()))
        .unwrap_or(0);
    let mut v = gram.column(best).into_owned();
    for (i, x) in v.iter_mut().enumerate() {
        *x += 1e-3 * (1.0 + i as f64).sqrt();
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let w = gram * &v;
        let next = v.dot(&w);
        let converged = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        v = w;
        if converged {
            return lambda;
        }
    }
    // slow convergence only when the top two eigenvalues nearly coincide,
    // where the Rayleigh quotient is already accurate
    lambda
}

/// Thin QR with the diagonal of `R` forced positive by column sign flips of
/// `Q` (and the matching row flips of `R`).
pub fn qr_positive(z: &Matrix) -> (Matrix, Matrix) {
    let qr = z.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// A fixed orthonormal frame in general position with respect to the
/// coordinate axes. Deterministic for a given dimension.
pub fn generic_frame(n: usize) -> Matrix {
    let m = Matrix::from_fn(n, n, |i, j| {
        let x = (1.0 + i as f64) * 0.7548776662466927 + (1.0 + j as f64) * 0.5698402909980532;
        (x * 12.9898).sin() + if i == j { 0.5 } else { 0.0 }
    });
    qr_positive(&m).0
}

/// Orthonormal basis (columns) for the column space of `m`, using singular
/// values above `tol * sigma_max`.
pub fn column_space(m: &Matrix, tol: f64) -> Matrix {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * smax && smax > 0.0)
        .collect();
    Matrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Orthonormal basis for the orthogonal complement of the column space of
/// `basis` (which must have orthonormal columns).
pub fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let n = basis.nrows();
    let k = basis.ncols();
    let proj = Matrix::identity(n, n) - basis * basis.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Matrix::from_fn(n, n - k, |i, j| u[(i, order[j])])
}

/// Product of many matrices kept as `exp(log_scale) * unit` with the unit
/// part normalised, so long products neither overflow nor underflow.
#[derive(Debug, Clone)]
pub struct ScaledProduct {
    pub unit: Matrix,
    pub log_scale: f64,
}

impl ScaledProduct {
    pub fn new(m: Matrix) -> Self {
        let mut p = ScaledProduct {
            unit: m,
            log_scale: 0.0,
        };
        p.renormalize();
        p
    }

    fn renormalize(&mut self) {
        let a = self.unit.amax();
        if a > 0.0 && a.is_finite() {
            self.unit /= a;
            self.log_scale += a.ln();
        }
    }

    /// `self <- left * self`.
    pub fn premultiply(&mut self, left: &Matrix) {
        self.unit = left * &self.unit;
        self.renormalize();
    }

    /// `self <- self * right`.
    pub fn postmultiply(&mut self, right: &Matrix) {
        self.unit = &self.unit * right;
        self.renormalize();
    }

    /// Natural log of the spectral norm of the represented matrix.
    pub fn ln_norm(&self) -> f64 {
        let n = spectral_norm(&self.unit);
        if n == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + n.ln()
        }
    }
}

/// Inverse of an upper-triangular matrix with non-zero diagonal by back
/// substitution.
pub fn upper_triangular_inverse(r: &Matrix) -> Matrix {
    let n = r.nrows();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in i + 1..=j {
                s += r[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_matches_svd() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -0.5, 3.0, 1.0, 4.0, 0.0, -2.0]);
        let svd = m.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&m) - svd).abs() < 1e-9 * svd);
        let rect = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let svd = rect.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&rect) - svd).abs() < 1e-9 * svd);
        assert_eq!(spectral_norm(&Matrix::identity(4, 4)), 1.0);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn qr_has_positive_diagonal() {
        let z = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 3.0, -4.0]);
        let (q, r) = qr_positive(&z);
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert!((&q * &r - &z).amax() < 1e-14);
        assert!((q.transpose() * &q - Matrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn generic_frame_is_orthonormal_and_off_axis() {
        for n in 1..=5 {
            let q = generic_frame(n);
            assert!((q.transpose() * &q - Matrix::identity(n, n)).amax() < 1e-13);
            if n > 1 {
                assert!(q.iter().all(|x| x.abs() > 1e-3));
            }
        }
    }

    #[test]
    fn triangular_inverse() {
        let r = Matrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 0.0, 0.5, 3.0, 0.0, 0.0, 4.0]);
        let inv = upper_triangular_inverse(&r);
        assert!((&r * inv - Matrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn scaled_product_survives_overflow() {
        let step = Matrix::from_diagonal_element(2, 2, 1e10);
        let mut p = ScaledProduct::new(Matrix::identity(2, 2));
        for _ in 0..100 {
            p.premultiply(&step);
        }
        assert!((p.ln_norm() - 1000.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn complement_spans_the_rest() {
        let b = column_space(&Matrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]), 1e-12);
        let c = orthogonal_complement(&b);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).amax() < 1e-14);
    }
}
