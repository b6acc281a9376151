//! Seeded random test systems with known answers.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::systems::{num, LinearSystem, MatrixFunction, NonlinearSystem, SystemError};

/// Constant matrix together with the distinct real parts of its eigenvalues.
#[derive(Debug, Clone)]
pub struct AutonomousCase {
    pub seed: u64,
    pub matrix: Matrix,
    /// Ascending.
    pub real_parts: Vec<f64>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `count` values in `[lo, hi]` with pairwise gaps of at least `gap`, ascending.
fn separated(r: &mut ChaCha8Rng, count: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..count).map(|_| r.gen_range(lo..=hi)).collect();
        v.sort_by(f64::total_cmp);
        if v.windows(2).all(|w| w[1] - w[0] >= gap) {
            return v;
        }
    }
}

/// Well-conditioned random similarity `S` and its inverse.
fn similarity(r: &mut ChaCha8Rng, n: usize, max_cond: f64) -> (Matrix, Matrix) {
    loop {
        let s = Matrix::identity(n, n)
            + Matrix::from_fn(n, n, |_, _| 0.4 * r.sample::<f64, _>(StandardNormal));
        let sv = s.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        if cond <= max_cond {
            if let Some(inv) = s.clone().try_inverse() {
                return (s, inv);
            }
        }
    }
}

/// Random `n <= 4` matrix with eigenvalue real parts in `[-3, 3]`, distinct
/// real parts at least 0.3 apart; complex pairs share one real part.
pub fn random_autonomous(seed: u64) -> AutonomousCase {
    let mut r = rng(seed, 1);
    let n = r.gen_range(1..=4usize);
    let pairs = r.gen_range(0..=n / 2);
    let reals = n - 2 * pairs;
    let parts = separated(&mut r, reals + pairs, -3.0, 3.0, 0.3);
    let mut order: Vec<usize> = (0..parts.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let mut b = Matrix::zeros(n, n);
    let mut k = 0;
    for (slot, &idx) in order.iter().enumerate() {
        let re = parts[idx];
        if slot < pairs {
            let im = r.gen_range(0.5..3.0);
            b[(k, k)] = re;
            b[(k + 1, k + 1)] = re;
            b[(k, k + 1)] = im;
            b[(k + 1, k)] = -im;
            k += 2;
        } else {
            b[(k, k)] = re;
            k += 1;
        }
    }
    let (s, inv) = similarity(&mut r, n, 8.0);
    AutonomousCase {
        seed,
        matrix: &s * b * inv,
        real_parts: parts,
    }
}

/// `x' = -(c0 + c1 sin(w t + phi)) x - c3 x^3` with `c0 in [0.5, 2]`; the
/// linear part decays at mean rate `c0`.
pub fn random_scalar(seed: u64) -> Result<(NonlinearSystem, f64), SystemError> {
    let mut r = rng(seed, 2);
    let c0: f64 = r.gen_range(0.5..2.0);
    let c1: f64 = r.gen_range(0.0..0.2);
    let w: f64 = r.gen_range(0.5..2.0);
    let phi: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let c3: f64 = r.gen_range(0.0..1.0);
    let text = format!(
        "-({} + {}*sin({}*t + {}))*x1 - {}*x1^3",
        num(c0),
        num(c1),
        num(w),
        num(phi),
        num(c3)
    );
    Ok((
        NonlinearSystem::parse(format!("random_scalar(seed={seed})"), &[&text])?,
        c0,
    ))
}

/// `f_i(t, x) = sum_j (c_ij + d_ij cos(w t)) sin(x_j)`, scaled so that
/// `sup ||Jf|| <= sup_t ||M(t)|| = bound`.
pub fn random_perturbation(
    n: usize,
    seed: u64,
    bound: f64,
) -> Result<NonlinearSystem, SystemError> {
    let mut r = rng(seed, 3);
    let c = Matrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    let d = Matrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    let w: f64 = r.gen_range(0.5..2.0);
    let period = std::f64::consts::TAU / w;
    let sup = (0..=4000)
        .map(|k| {
            let t = period * k as f64 / 4000.0;
            crate::linalg::spectral_norm(&(&c + &d * (w * t).cos()))
        })
        .fold(0.0, f64::max)
        * 1.001;
    let scale = bound / sup;
    let rows: Vec<String> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    format!(
                        "({} + {}*cos({}*t))*sin(x{})",
                        num(scale * c[(i, j)]),
                        num(scale * d[(i, j)]),
                        num(w),
                        j + 1
                    )
                })
                .collect::<Vec<_>>()
                .join(" + ")
        })
        .collect();
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    NonlinearSystem::parse(format!("random_perturbation(seed={seed})"), &refs)
}

/// A constant stable `A` (distinct eigenvalues in `[-3, -0.2]`, 0.3 apart)
/// and `B(t) = e^{-t} M` with `||M|| <= 1`.
pub fn random_vanishing_pair(
    seed: u64,
) -> Result<(LinearSystem, LinearSystem, Vec<f64>), SystemError> {
    let mut r = rng(seed, 4);
    let n = r.gen_range(2..=3usize);
    let eig = separated(&mut r, n, -3.0, -0.2, 0.3);
    let (s, inv) = similarity(&mut r, n, 8.0);
    let a = &s * Matrix::from_diagonal(&DVector::from_row_slice(&eig)) * inv;
    let m = Matrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    let m = &m * (r.gen_range(0.3..1.0) / crate::linalg::spectral_norm(&m));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| format!("{}*exp(-t)", num(m[(i, j)])))
                .collect()
        })
        .collect();
    let b = LinearSystem::new(
        format!("vanishing(seed={seed})"),
        MatrixFunction::parse_rows(&rows)?,
    );
    Ok((
        LinearSystem::constant(format!("stable(seed={seed})"), a),
        b,
        eig,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autonomous_cases_match_eigenvalues() {
        for seed in 0..20 {
            let case = random_autonomous(seed);
            let n = case.matrix.nrows();
            assert!((1..=4).contains(&n));
            let ev = case.matrix.complex_eigenvalues();
            for e in ev.iter() {
                let near = case
                    .real_parts
                    .iter()
                    .map(|p| (p - e.re).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(near < 1e-8, "seed {seed}: {e} vs {:?}", case.real_parts);
            }
            assert!(case.real_parts.windows(2).all(|w| w[1] - w[0] >= 0.3));
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random_autonomous(7).matrix, random_autonomous(7).matrix);
        let (a, _) = random_scalar(3).unwrap();
        let (b, _) = random_scalar(3).unwrap();
        assert_eq!(a.rhs()[0].to_string(), b.rhs()[0].to_string());
    }

    #[test]
    fn perturbation_jacobian_is_bounded() {
        let f = random_perturbation(2, 5, 0.2).unwrap();
        let mut worst = 0.0f64;
        for k in 0..200 {
            let t = 0.37 * k as f64;
            let x = [(k as f64).sin() * 3.0, (k as f64 * 0.7).cos()];
            worst = worst.max(crate::linalg::spectral_norm(
                &f.eval_jacobian(t, &x).unwrap(),
            ));
        }
        assert!(worst <= 0.2 && worst > 0.05, "{worst}");
    }

    #[test]
    fn vanishing_pair_is_small() {
        let (a, b, eig) = random_vanishing_pair(1).unwrap();
        assert_eq!(a.dim(), b.dim());
        assert!(eig.iter().all(|e| *e < 0.0));
        let b0 = crate::linalg::spectral_norm(&b.a.eval(0.0).unwrap());
        assert!(b0 <= 1.0 + 1e-12);
        assert!(crate::linalg::spectral_norm(&b.a.eval(20.0).unwrap()) < 1e-8);
    }
}
