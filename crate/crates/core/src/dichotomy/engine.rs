//! Pair-norm machinery shared by certificates and spectrum scans.
//!
//! The transition matrices are never formed over long spans. A discrete QR
//! frame `Phi_j Q_j = Q_{j+1} R_{j+1}` whose first `k` columns follow the
//! unstable directions makes every `R` block upper triangular. The stable
//! subspace at `t_j` is `Q_j [X_j; I]`, with `X_j` from the backward recursion
//! `X_j = R11^{-1} (X_{j+1} R22 - R12)`, and then
//!
//! ```text
//! ||Phi(t,s) P(s)||          = ||[X_t; I] R22(t,s)||
//! ||Phi(s,t) (I - P(t))||    = ||R11(t,s)^{-1} [I, -X_t]||
//! ```
//!
//! A shift by `gamma` multiplies every `R` by `e^{-gamma h}`, which leaves `X`
//! unchanged and moves the logs by `-gamma d` and `+gamma d`.

use rayon::prelude::*;

use super::{DichotomyError, DichotomyOptions};
use crate::integrate::{qr_from_steps, QrGrowthSeries};
use crate::linalg::{
    column_space, generic_frame, orthogonal_complement, qr_positive, spectral_norm,
    upper_triangular_inverse, Matrix, ScaledProduct,
};

/// Logs above this are treated as overflow.
const LN_SATURATION: f64 = 709.0;

/// Ordered grid-index pairs `(i, j)`, `i <= j`.
#[derive(Debug, Clone)]
pub(crate) struct PairPlan {
    pub fit: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
}

impl PairPlan {
    /// Pairs from the R2 low-discrepancy sequence: gaps log-uniform between
    /// one step and the horizon, starts uniform over the admissible range,
    /// plus a few zero-gap pairs.
    pub fn new(steps: usize, m: usize) -> Self {
        let m = m.max(16);
        PairPlan {
            fit: r2_pairs(steps, 0, m),
            validation: r2_pairs(steps, m, m / 2),
        }
    }
}

/// One in this many pairs starts at `t0`.
const ANCHOR_EVERY: usize = 8;

fn r2_pairs(steps: usize, offset: usize, count: usize) -> Vec<(usize, usize)> {
    const G: f64 = 1.324_717_957_244_746;
    let (a1, a2) = (1.0 / G, 1.0 / (G * G));
    let zero_gap = (count / 50).max(2);
    let ln_n = (steps.max(1) as f64).ln();
    (0..count)
        .map(|q| {
            let p = (offset + q) as f64;
            let u = (0.5 + a1 * p).fract();
            let v = (0.5 + a2 * p).fract();
            let gap = if q < zero_gap {
                0
            } else {
                ((u * ln_n).exp().round() as usize).clamp(1, steps)
            };
            let start = match q {
                // anchor the pairs that see the projector at t0 and the full span
                0 => 0,
                1 => return (0, steps),
                // every gap range also sees a start at t0, so a transient
                // near t0 weighs on short and long gaps alike
                _ if q % ANCHOR_EVERY == 0 => 0,
                _ => ((v * (steps - gap + 1) as f64) as usize).min(steps - gap),
            };
            (start, start + gap)
        })
        .collect()
}

/// Log pair norms at `gamma = 0`; a missing part is `None`.
#[derive(Debug, Clone)]
pub(crate) struct PairLogs {
    /// Gap `t - s` per pair.
    pub gaps: Vec<f64>,
    pub stable: Option<Vec<f64>>,
    pub unstable: Option<Vec<f64>>,
}

/// Everything needed to certify one projector rank at any shift.
#[derive(Debug, Clone)]
pub(crate) struct SplitData {
    /// Number of unstable directions.
    pub unstable: usize,
    pub projector: Matrix,
    pub fit: PairLogs,
    pub validation: PairLogs,
}

pub(crate) struct Engine {
    pub n: usize,
    pub t0: f64,
    pub h: f64,
    pub steps: Vec<Matrix>,
    pub generic: QrGrowthSeries,
    pub plan: PairPlan,
    /// `splits[k]` for `k` unstable directions.
    pub splits: Vec<SplitData>,
}

impl Engine {
    pub fn new(
        steps: Vec<Matrix>,
        t0: f64,
        h: f64,
        opts: &DichotomyOptions,
    ) -> Result<Self, DichotomyError> {
        let n = steps
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| DichotomyError::Horizon("horizon shorter than one step".into()))?;
        let generic = qr_from_steps(&steps, t0, h, &generic_frame(n))?;
        let plan = PairPlan::new(steps.len(), opts.pairs);
        let splits = (0..=n)
            .into_par_iter()
            .map(|k| split_data(&steps, &generic, &plan, t0, h, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Engine {
            n,
            t0,
            h,
            steps,
            generic,
            plan,
            splits,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.steps.len() as f64 * self.h
    }

    /// Cumulative log growth per frame direction at the end of the horizon.
    pub fn final_logs(&self) -> &[f64] {
        self.generic.log_growth.last().expect("non-empty series")
    }

    /// Number of unstable directions for the system shifted by `gamma`, or
    /// `None` when the frame does not separate them by the gap threshold.
    pub fn split(&self, gamma: f64, gap_fraction: f64) -> Option<usize> {
        let span = self.horizon();
        let shifted: Vec<f64> = self.final_logs().iter().map(|l| l - gamma * span).collect();
        let k = shifted.iter().filter(|&&l| l > 0.0).count();
        if k == 0 || k == self.n {
            return Some(k);
        }
        let ordered = shifted[..k].iter().all(|&l| l > 0.0);
        let gap = shifted[k - 1] - shifted[k];
        (ordered && gap >= gap_fraction * span).then_some(k)
    }

    /// Split data for a user projector of intermediate rank.
    pub fn user_split(&self, p: &Matrix) -> Result<SplitData, DichotomyError> {
        let n = self.n;
        let id = Matrix::identity(n, n);
        let range = column_space(p, 1e-8);
        let kernel = column_space(&(&id - p), 1e-8);
        let k = kernel.ncols();
        if range.ncols() + k != n {
            return Err(DichotomyError::InvalidProjector(
                "range and kernel do not span the state space".into(),
            ));
        }
        let mut joined = Matrix::zeros(n, n);
        joined.columns_mut(0, k).copy_from(&kernel);
        joined.columns_mut(k, n - k).copy_from(&range);
        let q0 = qr_positive(&joined).0;
        let coords = q0.transpose() * &range;
        let b = coords.rows(k, n - k).into_owned();
        let binv = b
            .try_inverse()
            .ok_or_else(|| DichotomyError::InvalidProjector("range meets the kernel".into()))?;
        let x_user = coords.rows(0, k) * binv;

        let series = qr_from_steps(&self.steps, self.t0, self.h, &q0)?;
        let blocks = Blocks::new(&series, k);
        let backward = blocks.backward_graph();
        let scale = x_user.norm().max(backward[0].norm()).max(1.0);
        let xs = if (&x_user - &backward[0]).norm() <= 1e-6 * scale {
            backward
        } else {
            blocks.forward_graph(x_user)
        };
        Ok(SplitData {
            unstable: k,
            projector: p.clone(),
            fit: blocks.pair_logs(&xs, &self.plan.fit, self.h),
            validation: blocks.pair_logs(&xs, &self.plan.validation, self.h),
        })
    }
}

fn split_data(
    steps: &[Matrix],
    generic: &QrGrowthSeries,
    plan: &PairPlan,
    t0: f64,
    h: f64,
    k: usize,
) -> Result<SplitData, DichotomyError> {
    let n = generic.dim();
    let (series, projector) = if k == 0 || k == n {
        let p = if k == 0 {
            Matrix::identity(n, n)
        } else {
            Matrix::zeros(n, n)
        };
        (generic.clone(), p)
    } else {
        // re-run from a frame whose trailing columns span the stable subspace
        // at t0 and whose leading columns span its orthogonal complement
        let x0 = Blocks::new(generic, k).backward_graph().swap_remove(0);
        let mut graph = Matrix::zeros(n, n - k);
        graph.rows_mut(0, k).copy_from(&x0);
        graph.rows_mut(k, n - k).fill_with_identity();
        let stable = column_space(&(&generic.frames[0] * graph), 1e-300);
        if stable.ncols() != n - k || !stable.iter().all(|v| v.is_finite()) {
            return Err(DichotomyError::Singular(
                "stable subspace estimate degenerated".into(),
            ));
        }
        let mut q0 = Matrix::zeros(n, n);
        q0.columns_mut(0, k)
            .copy_from(&orthogonal_complement(&stable));
        q0.columns_mut(k, n - k).copy_from(&stable);
        let series = qr_from_steps(steps, t0, h, &q0)?;
        let x0 = Blocks::new(&series, k).backward_graph().swap_remove(0);
        let mut inner = Matrix::zeros(n, n);
        inner.view_mut((0, k), (k, n - k)).copy_from(&x0);
        inner.view_mut((k, k), (n - k, n - k)).fill_with_identity();
        let q = &series.frames[0];
        (series.clone(), q * inner * q.transpose())
    };
    let blocks = Blocks::new(&series, k);
    let xs = blocks.backward_graph();
    Ok(SplitData {
        unstable: k,
        projector,
        fit: blocks.pair_logs(&xs, &plan.fit, h),
        validation: blocks.pair_logs(&xs, &plan.validation, h),
    })
}

/// Per-step diagonal blocks of the QR factors for a fixed split.
struct Blocks {
    k: usize,
    m: usize,
    r11_inv: Vec<Matrix>,
    r12: Vec<Matrix>,
    r22: Vec<Matrix>,
}

impl Blocks {
    fn new(series: &QrGrowthSeries, k: usize) -> Self {
        let n = series.dim();
        let m = n - k;
        let mut r11_inv = Vec::with_capacity(series.r_factors.len());
        let mut r12 = Vec::with_capacity(series.r_factors.len());
        let mut r22 = Vec::with_capacity(series.r_factors.len());
        for r in &series.r_factors {
            r11_inv.push(upper_triangular_inverse(
                &r.view((0, 0), (k, k)).into_owned(),
            ));
            r12.push(r.view((0, k), (k, m)).into_owned());
            r22.push(r.view((k, k), (m, m)).into_owned());
        }
        Blocks {
            k,
            m,
            r11_inv,
            r12,
            r22,
        }
    }

    /// `X_j` for `j = 0..=N` from `X_N = 0`.
    fn backward_graph(&self) -> Vec<Matrix> {
        let steps = self.r22.len();
        let mut xs = vec![Matrix::zeros(self.k, self.m); steps + 1];
        for j in (0..steps).rev() {
            xs[j] = &self.r11_inv[j] * (&xs[j + 1] * &self.r22[j] - &self.r12[j]);
        }
        xs
    }

    /// `X_{j+1} = (R11 X_j + R12) R22^{-1}` from a given `X_0`; entries that
    /// leave the floating range saturate to infinity.
    fn forward_graph(&self, x0: Matrix) -> Vec<Matrix> {
        let mut xs = Vec::with_capacity(self.r22.len() + 1);
        xs.push(x0);
        for j in 0..self.r22.len() {
            let r11 = upper_triangular_inverse(&self.r11_inv[j]);
            let r22_inv = upper_triangular_inverse(&self.r22[j]);
            let next = (r11 * &xs[j] + &self.r12[j]) * r22_inv;
            let next = if next.iter().all(|v| v.is_finite()) {
                next
            } else {
                Matrix::from_element(self.k, self.m, f64::INFINITY)
            };
            xs.push(next);
        }
        xs
    }

    fn pair_logs(&self, xs: &[Matrix], pairs: &[(usize, usize)], h: f64) -> PairLogs {
        let gaps = pairs.iter().map(|&(i, j)| (j - i) as f64 * h).collect();
        let stable = (self.m > 0).then(|| {
            pairs
                .par_iter()
                .map(|&(i, j)| self.stable_log(xs, i, j))
                .collect()
        });
        let unstable = (self.k > 0).then(|| {
            pairs
                .par_iter()
                .map(|&(i, j)| self.unstable_log(xs, i, j))
                .collect()
        });
        PairLogs {
            gaps,
            stable,
            unstable,
        }
    }

    fn stable_log(&self, xs: &[Matrix], i: usize, j: usize) -> f64 {
        let mut prod = ScaledProduct::new(Matrix::identity(self.m, self.m));
        for q in i..j {
            prod.premultiply(&self.r22[q]);
        }
        let mut graph = Matrix::zeros(self.k + self.m, self.m);
        graph.rows_mut(0, self.k).copy_from(&xs[j]);
        graph.rows_mut(self.k, self.m).fill_with_identity();
        ln_norm_scaled(&(graph * &prod.unit), prod.log_scale)
    }

    fn unstable_log(&self, xs: &[Matrix], i: usize, j: usize) -> f64 {
        let mut prod = ScaledProduct::new(Matrix::identity(self.k, self.k));
        for q in i..j {
            prod.postmultiply(&self.r11_inv[q]);
        }
        let mut cut = Matrix::zeros(self.k, self.k + self.m);
        cut.columns_mut(0, self.k).fill_with_identity();
        cut.columns_mut(self.k, self.m).copy_from(&(-&xs[j]));
        ln_norm_scaled(&(&prod.unit * cut), prod.log_scale)
    }
}

fn ln_norm_scaled(m: &Matrix, log_scale: f64) -> f64 {
    if !m.iter().all(|v| v.is_finite()) || !log_scale.is_finite() {
        return LN_SATURATION;
    }
    let norm = spectral_norm(m);
    if norm == 0.0 {
        return f64::NEG_INFINITY;
    }
    (log_scale + norm.ln()).min(LN_SATURATION)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_pairs_are_ordered_and_in_range() {
        let plan = PairPlan::new(2000, 500);
        assert_eq!(plan.fit.len(), 500);
        assert_eq!(plan.validation.len(), 250);
        for &(i, j) in plan.fit.iter().chain(&plan.validation) {
            assert!(i <= j && j <= 2000);
        }
        assert!(plan.fit.iter().any(|&(i, j)| i == j));
        let long = plan.fit.iter().filter(|&&(i, j)| j - i >= 200).count();
        assert!(long >= 100, "{long}");
        assert!(plan.fit.iter().any(|&(i, j)| j - i >= 1900));
    }

    #[test]
    fn plan_is_deterministic() {
        let a = PairPlan::new(777, 100);
        let b = PairPlan::new(777, 100);
        assert_eq!(a.fit, b.fit);
        assert_ne!(a.fit, a.validation[..].to_vec());
    }
}
