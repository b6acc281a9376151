//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

use super::{IntegrateError, SolverOptions};
use crate::systems::SystemError;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Summary of one integration run.
#[derive(Debug, Clone, Default)]
pub(crate) struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Time at which the state norm exceeded the blow-up guard.
    pub escaped_at: Option<f64>,
    /// Sum of max-norm local error estimates over accepted steps.
    pub error_sum: f64,
}

/// Integrates `y' = f(t, y)` from `t0` to the last entry of `grid`,
/// calling `emit(k, t, y, accumulated_error)` for every grid time (grid must start at `t0` and
/// be non-decreasing). With an escape, integration stops after the first
/// step whose state norm exceeds the guard and `emit` receives that state
/// with index `usize::MAX`.
pub(crate) fn integrate<F, E>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    grid: &[f64],
    opts: &SolverOptions,
    mut emit: E,
) -> Result<RunStats, IntegrateError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SystemError>,
    E: FnMut(usize, f64, &[f64], f64),
{
    let n = y0.len();
    let mut stats = RunStats::default();
    let t_end = *grid
        .last()
        .ok_or_else(|| IntegrateError::InvalidInput("empty output grid".into()))?;
    if grid[0] != t0 || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(IntegrateError::InvalidInput(
            "output grid must start at t0 and be non-decreasing".into(),
        ));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(IntegrateError::InvalidInput(
            "non-finite initial state".into(),
        ));
    }
    let mut next_out = 0;
    while next_out < grid.len() && grid[next_out] == t0 {
        emit(next_out, t0, y0, 0.0);
        next_out += 1;
    }
    if next_out == grid.len() {
        return Ok(stats);
    }

    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut dense: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut yout = vec![0.0; n];

    let mut t = t0;
    f(t, &y, &mut k[0])?;
    let span = t_end - t0;
    let mut h = opts
        .initial_step
        .unwrap_or_else(|| initial_step(&mut f, t, &y, &k[0], opts).unwrap_or(1e-6 * span.max(1.0)))
        .min(span)
        .min(opts.max_step);
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(IntegrateError::MaxSteps { t });
        }
        let min_step = 1e-14 * t.abs().max(1.0);
        if h < min_step {
            return Err(IntegrateError::StepUnderflow { t });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k[0][i];
        }
        f(t + C2 * h, &ytmp, &mut k[1])?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        f(t + C3 * h, &ytmp, &mut k[2])?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        f(t + C4 * h, &ytmp, &mut k[3])?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        f(t + C5 * h, &ytmp, &mut k[4])?;
        for i in 0..n {
            ytmp[i] = y[i]
                + h * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        f(t + h, &ytmp, &mut k[5])?;
        for i in 0..n {
            ynew[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        f(t + h, &ynew, &mut k[6])?;

        let mut sq = 0.0;
        let mut abs_max = 0.0f64;
        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            let sk = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            sq += (err[i] / sk).powi(2);
            abs_max = abs_max.max(err[i].abs());
        }
        let err_norm = (sq / n as f64).sqrt();
        if !err_norm.is_finite() {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac = if err_norm == 0.0 {
            FAC_MAX
        } else {
            (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
        };

        if err_norm <= 1.0 {
            stats.accepted += 1;
            stats.error_sum += abs_max;
            let t_new = if last { t_end } else { t + h };

            if next_out < grid.len() && grid[next_out] <= t_new {
                for i in 0..n {
                    let dy = ynew[i] - y[i];
                    let bspl = h * k[0][i] - dy;
                    dense[0][i] = y[i];
                    dense[1][i] = dy;
                    dense[2][i] = bspl;
                    dense[3][i] = dy - h * k[6][i] - bspl;
                    dense[4][i] = h
                        * (D1 * k[0][i]
                            + D3 * k[2][i]
                            + D4 * k[3][i]
                            + D5 * k[4][i]
                            + D6 * k[5][i]
                            + D7 * k[6][i]);
                }
                while next_out < grid.len() && grid[next_out] <= t_new {
                    let tout = grid[next_out];
                    if tout == t_new {
                        emit(next_out, tout, &ynew, stats.error_sum);
                    } else {
                        let th = (tout - t) / h;
                        let th1 = 1.0 - th;
                        for i in 0..n {
                            yout[i] = dense[0][i]
                                + th * (dense[1][i]
                                    + th1 * (dense[2][i] + th * (dense[3][i] + th1 * dense[4][i])));
                        }
                        emit(next_out, tout, &yout, stats.error_sum);
                    }
                    next_out += 1;
                }
            }

            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            t = t_new;

            if let Some(guard) = opts.blowup_guard {
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > guard || !norm.is_finite() {
                    stats.escaped_at = Some(t);
                    emit(usize::MAX, t, &y, stats.error_sum);
                    return Ok(stats);
                }
            }

            let fac = if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
            h = (h * fac).min(opts.max_step);
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= fac.min(1.0);
        }
    }
    Ok(stats)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &SolverOptions) -> Option<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SystemError>,
{
    let n = y.len() as f64;
    let sk: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sk).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0
        .iter()
        .zip(&sk)
        .map(|(v, s)| (v / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, d)| v + h0 * d).collect();
    let mut f1 = vec![0.0; y.len()];
    f(t + h0, &y1, &mut f1).ok()?;
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Some((100.0 * h0).min(h1))
}
