//! Trajectories, transition matrices and QR-factored growth series.

mod dopri;

use rayon::prelude::*;
use serde::Serialize;

use crate::linalg::{qr_positive, Matrix};
use crate::systems::{LinearSystem, MatrixFunction, NonlinearSystem, SystemError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("QR rank collapse at t = {t} (R[{index}][{index}] = {value:e})")]
    RankCollapse { t: f64, index: usize, value: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    /// Euclidean norm beyond which a trajectory is reported as escaped.
    pub blowup_guard: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 5_000_000,
            max_step: f64::INFINITY,
            initial_step: None,
            blowup_guard: Some(1e12),
        }
    }
}

impl SolverOptions {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    fn without_guard(mut self) -> Self {
        self.blowup_guard = None;
        self
    }
}

/// Right-hand side of an ODE in state form.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SystemError>;
}

impl VectorField for NonlinearSystem {
    fn dim(&self) -> usize {
        NonlinearSystem::dim(self)
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SystemError> {
        self.eval_rhs(t, x, dx)
    }
}

impl VectorField for LinearSystem {
    fn dim(&self) -> usize {
        LinearSystem::dim(self)
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SystemError> {
        let a = self.a.eval(t)?;
        let n = self.dim();
        for i in 0..n {
            dx[i] = (0..n).map(|j| a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
    /// Set when the state norm crossed the blow-up guard; the last sample is
    /// the first state beyond the guard.
    pub escaped: bool,
    pub escape_time: Option<f64>,
    pub accepted_steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&self.x0)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| euclid(s)).collect()
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `count + 1` equally spaced points from `t0` to `t1` inclusive.
pub fn uniform_grid(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    let count = count.max(1);
    let mut g: Vec<f64> = (0..=count)
        .map(|k| t0 + (t1 - t0) * k as f64 / count as f64)
        .collect();
    g[count] = t1;
    g
}

/// Adaptive RK5(4) solution sampled on `grid` (which must start at `t0`).
pub fn solve<F: VectorField + ?Sized>(
    sys: &F,
    x0: &[f64],
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Trajectory, IntegrateError> {
    if x0.len() != sys.dim() {
        return Err(IntegrateError::InvalidInput(format!(
            "initial state has {} components, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    let t0 = *grid
        .first()
        .ok_or_else(|| IntegrateError::InvalidInput("empty grid".into()))?;
    if grid.len() < 2 || !(grid[grid.len() - 1] > t0) {
        return Err(IntegrateError::InvalidInput(
            "final time must exceed t0".into(),
        ));
    }
    if !(opts.rtol > 0.0) || !(opts.atol >= 0.0) {
        return Err(IntegrateError::InvalidInput(
            "tolerances must be positive".into(),
        ));
    }
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let stats = dopri::integrate(
        |t, x, dx| sys.eval(t, x, dx),
        t0,
        x0,
        grid,
        opts,
        |_, t, y, _| {
            times.push(t);
            states.push(y.to_vec());
        },
    )?;
    Ok(Trajectory {
        times,
        states,
        t0,
        x0: x0.to_vec(),
        rtol: opts.rtol,
        atol: opts.atol,
        escaped: stats.escaped_at.is_some(),
        escape_time: stats.escaped_at,
        accepted_steps: stats.accepted,
    })
}

/// Transition matrices `Phi(t_k, t_0)` on an output grid.
#[derive(Debug, Clone)]
pub struct TransitionRecord {
    pub times: Vec<f64>,
    pub matrices: Vec<Matrix>,
    /// Accumulated local error estimates (max-norm) up to each grid time.
    pub error_estimates: Vec<f64>,
}

impl TransitionRecord {
    pub fn last(&self) -> &Matrix {
        self.matrices.last().expect("non-empty record")
    }
}

fn matrix_rhs(
    a: &MatrixFunction,
) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), SystemError> + '_ {
    let n = a.dim();
    let mut buf = Matrix::zeros(n, n);
    move |t, x, dx| {
        a.eval_into(t, &mut buf)?;
        // column-major n x n state
        for j in 0..n {
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += buf[(i, k)] * x[j * n + k];
                }
                dx[j * n + i] = s;
            }
        }
        Ok(())
    }
}

/// Columnwise integration of `X' = A(t) X`, `X(t_0) = I`, sampled on `grid`.
pub fn transition(
    sys: &LinearSystem,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<TransitionRecord, IntegrateError> {
    let t0 = *grid
        .first()
        .ok_or_else(|| IntegrateError::InvalidInput("empty grid".into()))?;
    if grid.len() < 2 || !(grid[grid.len() - 1] > t0) {
        return Err(IntegrateError::InvalidInput("t1 must exceed t0".into()));
    }
    let n = sys.dim();
    let ident = Matrix::identity(n, n);
    let mut times = Vec::with_capacity(grid.len());
    let mut matrices = Vec::with_capacity(grid.len());
    let mut error_estimates = Vec::with_capacity(grid.len());
    dopri::integrate(
        matrix_rhs(&sys.a),
        t0,
        ident.as_slice(),
        grid,
        &opts.without_guard(),
        |k, t, y, err| {
            times.push(t);
            if k == 0 {
                matrices.push(Matrix::identity(n, n));
            } else {
                matrices.push(Matrix::from_column_slice(n, n, y));
            }
            error_estimates.push(err);
        },
    )?;
    Ok(TransitionRecord {
        times,
        matrices,
        error_estimates,
    })
}

/// `Phi(t_{j+1}, t_j)` for `t_j = t0 + j h`, `j = 0..steps`, integrated
/// independently (and in parallel) on each subinterval.
pub fn step_propagators(
    a: &MatrixFunction,
    t0: f64,
    h: f64,
    steps: usize,
    opts: &SolverOptions,
) -> Result<Vec<Matrix>, IntegrateError> {
    if !(h > 0.0) {
        return Err(IntegrateError::InvalidInput("step must be positive".into()));
    }
    let n = a.dim();
    let opts = opts.without_guard();
    if a.is_autonomous() {
        // one propagator serves every subinterval
        let phi = propagate(a, t0, t0 + h, n, &opts)?;
        return Ok(vec![phi; steps]);
    }
    (0..steps)
        .into_par_iter()
        .map(|j| {
            let s = t0 + j as f64 * h;
            propagate(a, s, s + h, n, &opts)
        })
        .collect()
}

fn propagate(
    a: &MatrixFunction,
    s: f64,
    t: f64,
    n: usize,
    opts: &SolverOptions,
) -> Result<Matrix, IntegrateError> {
    let ident = Matrix::identity(n, n);
    let mut out = ident.clone();
    dopri::integrate(
        matrix_rhs(a),
        s,
        ident.as_slice(),
        &[s, t],
        opts,
        |k, _, y, _| {
            if k == 1 {
                out = Matrix::from_column_slice(n, n, y);
            }
        },
    )?;
    Ok(out)
}

/// Discrete-QR growth data: `Z_{k+1} = Phi(t_{k+1}, t_k) Q_k = Q_{k+1} R_{k+1}`.
#[derive(Debug, Clone)]
pub struct QrGrowthSeries {
    pub times: Vec<f64>,
    /// `log_growth[k][i] = sum_{j <= k} ln (R_j)_{ii}`, zero at `k = 0`.
    pub log_growth: Vec<Vec<f64>>,
    pub frames: Vec<Matrix>,
    /// `r_factors[k]` is `R_{k+1}` (the factor of step `k -> k+1`).
    pub r_factors: Vec<Matrix>,
}

impl QrGrowthSeries {
    pub fn dim(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Average growth rate per direction over the whole grid.
    pub fn mean_rates(&self) -> Vec<f64> {
        let span = self.times[self.times.len() - 1] - self.times[0];
        self.log_growth
            .last()
            .expect("non-empty series")
            .iter()
            .map(|l| l / span)
            .collect()
    }
}

/// Runs the discrete QR iteration over precomputed step propagators.
pub fn qr_from_steps(
    steps: &[Matrix],
    t0: f64,
    h: f64,
    q0: &Matrix,
) -> Result<QrGrowthSeries, IntegrateError> {
    let n = q0.nrows();
    let mut times = Vec::with_capacity(steps.len() + 1);
    let mut log_growth = Vec::with_capacity(steps.len() + 1);
    let mut frames = Vec::with_capacity(steps.len() + 1);
    let mut r_factors = Vec::with_capacity(steps.len());
    times.push(t0);
    log_growth.push(vec![0.0; n]);
    frames.push(q0.clone());
    let mut q = q0.clone();
    let mut acc = vec![0.0; n];
    for (k, phi) in steps.iter().enumerate() {
        let t = t0 + (k + 1) as f64 * h;
        let (qn, r) = qr_positive(&(phi * &q));
        for i in 0..n {
            let d = r[(i, i)];
            if !(d > 1e-300) || !d.is_finite() {
                return Err(IntegrateError::RankCollapse {
                    t,
                    index: i,
                    value: d,
                });
            }
            acc[i] += d.ln();
        }
        times.push(t);
        log_growth.push(acc.clone());
        frames.push(qn.clone());
        r_factors.push(r);
        q = qn;
    }
    Ok(QrGrowthSeries {
        times,
        log_growth,
        frames,
        r_factors,
    })
}

/// Discrete QR propagation on the uniform grid `t0, t0 + h, ..., t0 + steps h`.
/// `q0` defaults to the identity.
pub fn qr_evolve(
    sys: &LinearSystem,
    t0: f64,
    h: f64,
    steps: usize,
    q0: Option<&Matrix>,
    opts: &SolverOptions,
) -> Result<QrGrowthSeries, IntegrateError> {
    let n = sys.dim();
    let ident = Matrix::identity(n, n);
    let q0 = q0.unwrap_or(&ident);
    let props = step_propagators(&sys.a, t0, h, steps, opts)?;
    qr_from_steps(&props, t0, h, q0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, Params, System};
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> LinearSystem {
        LinearSystem::constant("diag", Matrix::from_diagonal(&DVector::from_row_slice(v)))
    }

    fn my1960() -> LinearSystem {
        builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone()
    }

    #[test]
    fn exponential_decay() {
        let sys = builtin("scalar_decay", &Params::new()).unwrap();
        let tr = solve(
            sys.as_linear().unwrap(),
            &[1.0],
            &uniform_grid(0.0, 1.0, 10),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(tr.states[0], vec![1.0]);
        assert!(!tr.escaped);
    }

    #[test]
    fn my1960_grows_like_the_closed_form() {
        let t_end = 4.0 * std::f64::consts::PI;
        let tr = solve(
            &my1960(),
            &[1.0, 0.0],
            &uniform_grid(0.0, t_end, 100),
            &SolverOptions::default(),
        )
        .unwrap();
        let norm = euclid(tr.final_state());
        assert!(norm >= 0.9 * (2.0 * std::f64::consts::PI).exp());
        // closed form x(t) = e^{t/2} (cos t, -sin t)
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let e = (0.5 * t).exp();
            assert!((x[0] - e * t.cos()).abs() < 1e-7 * e.max(1.0));
            assert!((x[1] + e * t.sin()).abs() < 1e-7 * e.max(1.0));
        }
    }

    #[test]
    fn blowup_is_flagged() {
        let sys = builtin("scalar_decay", &[("lambda".to_string(), 2.0)].into()).unwrap();
        let tr = solve(
            sys.as_linear().unwrap(),
            &[1.0],
            &uniform_grid(0.0, 100.0, 100),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(tr.escaped);
        let te = tr.escape_time.unwrap();
        assert!(te > 12.0 && te < 15.0, "{te}");
        assert!(euclid(tr.final_state()) > 1e12);
    }

    #[test]
    fn cg_field_third_component() {
        let sys = builtin("cg_field", &Params::new()).unwrap();
        let f = sys.as_nonlinear().unwrap();
        let tr = solve(
            f,
            &[2.0, -1.0, 1.5],
            &uniform_grid(0.0, 5.0, 50),
            &SolverOptions::default(),
        )
        .unwrap();
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert!((x[2] - 1.5 * (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn diagonal_transition() {
        let rec = transition(&diag(&[-1.0, -2.0]), &[0.0, 1.0], &SolverOptions::default()).unwrap();
        let phi = rec.last();
        assert!((phi[(0, 0)] - (-1f64).exp()).abs() < 1e-8);
        assert!((phi[(1, 1)] - (-2f64).exp()).abs() < 1e-8);
        assert_eq!(rec.matrices[0], Matrix::identity(2, 2));
    }

    #[test]
    fn my1960_transition_matches_closed_form() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let rec = transition(
            &my1960(),
            &uniform_grid(0.0, two_pi, 8),
            &SolverOptions::default(),
        )
        .unwrap();
        let exact = match builtin("my1960_exact_fundamental", &Params::new()).unwrap() {
            System::Fundamental { phi, .. } => phi,
            _ => unreachable!(),
        };
        for (t, m) in rec.times.iter().zip(&rec.matrices) {
            let e = exact.eval(*t).unwrap();
            let scale = e.amax();
            assert!((m - &e).amax() <= 1e-6 * scale, "t={t}");
        }
        let end = rec.last();
        let pi = std::f64::consts::PI;
        assert!((end[(0, 0)] - pi.exp()).abs() < 1e-6 * pi.exp());
        assert!(end[(0, 1)].abs() < 1e-6 * pi.exp());
        assert!((end[(1, 1)] - (-2.0 * pi).exp()).abs() < 1e-6);
    }

    #[test]
    fn qr_of_diagonal_system() {
        let sys = diag(&[-1.0, -2.0]);
        let s = qr_evolve(&sys, 0.0, 0.05, 1000, None, &SolverOptions::default()).unwrap();
        let r = s.mean_rates();
        assert!((r[0] + 1.0).abs() < 1e-6 && (r[1] + 2.0).abs() < 1e-6);
        assert_eq!(s.log_growth[0], vec![0.0, 0.0]);
    }

    #[test]
    fn qr_of_my1960_matches_closed_form_rates() {
        let s = qr_evolve(&my1960(), 0.0, 0.05, 2000, None, &SolverOptions::default()).unwrap();
        let r = s.mean_rates();
        assert!((r[0] - 0.5).abs() < 2e-2, "{r:?}");
        assert!((r[1] + 1.0).abs() < 2e-2, "{r:?}");
        for q in &s.frames {
            assert!((q.transpose() * q - Matrix::identity(2, 2)).amax() <= 1e-10);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let sys = diag(&[-1.0]);
        assert!(solve(&sys, &[1.0, 2.0], &[0.0, 1.0], &SolverOptions::default()).is_err());
        assert!(solve(&sys, &[1.0], &[0.0, 0.0], &SolverOptions::default()).is_err());
        assert!(transition(&sys, &[1.0, 0.5], &SolverOptions::default()).is_err());
    }
}
