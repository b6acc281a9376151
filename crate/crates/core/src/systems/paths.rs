//! Finite families of state paths `t -> y(t)` standing in for "every
//! measurable path" when checking Jacobian hypotheses.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use super::{LinearSystem, MatrixFunction, NonlinearSystem, SystemError};
use crate::expr::Expression;
use crate::integrate::{solve, uniform_grid, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    SolutionPath,
    PiecewiseConstantRandom,
    ExpressionPath,
}

#[derive(Debug, Clone)]
pub enum PathData {
    /// Linear interpolation between knots, constant outside.
    Knots {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// `values[k]` holds on `[times[k], times[k+1])`; the last value holds
    /// to infinity.
    Steps {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// One expression per component in the variable `t`.
    Expressions(Vec<Expression>),
}

#[derive(Debug, Clone)]
pub struct PathSample {
    pub id: usize,
    pub kind: PathKind,
    pub seed: Option<u64>,
    pub data: PathData,
    /// Free-form remark, e.g. where a solution path escaped.
    pub note: Option<String>,
}

impl PathSample {
    pub fn dim(&self) -> usize {
        match &self.data {
            PathData::Knots { values, .. } | PathData::Steps { values, .. } => values[0].len(),
            PathData::Expressions(e) => e.len(),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match &self.data {
            PathData::Knots { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    values[0].clone()
                } else if t >= times[last] {
                    values[last].clone()
                } else {
                    let k = times.partition_point(|&x| x <= t) - 1;
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    values[k]
                        .iter()
                        .zip(&values[k + 1])
                        .map(|(a, b)| a + w * (b - a))
                        .collect()
                }
            }
            PathData::Steps { times, values } => {
                let k = times.partition_point(|&x| x <= t).max(1) - 1;
                values[k].clone()
            }
            PathData::Expressions(e) => {
                e.iter().map(|c| c.eval(&[t]).unwrap_or(f64::NAN)).collect()
            }
        }
    }

    /// Largest absolute coordinate over the stored samples.
    pub fn max_abs(&self) -> Option<f64> {
        match &self.data {
            PathData::Knots { values, .. } | PathData::Steps { values, .. } => Some(
                values
                    .iter()
                    .flat_map(|v| v.iter())
                    .fold(0.0f64, |m, x| m.max(x.abs())),
            ),
            PathData::Expressions(_) => None,
        }
    }

    /// Times worth probing: knots or switch times.
    pub fn probe_times(&self) -> Vec<f64> {
        match &self.data {
            PathData::Knots { times, .. } | PathData::Steps { times, .. } => times.clone(),
            PathData::Expressions(_) => Vec::new(),
        }
    }

    pub fn is_escaped(&self) -> bool {
        self.note
            .as_deref()
            .is_some_and(|n| n.starts_with("escaped"))
    }

    pub fn knots(id: usize, times: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        PathSample {
            id,
            kind: PathKind::SolutionPath,
            seed: None,
            data: PathData::Knots { times, values },
            note: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathSamplingOptions {
    pub horizon: f64,
    pub count: usize,
    pub seed: u64,
    /// Coordinate box `[lo, hi]^n` for initial conditions and random values.
    pub lo: f64,
    pub hi: f64,
    pub include_solutions: bool,
    pub include_random: bool,
    pub expression_paths: Vec<Vec<Expression>>,
    /// Sampling step for solution paths.
    pub sample_step: f64,
    pub solver: SolverOptions,
}

impl Default for PathSamplingOptions {
    fn default() -> Self {
        PathSamplingOptions {
            horizon: 100.0,
            count: 20,
            seed: 0,
            lo: -1.0,
            hi: 1.0,
            include_solutions: true,
            include_random: true,
            expression_paths: Vec::new(),
            sample_step: 0.05,
            solver: SolverOptions::default(),
        }
    }
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn halton(index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic initial conditions: the box centre first, then a Halton
/// sequence over the box.
pub(crate) fn initial_conditions(dim: usize, count: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    if k == 0 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * halton(k as u64, PRIMES[d % PRIMES.len()])
                    }
                })
                .collect()
        })
        .collect()
}

fn path_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the path family: solution paths from a grid of initial
/// conditions, piecewise-constant random paths with unit-mean exponential
/// holding times, then any user expression paths.
pub fn sample_paths(
    sys: &NonlinearSystem,
    opts: &PathSamplingOptions,
) -> Result<Vec<PathSample>, SystemError> {
    let n = sys.dim();
    let m = opts.count.max(1);
    let (n_sol, n_rand) = match (opts.include_solutions, opts.include_random) {
        (true, true) => (m.div_ceil(2), m / 2),
        (true, false) => (m, 0),
        (false, true) => (0, m),
        (false, false) => (0, 0),
    };
    let mut paths = Vec::with_capacity(n_sol + n_rand + opts.expression_paths.len());

    let steps = (opts.horizon / opts.sample_step).round().max(1.0) as usize;
    let grid = uniform_grid(0.0, opts.horizon, steps);
    for x0 in initial_conditions(n, n_sol, opts.lo, opts.hi) {
        let id = paths.len();
        let traj = solve(sys, &x0, &grid, &opts.solver).map_err(|e| match e {
            crate::integrate::IntegrateError::System(s) => s,
            other => SystemError::InvalidSamples(format!("solution path from {x0:?}: {other}")),
        })?;
        let mut path = PathSample::knots(id, traj.times.clone(), traj.states.clone());
        if traj.escaped {
            // keep the time grid strictly increasing after the escape sample
            path.note = Some(format!(
                "escaped at t = {}",
                traj.escape_time.unwrap_or(f64::NAN)
            ));
        }
        if let PathData::Knots { times, values } = &mut path.data {
            dedup_knots(times, values);
        }
        paths.push(path);
    }

    let exp = Exp::new(1.0).expect("unit rate");
    for r in 0..n_rand {
        let id = paths.len();
        let seed = path_seed(opts.seed, r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut times = vec![0.0];
        let mut values = vec![(0..n)
            .map(|_| rng.gen_range(opts.lo..=opts.hi))
            .collect::<Vec<f64>>()];
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= opts.horizon {
                break;
            }
            times.push(t);
            values.push((0..n).map(|_| rng.gen_range(opts.lo..=opts.hi)).collect());
        }
        paths.push(PathSample {
            id,
            kind: PathKind::PiecewiseConstantRandom,
            seed: Some(seed),
            data: PathData::Steps { times, values },
            note: None,
        });
    }

    for exprs in &opts.expression_paths {
        if exprs.len() != n {
            return Err(SystemError::Dimension(format!(
                "expression path has {} components, system has {n}",
                exprs.len()
            )));
        }
        let exprs = exprs
            .iter()
            .map(|e| {
                e.rebind(&super::time_env())
                    .map_err(|name| SystemError::InvalidParameter {
                        name,
                        reason: "path expressions may only depend on t".into(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        paths.push(PathSample {
            id: paths.len(),
            kind: PathKind::ExpressionPath,
            seed: None,
            data: PathData::Expressions(exprs),
            note: None,
        });
    }
    Ok(paths)
}

fn dedup_knots(times: &mut Vec<f64>, values: &mut Vec<Vec<f64>>) {
    let mut k = 1;
    while k < times.len() {
        if times[k] <= times[k - 1] {
            times.remove(k);
            values.remove(k);
        } else {
            k += 1;
        }
    }
}

/// `t -> Jg(t, y(t))`. Knot-based paths yield a sampled matrix function on
/// the path's own grid; other paths are composed lazily.
pub fn linearize_along(
    sys: &NonlinearSystem,
    path: &PathSample,
) -> Result<LinearSystem, SystemError> {
    let n = sys.dim();
    if path.dim() != n {
        return Err(SystemError::Dimension(format!(
            "path has {} components, system has {n}",
            path.dim()
        )));
    }
    let label = format!("{} along path {}", sys.label, path.id);
    let a = match &path.data {
        PathData::Knots { times, values } => {
            let mats = times
                .iter()
                .zip(values)
                .map(|(&t, y)| sys.eval_jacobian(t, y))
                .collect::<Result<Vec<_>, _>>()?;
            if times.len() == 1 {
                MatrixFunction::constant(mats[0].clone())
            } else {
                MatrixFunction::sampled(times.clone(), mats)?
            }
        }
        _ => {
            for t in path.probe_times() {
                sys.eval_jacobian(t, &path.eval(t))?;
            }
            MatrixFunction::path_jacobian(n, sys.jacobian().clone(), Arc::new(path.clone()))
        }
    };
    Ok(LinearSystem::new(label, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, Params};

    fn scalar(text: &str) -> NonlinearSystem {
        NonlinearSystem::parse("s", &[text]).unwrap()
    }

    #[test]
    fn linearization_at_zero_path() {
        let sys = scalar("-x1 + 0.1*sin(x1)");
        let path = PathSample::knots(0, vec![0.0, 10.0], vec![vec![0.0], vec![0.0]]);
        let lin = linearize_along(&sys, &path).unwrap();
        for t in [0.0, 3.0, 10.0] {
            assert!((lin.a.eval(t).unwrap()[(0, 0)] + 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_system_linearizes_to_itself() {
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let nl = NonlinearSystem::from_linear(&my).unwrap();
        let opts = PathSamplingOptions {
            horizon: 5.0,
            count: 4,
            ..Default::default()
        };
        for path in sample_paths(&nl, &opts).unwrap() {
            let lin = linearize_along(&nl, &path).unwrap();
            let probes = match path.kind {
                PathKind::SolutionPath => path.probe_times(),
                _ => vec![0.0, 0.37, 2.0, 4.9],
            };
            for t in probes {
                assert!((lin.a.eval(t).unwrap() - my.a.eval(t).unwrap()).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn triangular_linearization_stays_triangular() {
        let sys = builtin("triangular_demo", &Params::new())
            .unwrap()
            .as_nonlinear()
            .unwrap()
            .clone();
        let opts = PathSamplingOptions {
            horizon: 10.0,
            count: 6,
            ..Default::default()
        };
        for path in sample_paths(&sys, &opts).unwrap() {
            let lin = linearize_along(&sys, &path).unwrap();
            let probes: Vec<f64> = (0..40).map(|k| 0.25 * k as f64).collect();
            assert!(lin.is_upper_triangular(&probes).unwrap());
        }
    }

    #[test]
    fn zero_initial_condition_gives_zero_path() {
        let sys = builtin("triangular_demo", &Params::new())
            .unwrap()
            .as_nonlinear()
            .unwrap()
            .clone();
        let opts = PathSamplingOptions {
            horizon: 5.0,
            count: 1,
            include_random: false,
            ..Default::default()
        };
        let paths = sample_paths(&sys, &opts).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].max_abs(), Some(0.0));
    }

    #[test]
    fn random_paths_are_reproducible_and_boxed() {
        let sys = scalar("-x1");
        let opts = PathSamplingOptions {
            horizon: 30.0,
            count: 50,
            lo: -2.0,
            hi: 2.0,
            include_solutions: false,
            seed: 7,
            ..Default::default()
        };
        let a = sample_paths(&sys, &opts).unwrap();
        let b = sample_paths(&sys, &opts).unwrap();
        assert_eq!(a.len(), 50);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.probe_times(), q.probe_times());
            assert!(p.max_abs().unwrap() <= 2.0);
        }
        let other = sample_paths(&sys, &PathSamplingOptions { seed: 8, ..opts }).unwrap();
        assert_ne!(a[0].probe_times(), other[0].probe_times());
    }

    #[test]
    fn step_paths_hold_values() {
        let p = PathSample {
            id: 0,
            kind: PathKind::PiecewiseConstantRandom,
            seed: None,
            data: PathData::Steps {
                times: vec![0.0, 1.0],
                values: vec![vec![1.0], vec![2.0]],
            },
            note: None,
        };
        assert_eq!(p.eval(0.5), vec![1.0]);
        assert_eq!(p.eval(1.0), vec![2.0]);
        assert_eq!(p.eval(50.0), vec![2.0]);
    }

    #[test]
    fn jacobian_domain_error_reports_time() {
        let sys = scalar("ln(x1)");
        let path = PathSample::knots(0, vec![0.0, 1.0], vec![vec![1.0], vec![0.0]]);
        match linearize_along(&sys, &path) {
            Err(SystemError::Eval { t, .. }) => assert_eq!(t, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
