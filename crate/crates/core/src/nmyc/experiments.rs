use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    check_hypotheses, verify_uas, HypothesisConfig, HypothesisReport, NmycError, StabilityReport,
    UasConfig, UasVerdict,
};
use crate::dichotomy::{
    DichotomyAnalysis, DichotomyCertificate, DichotomyError, DichotomyOptions, Verdict,
};
use crate::integrate::{solve, uniform_grid, SolverOptions};
use crate::linalg::{spectral_norm, Matrix};
use crate::spectrum::{
    check_vanishing_perturbation, hausdorff, sacker_sell, SpectrumEstimate, SpectrumOptions,
};
use crate::systems::{
    builtin, reduce_cg, sample_paths, LinearSystem, NonlinearSystem, Params, PathKind, PathSample,
    Polynomial, SystemError,
};

#[derive(Debug, Clone, Serialize)]
pub struct ScalarConfig {
    pub hypotheses: HypothesisConfig,
    pub uas: UasConfig,
    /// Initial states for the reduction cross-check (started at `t = 0`).
    pub reduction_x0: Vec<f64>,
    pub reduction_horizon: f64,
    pub reduction_step: f64,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        ScalarConfig {
            hypotheses: HypothesisConfig::default(),
            uas: UasConfig::for_dim(1, 1.0),
            reduction_x0: vec![1.0, 0.5, -0.75],
            reduction_horizon: 15.0,
            reduction_step: 0.025,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionCheck {
    pub x0: f64,
    /// Largest `|x0 exp(int g2(tau, theta*)) - x(t)| / |x(t)|` over the grid.
    pub max_rel_error: f64,
    /// Largest number of mean-value roots found at one probe time.
    pub max_roots: usize,
    /// Probe times where `g2(t, .)` is numerically constant on `(0, x)`, so
    /// every point is a mean-value point; `theta = 0` is used there.
    pub flat_probes: usize,
    /// `-(1/T) int_0^T g2(tau, theta*) dtau`.
    pub mean_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarTheoremReport {
    pub system: String,
    pub hypotheses: HypothesisReport,
    pub theta_paths: usize,
    pub hypotheses_satisfied: bool,
    pub uas: Option<StabilityReport>,
    pub reduction: Vec<ReductionCheck>,
    pub reduction_pass: bool,
    /// Slowest time-average decay rate among the reduction checks.
    pub oracle_rate: Option<f64>,
    pub status: String,
    /// `None` when the hypotheses fail and no claim is made.
    pub pass: Option<bool>,
}

/// `theta_t = u x(t)` for one uniform `u in (0, 1)` per solution path.
fn theta_paths(paths: &[PathSample], seed: u64) -> Vec<PathSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7468_6574_6100);
    paths
        .iter()
        .filter(|p| p.kind == PathKind::SolutionPath && !p.is_escaped())
        .filter_map(|p| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            match &p.data {
                crate::systems::PathData::Knots { times, values } => {
                    let scaled = values
                        .iter()
                        .map(|v| v.iter().map(|x| u * x).collect())
                        .collect();
                    let mut out = PathSample::knots(0, times.clone(), scaled);
                    out.note = Some(format!("theta path: {u:.6} x path {}", p.id));
                    Some(out)
                }
                _ => None,
            }
        })
        .collect()
}

/// Roots of `h` on `[lo, hi]`: exact zeros of a 64-point scan, then
/// bisection on each sign change. `None` when `h` vanishes on the whole scan.
fn roots(
    h: impl Fn(f64) -> Result<f64, SystemError>,
    lo: f64,
    hi: f64,
    scale: f64,
) -> Result<Option<Vec<f64>>, SystemError> {
    const SCAN: usize = 64;
    let xs: Vec<f64> = (0..=SCAN)
        .map(|k| lo + (hi - lo) * k as f64 / SCAN as f64)
        .collect();
    let hs = xs.iter().map(|&x| h(x)).collect::<Result<Vec<_>, _>>()?;
    let range = hs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if range <= 1e-13 * scale.max(1.0) {
        return Ok(None);
    }
    let zero = 1e-12 * range;
    let mut out = Vec::new();
    for k in 0..=SCAN {
        if hs[k].abs() <= zero {
            out.push(xs[k]);
            continue;
        }
        if k < SCAN && hs[k + 1].abs() > zero && hs[k].signum() != hs[k + 1].signum() {
            let (mut a, mut b, mut ha) = (xs[k], xs[k + 1], hs[k]);
            while (b - a).abs() > 1e-10 {
                let m = 0.5 * (a + b);
                let hm = h(m)?;
                if hm.signum() == ha.signum() {
                    a = m;
                    ha = hm;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    Ok(Some(out))
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let m = values.len() - 1;
    debug_assert!(m.is_multiple_of(2));
    let inner: f64 = (1..m)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * values[i])
        .sum();
    h / 3.0 * (values[0] + inner + values[m])
}

fn reduction_check(
    sys: &NonlinearSystem,
    x0: f64,
    cfg: &ScalarConfig,
    solver: &SolverOptions,
) -> Result<ReductionCheck, NmycError> {
    let steps = 2
        * ((cfg.reduction_horizon / cfg.reduction_step / 2.0)
            .round()
            .max(1.0) as usize);
    let grid = uniform_grid(0.0, cfg.reduction_horizon, steps);
    let h = cfg.reduction_horizon / steps as f64;
    let solver = SolverOptions {
        rtol: solver.rtol.min(1e-11),
        atol: 1e-18 * x0.abs(),
        ..*solver
    };
    let tr = solve(sys, &[x0], &grid, &solver)?;
    if tr.escaped {
        return Err(NmycError::Config(format!(
            "reduction trajectory from {x0} escaped"
        )));
    }
    let mut integrand = Vec::with_capacity(grid.len());
    let mut max_roots = 0;
    let mut flat_probes = 0;
    let mut out = [0.0];
    for (&t, x) in grid.iter().zip(&tr.states) {
        let x = x[0];
        sys.eval_rhs(t, &[x], &mut out)?;
        let slope = out[0] / x;
        let found = roots(
            |theta| Ok(sys.eval_jacobian(t, &[theta])?[(0, 0)] - slope),
            0.0,
            x,
            slope.abs(),
        )?;
        let Some(found) = found else {
            flat_probes += 1;
            integrand.push(sys.eval_jacobian(t, &[0.0])?[(0, 0)]);
            continue;
        };
        max_roots = max_roots.max(found.len());
        let theta = found
            .iter()
            .copied()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .ok_or_else(|| {
                NmycError::Config(format!("no mean-value point at t = {t} for x = {x}"))
            })?;
        integrand.push(sys.eval_jacobian(t, &[theta])?[(0, 0)]);
    }
    let mut max_rel_error = 0.0f64;
    for k in (2..grid.len()).step_by(2) {
        let predicted = x0 * simpson(&integrand[..=k], h).exp();
        let actual = tr.states[k][0];
        max_rel_error = max_rel_error.max((predicted - actual).abs() / actual.abs());
    }
    let total = simpson(&integrand, h);
    Ok(ReductionCheck {
        x0,
        max_rel_error,
        max_roots,
        flat_probes,
        mean_rate: -total / cfg.reduction_horizon,
    })
}

/// Scalar case: hypotheses along solution and theta paths, then uniform
/// asymptotic stability and the linear reduction `x(t) = x0 exp(int g2)`.
pub fn scalar_theorem_experiment(
    sys: &NonlinearSystem,
    cfg: &ScalarConfig,
) -> Result<ScalarTheoremReport, NmycError> {
    if sys.dim() != 1 {
        return Err(NmycError::Config(format!(
            "scalar experiment needs a 1-dimensional system, got {}",
            sys.dim()
        )));
    }
    let base = sample_paths(sys, &cfg.hypotheses.sampling())?;
    let thetas = theta_paths(&base, cfg.hypotheses.seed);
    let theta_count = thetas.len();
    let hcfg = HypothesisConfig {
        extra_paths: thetas,
        ..cfg.hypotheses.clone()
    };
    let hypotheses = check_hypotheses(sys, &hcfg)?;
    let satisfied = hypotheses.all_pass();
    let mut report = ScalarTheoremReport {
        system: sys.label.clone(),
        hypotheses,
        theta_paths: theta_count,
        hypotheses_satisfied: satisfied,
        uas: None,
        reduction: Vec::new(),
        reduction_pass: false,
        oracle_rate: None,
        status: "hypotheses not satisfied".into(),
        pass: None,
    };
    if !satisfied {
        return Ok(report);
    }
    let uas = verify_uas(sys, &cfg.uas)?;
    let solver = cfg.uas.solver;
    report.reduction = cfg
        .reduction_x0
        .par_iter()
        .map(|&x0| reduction_check(sys, x0, cfg, &solver))
        .collect::<Result<Vec<_>, _>>()?;
    report.reduction_pass = report.reduction.iter().all(|r| r.max_rel_error <= 1e-6);
    report.oracle_rate = report
        .reduction
        .iter()
        .map(|r| r.mean_rate)
        .min_by(f64::total_cmp);
    let ok = uas.verdict == UasVerdict::Pass && report.reduction_pass;
    report.status = if ok {
        "uniformly asymptotically stable"
    } else {
        "stability check failed"
    }
    .into();
    report.pass = Some(ok);
    report.uas = Some(uas);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationConfig {
    /// Known `(K, alpha)` for the linear part; fitted when absent.
    pub constants: Option<(f64, f64)>,
    pub paths: usize,
    pub seed: u64,
    pub path_horizon: f64,
    /// Dense grid box `[-r, r]^n`.
    pub box_radius: f64,
    pub grid_times: usize,
    pub grid_per_axis: usize,
    pub rate_slack: f64,
    #[serde(skip)]
    pub dichotomy: DichotomyOptions,
    pub uas: UasConfig,
}

impl PerturbationConfig {
    pub fn for_dim(n: usize) -> Self {
        PerturbationConfig {
            constants: None,
            paths: 20,
            seed: 0,
            path_horizon: 30.0,
            box_radius: 1.0,
            grid_times: 101,
            grid_per_axis: if n <= 2 { 11 } else { 7 },
            rate_slack: 0.05,
            dichotomy: DichotomyOptions::default(),
            uas: UasConfig::for_dim(n, 1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub system: String,
    pub linear: String,
    pub perturbation: Vec<String>,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub constants: &'static str,
    pub certificate: DichotomyCertificate,
    /// `alpha / (4 K^2)`.
    pub bound: f64,
    pub path_sup: f64,
    pub grid_sup: f64,
    pub hypothesis_holds: bool,
    /// `alpha (1 - 1/(4K))`.
    pub expected_rate: f64,
    pub rate_floor: f64,
    pub uas: Option<StabilityReport>,
    pub status: String,
    pub pass: Option<bool>,
}

fn grid_jacobian_sup(f: &NonlinearSystem, cfg: &PerturbationConfig) -> Result<f64, NmycError> {
    let n = f.dim();
    let p = cfg.grid_per_axis.max(2);
    let axis: Vec<f64> = (0..p)
        .map(|k| -cfg.box_radius + 2.0 * cfg.box_radius * k as f64 / (p - 1) as f64)
        .collect();
    let times = uniform_grid(0.0, cfg.path_horizon, cfg.grid_times.max(2) - 1);
    let total = p.pow(n as u32);
    let sups = times
        .par_iter()
        .map(|&t| -> Result<f64, NmycError> {
            let mut best = 0.0f64;
            for code in 0..total {
                let mut c = code;
                let x: Vec<f64> = (0..n)
                    .map(|_| {
                        let v = axis[c % p];
                        c /= p;
                        v
                    })
                    .collect();
                best = best.max(spectral_norm(&f.eval_jacobian(t, &x)?));
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sups.into_iter().fold(0.0, f64::max))
}

/// Checks `sup ||Jf|| < alpha / (4 K^2)` on sampled paths and a dense grid,
/// then fits the decay rate of `x' = A(t) x + f(t, x)`.
pub fn perturbation_theorem_experiment(
    linear: &LinearSystem,
    f: &NonlinearSystem,
    cfg: &PerturbationConfig,
) -> Result<PerturbationReport, NmycError> {
    let n = linear.dim();
    if f.dim() != n {
        return Err(NmycError::Config(format!(
            "perturbation has dimension {}, linear part {n}",
            f.dim()
        )));
    }
    let analysis = DichotomyAnalysis::new(linear, &cfg.dichotomy)?;
    let certificate = analysis.certify_projector(&Matrix::identity(n, n), 0.0)?;
    if certificate.verdict != Verdict::Certified {
        return Err(DichotomyError::NotCertified(certificate.verdict).into());
    }
    let ((k, alpha), source) = match cfg.constants {
        Some(c) => (c, "supplied"),
        None => ((certificate.k, certificate.alpha), "fitted"),
    };
    let lin_rhs = NonlinearSystem::from_linear(linear)?;
    let texts: Vec<String> = lin_rhs
        .rhs()
        .iter()
        .zip(f.rhs())
        .map(|(a, b)| format!("{a} + {b}"))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let full = NonlinearSystem::parse(format!("{} + {}", linear.label, f.label), &refs)?;

    let sampling = crate::systems::PathSamplingOptions {
        horizon: cfg.path_horizon,
        count: cfg.paths,
        seed: cfg.seed,
        lo: -cfg.box_radius,
        hi: cfg.box_radius,
        ..Default::default()
    };
    let paths = sample_paths(&full, &sampling)?;
    let path_sup = paths
        .par_iter()
        .filter(|p| !p.is_escaped())
        .map(|p| super::jacobian_sup(f, p, cfg.path_horizon).map(|s| s.0))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let grid_sup = grid_jacobian_sup(f, cfg)?;
    let bound = alpha / (4.0 * k * k);
    let holds = path_sup < bound && grid_sup < bound;
    let expected_rate = alpha * (1.0 - 1.0 / (4.0 * k));
    let mut report = PerturbationReport {
        system: full.label.clone(),
        linear: linear.label.clone(),
        perturbation: f.rhs().iter().map(ToString::to_string).collect(),
        k,
        alpha,
        constants: source,
        certificate,
        bound,
        path_sup,
        grid_sup,
        hypothesis_holds: holds,
        expected_rate,
        rate_floor: expected_rate - cfg.rate_slack,
        uas: None,
        status: "hypothesis violated: sup ||Jf|| >= alpha/(4K^2); no claim".into(),
        pass: None,
    };
    if !holds {
        return Ok(report);
    }
    let uas = verify_uas(&full, &cfg.uas)?;
    let ok = uas.verdict == UasVerdict::Pass && uas.alpha_hat >= report.rate_floor;
    report.status = if ok {
        "decay rate at or above the predicted rate".into()
    } else {
        format!(
            "fitted rate {:.4} below floor {:.4}",
            uas.alpha_hat, report.rate_floor
        )
    };
    report.pass = Some(ok);
    report.uas = Some(uas);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CgConfig {
    pub lambda: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub g: Vec<f64>,
    pub z0: Vec<f64>,
    /// Samples per axis of the `(x, y)` grid.
    pub xy_per_axis: usize,
    pub box_radius: f64,
    pub tol: f64,
    pub spectrum_tol: f64,
    #[serde(skip)]
    pub spectrum: SpectrumOptions,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            lambda: -1.0,
            a: vec![1.0],
            b: vec![1.0],
            g: vec![0.0, 1.0],
            z0: vec![0.0, 1.0, -1.0, 5.0, -5.0],
            xy_per_axis: 5,
            box_radius: 10.0,
            tol: 1e-6,
            spectrum_tol: 0.05,
            spectrum: SpectrumOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CgCase {
    pub z0: f64,
    pub spectrum: SpectrumEstimate,
    pub spectrum_distance: f64,
    pub spectrum_pass: bool,
    pub dichotomy: DichotomyCertificate,
    pub dichotomy_pass: bool,
    pub vanishing_distance: f64,
    pub vanishing_pass: bool,
    pub trajectories: usize,
    /// Largest `|x(T)| / max(1, |x0|)`.
    pub worst_final_ratio: f64,
    pub trajectories_pass: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CgReport {
    pub lambda: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub g: Vec<f64>,
    /// `40 / |lambda|`.
    pub final_time: f64,
    pub box_radius: f64,
    pub expected_spectrum: Vec<[f64; 2]>,
    pub cases: Vec<CgCase>,
    pub pass: bool,
}

fn cg_case(
    cfg: &CgConfig,
    field: &NonlinearSystem,
    z0: f64,
    final_time: f64,
) -> Result<CgCase, NmycError> {
    let lambda = cfg.lambda;
    let scalar = LinearSystem::constant("lambda I", Matrix::identity(2, 2) * lambda);
    let (c, c0) = if z0 == 0.0 {
        (
            scalar.clone(),
            LinearSystem::constant("zero", Matrix::zeros(2, 2)),
        )
    } else {
        let red = reduce_cg(
            lambda,
            &Polynomial(cfg.a.clone()),
            &Polynomial(cfg.b.clone()),
            &Polynomial(cfg.g.clone()),
            z0,
        )?;
        (red.system, red.perturbation)
    };
    let expected = [[lambda, lambda]];
    let spectrum = sacker_sell(&c, &cfg.spectrum)?;
    let spectrum_distance = hausdorff(&spectrum.intervals, &expected);
    let dichotomy = DichotomyAnalysis::new(&c, &cfg.spectrum.dichotomy())?.has_dichotomy(0.0);
    let dichotomy_pass = dichotomy.verdict == Verdict::Certified && dichotomy.rank == 2;
    let vanishing = check_vanishing_perturbation(&scalar, &c0, &cfg.spectrum)?;

    let p = cfg.xy_per_axis.max(2);
    let axis: Vec<f64> = (0..p)
        .map(|k| -cfg.box_radius + 2.0 * cfg.box_radius * k as f64 / (p - 1) as f64)
        .collect();
    let starts: Vec<[f64; 3]> = axis
        .iter()
        .flat_map(|&x| axis.iter().map(move |&y| [x, y, z0]))
        .collect();
    let ratios = starts
        .par_iter()
        .map(|x0| -> Result<f64, NmycError> {
            let tr = solve(field, x0, &[0.0, final_time], &cfg.solver)?;
            if tr.escaped {
                return Ok(f64::INFINITY);
            }
            let n0 = crate::integrate::euclid(x0);
            Ok(crate::integrate::euclid(tr.final_state()) / n0.max(1.0))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let spectrum_pass = spectrum_distance <= cfg.spectrum_tol;
    let trajectories_pass = worst <= cfg.tol;
    Ok(CgCase {
        z0,
        spectrum,
        spectrum_distance,
        spectrum_pass,
        dichotomy,
        dichotomy_pass,
        vanishing_distance: vanishing.law.distance,
        vanishing_pass: vanishing.law.pass,
        trajectories: starts.len(),
        worst_final_ratio: worst,
        trajectories_pass,
        pass: spectrum_pass && dichotomy_pass && vanishing.law.pass && trajectories_pass,
    })
}

/// Global attraction of the three-dimensional field built from `(lambda, a, b, g)`.
pub fn cg_attractor_experiment(cfg: &CgConfig) -> Result<CgReport, NmycError> {
    let mut params = Params::new();
    params.insert("lambda".into(), cfg.lambda);
    for (name, coeffs) in [("a", &cfg.a), ("b", &cfg.b), ("g", &cfg.g)] {
        for (k, c) in coeffs.iter().enumerate() {
            params.insert(format!("{name}{k}"), *c);
        }
    }
    let field = builtin("cg_field", &params)?
        .as_nonlinear()
        .cloned()
        .ok_or_else(|| NmycError::Config("cg_field is not a vector field".into()))?;
    let final_time = 40.0 / cfg.lambda.abs();
    let cases = cfg
        .z0
        .iter()
        .map(|&z0| cg_case(cfg, &field, z0, final_time))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CgReport {
        lambda: cfg.lambda,
        a: cfg.a.clone(),
        b: cfg.b.clone(),
        g: cfg.g.clone(),
        final_time,
        box_radius: cfg.box_radius,
        expected_spectrum: vec![[cfg.lambda, cfg.lambda]],
        pass: cases.iter().all(|c| c.pass),
        cases,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub probes: usize,
    pub expected_real_part: f64,
    pub max_real_part_deviation: f64,
    pub eigenvalues_pass: bool,
    pub spectrum: SpectrumEstimate,
    pub expected_spectrum: Vec<[f64; 2]>,
    pub spectrum_distance: f64,
    pub spectrum_pass: bool,
    pub growth_time: f64,
    pub growth_norm: f64,
    /// `0.9 e^{2 pi}`.
    pub growth_threshold: f64,
    pub growth_pass: bool,
    pub uas: StabilityReport,
    pub uas_fails: bool,
    pub pass: bool,
}

/// Pointwise Hurwitz matrices with an unstable solution.
pub fn my1960_counterexample(
    spectrum: &SpectrumOptions,
) -> Result<CounterexampleReport, NmycError> {
    let sys = builtin("my1960", &Params::new())?
        .as_linear()
        .cloned()
        .ok_or_else(|| NmycError::Config("my1960 is not linear".into()))?;
    let probes = 100;
    let mut deviation = 0.0f64;
    for k in 0..probes {
        let t = 0.3 * k as f64 + 0.01;
        let ev = sys.a.eval(t)?.complex_eigenvalues();
        for e in ev.iter() {
            deviation = deviation.max((e.re + 0.25).abs());
        }
    }
    let est = sacker_sell(&sys, spectrum)?;
    let expected = vec![[-1.0, -1.0], [0.5, 0.5]];
    let distance = hausdorff(&est.intervals, &expected);
    let growth_time = 4.0 * std::f64::consts::PI;
    let tr = solve(
        &sys,
        &[1.0, 0.0],
        &[0.0, growth_time],
        &SolverOptions::default(),
    )?;
    let growth_norm = crate::integrate::euclid(tr.final_state());
    let growth_threshold = 0.9 * (2.0 * std::f64::consts::PI).exp();
    let nl = NonlinearSystem::from_linear(&sys)?;
    let uas_cfg = UasConfig {
        x0_grid: vec![vec![1.0, 0.0], vec![1e-6, 0.0]],
        t0_grid: vec![0.0],
        ..UasConfig::for_dim(2, 1.0)
    };
    let uas = verify_uas(&nl, &uas_cfg)?;
    let eigenvalues_pass = deviation <= 1e-9;
    let spectrum_pass = distance <= 0.05;
    let growth_pass = growth_norm >= growth_threshold;
    let uas_fails = uas.verdict == UasVerdict::Fail;
    Ok(CounterexampleReport {
        probes,
        expected_real_part: -0.25,
        max_real_part_deviation: deviation,
        eigenvalues_pass,
        spectrum: est,
        expected_spectrum: expected,
        spectrum_distance: distance,
        spectrum_pass,
        growth_time,
        growth_norm,
        growth_threshold,
        growth_pass,
        uas,
        uas_fails,
        pass: eigenvalues_pass && spectrum_pass && growth_pass && uas_fails,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangularPathCheck {
    pub path: usize,
    pub kind: PathKind,
    pub full: Vec<[f64; 2]>,
    pub blocks: Vec<Vec<[f64; 2]>>,
    pub distance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangularReport {
    pub system: String,
    pub block_sizes: Vec<usize>,
    pub paths: Vec<TriangularPathCheck>,
    pub excluded: usize,
    pub max_distance: f64,
    pub union_pass: bool,
    pub uas: StabilityReport,
    pub pass: bool,
}

/// Block-triangular field: along each sampled path the spectrum of the
/// linearization must equal the union of the diagonal-block spectra, and the
/// origin must pass the stability fit.
pub fn triangular_experiment(
    sys: &NonlinearSystem,
    block_sizes: Option<&[usize]>,
    hypotheses: &HypothesisConfig,
    uas: &UasConfig,
) -> Result<TriangularReport, NmycError> {
    let paths = sample_paths(sys, &hypotheses.sampling())?;
    let excluded = paths.iter().filter(|p| p.is_escaped()).count();
    let opts = hypotheses.spectrum_options();
    let checks = paths
        .par_iter()
        .filter(|p| !p.is_escaped())
        .map(|p| -> Result<TriangularPathCheck, NmycError> {
            let lin = crate::systems::linearize_along(sys, p)?;
            let r = crate::spectrum::check_triangular_union(&lin, block_sizes, &opts)?;
            Ok(TriangularPathCheck {
                path: p.id,
                kind: p.kind,
                full: r.full.intervals,
                blocks: r.blocks.into_iter().map(|b| b.intervals).collect(),
                distance: r.law.distance,
                pass: r.law.pass,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let max_distance = checks.iter().map(|c| c.distance).fold(0.0, f64::max);
    let union_pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    let uas = verify_uas(sys, uas)?;
    let pass = union_pass && uas.verdict == UasVerdict::Pass && uas.alpha_hat > 0.0;
    Ok(TriangularReport {
        system: sys.label.clone(),
        block_sizes: block_sizes.map_or_else(|| vec![1; sys.dim()], <[usize]>::to_vec),
        paths: checks,
        excluded,
        max_distance,
        union_pass,
        uas,
        pass,
    })
}

/// `sin(x)` componentwise scaled by `c`, the smooth perturbation used with `A = -I`.
pub fn scaled_sine(n: usize, c: f64) -> Result<NonlinearSystem, SystemError> {
    let rows: Vec<String> = (1..=n)
        .map(|i| format!("{}*sin(x{i})", crate::systems::num(c)))
        .collect();
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    NonlinearSystem::parse(format!("{c} sin(x)"), &refs)
}

/// `A = -I` in dimension `n`.
pub fn minus_identity(n: usize) -> LinearSystem {
    LinearSystem::constant("-I", -Matrix::from_diagonal(&DVector::from_element(n, 1.0)))
}
