//! Verification harness for the nonautonomous Markus-Yamabe statements:
//! hypothesis checks (G1)-(G4) along sampled paths and an empirical uniform
//! asymptotic stability test.

mod experiments;

pub use experiments::{
    cg_attractor_experiment, minus_identity, my1960_counterexample,
    perturbation_theorem_experiment, scalar_theorem_experiment, scaled_sine, triangular_experiment,
    CgCase, CgConfig, CgReport, CounterexampleReport, PerturbationConfig, PerturbationReport,
    ReductionCheck, ScalarConfig, ScalarTheoremReport, TriangularPathCheck, TriangularReport,
};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::integrate::{solve, uniform_grid, IntegrateError, SolverOptions};
use crate::linalg::spectral_norm;
use crate::spectrum::{sacker_sell, SpectrumError, SpectrumEstimate, SpectrumOptions};
use crate::systems::{
    linearize_along, sample_paths, NonlinearSystem, PathKind, PathSample, PathSamplingOptions,
    SystemError,
};

#[derive(Debug, Error)]
pub enum NmycError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Dichotomy(#[from] crate::dichotomy::DichotomyError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisConfig {
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Paths start in, and random paths take values in, `[-r, r]^n`.
    pub box_radius: f64,
    /// Spectral intervals must end at or below `-margin`.
    pub margin: f64,
    pub g2_times: usize,
    /// Approximate number of state samples per time in the (G2) grid.
    pub g2_points: usize,
    #[serde(skip)]
    pub spectrum: SpectrumOptions,
    /// Additional paths checked alongside the sampled family.
    #[serde(skip)]
    pub extra_paths: Vec<PathSample>,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig {
            paths: 20,
            seed: 0,
            horizon: 100.0,
            box_radius: 1.0,
            margin: 0.05,
            g2_times: 11,
            g2_points: 401,
            spectrum: SpectrumOptions::default(),
            extra_paths: Vec::new(),
        }
    }
}

impl HypothesisConfig {
    pub(crate) fn sampling(&self) -> PathSamplingOptions {
        PathSamplingOptions {
            horizon: self.horizon,
            count: self.paths,
            seed: self.seed,
            lo: -self.box_radius,
            hi: self.box_radius,
            ..PathSamplingOptions::default()
        }
    }

    pub(crate) fn spectrum_options(&self) -> SpectrumOptions {
        SpectrumOptions {
            horizon: self.horizon,
            window: self.spectrum.window.min(self.horizon / 5.0),
            ..self.spectrum.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct G2Report {
    pub pass: bool,
    pub samples: usize,
    /// `(t, x, |g(t,x)|)` of the first violation.
    pub witness: Option<(f64, Vec<f64>, f64)>,
    pub note: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct G3Report {
    pub sup_norm: f64,
    pub finite: bool,
    /// Path id and time of the largest Jacobian norm.
    pub at: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct G4Entry {
    pub path: usize,
    pub kind: PathKind,
    pub seed: Option<u64>,
    pub spectrum: SpectrumEstimate,
    pub negative: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcludedPath {
    pub path: usize,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub system: String,
    pub g1: &'static str,
    pub g2: G2Report,
    pub g3: G3Report,
    pub g4: Vec<G4Entry>,
    /// Every checked path has a spectrum ending at or below `-margin`.
    pub g4_negative: bool,
    pub paths_used: usize,
    pub excluded: Vec<ExcludedPath>,
    pub config: HypothesisConfig,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.g2.pass && self.g3.finite && self.g4_negative
    }
}

fn g2_check(sys: &NonlinearSystem, cfg: &HypothesisConfig) -> Result<G2Report, NmycError> {
    let n = sys.dim();
    let per_axis = ((cfg.g2_points as f64).powf(1.0 / n as f64).round() as usize).max(3) | 1;
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| -cfg.box_radius + 2.0 * cfg.box_radius * k as f64 / (per_axis - 1) as f64)
        .collect();
    let times: Vec<f64> = (0..cfg.g2_times.max(1))
        .map(|k| cfg.horizon * k as f64 / (cfg.g2_times.max(2) - 1) as f64)
        .collect();
    let mut out = vec![0.0; n];
    let mut samples = 0;
    let mut idx = vec![0usize; n];
    for &t in &times {
        sys.eval_rhs(t, &vec![0.0; n], &mut out)?;
        samples += 1;
        let at_zero = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if at_zero > 1e-12 {
            return Ok(G2Report {
                pass: false,
                samples,
                witness: Some((t, vec![0.0; n], at_zero)),
                note: "g(t, 0) must vanish",
            });
        }
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            if x.iter().any(|v| *v != 0.0) {
                sys.eval_rhs(t, &x, &mut out)?;
                samples += 1;
                let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Ok(G2Report {
                        pass: false,
                        samples,
                        witness: Some((t, x, norm)),
                        note: "g(t, x) must not vanish for x != 0",
                    });
                }
            }
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
    }
    Ok(G2Report {
        pass: true,
        samples,
        witness: None,
        note: "sampled on a grid; not a proof",
    })
}

fn jacobian_sup(
    sys: &NonlinearSystem,
    path: &PathSample,
    horizon: f64,
) -> Result<(f64, f64), NmycError> {
    let mut times: Vec<f64> = (0..=400).map(|k| horizon * k as f64 / 400.0).collect();
    times.extend(path.probe_times().into_iter().filter(|&t| t <= horizon));
    let mut best = (0.0f64, 0.0);
    for t in times {
        let norm = spectral_norm(&sys.eval_jacobian(t, &path.eval(t))?);
        if !(norm <= best.0) {
            best = (norm, t);
        }
    }
    Ok(best)
}

/// Checks (G2) on a grid, bounds `||Jg||` along sampled paths (G3) and
/// estimates the spectrum of the linearization along each path (G4).
pub fn check_hypotheses(
    sys: &NonlinearSystem,
    cfg: &HypothesisConfig,
) -> Result<HypothesisReport, NmycError> {
    if cfg.paths == 0 && cfg.extra_paths.is_empty() {
        return Err(NmycError::Config("at least one path is required".into()));
    }
    let g2 = g2_check(sys, cfg)?;
    let mut paths = sample_paths(sys, &cfg.sampling())?;
    for extra in &cfg.extra_paths {
        let mut p = extra.clone();
        p.id = paths.len();
        paths.push(p);
    }
    let (escaped, used): (Vec<PathSample>, Vec<PathSample>) =
        paths.into_iter().partition(PathSample::is_escaped);
    let excluded = escaped
        .into_iter()
        .map(|p| ExcludedPath {
            path: p.id,
            note: p.note.unwrap_or_default(),
        })
        .collect();

    let spec_opts = cfg.spectrum_options();
    let results = used
        .par_iter()
        .map(|path| -> Result<_, NmycError> {
            let sup = jacobian_sup(sys, path, cfg.horizon)?;
            let lin = linearize_along(sys, path)?;
            let spectrum = sacker_sell(&lin, &spec_opts)?;
            let negative = !spectrum.intervals.is_empty()
                && spectrum.intervals.iter().all(|iv| iv[1] <= -cfg.margin);
            Ok((
                sup,
                G4Entry {
                    path: path.id,
                    kind: path.kind,
                    seed: path.seed,
                    spectrum,
                    negative,
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut g3 = G3Report {
        sup_norm: 0.0,
        finite: true,
        at: None,
    };
    let mut g4 = Vec::with_capacity(results.len());
    for ((norm, t), entry) in results {
        if !(norm <= g3.sup_norm) {
            g3.sup_norm = norm;
            g3.at = Some((entry.path, t));
        }
        g4.push(entry);
    }
    g3.finite = g3.sup_norm.is_finite();
    let g4_negative = !g4.is_empty() && g4.iter().all(|e| e.negative);
    Ok(HypothesisReport {
        system: sys.label.clone(),
        g1: "assumed: g is C1 by construction (symbolic Jacobian)",
        g2,
        g3,
        paths_used: g4.len(),
        g4,
        g4_negative,
        excluded,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UasConfig {
    pub x0_grid: Vec<Vec<f64>>,
    pub t0_grid: Vec<f64>,
    pub horizon: f64,
    /// Largest accepted ratio against the fitted envelope.
    pub tol: f64,
    pub sample_step: f64,
    /// Samples with `|x(t)| < noise_floor |x0|` are ignored.
    pub noise_floor: f64,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl UasConfig {
    /// Halton points in `[-r, r]^n` and 16 values of `t0` spaced 0.8 apart.
    pub fn for_dim(n: usize, radius: f64) -> Self {
        let x0_grid = crate::systems::initial_conditions(n, 17, -radius, radius)
            .into_iter()
            .skip(1)
            .collect();
        UasConfig {
            x0_grid,
            t0_grid: (0..16).map(|k| 0.8 * k as f64).collect(),
            horizon: 15.0,
            tol: 1.05,
            sample_step: 0.05,
            noise_floor: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UasVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct UasWitness {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub t: f64,
    /// `|x(t)| / |x0|`.
    pub growth: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub system: String,
    pub x0_grid: Vec<Vec<f64>>,
    pub t0_grid: Vec<f64>,
    pub horizon: f64,
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub alpha_hat: f64,
    /// Largest `|x(t)| / (K e^{-alpha (t - t0)} |x0|)` over all samples.
    pub worst_ratio: f64,
    /// Same ratio restricted to the `t0` values not used for the fit.
    pub held_out_ratio: Option<f64>,
    /// Radius of the tested initial-condition set.
    pub radius: f64,
    pub verdict: UasVerdict,
    pub witness: Option<UasWitness>,
}

struct Run {
    t0: f64,
    x0: Vec<f64>,
    fit: bool,
    /// `ln(|x(t0 + tau_j)| / |x0|)`.
    log_ratio: Vec<f64>,
    escaped: Option<f64>,
}

/// Integrates every `(t0, x0)` pair, fits `|x(t)| <= K e^{-alpha (t - t0)} |x0|`
/// to the pooled envelope of the first half of the `t0` grid and checks it on
/// all samples.
pub fn verify_uas(sys: &NonlinearSystem, cfg: &UasConfig) -> Result<StabilityReport, NmycError> {
    if cfg.x0_grid.is_empty() || cfg.t0_grid.is_empty() {
        return Err(NmycError::Config(
            "x0 and t0 grids must be non-empty".into(),
        ));
    }
    if let Some(bad) = cfg.x0_grid.iter().find(|x| x.len() != sys.dim()) {
        return Err(NmycError::Config(format!(
            "initial condition {bad:?} has the wrong dimension"
        )));
    }
    let steps = (cfg.horizon / cfg.sample_step).round().max(2.0) as usize;
    let tau: Vec<f64> = uniform_grid(0.0, cfg.horizon, steps);
    let split = cfg.t0_grid.len() > 1;
    let half = cfg.t0_grid.len().div_ceil(2);
    let jobs: Vec<(usize, &Vec<f64>)> = (0..cfg.t0_grid.len())
        .flat_map(|i| cfg.x0_grid.iter().map(move |x| (i, x)))
        .filter(|(_, x)| x.iter().any(|v| *v != 0.0))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, x0)| -> Result<Run, NmycError> {
            let t0 = cfg.t0_grid[i];
            let grid: Vec<f64> = tau.iter().map(|s| t0 + s).collect();
            let tr = solve(sys, x0, &grid, &cfg.solver)?;
            let n0 = crate::integrate::euclid(x0);
            let log_ratio = tr
                .states
                .iter()
                .map(|x| (crate::integrate::euclid(x) / n0).ln())
                .collect();
            Ok(Run {
                t0,
                x0: x0.clone(),
                fit: !split || i < half,
                log_ratio,
                escaped: tr.escape_time,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let radius = cfg
        .x0_grid
        .iter()
        .map(|x| crate::integrate::euclid(x))
        .fold(0.0, f64::max);
    let mut report = StabilityReport {
        system: sys.label.clone(),
        x0_grid: cfg.x0_grid.clone(),
        t0_grid: cfg.t0_grid.clone(),
        horizon: cfg.horizon,
        k_hat: f64::NAN,
        alpha_hat: f64::NAN,
        worst_ratio: f64::NAN,
        held_out_ratio: None,
        radius,
        verdict: UasVerdict::Fail,
        witness: None,
    };
    if runs.is_empty() {
        return Err(NmycError::Config("all initial conditions are zero".into()));
    }
    if let Some(r) = runs.iter().find(|r| r.escaped.is_some()) {
        let t = r.escaped.unwrap_or(f64::NAN);
        report.witness = Some(UasWitness {
            t0: r.t0,
            x0: r.x0.clone(),
            t,
            growth: r.log_ratio.last().map_or(f64::INFINITY, |v| v.exp()),
            reason: format!("solution escaped at t = {t}"),
        });
        return Ok(report);
    }

    let floor = cfg.noise_floor.ln();
    let envelope: Vec<(f64, f64)> = tau
        .iter()
        .enumerate()
        .filter_map(|(j, &s)| {
            let e = runs
                .iter()
                .filter(|r| r.fit)
                .filter_map(|r| r.log_ratio.get(j).copied())
                .filter(|v| *v >= floor)
                .fold(f64::NEG_INFINITY, f64::max);
            e.is_finite().then_some((s, e))
        })
        .collect();
    let alpha = -least_squares_slope(&envelope).unwrap_or(f64::NAN);
    let ln_k = envelope
        .iter()
        .map(|(s, e)| e + alpha * s)
        .fold(0.0f64, f64::max);
    report.alpha_hat = alpha;
    report.k_hat = ln_k.exp();

    let mut worst = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut held_out = f64::NEG_INFINITY;
    for (ri, r) in runs.iter().enumerate() {
        for (j, (&v, &s)) in r.log_ratio.iter().zip(&tau).enumerate() {
            if v < floor {
                continue;
            }
            let excess = v + alpha * s - ln_k;
            if excess > worst.0 {
                worst = (excess, ri, j);
            }
            if !r.fit {
                held_out = held_out.max(excess);
            }
        }
    }
    report.worst_ratio = worst.0.exp();
    report.held_out_ratio = split.then_some(held_out.exp());
    let pass = alpha > 0.0 && report.worst_ratio <= cfg.tol;
    report.verdict = if pass {
        UasVerdict::Pass
    } else {
        UasVerdict::Fail
    };
    if !pass {
        let (r, j, reason) = if alpha > 0.0 {
            let r = &runs[worst.1];
            (
                r,
                worst.2,
                format!("envelope exceeded by a factor {:.4}", report.worst_ratio),
            )
        } else {
            // the run that grew the most
            let (ri, j) = runs
                .iter()
                .enumerate()
                .flat_map(|(ri, r)| {
                    r.log_ratio
                        .iter()
                        .enumerate()
                        .map(move |(j, v)| (ri, j, *v))
                })
                .max_by(|a, b| a.2.total_cmp(&b.2))
                .map(|(ri, j, _)| (ri, j))
                .unwrap_or((0, 0));
            (&runs[ri], j, format!("no decay: fitted alpha = {alpha:.4}"))
        };
        report.witness = Some(UasWitness {
            t0: r.t0,
            x0: r.x0.clone(),
            t: r.t0 + tau[j],
            growth: r.log_ratio[j].exp(),
            reason,
        });
    }
    Ok(report)
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, Params};

    fn quick() -> HypothesisConfig {
        HypothesisConfig {
            paths: 4,
            horizon: 50.0,
            ..HypothesisConfig::default()
        }
    }

    #[test]
    fn oscillating_scalar_hypotheses() {
        let sys = NonlinearSystem::parse("osc", &["(-1 + 0.25*sin(t))*x1"]).unwrap();
        let r = check_hypotheses(&sys, &quick()).unwrap();
        assert!(r.g2.pass && r.g3.finite && r.g4_negative);
        for e in &r.g4 {
            for iv in &e.spectrum.intervals {
                assert!(iv[0] >= -1.25 && iv[1] <= -0.70, "{iv:?}");
            }
        }
        assert!((r.g3.sup_norm - 1.25).abs() < 0.01);
    }

    #[test]
    fn my1960_fails_g4() {
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let sys = NonlinearSystem::from_linear(&my).unwrap();
        let r = check_hypotheses(&sys, &quick()).unwrap();
        assert!(r.g2.pass);
        assert!(!r.g4_negative);
        assert!(r.g4.iter().all(|e| e.spectrum.contains(0.5)
            || e.spectrum
                .intervals
                .iter()
                .any(|iv| (iv[1] - 0.5).abs() < 0.05)));
    }

    #[test]
    fn triangular_demo_satisfies_g2() {
        let sys = builtin("triangular_demo", &Params::new())
            .unwrap()
            .as_nonlinear()
            .unwrap()
            .clone();
        let r = g2_check(&sys, &quick()).unwrap();
        assert!(r.pass && r.samples > 100);
    }

    #[test]
    fn g2_detects_violations() {
        let offset = NonlinearSystem::parse("offset", &["-x1 + 0.1"]).unwrap();
        assert!(!g2_check(&offset, &quick()).unwrap().pass);
        let flat = NonlinearSystem::parse("flat", &["-x1*(x1 - 0.5)^2"]).unwrap();
        let r = g2_check(&flat, &quick()).unwrap();
        assert!(!r.pass);
        assert_eq!(r.witness.unwrap().1, vec![0.5]);
    }

    #[test]
    fn uas_of_linear_decay() {
        let sys = NonlinearSystem::parse("decay", &["-x1"]).unwrap();
        let r = verify_uas(&sys, &UasConfig::for_dim(1, 1.0)).unwrap();
        assert_eq!(r.verdict, UasVerdict::Pass);
        assert!((r.alpha_hat - 1.0).abs() < 1e-3, "{}", r.alpha_hat);
        assert!((r.k_hat - 1.0).abs() < 1e-3);
        assert!(r.held_out_ratio.unwrap() <= 1.1);
    }

    #[test]
    fn uas_fails_for_my1960() {
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let sys = NonlinearSystem::from_linear(&my).unwrap();
        for eps in [1e-6, 1e-2, 1.0] {
            let cfg = UasConfig {
                x0_grid: vec![vec![eps, 0.0]],
                t0_grid: vec![0.0],
                ..UasConfig::for_dim(2, 1.0)
            };
            let r = verify_uas(&sys, &cfg).unwrap();
            assert_eq!(r.verdict, UasVerdict::Fail);
            let w = r.witness.unwrap();
            assert!(w.growth > 100.0, "{}", w.growth);
        }
    }

    #[test]
    fn uas_of_triangular_demo() {
        let sys = builtin("triangular_demo", &Params::new())
            .unwrap()
            .as_nonlinear()
            .unwrap()
            .clone();
        let r = verify_uas(&sys, &UasConfig::for_dim(2, 1.0)).unwrap();
        assert_eq!(r.verdict, UasVerdict::Pass, "{r:?}");
        assert!(r.alpha_hat > 0.0);
        assert!(r.held_out_ratio.unwrap() <= 1.1);
    }

    #[test]
    fn escape_is_a_failure() {
        let sys = NonlinearSystem::parse("blowup", &["x1^2"]).unwrap();
        let cfg = UasConfig {
            x0_grid: vec![vec![1.0]],
            t0_grid: vec![0.0],
            ..UasConfig::for_dim(1, 1.0)
        };
        let r = verify_uas(&sys, &cfg).unwrap();
        assert_eq!(r.verdict, UasVerdict::Fail);
        assert!(r.witness.unwrap().reason.contains("escaped"));
    }

    #[test]
    fn rejects_empty_grids() {
        let sys = NonlinearSystem::parse("decay", &["-x1"]).unwrap();
        let cfg = UasConfig {
            t0_grid: vec![],
            ..UasConfig::for_dim(1, 1.0)
        };
        assert!(matches!(verify_uas(&sys, &cfg), Err(NmycError::Config(_))));
    }
}
