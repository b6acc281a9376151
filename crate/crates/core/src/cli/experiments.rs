use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{resolve_system, CliError, Format, Outcome, RunConfig, SystemArgs};
use crate::cases::{random_perturbation, random_scalar, random_vanishing_pair};
use crate::nmyc::{
    cg_attractor_experiment, minus_identity, my1960_counterexample,
    perturbation_theorem_experiment, scalar_theorem_experiment, scaled_sine, triangular_experiment,
    CgConfig, PerturbationConfig, ScalarConfig, UasConfig,
};
use crate::spectrum::{check_shift_law, check_vanishing_perturbation};
use crate::systems::{builtin, polynomial_param, NonlinearSystem, Params, PathKind, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    Scalar,
    Triangular,
    Perturbation,
    CgAttractor,
    My1960Counterexample,
    VanishingPerturbation,
    ShiftLaw,
}

impl ExperimentName {
    fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Scalar => "scalar",
            ExperimentName::Triangular => "triangular",
            ExperimentName::Perturbation => "perturbation",
            ExperimentName::CgAttractor => "cg-attractor",
            ExperimentName::My1960Counterexample => "my1960-counterexample",
            ExperimentName::VanishingPerturbation => "vanishing-perturbation",
            ExperimentName::ShiftLaw => "shift-law",
        }
    }
}

/// One expected-versus-measured line.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    /// Where the expected value comes from.
    pub reference: String,
    pub measured: String,
    pub pass: bool,
}

impl Check {
    fn new(
        name: impl Into<String>,
        expected: impl Into<String>,
        reference: &str,
        measured: impl Into<String>,
        pass: bool,
    ) -> Self {
        Check {
            name: name.into(),
            expected: expected.into(),
            reference: reference.into(),
            measured: measured.into(),
            pass,
        }
    }

    fn line(&self) -> String {
        format!(
            "{} {}: expected {} ({}); measured {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.expected,
            self.reference,
            self.measured
        )
    }
}

fn intervals(iv: &[[f64; 2]]) -> String {
    super::fmt_intervals(iv)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn finish(
    name: ExperimentName,
    system: Option<String>,
    checks: Vec<Check>,
    report: Value,
) -> Outcome {
    let pass = checks.iter().all(|c| c.pass);
    let mut text: Vec<String> = vec![format!("experiment {}", name.as_str())];
    text.extend(checks.iter().map(Check::line));
    text.push(format!(
        "{} checks, {} failed",
        checks.len(),
        checks.iter().filter(|c| !c.pass).count()
    ));
    Outcome {
        command: "experiment",
        system,
        result: json!({"experiment": name.as_str(), "checks": checks, "report": report}),
        csv: None,
        text,
        default_format: Format::Text,
        pass: Some(pass),
    }
}

fn nonlinear(sys: System) -> Result<NonlinearSystem, CliError> {
    super::as_nonlinear(&sys)
}

pub(super) fn run(
    name: ExperimentName,
    cfg: &RunConfig,
    sys: &SystemArgs,
    cases: Option<usize>,
) -> Result<Outcome, CliError> {
    match name {
        ExperimentName::Scalar => scalar(cfg, sys, cases),
        ExperimentName::Triangular => triangular(cfg, sys),
        ExperimentName::Perturbation => perturbation(cfg, sys, cases),
        ExperimentName::CgAttractor => cg(cfg, sys),
        ExperimentName::My1960Counterexample => counterexample(cfg),
        ExperimentName::VanishingPerturbation => vanishing(cfg, cases),
        ExperimentName::ShiftLaw => shift_law(cfg, sys),
    }
}

fn scalar(cfg: &RunConfig, sys: &SystemArgs, cases: Option<usize>) -> Result<Outcome, CliError> {
    let scfg = ScalarConfig {
        hypotheses: cfg.hypotheses(),
        uas: UasConfig {
            solver: cfg.solver(),
            ..UasConfig::for_dim(1, 1.0)
        },
        ..ScalarConfig::default()
    };
    // (system, expected to satisfy the hypotheses)
    let mut systems: Vec<(NonlinearSystem, Option<bool>)> = Vec::new();
    match resolve_system(sys)? {
        Some(s) => systems.push((nonlinear(s)?, None)),
        None => {
            for (label, rhs, ok) in [
                ("-x(1 + 0.5 cos t)", "-x1*(1 + 0.5*cos(t))", true),
                ("-x^3 - x", "-x1^3 - x1", true),
                ("x", "x1", false),
            ] {
                systems.push((NonlinearSystem::parse(label, &[rhs])?, Some(ok)));
            }
            for k in 0..cases.unwrap_or(0) {
                systems.push((
                    random_scalar(cfg.seed.wrapping_add(k as u64))?.0,
                    Some(true),
                ));
            }
        }
    }
    let reports = systems
        .par_iter()
        .map(|(s, _)| scalar_theorem_experiment(s, &scfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks = Vec::new();
    for ((s, expected), r) in systems.iter().zip(&reports) {
        let measured = if r.hypotheses_satisfied {
            "satisfied"
        } else {
            "not satisfied"
        };
        if let Some(exp) = expected {
            checks.push(Check::new(
                format!("{} hypotheses", s.label),
                if *exp { "satisfied" } else { "not satisfied" },
                "sign of the linearized spectrum",
                measured,
                r.hypotheses_satisfied == *exp,
            ));
        }
        if let (Some(uas), Some(oracle)) = (&r.uas, r.oracle_rate) {
            checks.push(Check::new(
                format!("{} stability", s.label),
                format!("pass with alpha within 0.1 of {oracle:.4}"),
                "time-average rate of x0 exp(int g2) along recovered theta paths",
                format!(
                    "{:?}, alpha = {:.4}, K = {:.4}",
                    uas.verdict, uas.alpha_hat, uas.k_hat
                ),
                r.pass == Some(true) && (uas.alpha_hat - oracle).abs() <= 0.1,
            ));
            let worst = r
                .reduction
                .iter()
                .map(|c| c.max_rel_error)
                .fold(0.0, f64::max);
            checks.push(Check::new(
                format!("{} reduction", s.label),
                "relative error <= 1e-6",
                "solution equals x0 exp(int g2(tau, theta*))",
                format!("{worst:.3e}"),
                r.reduction_pass,
            ));
        } else if expected.is_none() {
            checks.push(Check::new(
                format!("{} status", s.label),
                "a report",
                "evidence only",
                r.status.clone(),
                true,
            ));
        }
    }
    let label = (systems.len() == 1).then(|| systems[0].0.label.clone());
    Ok(finish(
        ExperimentName::Scalar,
        label,
        checks,
        to_value(&reports),
    ))
}

fn triangular(cfg: &RunConfig, sys: &SystemArgs) -> Result<Outcome, CliError> {
    let field = match resolve_system(sys)? {
        Some(s) => nonlinear(s)?,
        None => nonlinear(builtin("triangular_demo", &Params::new())?)?,
    };
    let uas = UasConfig {
        solver: cfg.solver(),
        ..UasConfig::for_dim(field.dim(), 1.0)
    };
    let r = triangular_experiment(&field, None, &cfg.hypotheses(), &uas)?;
    let mut checks = Vec::new();
    for (kind, label) in [
        (PathKind::SolutionPath, "solution paths"),
        (
            PathKind::PiecewiseConstantRandom,
            "random piecewise-constant paths",
        ),
        (PathKind::ExpressionPath, "expression paths"),
    ] {
        let group: Vec<_> = r.paths.iter().filter(|c| c.kind == kind).collect();
        if group.is_empty() {
            continue;
        }
        let worst = group.iter().map(|c| c.distance).fold(0.0, f64::max);
        let failed = group.iter().filter(|c| !c.pass).count();
        checks.push(Check::new(
            format!("spectrum along {label}"),
            "union of the diagonal-block spectra within 0.1",
            "triangular systems",
            format!(
                "max Hausdorff distance {worst:.4}, {failed} of {} paths outside",
                group.len()
            ),
            failed == 0,
        ));
    }
    checks.extend([Check::new(
        "stability fit",
        "pass with alpha > 0",
        "hypotheses hold on the diagonal",
        format!(
            "{:?}, alpha = {:.4}, K = {:.4}",
            r.uas.verdict, r.uas.alpha_hat, r.uas.k_hat
        ),
        r.uas.verdict == crate::nmyc::UasVerdict::Pass && r.uas.alpha_hat > 0.0,
    )]);
    Ok(finish(
        ExperimentName::Triangular,
        Some(field.label.clone()),
        checks,
        to_value(&r),
    ))
}

fn perturbation(
    cfg: &RunConfig,
    sys: &SystemArgs,
    cases: Option<usize>,
) -> Result<Outcome, CliError> {
    let n = 2;
    let linear = minus_identity(n);
    let pcfg = PerturbationConfig {
        constants: Some((1.0, 1.0)),
        paths: cfg.paths,
        seed: cfg.seed,
        dichotomy: cfg.dichotomy(),
        uas: UasConfig {
            solver: cfg.solver(),
            ..UasConfig::for_dim(n, 1.0)
        },
        ..PerturbationConfig::for_dim(n)
    };
    // (f, admissible)
    let mut fs: Vec<(NonlinearSystem, Option<bool>)> = Vec::new();
    match resolve_system(sys)? {
        Some(s) => fs.push((nonlinear(s)?, None)),
        None => {
            fs.push((scaled_sine(n, 0.2)?, Some(true)));
            fs.push((NonlinearSystem::parse("0", &["0", "0"])?, Some(true)));
            fs.push((
                NonlinearSystem::parse("0.3 x", &["0.3*x1", "0.3*x2"])?,
                Some(false),
            ));
            for k in 0..cases.unwrap_or(10) {
                fs.push((
                    random_perturbation(n, cfg.seed.wrapping_add(k as u64), 0.2)?,
                    Some(true),
                ));
            }
        }
    }
    let reports = fs
        .par_iter()
        .map(|(f, _)| perturbation_theorem_experiment(&linear, f, &pcfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks = Vec::new();
    for ((f, admissible), r) in fs.iter().zip(&reports) {
        if let Some(false) = admissible {
            checks.push(Check::new(
                format!("f = {}", f.label),
                format!("hypothesis violated (sup ||Jf|| >= {:.4})", r.bound),
                "alpha/(4K^2) with K = 1, alpha = 1",
                format!("grid sup {:.4}, {}", r.grid_sup, r.status),
                !r.hypothesis_holds && r.pass.is_none(),
            ));
            continue;
        }
        let measured = match &r.uas {
            Some(u) => format!("alpha = {:.4}, grid sup {:.4}", u.alpha_hat, r.grid_sup),
            None => r.status.clone(),
        };
        checks.push(Check::new(
            format!("f = {}", f.label),
            format!("rate >= {:.4}", r.rate_floor),
            "alpha (1 - 1/(4K)) - 0.05 with K = 1, alpha = 1",
            measured,
            r.pass == Some(true),
        ));
    }
    Ok(finish(
        ExperimentName::Perturbation,
        Some(linear.label.clone()),
        checks,
        to_value(&reports),
    ))
}

fn cg(cfg: &RunConfig, sys: &SystemArgs) -> Result<Outcome, CliError> {
    if sys.system.is_some() || sys.file.is_some() {
        return Err(CliError::Usage(
            "cg-attractor takes --param lambda=.. a0=.. b1=.. g2=.., not a system".into(),
        ));
    }
    let params: Params = sys.params.iter().cloned().collect();
    for key in params.keys() {
        let ok = key == "lambda"
            || ["a", "b", "g"].iter().any(|p| {
                key.strip_prefix(p)
                    .is_some_and(|rest| rest.is_empty() || rest.parse::<usize>().is_ok())
            });
        if !ok {
            return Err(CliError::Input(format!(
                "unknown parameter `{key}` for cg-attractor"
            )));
        }
    }
    let ccfg = CgConfig {
        lambda: params.get("lambda").copied().unwrap_or(-1.0),
        a: polynomial_param(&params, "a", &[1.0])?.0,
        b: polynomial_param(&params, "b", &[1.0])?.0,
        g: polynomial_param(&params, "g", &[0.0, 1.0])?.0,
        spectrum: cfg.spectrum(),
        solver: cfg.solver(),
        ..CgConfig::default()
    };
    if !(ccfg.lambda < 0.0) {
        return Err(CliError::Input(format!(
            "lambda must be negative, got {}",
            ccfg.lambda
        )));
    }
    let r = cg_attractor_experiment(&ccfg)?;
    let lambda = r.lambda;
    let mut checks = Vec::new();
    for c in &r.cases {
        checks.push(Check::new(
            format!("z0 = {}: spectrum of C", c.z0),
            format!("{{{lambda}}} within 0.05"),
            "theorem on the planar reduction",
            format!(
                "{} (distance {:.4})",
                intervals(&c.spectrum.intervals),
                c.spectrum_distance
            ),
            c.spectrum_pass,
        ));
        checks.push(Check::new(
            format!("z0 = {}: dichotomy", c.z0),
            "certified with P = I",
            "stable spectrum",
            format!(
                "{} rank {}, K = {:.4}, alpha = {:.4}",
                c.dichotomy.verdict, c.dichotomy.rank, c.dichotomy.k, c.dichotomy.alpha
            ),
            c.dichotomy_pass,
        ));
        checks.push(Check::new(
            format!("z0 = {}: vanishing perturbation", c.z0),
            "spectrum of lambda I + C0 equals {lambda}",
            "C0(t) -> 0",
            format!("distance {:.4}", c.vanishing_distance),
            c.vanishing_pass,
        ));
        checks.push(Check::new(
            format!("z0 = {}: trajectories", c.z0),
            format!(
                "|x(T)| <= {:e} max(1, |x0|) at T = {}",
                ccfg.tol, r.final_time
            ),
            "global attractor",
            format!(
                "worst ratio {:.3e} over {} starts in [-{b}, {b}]^2 x {{{}}}",
                c.worst_final_ratio,
                c.trajectories,
                c.z0,
                b = r.box_radius
            ),
            c.trajectories_pass,
        ));
    }
    Ok(finish(
        ExperimentName::CgAttractor,
        Some("cg_field".into()),
        checks,
        to_value(&r),
    ))
}

fn counterexample(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let r = my1960_counterexample(&cfg.spectrum())?;
    let checks = vec![
        Check::new(
            "eigenvalue real parts of A(t)",
            "-0.25 at every t",
            "-1/4 +- (sqrt 7/4) i",
            format!(
                "max deviation {:.2e} over {} probes",
                r.max_real_part_deviation, r.probes
            ),
            r.eigenvalues_pass,
        ),
        Check::new(
            "spectrum",
            intervals(&r.expected_spectrum),
            "closed-form fundamental matrix",
            format!(
                "{} (distance {:.4})",
                intervals(&r.spectrum.intervals),
                r.spectrum_distance
            ),
            r.spectrum_pass,
        ),
        Check::new(
            "|x(4 pi)| from (1, 0)",
            format!(">= {:.4}", r.growth_threshold),
            "e^{t/2} growth",
            format!("{:.4}", r.growth_norm),
            r.growth_pass,
        ),
        Check::new(
            "stability fit",
            "fail",
            "unbounded solution",
            format!("{:?}", r.uas.verdict),
            r.uas_fails,
        ),
    ];
    Ok(finish(
        ExperimentName::My1960Counterexample,
        Some("my1960".into()),
        checks,
        to_value(&r),
    ))
}

fn vanishing(cfg: &RunConfig, cases: Option<usize>) -> Result<Outcome, CliError> {
    let opts = cfg.spectrum();
    let count = cases.unwrap_or(5);
    let results = (0..count)
        .into_par_iter()
        .map(|k| -> Result<_, CliError> {
            let seed = cfg.seed.wrapping_add(k as u64);
            let (a, b, eig) = random_vanishing_pair(seed)?;
            let r = check_vanishing_perturbation(&a, &b, &opts)?;
            Ok((seed, eig, r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let checks = results
        .iter()
        .map(|(seed, eig, r)| {
            Check::new(
                format!("seed {seed}"),
                format!(
                    "spectrum of A + e^(-t) M equals that of A within {}",
                    r.law.tolerance
                ),
                "vanishing perturbations",
                format!(
                    "{} vs {} (distance {:.4}; eigenvalues {:?})",
                    intervals(&r.perturbed.intervals),
                    intervals(&r.base.intervals),
                    r.law.distance,
                    eig
                ),
                r.law.pass,
            )
        })
        .collect();
    let report: Vec<Value> = results
        .iter()
        .map(|(seed, eig, r)| json!({"seed": seed, "eigenvalues": eig, "report": r}))
        .collect();
    Ok(finish(
        ExperimentName::VanishingPerturbation,
        None,
        checks,
        json!(report),
    ))
}

fn shift_law(cfg: &RunConfig, sys: &SystemArgs) -> Result<Outcome, CliError> {
    let systems = match resolve_system(sys)? {
        Some(System::Linear(l)) => vec![l],
        Some(other) => {
            return Err(CliError::Usage(format!(
                "shift-law needs a linear system, `{}` is not",
                other.label()
            )));
        }
        None => crate::systems::builtin_names()
            .into_iter()
            .filter_map(|name| match builtin(name, &Params::new()) {
                Ok(System::Linear(l)) => Some(l),
                _ => None,
            })
            .collect(),
    };
    let opts = cfg.spectrum();
    let jobs: Vec<(usize, f64)> = (0..systems.len())
        .flat_map(|i| [-1.0, 0.5, 2.0].into_iter().map(move |g| (i, g)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, g)| check_shift_law(&systems[i], g, &opts).map(|r| (i, g, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let checks = results
        .iter()
        .map(|(i, g, r)| {
            Check::new(
                format!("{} at gamma = {g}", systems[*i].label),
                format!("{} within {}", intervals(&r.expected), r.tolerance),
                "spectrum of A - gamma I is the spectrum of A moved by -gamma",
                format!("{} (distance {:.4})", intervals(&r.measured), r.distance),
                r.pass,
            )
        })
        .collect();
    let report: Vec<Value> = results
        .iter()
        .map(|(i, g, r)| json!({"system": systems[*i].label, "gamma": g, "report": r}))
        .collect();
    Ok(finish(
        ExperimentName::ShiftLaw,
        None,
        checks,
        json!(report),
    ))
}
