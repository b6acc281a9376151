//! Acceptance criteria, one line each.
//!
//! Runs as a plain binary so the verdict lines always reach the test log.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use edspec::cases::{random_autonomous, random_perturbation, random_scalar, random_vanishing_pair};
use edspec::nmyc::{
    cg_attractor_experiment, minus_identity, my1960_counterexample,
    perturbation_theorem_experiment, scalar_theorem_experiment, triangular_experiment, CgConfig,
    HypothesisConfig, PerturbationConfig, ScalarConfig, UasConfig, UasVerdict,
};
use edspec::spectrum::{
    check_shift_law, check_vanishing_perturbation, sacker_sell, SpectrumOptions,
};
use edspec::systems::{builtin, builtin_names, LinearSystem, Params, PathKind, System};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Result<Outcome, Box<dyn std::error::Error>>;

fn within_budget(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn autonomous_oracle() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let opts = SpectrumOptions::default();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..50 {
        let case = random_autonomous(seed);
        let est = sacker_sell(&LinearSystem::constant("A", case.matrix.clone()), &opts)?;
        let ok = est.intervals.len() == case.real_parts.len()
            && est.intervals.iter().zip(&case.real_parts).all(|(iv, re)| {
                let err = (iv[0] - re).abs().max((iv[1] - re).abs());
                worst = worst.max(err);
                err <= 0.05
            });
        if !ok {
            failures.push(seed);
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        failures.is_empty() && within_budget(elapsed, 120),
        format!(
            "50 matrices, worst endpoint error {worst:.4}, failing seeds {failures:?}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn counterexample() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let r = my1960_counterexample(&SpectrumOptions::default())?;
    let elapsed = start.elapsed();
    Ok(outcome(
        r.eigenvalues_pass && r.spectrum_pass && r.growth_pass && within_budget(elapsed, 30),
        format!(
            "real-part deviation {:.1e}, spectrum distance {:.4}, |x(4 pi)| = {:.1} >= {:.1}, {:.1} s",
            r.max_real_part_deviation,
            r.spectrum_distance,
            r.growth_norm,
            r.growth_threshold,
            elapsed.as_secs_f64()
        ),
    ))
}

fn shift_law() -> Result<Outcome, Box<dyn std::error::Error>> {
    let opts = SpectrumOptions::default();
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut pass = true;
    for name in builtin_names() {
        let System::Linear(sys) = builtin(name, &Params::new())? else {
            continue;
        };
        for gamma in [-1.0, 0.5, 2.0] {
            let r = check_shift_law(&sys, gamma, &opts)?;
            worst = worst.max(r.distance);
            pass &= r.distance <= 0.1;
            count += 1;
        }
    }
    Ok(outcome(
        pass && count > 0,
        format!("{count} (system, gamma) pairs, worst Hausdorff distance {worst:.4}"),
    ))
}

fn triangular_union() -> Result<Outcome, Box<dyn std::error::Error>> {
    let sys = builtin("triangular_demo", &Params::new())?
        .as_nonlinear()
        .cloned()
        .ok_or("triangular_demo is not a vector field")?;
    let hyp = HypothesisConfig {
        paths: 20,
        ..HypothesisConfig::default()
    };
    let r = triangular_experiment(&sys, None, &hyp, &UasConfig::for_dim(2, 1.0))?;
    let worst = |kind: PathKind| {
        r.paths
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.distance)
            .fold(0.0, f64::max)
    };
    let outside = r.paths.iter().filter(|c| !c.pass).count();
    Ok(outcome(
        r.pass && r.paths.len() == 20,
        format!(
            "{} paths, {outside} outside 0.1 (worst: solution {:.4}, random piecewise-constant {:.4}); UAS {:?} with alpha {:.4}",
            r.paths.len(),
            worst(PathKind::SolutionPath),
            worst(PathKind::PiecewiseConstantRandom),
            r.uas.verdict,
            r.uas.alpha_hat
        ),
    ))
}

fn scalar_theorem() -> Result<Outcome, Box<dyn std::error::Error>> {
    let cfg = ScalarConfig::default();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..10 {
        let (sys, _) = random_scalar(seed)?;
        let r = scalar_theorem_experiment(&sys, &cfg)?;
        let ok = match (&r.uas, r.oracle_rate) {
            (Some(uas), Some(oracle)) => {
                let gap = (uas.alpha_hat - oracle).abs();
                worst = worst.max(gap);
                r.hypotheses.all_pass() && uas.verdict == UasVerdict::Pass && gap <= 0.1
            }
            _ => false,
        };
        if !ok {
            failures.push(seed);
        }
    }
    Ok(outcome(
        failures.is_empty(),
        format!("10 systems, worst |alpha - oracle| {worst:.4}, failing seeds {failures:?}"),
    ))
}

fn perturbation_theorem() -> Result<Outcome, Box<dyn std::error::Error>> {
    let linear = minus_identity(2);
    let cfg = PerturbationConfig {
        constants: Some((1.0, 1.0)),
        ..PerturbationConfig::for_dim(2)
    };
    let mut lowest = f64::INFINITY;
    let mut sup = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..10 {
        let f = random_perturbation(2, seed, 0.2)?;
        let r = perturbation_theorem_experiment(&linear, &f, &cfg)?;
        sup = sup.max(r.grid_sup);
        let alpha = r.uas.as_ref().map_or(f64::NAN, |u| u.alpha_hat);
        lowest = lowest.min(alpha);
        if !(r.grid_sup <= 0.2 && alpha >= 0.70 && r.pass == Some(true)) {
            failures.push(seed);
        }
    }
    Ok(outcome(
        failures.is_empty(),
        format!(
            "10 perturbations, dense-grid sup |Jf| {sup:.4}, lowest alpha {lowest:.4}, failing seeds {failures:?}"
        ),
    ))
}

fn cg_attractor() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let mut cases = 0;
    let mut pass = true;
    let mut worst_spectrum = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for (lambda, a, b, g) in [
        (-1.0, vec![1.0], vec![1.0], vec![0.0, 1.0]),
        (-0.5, vec![0.0, 1.0], vec![1.0, -1.0], vec![0.0, 0.0, 1.0]),
    ] {
        let r = cg_attractor_experiment(&CgConfig {
            lambda,
            a,
            b,
            g,
            ..CgConfig::default()
        })?;
        for c in &r.cases {
            worst_spectrum = worst_spectrum.max(c.spectrum_distance);
            worst_ratio = worst_ratio.max(c.worst_final_ratio);
            pass &= c.spectrum_pass && c.dichotomy_pass && c.trajectories_pass;
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        pass && cases == 10 && within_budget(elapsed, 60),
        format!(
            "{cases} (parameters, z0) cases, worst spectrum distance {worst_spectrum:.4}, worst |x(T)| ratio {worst_ratio:.1e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn vanishing_perturbation() -> Result<Outcome, Box<dyn std::error::Error>> {
    let opts = SpectrumOptions::default();
    let mut worst = 0.0f64;
    let mut pass = true;
    for seed in 0..5 {
        let (a, b, _) = random_vanishing_pair(seed)?;
        let r = check_vanishing_perturbation(&a, &b, &opts)?;
        worst = worst.max(r.law.distance);
        pass &= r.law.distance <= 0.1;
    }
    Ok(outcome(
        pass,
        format!("5 pairs, worst Hausdorff distance {worst:.4}"),
    ))
}

fn reproducibility() -> Result<Outcome, Box<dyn std::error::Error>> {
    let run = |name: &str| -> Result<Vec<u8>, Box<dyn std::error::Error>> {
        let out = Command::new(env!("CARGO_BIN_EXE_edspec"))
            .args(["experiment", name, "--format", "json", "--no-timestamp"])
            .output()?;
        match out.status.code() {
            Some(0 | 1) => Ok(out.stdout),
            _ => Err(format!(
                "experiment {name} exited with {:?}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr)
            )
            .into()),
        }
    };
    let mut differing = Vec::new();
    let names = [
        "scalar",
        "triangular",
        "perturbation",
        "cg-attractor",
        "my1960-counterexample",
        "vanishing-perturbation",
        "shift-law",
    ];
    for name in names {
        let first = run(name)?;
        let second = run(name)?;
        if first != second || first.is_empty() {
            differing.push(name);
        }
    }
    Ok(outcome(
        differing.is_empty(),
        format!(
            "{} experiments run twice, differing outputs {differing:?}",
            names.len()
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Criterion); 9] = [
        (1, "autonomous oracle", autonomous_oracle),
        (2, "Markus-Yamabe counterexample", counterexample),
        (3, "shift law", shift_law),
        (4, "triangular union", triangular_union),
        (5, "scalar theorem", scalar_theorem),
        (6, "perturbation theorem", perturbation_theorem),
        (7, "global attractor", cg_attractor),
        (
            8,
            "vanishing-perturbation invariance",
            vanishing_perturbation,
        ),
        (9, "reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} {}: {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
