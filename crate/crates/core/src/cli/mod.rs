//! Command-line front end.

mod experiments;

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dichotomy::{DichotomyAnalysis, DichotomyError, DichotomyOptions};
use crate::integrate::{solve, uniform_grid, IntegrateError, SolverOptions};
use crate::io::{load_system, write_trajectory_csv, LoadError};
use crate::nmyc::{check_hypotheses, verify_uas, HypothesisConfig, NmycError, UasConfig};
use crate::spectrum::{sacker_sell, sacker_sell_fundamental, SpectrumError, SpectrumOptions};
use crate::systems::{builtin, NonlinearSystem, Params, System, SystemError, BUILTINS};

pub use experiments::ExperimentName;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// Numerical settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: f64,
    pub step: f64,
    pub window: f64,
    pub resolution: f64,
    pub rtol: f64,
    pub atol: f64,
    pub paths: usize,
    pub seed: u64,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: 100.0,
            step: 0.05,
            window: 10.0,
            resolution: 0.05,
            rtol: 1e-9,
            atol: 1e-12,
            paths: 20,
            seed: 0,
            format: None,
            output: None,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("step", self.step),
            ("window", self.window),
            ("resolution", self.resolution),
            ("rtol", self.rtol),
            ("atol", self.atol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.paths == 0 {
            return Err("paths must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return Err("jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            rtol: self.rtol,
            atol: self.atol,
            ..SolverOptions::default()
        }
    }

    pub fn spectrum(&self) -> SpectrumOptions {
        SpectrumOptions {
            horizon: self.horizon,
            window: self.window,
            resolution: self.resolution,
            step: self.step,
            solver: self.solver(),
            ..SpectrumOptions::default()
        }
    }

    pub fn dichotomy(&self) -> DichotomyOptions {
        DichotomyOptions {
            horizon: self.horizon,
            step: self.step,
            solver: self.solver(),
            ..DichotomyOptions::default()
        }
    }

    pub fn hypotheses(&self) -> HypothesisConfig {
        HypothesisConfig {
            paths: self.paths,
            seed: self.seed,
            horizon: self.horizon,
            spectrum: self.spectrum(),
            ..HypothesisConfig::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "edspec",
    version,
    about = "Exponential dichotomies, dichotomy spectra and Markus-Yamabe experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON file with RunConfig fields; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// QR step h.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Steklov window H.
    #[arg(long, global = true)]
    pub window: Option<f64>,
    /// Gamma grid spacing.
    #[arg(long, global = true)]
    pub resolution: Option<f64>,
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    #[arg(long, global = true)]
    pub atol: Option<f64>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Omit the timestamp from JSON output.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Builtin system name.
    pub system: Option<String>,
    /// JSON system definition.
    #[arg(long, conflicts_with = "system")]
    pub file: Option<PathBuf>,
    /// Builtin parameter `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param, allow_hyphen_values = true)]
    pub params: Vec<(String, f64)>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dichotomy spectrum of a linear system.
    Spectrum {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        gamma_range: Option<Vec<f64>>,
    },
    /// Exponential dichotomy certificate of the shifted system.
    Dichotomy {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        gamma: f64,
        /// Stable rank of the projector; estimated when absent.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Integrates one trajectory.
    Simulate {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long = "T")]
        t_end: f64,
        /// Number of output intervals.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Hypothesis checks along sampled paths and the stability fit.
    NmycCheck {
        #[command(flatten)]
        sys: SystemArgs,
    },
    /// Runs a named experiment and compares measured with expected values.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
        #[command(flatten)]
        sys: SystemArgs,
        /// Number of seeded random cases, where the experiment has them.
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Lists builtin systems.
    Examples,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) | CliError::Output(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::Eval { .. } | SystemError::NonVanishing(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<IntegrateError> for CliError {
    fn from(e: IntegrateError) -> Self {
        match e {
            IntegrateError::InvalidInput(m) => CliError::Usage(m),
            IntegrateError::System(s) => s.into(),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DichotomyError> for CliError {
    fn from(e: DichotomyError) -> Self {
        match e {
            DichotomyError::System(s) => s.into(),
            DichotomyError::Horizon(m) | DichotomyError::InvalidProjector(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::Dichotomy(d) => d.into(),
            SpectrumError::System(s) => s.into(),
            SpectrumError::InvalidOptions(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<NmycError> for CliError {
    fn from(e: NmycError) -> Self {
        match e {
            NmycError::System(s) => s.into(),
            NmycError::Integrate(i) => i.into(),
            NmycError::Spectrum(s) => s.into(),
            NmycError::Dichotomy(d) => d.into(),
            NmycError::Config(m) => CliError::Usage(m),
        }
    }
}

/// What a subcommand produced.
pub struct Outcome {
    pub command: &'static str,
    pub system: Option<String>,
    pub result: Value,
    pub csv: Option<String>,
    pub text: Vec<String>,
    pub default_format: Format,
    /// `Some(false)` when an experiment assertion failed.
    pub pass: Option<bool>,
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = g.$f { cfg.$f = v; } )* };
    }
    apply!(horizon, step, window, resolution, rtol, atol, paths, seed);
    if g.format.is_some() {
        cfg.format = g.format;
    }
    if g.output.is_some() {
        cfg.output = g.output.clone();
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

pub(crate) fn resolve_system(args: &SystemArgs) -> Result<Option<System>, CliError> {
    let params: Params = args.params.iter().cloned().collect();
    match (&args.system, &args.file) {
        (Some(name), None) => Ok(Some(builtin(name, &params)?)),
        (None, Some(path)) => {
            if !params.is_empty() {
                return Err(CliError::Usage(
                    "--param applies to builtin systems only".into(),
                ));
            }
            Ok(Some(load_system(path)?))
        }
        (None, None) => {
            if !params.is_empty() {
                return Err(CliError::Usage(
                    "--param given without a builtin system".into(),
                ));
            }
            Ok(None)
        }
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give a builtin name or --file, not both".into(),
        )),
    }
}

fn require_system(args: &SystemArgs) -> Result<System, CliError> {
    resolve_system(args)?
        .ok_or_else(|| CliError::Usage("a system is required (builtin name or --file)".into()))
}

fn as_nonlinear(sys: &System) -> Result<NonlinearSystem, CliError> {
    match sys {
        System::Nonlinear(n) => Ok(n.clone()),
        System::Linear(l) => Ok(NonlinearSystem::from_linear(l)?),
        System::Fundamental { .. } => Err(CliError::Usage(format!(
            "`{}` is a closed-form fundamental matrix, not a vector field",
            sys.label()
        ))),
    }
}

fn fmt_intervals(iv: &[[f64; 2]]) -> String {
    let parts: Vec<String> = iv
        .iter()
        .map(|[a, b]| format!("[{a:.4}, {b:.4}]"))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn run_spectrum(
    cfg: &RunConfig,
    sys: &SystemArgs,
    range: &Option<Vec<f64>>,
) -> Result<Outcome, CliError> {
    let system = require_system(sys)?;
    let mut opts = cfg.spectrum();
    if let Some(r) = range {
        if !(r[0] < r[1]) {
            return Err(CliError::Usage(format!(
                "gamma range must be increasing, got {} {}",
                r[0], r[1]
            )));
        }
        opts.gamma_range = Some((r[0], r[1]));
    }
    let est = match &system {
        System::Linear(l) => sacker_sell(l, &opts)?,
        System::Fundamental { phi, .. } => sacker_sell_fundamental(phi, &opts)?,
        System::Nonlinear(_) => {
            return Err(CliError::Usage(format!(
                "`{}` is nonlinear; the spectrum needs a linear system (see nmyc-check)",
                system.label()
            )))
        }
    };
    let csv = est
        .gamma_table_csv()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(Outcome {
        command: "spectrum",
        system: Some(system.label().to_string()),
        text: vec![format!(
            "spectrum of {}: {}",
            system.label(),
            fmt_intervals(&est.intervals)
        )],
        result: serde_json::to_value(&est).expect("serializable"),
        csv: Some(csv),
        default_format: Format::Json,
        pass: None,
    })
}

fn run_dichotomy(
    cfg: &RunConfig,
    sys: &SystemArgs,
    gamma: f64,
    rank: Option<usize>,
) -> Result<Outcome, CliError> {
    let system = require_system(sys)?;
    let opts = cfg.dichotomy();
    let analysis = match &system {
        System::Linear(l) => DichotomyAnalysis::new(l, &opts)?,
        System::Fundamental { phi, .. } => DichotomyAnalysis::from_fundamental(phi, &opts)?,
        System::Nonlinear(_) => {
            return Err(CliError::Usage(format!(
                "`{}` is nonlinear; dichotomies need a linear system",
                system.label()
            )))
        }
    };
    let cert = match rank {
        None => analysis.has_dichotomy(gamma),
        Some(r) if r <= analysis.dim() => analysis.certify_rank(r, gamma),
        Some(r) => {
            return Err(CliError::Usage(format!(
                "rank {r} exceeds the dimension {}",
                analysis.dim()
            )))
        }
    };
    Ok(Outcome {
        command: "dichotomy",
        system: Some(system.label().to_string()),
        text: vec![format!(
            "{} at gamma = {gamma}: {} (rank {}, K = {:.4e}, alpha = {:.4})",
            system.label(),
            cert.verdict,
            cert.rank,
            cert.k,
            cert.alpha
        )],
        result: serde_json::to_value(&cert).expect("serializable"),
        csv: None,
        default_format: Format::Json,
        pass: None,
    })
}

fn run_simulate(
    cfg: &RunConfig,
    sys: &SystemArgs,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    samples: usize,
) -> Result<Outcome, CliError> {
    let system = require_system(sys)?;
    let field = as_nonlinear(&system)?;
    if !(t_end > t0) {
        return Err(CliError::Usage(format!(
            "--T ({t_end}) must exceed --t0 ({t0})"
        )));
    }
    if samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let grid = uniform_grid(t0, t_end, samples);
    let tr = solve(&field, x0, &grid, &cfg.solver())?;
    let mut buf = Vec::new();
    write_trajectory_csv(&tr, &mut buf).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut text = vec![format!(
        "{}: {} samples, |x(T)| = {:.6e}",
        system.label(),
        tr.times.len(),
        crate::integrate::euclid(tr.final_state())
    )];
    if let Some(t) = tr.escape_time {
        text.push(format!("escaped at t = {t}"));
    }
    Ok(Outcome {
        command: "simulate",
        system: Some(system.label().to_string()),
        text,
        result: serde_json::to_value(&tr).expect("serializable"),
        csv: Some(String::from_utf8(buf).expect("utf-8 csv")),
        default_format: Format::Csv,
        pass: None,
    })
}

fn run_nmyc_check(cfg: &RunConfig, sys: &SystemArgs) -> Result<Outcome, CliError> {
    let system = require_system(sys)?;
    let field = as_nonlinear(&system)?;
    let hyp = check_hypotheses(&field, &cfg.hypotheses())?;
    let uas = verify_uas(
        &field,
        &UasConfig {
            solver: cfg.solver(),
            ..UasConfig::for_dim(field.dim(), 1.0)
        },
    )?;
    let negative = hyp.g4.iter().filter(|e| e.negative).count();
    let text = vec![
        format!("G1: {}", hyp.g1),
        format!(
            "G2: {} ({} samples, {})",
            if hyp.g2.pass { "pass" } else { "fail" },
            hyp.g2.samples,
            hyp.g2.note
        ),
        format!("G3: sup ||Jg|| along paths = {:.6}", hyp.g3.sup_norm),
        format!(
            "G4: {negative}/{} paths with spectrum at or below -{} ({} excluded)",
            hyp.g4.len(),
            hyp.config.margin,
            hyp.excluded.len()
        ),
        format!(
            "stability fit: {:?}, K = {:.4}, alpha = {:.4}, worst ratio = {:.4}, radius = {:.4}",
            uas.verdict, uas.k_hat, uas.alpha_hat, uas.worst_ratio, uas.radius
        ),
    ];
    Ok(Outcome {
        command: "nmyc-check",
        system: Some(field.label.clone()),
        text,
        result: json!({"hypotheses": hyp, "stability": uas}),
        csv: None,
        default_format: Format::Json,
        pass: None,
    })
}

fn run_examples() -> Outcome {
    let text = BUILTINS
        .iter()
        .map(|(n, d)| format!("{n:<26} {d}"))
        .collect();
    Outcome {
        command: "examples",
        system: None,
        result: json!(BUILTINS
            .iter()
            .map(|(n, d)| json!({"name": n, "description": d}))
            .collect::<Vec<_>>()),
        csv: None,
        text,
        default_format: Format::Text,
        pass: None,
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Spectrum { sys, gamma_range } => run_spectrum(cfg, sys, gamma_range),
        Command::Dichotomy { sys, gamma, rank } => run_dichotomy(cfg, sys, *gamma, *rank),
        Command::Simulate {
            sys,
            x0,
            t0,
            t_end,
            samples,
        } => run_simulate(cfg, sys, x0, *t0, *t_end, *samples),
        Command::NmycCheck { sys } => run_nmyc_check(cfg, sys),
        Command::Experiment { name, sys, cases } => experiments::run(*name, cfg, sys, *cases),
        Command::Examples => Ok(run_examples()),
    }
}

fn paint(line: &str, color: bool) -> String {
    if !color {
        return line.to_string();
    }
    if let Some(rest) = line.strip_prefix("PASS") {
        format!("\x1b[32mPASS\x1b[0m{rest}")
    } else if let Some(rest) = line.strip_prefix("FAIL") {
        format!("\x1b[31mFAIL\x1b[0m{rest}")
    } else {
        line.to_string()
    }
}

fn render(
    out: &Outcome,
    cfg: &RunConfig,
    timestamp: bool,
    color: bool,
) -> Result<String, CliError> {
    let format = cfg.format.unwrap_or(out.default_format);
    Ok(match format {
        Format::Json => {
            let mut env = json!({
                "command": out.command,
                "config": cfg,
                "result": out.result,
            });
            if let Some(s) = &out.system {
                env["system"] = json!(s);
            }
            if let Some(p) = out.pass {
                env["pass"] = json!(p);
            }
            if timestamp {
                let secs = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs());
                env["timestamp"] = json!(secs);
            }
            let mut s = serde_json::to_string_pretty(&env)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => out
            .csv
            .clone()
            .ok_or_else(|| CliError::Usage(format!("{} has no CSV output", out.command)))?,
        Format::Text => {
            let mut s = String::new();
            for line in &out.text {
                s.push_str(&paint(line, color));
                s.push('\n');
            }
            s
        }
    })
}

/// Parses `args`, runs the subcommand and returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = resolve_config(&cli.global).and_then(|cfg| {
        let outcome = match cfg.jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?
                .install(|| dispatch(&cli, &cfg))?,
            None => dispatch(&cli, &cfg)?,
        };
        Ok((cfg, outcome))
    });
    let (cfg, outcome) = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let to_file = cfg.output.is_some();
    let color =
        !to_file && std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal();
    let rendered = match render(&outcome, &cfg, !cli.global.no_timestamp, color) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let written = match &cfg.output {
        Some(path) => std::fs::write(path, rendered.as_bytes()),
        None => stdout.write_all(rendered.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: cannot write output: {e}");
        return EXIT_INPUT;
    }
    match outcome.pass {
        Some(false) => {
            let _ = writeln!(stderr, "{}: one or more checks failed", outcome.command);
            EXIT_ASSERTION
        }
        _ => EXIT_OK,
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(
            std::iter::once("edspec").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn examples_lists_builtins() {
        let (code, out, _) = run(&["examples"]);
        assert_eq!(code, 0);
        assert!(out.lines().count() >= 6);
        assert!(out.contains("my1960"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(
            run(&["spectrum", "my1960", "--horizon", "-1"]).0,
            EXIT_USAGE
        );
        assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run(&["spectrum"]).0, EXIT_USAGE);
        assert_eq!(run(&["spectrum", "triangular_demo"]).0, EXIT_USAGE);
    }

    #[test]
    fn input_errors_exit_3() {
        assert_eq!(run(&["spectrum", "nope"]).0, EXIT_INPUT);
        assert_eq!(
            run(&["spectrum", "scalar_decay", "--param", "mu=1"]).0,
            EXIT_INPUT
        );
        assert_eq!(
            run(&["spectrum", "--file", "/nonexistent/x.json"]).0,
            EXIT_INPUT
        );
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"horizon": 50, "seed": 7}"#).unwrap();
        let cli = Cli::try_parse_from([
            "edspec",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "3",
            "examples",
        ])
        .unwrap();
        let cfg = resolve_config(&cli.global).unwrap();
        assert_eq!(cfg.horizon, 50.0);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.window, 10.0);
        std::fs::write(&path, r#"{"horizn": 50}"#).unwrap();
        let cli = Cli::try_parse_from(["edspec", "--config", path.to_str().unwrap(), "examples"])
            .unwrap();
        assert!(matches!(
            resolve_config(&cli.global),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn scalar_spectrum_json() {
        let (code, out, _) = run(&[
            "spectrum",
            "scalar_decay",
            "--param",
            "lambda=-2",
            "--no-timestamp",
        ]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        let iv = &v["result"]["intervals"][0];
        assert!((iv[0].as_f64().unwrap() + 2.0).abs() < 0.05);
        assert!(v.get("timestamp").is_none());
        assert_eq!(v["config"]["seed"], 0);
    }

    #[test]
    fn simulate_csv() {
        let (code, out, _) = run(&[
            "simulate",
            "scalar_decay",
            "--x0",
            "1",
            "--T",
            "1",
            "--samples",
            "4",
        ]);
        assert_eq!(code, 0);
        let last: Vec<f64> = out
            .lines()
            .last()
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert!((last[1] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(
            run(&["simulate", "scalar_decay", "--x0", "1,2", "--T", "1"]).0,
            EXIT_USAGE
        );
    }
}
