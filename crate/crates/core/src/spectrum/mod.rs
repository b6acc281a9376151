//! Dichotomy spectrum on a finite horizon: the shifts `gamma` for which
//! `x' = (A(t) - gamma I) x` has no exponential dichotomy, estimated as a
//! union of at most `n` closed intervals.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dichotomy::{DichotomyAnalysis, DichotomyError, DichotomyOptions, Verdict};
use crate::integrate::SolverOptions;
use crate::linalg::spectral_norm;
use crate::systems::{shift, LinearSystem, MatrixFunction, SystemError};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Dichotomy(#[from] DichotomyError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("invalid option: {0}")]
    InvalidOptions(String),
    #[error("resolution too coarse: stable rank drops from {rank_before} to {rank_after} between gamma = {gamma_lo} and {gamma_hi}")]
    ResolutionTooCoarse {
        gamma_lo: f64,
        gamma_hi: f64,
        rank_before: usize,
        rank_after: usize,
    },
    #[error("system is not block upper triangular: entry ({row}, {col}) is {value} at t = {t}")]
    NotTriangular {
        row: usize,
        col: usize,
        value: f64,
        t: f64,
    },
    #[error("perturbation does not vanish: max ||B(t)|| = {max_norm} on [{from}, {to}]")]
    NotVanishing { max_norm: f64, from: f64, to: f64 },
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    pub horizon: f64,
    /// Steklov window `H`.
    pub window: f64,
    /// Spacing of the gamma grid.
    pub resolution: f64,
    pub step: f64,
    /// Scan range; widened to cover the Steklov seeds by three grid steps.
    pub gamma_range: Option<(f64, f64)>,
    /// Width at which bisection stops.
    pub bisection_tol: Option<f64>,
    pub t0: f64,
    pub pairs: usize,
    pub solver: SolverOptions,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            horizon: 100.0,
            window: 10.0,
            resolution: 0.05,
            step: 0.05,
            gamma_range: None,
            bisection_tol: None,
            t0: 0.0,
            pairs: 500,
            solver: SolverOptions::default(),
        }
    }
}

impl SpectrumOptions {
    pub fn dichotomy(&self) -> DichotomyOptions {
        DichotomyOptions {
            t0: self.t0,
            horizon: self.horizon,
            step: self.step,
            pairs: self.pairs,
            solver: self.solver,
            ..DichotomyOptions::default()
        }
    }

    fn validate(&self) -> Result<(), SpectrumError> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(SpectrumError::InvalidOptions(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if !(self.window > 0.0) || self.window > self.horizon / 5.0 {
            return Err(SpectrumError::InvalidOptions(format!(
                "window must lie in (0, T/5] = (0, {}], got {}",
                self.horizon / 5.0,
                self.window
            )));
        }
        if let Some((lo, hi)) = self.gamma_range {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(SpectrumError::InvalidOptions(format!(
                    "empty gamma range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn tol(&self) -> f64 {
        self.bisection_tol.unwrap_or(self.resolution / 64.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub verdict: Verdict,
    /// Stable rank of the certified projector.
    pub rank: Option<usize>,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Whether the row came from bisection rather than the uniform grid.
    pub refined: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEstimate {
    pub intervals: Vec<[f64; 2]>,
    pub resolution: f64,
    pub window: f64,
    pub horizon: [f64; 2],
    pub gamma_table: Vec<GammaRow>,
}

impl SpectrumEstimate {
    pub fn translated(&self, by: f64) -> Vec<[f64; 2]> {
        self.intervals
            .iter()
            .map(|[a, b]| [a + by, b + by])
            .collect()
    }

    pub fn contains(&self, gamma: f64) -> bool {
        self.intervals
            .iter()
            .any(|[a, b]| *a <= gamma && gamma <= *b)
    }

    /// Gamma table as CSV with a header row.
    pub fn gamma_table_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["gamma", "verdict", "rank", "alpha", "K", "refined"])?;
        for row in &self.gamma_table {
            w.write_record([
                row.gamma.to_string(),
                row.verdict.to_string(),
                row.rank.map_or(String::new(), |r| r.to_string()),
                row.alpha.to_string(),
                row.k.to_string(),
                row.refined.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv writes utf-8"))
    }
}

/// Range `[min, max]` of Steklov averages `(L_i(t+H) - L_i(t)) / H` per QR
/// direction, after a burn-in of a tenth of the horizon.
pub fn lyapunov_intervals(
    sys: &LinearSystem,
    opts: &SpectrumOptions,
) -> Result<Vec<[f64; 2]>, SpectrumError> {
    opts.validate()?;
    let analysis = DichotomyAnalysis::new(sys, &opts.dichotomy())?;
    Ok(steklov_ranges(&analysis, opts.window))
}

pub fn steklov_ranges(analysis: &DichotomyAnalysis, window: f64) -> Vec<[f64; 2]> {
    let (times, logs) = analysis.growth_series();
    let h = times[1] - times[0];
    let steps = times.len() - 1;
    let span = steps as f64 * h;
    let w = ((window / h).round() as usize).clamp(1, steps);
    let burn = ((span / 10.0) / h).ceil() as usize;
    let n = analysis.dim();
    let mut out = vec![[f64::INFINITY, f64::NEG_INFINITY]; n];
    let last_start = steps - w;
    for j in burn.min(last_start)..=last_start {
        for (i, range) in out.iter_mut().enumerate() {
            let s = (logs[j + w][i] - logs[j][i]) / (w as f64 * h);
            range[0] = range[0].min(s);
            range[1] = range[1].max(s);
        }
    }
    out
}

struct Probe {
    verdict: Verdict,
    rank: Option<usize>,
    alpha: f64,
    k: f64,
}

impl Probe {
    fn certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

struct Scanner<'a> {
    analysis: &'a DichotomyAnalysis,
    rows: Vec<GammaRow>,
    tol: f64,
}

impl Scanner<'_> {
    fn probe(&self, gamma: f64) -> Probe {
        let c = self.analysis.has_dichotomy(gamma);
        Probe {
            rank: (c.verdict == Verdict::Certified).then_some(c.rank),
            verdict: c.verdict,
            alpha: c.alpha,
            k: c.k,
        }
    }

    fn record(&mut self, gamma: f64, p: &Probe, refined: bool) {
        self.rows.push(GammaRow {
            gamma,
            verdict: p.verdict,
            rank: p.rank,
            alpha: p.alpha,
            k: p.k,
            refined,
        });
    }

    /// Boundary between a certified `good` and a non-certified `bad` shift.
    fn edge(&mut self, mut good: f64, mut bad: f64) -> f64 {
        while (good - bad).abs() > self.tol {
            let mid = 0.5 * (good + bad);
            let p = self.probe(mid);
            self.record(mid, &p, true);
            if p.certified() {
                good = mid;
            } else {
                bad = mid;
            }
        }
        0.5 * (good + bad)
    }

    /// Spectral pieces strictly between two certified shifts of different
    /// stable rank.
    fn resolve(
        &mut self,
        lo: f64,
        rank_lo: usize,
        hi: f64,
        rank_hi: usize,
        out: &mut Vec<[f64; 2]>,
    ) {
        if hi - lo <= self.tol {
            let mid = 0.5 * (lo + hi);
            out.push([mid, mid]);
            return;
        }
        let mid = 0.5 * (lo + hi);
        let p = self.probe(mid);
        self.record(mid, &p, true);
        match p.rank {
            Some(r) if r == rank_lo => self.resolve(mid, r, hi, rank_hi, out),
            Some(r) if r == rank_hi => self.resolve(lo, rank_lo, mid, r, out),
            Some(r) => {
                self.resolve(lo, rank_lo, mid, r, out);
                self.resolve(mid, r, hi, rank_hi, out);
            }
            None => {
                let a = self.edge(lo, mid);
                let b = self.edge(hi, mid);
                out.push([a, b]);
            }
        }
    }
}

/// Spectrum of a system from scratch.
pub fn sacker_sell(
    sys: &LinearSystem,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate, SpectrumError> {
    opts.validate()?;
    let analysis = DichotomyAnalysis::new(sys, &opts.dichotomy())?;
    spectrum_of(&analysis, opts)
}

/// Spectrum from precomputed transition data.
pub fn spectrum_of(
    analysis: &DichotomyAnalysis,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate, SpectrumError> {
    opts.validate()?;
    let n = analysis.dim();
    let dg = opts.resolution;
    let seeds = steklov_ranges(analysis, opts.window);
    let seed_lo = seeds.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min) - 3.0 * dg;
    let seed_hi = seeds.iter().map(|s| s[1]).fold(f64::NEG_INFINITY, f64::max) + 3.0 * dg;
    let (lo, hi) = match opts.gamma_range {
        Some((a, b)) => (a.min(seed_lo), b.max(seed_hi)),
        None => (seed_lo, seed_hi),
    };
    let first = (lo / dg).floor() as i64;
    let last = (hi / dg).ceil() as i64;
    let grid: Vec<f64> = (first..=last).map(|i| i as f64 * dg).collect();

    let mut scanner = Scanner {
        analysis,
        rows: Vec::new(),
        tol: opts.tol(),
    };
    let probes: Vec<Probe> = grid.par_iter().map(|&g| scanner.probe(g)).collect();
    for (&g, p) in grid.iter().zip(&probes) {
        scanner.record(g, p, false);
    }

    // stable rank can only grow with gamma
    let certified: Vec<(f64, usize)> = grid
        .iter()
        .zip(&probes)
        .filter_map(|(&g, p)| p.rank.map(|r| (g, r)))
        .collect();
    for w in certified.windows(2) {
        if w[1].1 < w[0].1 {
            return Err(SpectrumError::ResolutionTooCoarse {
                gamma_lo: w[0].0,
                gamma_hi: w[1].0,
                rank_before: w[0].1,
                rank_after: w[1].1,
            });
        }
    }

    let mut raw: Vec<[f64; 2]> = Vec::new();
    let mut j = 0;
    while j < grid.len() {
        if probes[j].certified() {
            if let (Some(next), Some(r0)) = (probes.get(j + 1), probes[j].rank) {
                if let Some(r1) = next.rank.filter(|&r1| r1 != r0) {
                    scanner.resolve(grid[j], r0, grid[j + 1], r1, &mut raw);
                }
            }
            j += 1;
            continue;
        }
        let start = j;
        while j < grid.len() && !probes[j].certified() {
            j += 1;
        }
        let a = if start > 0 {
            scanner.edge(grid[start - 1], grid[start])
        } else {
            grid[start]
        };
        let b = if j < grid.len() {
            scanner.edge(grid[j], grid[j - 1])
        } else {
            grid[j - 1]
        };
        raw.push([a, b]);
    }

    let rates = analysis.growth_rates();
    let mut intervals: Vec<[f64; 2]> = raw
        .into_iter()
        .map(|[a, b]| {
            if b - a < dg {
                let pad = scanner.tol;
                let mid = 0.5 * (a + b);
                let inside = rates
                    .iter()
                    .copied()
                    .filter(|r| *r >= a - pad && *r <= b + pad)
                    .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()));
                let p = inside.unwrap_or(mid);
                [p, p]
            } else {
                [a, b]
            }
        })
        .collect();
    intervals.sort_by(|x, y| x[0].total_cmp(&y[0]));
    let mut intervals = merge(intervals, 2.0 * dg);
    while intervals.len() > n {
        // join the closest neighbours
        let k = (0..intervals.len() - 1)
            .min_by(|&x, &y| {
                let gx = intervals[x + 1][0] - intervals[x][1];
                let gy = intervals[y + 1][0] - intervals[y][1];
                gx.total_cmp(&gy)
            })
            .expect("at least two intervals");
        intervals[k][1] = intervals[k + 1][1];
        intervals.remove(k + 1);
    }

    let mut rows = scanner.rows;
    rows.sort_by(|x, y| x.gamma.total_cmp(&y.gamma));
    Ok(SpectrumEstimate {
        intervals,
        resolution: dg,
        window: opts.window,
        horizon: analysis.horizon(),
        gamma_table: rows,
    })
}

fn merge(sorted: Vec<[f64; 2]>, min_gap: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv[0] - last[1] < min_gap => last[1] = last[1].max(iv[1]),
            _ => out.push(iv),
        }
    }
    out
}

fn distance_to(x: f64, set: &[[f64; 2]]) -> f64 {
    set.iter()
        .map(|[a, b]| {
            if x < *a {
                a - x
            } else if x > *b {
                x - b
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn directed(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let mut worst: f64 = 0.0;
    for &[a, b] in from {
        let mut candidates = vec![a, b];
        // the farthest point of [a, b] from `to` is an endpoint or the middle
        // of a gap of `to`
        for w in to.windows(2) {
            let mid = 0.5 * (w[0][1] + w[1][0]);
            if mid > a && mid < b {
                candidates.push(mid);
            }
        }
        for x in candidates {
            worst = worst.max(distance_to(x, to));
        }
    }
    worst
}

/// Hausdorff distance between two finite unions of closed intervals; both
/// lists must be sorted.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => directed(a, b).max(directed(b, a)),
    }
}

/// Sorted union of interval lists with overlaps joined.
pub fn union(parts: &[Vec<[f64; 2]>]) -> Vec<[f64; 2]> {
    let mut all: Vec<[f64; 2]> = parts.iter().flatten().copied().collect();
    all.sort_by(|x, y| x[0].total_cmp(&y[0]));
    merge(all, 0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct LawReport {
    pub expected: Vec<[f64; 2]>,
    pub measured: Vec<[f64; 2]>,
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl LawReport {
    fn new(expected: Vec<[f64; 2]>, measured: Vec<[f64; 2]>, tolerance: f64) -> Self {
        let distance = hausdorff(&expected, &measured);
        LawReport {
            pass: distance <= tolerance,
            expected,
            measured,
            distance,
            tolerance,
        }
    }
}

/// Compares the spectrum of `A - gamma I` with the spectrum of `A` moved by
/// `-gamma`.
pub fn check_shift_law(
    sys: &LinearSystem,
    gamma: f64,
    opts: &SpectrumOptions,
) -> Result<LawReport, SpectrumError> {
    let base = sacker_sell(sys, opts)?;
    let mut shifted_opts = opts.clone();
    shifted_opts.gamma_range = opts.gamma_range.map(|(a, b)| (a - gamma, b - gamma));
    let moved = sacker_sell(&shift(sys, gamma), &shifted_opts)?;
    Ok(LawReport::new(
        base.translated(-gamma),
        moved.intervals,
        2.0 * opts.resolution,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangularReport {
    pub full: SpectrumEstimate,
    pub blocks: Vec<SpectrumEstimate>,
    pub law: LawReport,
}

/// Probe times for structural checks over the horizon.
fn probe_times(opts: &SpectrumOptions) -> Vec<f64> {
    (0..=200)
        .map(|k| opts.t0 + opts.horizon * k as f64 / 200.0)
        .collect()
}

/// Compares the full spectrum of a block upper-triangular system with the
/// union of its diagonal-block spectra. `block_sizes` defaults to `1 x 1`
/// blocks.
pub fn check_triangular_union(
    sys: &LinearSystem,
    block_sizes: Option<&[usize]>,
    opts: &SpectrumOptions,
) -> Result<TriangularReport, SpectrumError> {
    let n = sys.dim();
    let sizes: Vec<usize> = block_sizes.map_or_else(|| vec![1; n], <[usize]>::to_vec);
    if sizes.iter().sum::<usize>() != n || sizes.contains(&0) {
        return Err(SpectrumError::InvalidOptions(format!(
            "block sizes {sizes:?} do not partition dimension {n}"
        )));
    }
    let mut starts = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for s in &sizes {
        starts.push(acc);
        acc += s;
    }
    let block_of = |i: usize| {
        starts
            .iter()
            .rposition(|&s| s <= i)
            .expect("partition covers row")
    };
    for t in probe_times(opts) {
        let m = sys.a.eval(t)?;
        for row in 0..n {
            for col in 0..n {
                if block_of(row) > block_of(col) && m[(row, col)] != 0.0 {
                    return Err(SpectrumError::NotTriangular {
                        row,
                        col,
                        value: m[(row, col)],
                        t,
                    });
                }
            }
        }
    }
    let full = sacker_sell(sys, opts)?;
    let blocks = starts
        .iter()
        .zip(&sizes)
        .map(|(&lo, &size)| sacker_sell(&sys.diagonal_block(lo, lo + size), opts))
        .collect::<Result<Vec<_>, _>>()?;
    let joined = union(
        &blocks
            .iter()
            .map(|b| b.intervals.clone())
            .collect::<Vec<_>>(),
    );
    let law = LawReport::new(joined, full.intervals.clone(), 2.0 * opts.resolution);
    Ok(TriangularReport { full, blocks, law })
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingReport {
    /// Largest probed `||B(t)||` on the second half of the horizon.
    pub tail_norm: f64,
    pub base: SpectrumEstimate,
    pub perturbed: SpectrumEstimate,
    pub law: LawReport,
}

/// Compares the spectra of `A` and `A + B` for a perturbation `B(t) -> 0`.
pub fn check_vanishing_perturbation(
    sys: &LinearSystem,
    pert: &LinearSystem,
    opts: &SpectrumOptions,
) -> Result<VanishingReport, SpectrumError> {
    let from = opts.t0 + opts.horizon / 2.0;
    let to = opts.t0 + opts.horizon;
    let mut tail_norm: f64 = 0.0;
    for k in 0..=100 {
        let t = from + (to - from) * k as f64 / 100.0;
        tail_norm = tail_norm.max(spectral_norm(&pert.a.eval(t)?));
    }
    if !(tail_norm < 0.05) {
        return Err(SpectrumError::NotVanishing {
            max_norm: tail_norm,
            from,
            to,
        });
    }
    let sum = LinearSystem::new(
        format!("{} + {}", sys.label, pert.label),
        sys.a.plus(&pert.a)?,
    );
    let base = sacker_sell(sys, opts)?;
    let perturbed = sacker_sell(&sum, opts)?;
    let law = LawReport::new(
        base.intervals.clone(),
        perturbed.intervals.clone(),
        2.0 * opts.resolution,
    );
    Ok(VanishingReport {
        tail_norm,
        base,
        perturbed,
        law,
    })
}

/// Spectrum at horizon `T` against `2T`.
pub fn check_horizon_doubling(
    sys: &LinearSystem,
    opts: &SpectrumOptions,
) -> Result<LawReport, SpectrumError> {
    let short = sacker_sell(sys, opts)?;
    let long_opts = SpectrumOptions {
        horizon: 2.0 * opts.horizon,
        ..opts.clone()
    };
    let long = sacker_sell(sys, &long_opts)?;
    Ok(LawReport::new(
        short.intervals,
        long.intervals,
        2.0 * opts.resolution,
    ))
}

/// Spectrum of a closed-form fundamental matrix.
pub fn sacker_sell_fundamental(
    phi: &MatrixFunction,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate, SpectrumError> {
    opts.validate()?;
    let analysis = DichotomyAnalysis::from_fundamental(phi, &opts.dichotomy())?;
    spectrum_of(&analysis, opts)
}
