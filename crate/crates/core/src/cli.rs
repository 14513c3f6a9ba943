//! Command-line front end.
//!
//! Every command reads its section of an optional TOML document, applies
//! flag overrides, writes plot-ready CSV and JSON into the output directory
//! and records the resolved configuration in `manifest.json`. `tails`
//! shares the ensemble's directory by default and writes
//! `tails_manifest.json` instead.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::control::{search_strategies, ControlProblem};
use crate::dynamics::{
    integrate, matched_initial_state, motion_integral, Input, IntegratorSettings, ModelParams,
};
use crate::forcing::{cross_check, integrate_forced_phase, verify_master4, PhaseSettings};
use crate::format::fmt_g;
use crate::montecarlo::{read_series_csv, run_ensemble, write_histogram_csv, EnsembleConfig};
use crate::phase::{
    features, grid_avoiding, trace_cycle, write_curve_csv, Label, NeverDetour, PhaseCurve,
};
use crate::tailfit::{exponent_stats, fit_runs, write_fits_csv, Estimator, Side, Variable};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "EQDYN_OUT";

/// The `C1` values drawn by `phase` when none are given.
pub const DEFAULT_PHASE_C1: [f64; 6] = [0.5, -0.5, 0.0, 1.0, 2.0, 5.0];

#[derive(Debug, Parser)]
#[command(name = "eqdyn", version, about = "Price/volume dynamics toolkit")]
pub struct Cli {
    /// TOML document with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $EQDYN_OUT, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for ensemble and control.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one matched trajectory.
    Simulate(SimulateArgs),
    /// Closed-form phase curves and their labelled points.
    Phase(PhaseArgs),
    /// Monte Carlo correlation ensemble.
    Ensemble(EnsembleArgs),
    /// Tail exponents of a stored ensemble.
    Tails(TailsArgs),
    /// Forced phase path for z = k/u with its consistency checks.
    Force(ForceArgs),
    /// Strategy search for the market maker.
    Control(ControlArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
}

impl ModelArgs {
    fn apply(&self, p: &mut ModelParams) {
        set(&mut p.beta1, self.beta1);
        set(&mut p.beta2, self.beta2);
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Apply the input z = k / x4.
    #[arg(long)]
    pub k: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct PhaseArgs {
    /// May be repeated.
    #[arg(long)]
    pub c1: Vec<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TailsArgs {
    /// Directory written by `ensemble`.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct ForceArgs {
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct ControlArgs {
    #[arg(long = "U")]
    pub u_bound: Option<f64>,
    #[arg(long = "L")]
    pub l_bound: Option<f64>,
    /// Volume coefficient of the profit rate.
    #[arg(long = "c-vol")]
    pub c_vol: Option<f64>,
    /// Trend penalty of the profit rate.
    #[arg(long = "c-trend")]
    pub c_trend: Option<f64>,
    /// Search `k` in `[-k, k]`.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub simulate: SimulateConfig,
    pub phase: PhaseConfig,
    pub ensemble: EnsembleConfig,
    pub tails: TailsConfig,
    pub force: ForceConfig,
    pub control: ControlConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub params: ModelParams,
    pub c1: f64,
    pub u0: f64,
    pub v0: f64,
    pub k: f64,
    pub horizon: f64,
    pub sample_dt: f64,
    pub tolerance: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            c1: -0.5,
            u0: 1.0,
            v0: 1.0,
            k: 0.0,
            horizon: 10.0,
            sample_dt: 0.01,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub c1: Vec<f64>,
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub points: usize,
    /// Grid points closer than this to a singular line are dropped.
    pub guard: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            c1: DEFAULT_PHASE_C1.to_vec(),
            v0: 1.0,
            v_min: -6.0,
            v_max: 4.0,
            points: 2001,
            guard: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailsConfig {
    pub from: Option<PathBuf>,
    pub side: Side,
    pub fit_fraction: f64,
    pub estimator: Estimator,
}

impl Default for TailsConfig {
    fn default() -> Self {
        Self {
            from: None,
            side: Side::Left,
            fit_fraction: crate::tailfit::DEFAULT_FIT_FRACTION,
            estimator: Estimator::Ols,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceConfig {
    pub params: ModelParams,
    /// Homogeneous `C1` fixing the initial slope `w0`.
    pub c1: f64,
    pub u0: f64,
    pub v0: f64,
    pub k: f64,
    pub u_end: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            c1: -0.5,
            u0: 1.0,
            v0: 1.0,
            k: 0.01,
            u_end: 3.0,
            tolerance: 1e-11,
            samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub problem: ControlProblem,
    /// Matched initial price deviation, volume and slope.
    pub x1: f64,
    pub x2: f64,
    pub x4: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            problem: ControlProblem::default(),
            x1: 0.2,
            x2: 0.5,
            x4: 1.0,
            budget: 57,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: Option<usize>,
    config: &'a C,
    outputs: Vec<String>,
}

/// Collects the files a command writes.
struct Outputs {
    dir: PathBuf,
    manifest: &'static str,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            manifest: "manifest.json",
            written: Vec::new(),
        })
    }

    fn with_manifest(mut self, name: &'static str) -> Self {
        self.manifest = name;
        self
    }

    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn finish<C: Serialize>(
        mut self,
        command: &str,
        threads: Option<usize>,
        config: &C,
    ) -> anyhow::Result<Vec<String>> {
        let mut outputs = self.written.clone();
        outputs.push(self.manifest.into());
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            threads,
            config,
            outputs: outputs.clone(),
        };
        self.json(self.manifest, &manifest)?;
        Ok(outputs)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// File-name fragment for a `C1` value, e.g. `m0.5` for -0.5.
pub fn c1_tag(c1: f64) -> String {
    let s = fmt_g(c1);
    match s.strip_prefix('-') {
        Some(rest) => format!("m{rest}"),
        None => s,
    }
}

/// Runs a parsed command line. Returns the files written.
pub fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Simulate(a) => {
            let mut c = file.simulate;
            a.model.apply(&mut c.params);
            set(&mut c.c1, a.c1);
            set(&mut c.v0, a.v0);
            set(&mut c.horizon, a.horizon);
            set(&mut c.sample_dt, a.dt);
            set(&mut c.k, a.k);
            simulate(&c, Outputs::new(out)?, threads)
        }
        Command::Phase(a) => {
            let mut c = file.phase;
            if !a.c1.is_empty() {
                c.c1 = a.c1;
            }
            set(&mut c.v0, a.v0);
            phase(&c, Outputs::new(out)?, threads)
        }
        Command::Ensemble(a) => {
            let mut c = file.ensemble;
            a.model.apply(&mut c.params);
            set(&mut c.c1, a.c1);
            set(&mut c.n_runs, a.runs);
            set(&mut c.seed, a.seed);
            set(&mut c.horizon, a.horizon);
            set(&mut c.sample_dt, a.dt);
            c.keep_series = true;
            ensemble(&c, Outputs::new(out)?, threads)
        }
        Command::Tails(a) => {
            let mut c = file.tails;
            if a.from.is_some() {
                c.from = a.from;
            }
            let from = c
                .from
                .clone()
                .context("tails needs --from <ensemble directory>")?;
            let dir = cli.out.clone().or(file.out).unwrap_or_else(|| from.clone());
            let out = Outputs::new(dir)?.with_manifest("tails_manifest.json");
            tails(&c, &from, out, threads)
        }
        Command::Force(a) => {
            let mut c = file.force;
            a.model.apply(&mut c.params);
            set(&mut c.c1, a.c1);
            set(&mut c.v0, a.v0);
            set(&mut c.k, a.k);
            force(&c, Outputs::new(out)?, threads)
        }
        Command::Control(a) => {
            let mut c = file.control;
            let p = &mut c.problem;
            a.model.apply(&mut p.params);
            set(&mut p.params.regularity_bound, a.u_bound);
            set(&mut p.params.loss_bound, a.l_bound);
            set(&mut p.params.c1, a.c_vol);
            set(&mut p.params.c2, a.c_trend);
            set(&mut p.horizon, a.horizon);
            set(&mut p.sample_dt, a.dt);
            if let Some(k) = a.k {
                p.k_min = -k.abs();
                p.k_max = k.abs();
            }
            set(&mut c.seed, a.seed);
            control(&c, Outputs::new(out)?, threads)
        }
    }
}

/// Parses `std::env::args` and runs; errors are printed with their context.
pub fn main_entry() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{f}");
            }
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    termination: &'static str,
    samples: usize,
    final_time: f64,
    c1_initial: f64,
    c1_final: f64,
}

fn simulate(
    c: &SimulateConfig,
    mut out: Outputs,
    threads: Option<usize>,
) -> anyhow::Result<Vec<String>> {
    let p = &c.params;
    let a0 = (c.c1 + c.v0 * (c.v0 + 2.0)) / (2.0 * c.u0);
    let s0 = matched_initial_state(a0 / p.beta1, c.v0 / p.beta2, c.u0, p)?;
    let input = if c.k == 0.0 {
        Input::Zero
    } else {
        Input::InverseU { k: c.k }
    };
    let settings = IntegratorSettings::adaptive(c.tolerance).sampled(c.sample_dt);
    let traj = integrate(&s0, &input, p, c.horizon, &settings)?;
    let mut w = out.create("trajectory.csv")?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    let last = traj.last_state();
    out.json(
        "simulate_summary.json",
        &SimulateSummary {
            termination: traj.termination.label(),
            samples: traj.len(),
            final_time: *traj.times.last().unwrap_or(&0.0),
            c1_initial: motion_integral(&s0, p),
            c1_final: motion_integral(&last, p),
        },
    )?;
    out.finish("simulate", threads, c)
}

fn phase(c: &PhaseConfig, mut out: Outputs, threads: Option<usize>) -> anyhow::Result<Vec<String>> {
    if c.c1.is_empty() {
        bail!("phase needs at least one C1 value");
    }
    let mut all = Vec::new();
    for &c1 in &c.c1 {
        let curve =
            PhaseCurve::new(c1, c.v0).with_context(|| format!("phase curve for C1 = {c1}"))?;
        let avoid: Vec<f64> = curve.singular_line().map(|(v, _)| v).into_iter().collect();
        let grid = grid_avoiding(c.v_min, c.v_max, c.points, &avoid, c.guard);
        let tag = c1_tag(c1);
        let mut w = out.create(&format!("phase_c1_{tag}.csv"))?;
        write_curve_csv(&curve.sample(&grid), &mut w)?;
        w.flush()?;
        if c1 < 0.0 {
            let cycle = trace_cycle(&curve, &mut NeverDetour, Label::B, 8)?;
            let mut w = out.create(&format!("cycle_c1_{tag}.csv"))?;
            cycle.write_csv(&mut w)?;
            w.flush()?;
        }
        all.push(features(&curve));
    }
    out.json("phase_features.json", &all)?;
    out.finish("phase", threads, c)
}

#[derive(Serialize)]
struct EnsembleStats {
    c1: f64,
    seed: u64,
    runs: usize,
    completed: usize,
    excluded: usize,
    exploded: usize,
    max_abs_rho: Option<f64>,
    p99_abs_rho: Option<f64>,
    median_abs_rho: Option<f64>,
    fraction_below_0_8: Option<f64>,
}

fn ensemble(
    c: &EnsembleConfig,
    mut out: Outputs,
    threads: Option<usize>,
) -> anyhow::Result<Vec<String>> {
    let result = run_ensemble(c)?;
    let mut w = out.create("correlations.csv")?;
    result.write_correlations_csv(&mut w)?;
    w.flush()?;
    let mut w = out.create("histogram.csv")?;
    write_histogram_csv(&result.histogram(20), &mut w)?;
    w.flush()?;
    let mut w = out.create("series.csv")?;
    result.write_series_csv(&mut w)?;
    w.flush()?;
    let n = result.completed();
    let below = result.correlations.iter().filter(|r| **r < 0.8).count();
    out.json(
        "ensemble_stats.json",
        &EnsembleStats {
            c1: c.c1,
            seed: c.seed,
            runs: result.runs.len(),
            completed: n,
            excluded: result.excluded(),
            exploded: result.runs.iter().filter(|r| r.exploded).count(),
            max_abs_rho: result.max_abs_rho(),
            p99_abs_rho: result.quantile(0.99),
            median_abs_rho: result.quantile(0.5),
            fraction_below_0_8: (n > 0).then(|| below as f64 / n as f64),
        },
    )?;
    out.finish("ensemble", threads, c)
}

#[derive(Serialize)]
struct VariableStats {
    fits: usize,
    max_abs_lambda: Option<f64>,
    all_below_2: bool,
    mean: Option<f64>,
    std: Option<f64>,
    skewness: Option<f64>,
}

#[derive(Serialize)]
struct TailStats {
    side: Side,
    fit_fraction: f64,
    estimator: Estimator,
    skipped: usize,
    lambda1: VariableStats,
    lambda2: VariableStats,
}

fn tails(
    c: &TailsConfig,
    from: &Path,
    mut out: Outputs,
    threads: Option<usize>,
) -> anyhow::Result<Vec<String>> {
    let path = from.join("series.csv");
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let series = read_series_csv(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))?;
    let (fits, skipped) = fit_runs(&series, c.side, c.fit_fraction, c.estimator);
    let mut w = out.create("tail_fits.csv")?;
    write_fits_csv(&fits, &mut w)?;
    w.flush()?;
    let mut summarise = |var: Variable| -> anyhow::Result<VariableStats> {
        let lambdas: Vec<f64> = fits
            .iter()
            .filter(|f| f.variable == var)
            .map(|f| f.fit.lambda)
            .collect();
        let stats = exponent_stats(&lambdas).ok();
        if let Some(s) = &stats {
            let mut w = out.create(&format!("npp_{}.csv", var.label()))?;
            s.write_plot_csv(&mut w)?;
            w.flush()?;
        }
        Ok(VariableStats {
            fits: lambdas.len(),
            max_abs_lambda: lambdas.iter().map(|l| l.abs()).reduce(f64::max),
            all_below_2: lambdas.iter().all(|l| l.abs() < 2.0),
            mean: stats.as_ref().map(|s| s.mean),
            std: stats.as_ref().map(|s| s.std),
            skewness: stats.as_ref().map(|s| s.skewness),
        })
    };
    let lambda1 = summarise(Variable::X1)?;
    let lambda2 = summarise(Variable::X2)?;
    out.json(
        "tail_stats.json",
        &TailStats {
            side: c.side,
            fit_fraction: c.fit_fraction,
            estimator: c.estimator,
            skipped: skipped.len(),
            lambda1,
            lambda2,
        },
    )?;
    out.finish("tails", threads, c)
}

#[derive(Serialize)]
struct ForceSummary {
    stop: crate::forcing::PhaseStop,
    points: usize,
    max_residual: f64,
    cross_check: Option<crate::forcing::CrossCheck>,
}

fn force(c: &ForceConfig, mut out: Outputs, threads: Option<usize>) -> anyhow::Result<Vec<String>> {
    let w0 = (c.c1 + c.v0 * (c.v0 + 2.0)) / (2.0 * c.u0 * c.v0);
    let settings = PhaseSettings {
        tolerance: c.tolerance,
        samples: c.samples,
        ..PhaseSettings::default()
    };
    let path = integrate_forced_phase(c.u0, c.v0, w0, c.k, &c.params, c.u_end, &settings)?;
    let k = c.k;
    let residual = verify_master4(&path, &|u| k / u, &c.params)?;
    let check = cross_check(&path, k, &c.params, c.tolerance).ok();
    let mut w = out.create("forced_phase.csv")?;
    path.write_csv(&mut w)?;
    w.flush()?;
    let mut w = out.create("residual.csv")?;
    residual.write_csv(&mut w)?;
    w.flush()?;
    out.json(
        "force_summary.json",
        &ForceSummary {
            stop: path.stop,
            points: path.points.len(),
            max_residual: residual.max_abs,
            cross_check: check,
        },
    )?;
    out.finish("force", threads, c)
}

fn control(
    c: &ControlConfig,
    mut out: Outputs,
    threads: Option<usize>,
) -> anyhow::Result<Vec<String>> {
    let p = &c.problem.params;
    let s0 = matched_initial_state(c.x1, c.x2, c.x4, p)?;
    let result = search_strategies(&c.problem, &s0, c.budget, c.seed)?;
    let mut w = out.create("strategies.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    out.json("control_summary.json", &result.summary(&c.problem))?;
    out.finish("control", threads, c)
}
