//! Experiment runner for the `patch-meso` library.
//!
//! Six subcommands cover the library surface: `eig` (analytic and numeric
//! patch spectra), `evolve` (exact, mesoscale, and direct trajectories),
//! `bounds` (remainder and macroscale error-bound sweeps), `figures`
//! (canned data sets), `gl2d` (the two-dimensional Ginzburg-Landau patch
//! experiment), and `comms` (communication ledgers).  Every artifact is a
//! CSV file under `--out`; re-running a subcommand with the same
//! configuration and seed reproduces its output byte for byte.
//!
//! Settings resolve in precedence order: command-line flag, then the
//! `--config` file, then a built-in default.  The same flag feeds whichever
//! section the active subcommand reads; `--delta-t`, for example, overrides
//! `[schedule] delta_t` under `evolve`, `[gl] delta_t` under `gl2d`, and
//! `[comms] delta_t` under `comms`.

mod config;
mod figures;

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use patch_meso::commsim::{reduction_factor, simulate_exchange, Cadence, Topology};
use patch_meso::coupling::SinusoidForcing;
use patch_meso::coupling::TaylorJet;
use patch_meso::errbound::{bound_sweep, SweepRanges, SweepTables};
use patch_meso::evolve::{
    direct_integrate, exact_solution, meso_step, write_trajectory, TransitionKernel,
};
use patch_meso::gl2d::{run_gl2d, write_field_snapshots, write_macro_series, CouplingMode};
use patch_meso::operator::verify_transition_identity;
use patch_meso::spectral::{analytic_eigensystem, detect_degeneracy, Mode};
use patch_meso::{EigenSystem, FieldVector, GlConfig, PatchGeometry, PatchOperator};

use config::{parse_list, FileConfig};

/// Patch-dynamics experiment runner; all artifacts are CSV files.
#[derive(Parser)]
#[command(name = "patch-meso", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (sectioned `key = value`); flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV artifacts (config: `[output] dir`; default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed of the initial condition (config: `[gl] seed`).
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Canned data set for `figures`; see `figures --help` for the names.
    #[arg(long, global = true, value_name = "NAME")]
    which: Option<String>,

    /// Mesoscale exchange interval (config: `[schedule]`, `[gl]`, or `[comms]` `delta_t`).
    #[arg(long, global = true, value_name = "FLOAT")]
    delta_t: Option<f64>,

    /// Taylor order Q of the mesoscale extrapolation (config: `[schedule] q`).
    #[arg(long, global = true, value_name = "INT")]
    q: Option<usize>,

    /// Patch half-width n (config: `[patch] n` or `[gl] n`).
    #[arg(long, global = true, value_name = "INT")]
    n: Option<usize>,

    /// Core and action half-width a (config: `[patch] a`).
    #[arg(long, global = true, value_name = "INT")]
    a: Option<usize>,

    /// Coupling edge weight cos(l) (config: `[patch] cos_ell`).
    #[arg(long, global = true, value_name = "FLOAT")]
    cos_ell: Option<f64>,

    /// Neighbour-refresh mode of a gl2d run (config: `[gl] mode`).
    #[arg(long, global = true, value_name = "continuous|meso")]
    mode: Option<String>,

    /// Worker threads for sweeps; 0 or absent picks the machine default.
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,

    /// Macroscale lattice ratio N (config: `[patch] big_n`; default 4n+2).
    #[arg(long, global = true, value_name = "INT")]
    big_n: Option<usize>,

    /// Final time of a run (config: `[schedule]`, `[gl]`, or `[comms]` `t_end`).
    #[arg(long, global = true, value_name = "FLOAT")]
    t_end: Option<f64>,

    /// Micro integrator step (config: `[schedule]`, `[gl]`, or `[comms]` `dt_micro`).
    #[arg(long, global = true, value_name = "FLOAT")]
    dt_micro: Option<f64>,

    /// Smallest patch half-width of a sweep (config: `[sweep] n_min`).
    #[arg(long, global = true, value_name = "INT")]
    n_min: Option<usize>,

    /// Largest patch half-width of a sweep (config: `[sweep] n_max`).
    #[arg(long, global = true, value_name = "INT")]
    n_max: Option<usize>,

    /// Core half-widths of a sweep, comma-separated; absent means all
    /// 0 <= a < n (config: `[sweep] a_list`).
    #[arg(long, global = true, value_name = "LIST")]
    a_list: Option<String>,

    /// Edge weights of a sweep, comma-separated (config: `[sweep] cos_ell_list`).
    #[arg(long, global = true, value_name = "LIST")]
    cos_ell_list: Option<String>,

    /// Exchange intervals of a sweep, comma-separated (config: `[sweep] delta_t_list`).
    #[arg(long, global = true, value_name = "LIST")]
    delta_t_list: Option<String>,

    /// Taylor orders of a sweep, comma-separated (config: `[sweep] q_list`).
    #[arg(long, global = true, value_name = "LIST")]
    q_list: Option<String>,

    /// Imaginary part of the diffusion coefficient 1 + i*alpha (config: `[gl] alpha`).
    #[arg(long, global = true, value_name = "FLOAT")]
    alpha: Option<f64>,

    /// Imaginary part of the cubic coefficient 1 + i*beta (config: `[gl] beta`).
    #[arg(long, global = true, value_name = "FLOAT")]
    beta: Option<f64>,

    /// Inter-patch coupling strength (config: `[gl] gamma`).
    #[arg(long, global = true, value_name = "FLOAT")]
    gamma: Option<f64>,

    /// Side length of the periodic square domain (config: `[gl] domain_width`).
    #[arg(long, global = true, value_name = "FLOAT")]
    domain_width: Option<f64>,

    /// Microscale lattice spacing (config: `[gl] h`).
    #[arg(long, global = true, value_name = "FLOAT")]
    h: Option<f64>,

    /// Macroscale lattice spacing (config: `[gl] big_h`).
    #[arg(long, global = true, value_name = "FLOAT")]
    big_h: Option<f64>,

    /// Amplitude of the sinusoidal initial condition (config: `[gl] init_amplitude`).
    #[arg(long, global = true, value_name = "FLOAT")]
    init_amplitude: Option<f64>,

    /// Standard deviation of the initial Gaussian noise (config: `[gl] noise_std`).
    #[arg(long, global = true, value_name = "FLOAT")]
    noise_std: Option<f64>,

    /// Use the literal asymmetric edge weight instead of the symmetric one
    /// (config: `[gl] as_printed`).
    #[arg(long, global = true, value_name = "BOOL")]
    as_printed: Option<bool>,

    /// Microscale snapshot times, comma-separated (config: `[gl] snapshot_times`).
    #[arg(long, global = true, value_name = "LIST")]
    snapshot_times: Option<String>,

    /// Exchange topology of a comms run (config: `[comms] topology`).
    #[arg(long, global = true, value_name = "line|ring|grid")]
    topology: Option<String>,

    /// Patch count (line, ring) or grid side (config: `[comms] patches`).
    #[arg(long, global = true, value_name = "INT")]
    patches: Option<usize>,

    /// Scalars per message (config: `[comms] payload`).
    #[arg(long, global = true, value_name = "INT")]
    payload: Option<usize>,

    /// Ledger cadence of a comms run (config: `[comms] cadence`).
    #[arg(long, global = true, value_name = "micro|meso|both")]
    cadence: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic and numeric eigen-systems of one patch, with residuals.
    Eig,
    /// Exact, mesoscale, and direct trajectories under sinusoidal forcing.
    Evolve,
    /// Remainder and macroscale error-bound tables over parameter sweeps.
    Bounds,
    /// Canned data sets: penetrate20, error1, wavenum, nobuff, patch,
    /// action, glmeso, glsnapshots, mesofig.
    Figures,
    /// Two-dimensional Ginzburg-Landau patch run: macroscale series and
    /// microscale snapshots.
    Gl2d,
    /// Communication ledgers and the mesoscale reduction factor.
    Comms,
}

/// Resolved invocation: parsed flags, parsed configuration file, output
/// directory.
struct App {
    cli: Cli,
    file: FileConfig,
    out_dir: PathBuf,
}

impl App {
    /// Flag, then config key, then default.
    fn num<T: FromStr + Copy>(
        &self,
        flag: Option<T>,
        section: &str,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: Display,
    {
        if let Some(value) = flag {
            return Ok(value);
        }
        Ok(self.file.get::<T>(section, key)?.unwrap_or(default))
    }

    /// Enumerated string setting parsed identically from flag or file.
    fn choice<T>(
        &self,
        flag: &Option<String>,
        section: &str,
        key: &str,
        parse: fn(&str) -> Result<T>,
        default: T,
    ) -> Result<T> {
        if let Some(text) = flag {
            return parse(text).with_context(|| format!("bad value `{text}` for `--{key}`"));
        }
        Ok(self.file.get_map(section, key, parse)?.unwrap_or(default))
    }

    /// Comma-separated list setting with a default.
    fn list<T: FromStr>(
        &self,
        flag: &Option<String>,
        section: &str,
        key: &str,
        default: &[T],
    ) -> Result<Vec<T>>
    where
        T: Clone,
        T::Err: Display,
    {
        if let Some(text) = flag {
            return parse_list(text)
                .with_context(|| format!("bad value `{text}` for `--{}`", key.replace('_', "-")));
        }
        Ok(self.file.get_list::<T>(section, key)?.unwrap_or_else(|| default.to_vec()))
    }

    /// Comma-separated list setting without a default.
    fn list_opt<T: FromStr>(
        &self,
        flag: &Option<String>,
        section: &str,
        key: &str,
    ) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        if let Some(text) = flag {
            return parse_list(text)
                .map(Some)
                .with_context(|| format!("bad value `{text}` for `--{}`", key.replace('_', "-")));
        }
        self.file.get_list::<T>(section, key)
    }

    /// Creates `out_dir` if needed and streams one CSV artifact into it.
    fn artifact(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    ) -> Result<()> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating output directory `{}`", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        let file = fs::File::create(&path)
            .with_context(|| format!("creating `{}`", path.display()))?;
        let mut writer = BufWriter::new(file);
        write(&mut writer)?;
        writer.flush().with_context(|| format!("writing `{}`", path.display()))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Patch geometry shared by `eig` and `evolve`.
    fn patch_geometry(&self) -> Result<(PatchGeometry, f64)> {
        let n = self.num(self.cli.n, "patch", "n", 20)?;
        let a = self.num(self.cli.a, "patch", "a", 5)?;
        let big_n = self.num(self.cli.big_n, "patch", "big_n", 4 * n + 2)?;
        let cos_ell = self.num(self.cli.cos_ell, "patch", "cos_ell", 0.91)?;
        let g = PatchGeometry::new(n, a, big_n)?;
        Ok((g, cos_ell))
    }

    /// Sweep ranges shared by `bounds` and the sweep-backed canned figures.
    fn sweep_ranges(&self) -> Result<SweepRanges<f64>> {
        let n_min = self.num(self.cli.n_min, "sweep", "n_min", 4)?;
        let n_max = self.num(self.cli.n_max, "sweep", "n_max", 20)?;
        if n_min < 1 || n_max < n_min {
            bail!("need 1 <= n_min <= n_max, got n_min={n_min} n_max={n_max}");
        }
        Ok(SweepRanges {
            half_widths: (n_min..=n_max).collect(),
            core_half_widths: self.list_opt(&self.cli.a_list, "sweep", "a_list")?,
            cos_ells: self.list(&self.cli.cos_ell_list, "sweep", "cos_ell_list", &[0.91])?,
            delta_ts: self.list(&self.cli.delta_t_list, "sweep", "delta_t_list", &[0.5])?,
            taylor_orders: self.list(&self.cli.q_list, "sweep", "q_list", &[1])?,
        })
    }

    /// Ginzburg-Landau configuration from `[gl]` plus flag overrides.
    fn gl_config(&self) -> Result<GlConfig> {
        let d = GlConfig::default();
        Ok(GlConfig {
            alpha: self.num(self.cli.alpha, "gl", "alpha", d.alpha)?,
            beta: self.num(self.cli.beta, "gl", "beta", d.beta)?,
            domain_width: self.num(self.cli.domain_width, "gl", "domain_width", d.domain_width)?,
            h: self.num(self.cli.h, "gl", "h", d.h)?,
            big_h: self.num(self.cli.big_h, "gl", "big_h", d.big_h)?,
            n: self.num(self.cli.n, "gl", "n", d.n)?,
            gamma: self.num(self.cli.gamma, "gl", "gamma", d.gamma)?,
            delta_t: self.num(self.cli.delta_t, "gl", "delta_t", d.delta_t)?,
            dt_micro: self.num(self.cli.dt_micro, "gl", "dt_micro", d.dt_micro)?,
            t_end: self.num(self.cli.t_end, "gl", "t_end", d.t_end)?,
            seed: self.num(self.cli.seed, "gl", "seed", d.seed)?,
            init_amplitude: self.num(
                self.cli.init_amplitude,
                "gl",
                "init_amplitude",
                d.init_amplitude,
            )?,
            noise_std: self.num(self.cli.noise_std, "gl", "noise_std", d.noise_std)?,
            as_printed: self.num(self.cli.as_printed, "gl", "as_printed", d.as_printed)?,
        })
    }
}

fn parse_mode(text: &str) -> Result<CouplingMode> {
    match text {
        "continuous" => Ok(CouplingMode::Continuous),
        "meso" | "mesoscale" => Ok(CouplingMode::Mesoscale),
        _ => bail!("expected `continuous` or `meso`"),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum TopologyKind {
    Line,
    Ring,
    Grid,
}

fn parse_topology(text: &str) -> Result<TopologyKind> {
    match text {
        "line" => Ok(TopologyKind::Line),
        "ring" => Ok(TopologyKind::Ring),
        "grid" => Ok(TopologyKind::Grid),
        _ => bail!("expected `line`, `ring`, or `grid`"),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CadenceChoice {
    Micro,
    Meso,
    Both,
}

fn parse_cadence(text: &str) -> Result<CadenceChoice> {
    match text {
        "micro" => Ok(CadenceChoice::Micro),
        "meso" => Ok(CadenceChoice::Meso),
        "both" => Ok(CadenceChoice::Both),
        _ => bail!("expected `micro`, `meso`, or `both`"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .context("initialising the worker pool")?;
        }
    }

    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config `{}`", path.display()))?;
            FileConfig::parse(&text, &path.display().to_string())?
        }
        None => FileConfig::default(),
    };

    let out_dir = match &cli.out {
        Some(dir) => dir.clone(),
        None => file.get::<PathBuf>("output", "dir")?.unwrap_or_else(|| PathBuf::from("out")),
    };

    let app = App { cli, file, out_dir };
    match app.cli.command {
        Command::Eig => cmd_eig(&app),
        Command::Evolve => cmd_evolve(&app),
        Command::Bounds => cmd_bounds(&app),
        Command::Figures => figures::run(&app),
        Command::Gl2d => cmd_gl2d(&app),
        Command::Comms => cmd_comms(&app),
    }
}

/// Mode family and the wavenumber scaling that collapses its dispersion
/// relation: `patch` modes scale by `2(n - a)`, `action` modes by `2a + 1`.
fn mode_family(index: usize, n: usize, a: usize) -> (&'static str, f64) {
    let b = n - a;
    if index <= 2 * (b - 1) {
        ("patch", 2.0 * b as f64)
    } else {
        ("action", (2 * a + 1) as f64)
    }
}

/// Largest entry-wise deviation between an analytic and a numeric mode after
/// aligning their free normalisation: each biorthonormal pair `(v, z)` is
/// determined only up to `(c v, z / c)`, so the rights are compared at unit
/// 2-norm with matching sign and the lefts carry the inverse scale.
fn aligned_mode_diff(analytic: &Mode<f64>, numeric: &Mode<f64>) -> f64 {
    let na = analytic.right.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = numeric.right.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 =
        analytic.right.iter().zip(numeric.right.iter()).map(|(x, y)| x * y).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    let mut worst = 0.0f64;
    for (x, y) in analytic.right.iter().zip(numeric.right.iter()) {
        worst = worst.max((x / na - sign * y / nn).abs());
    }
    for (x, y) in analytic.left.iter().zip(numeric.left.iter()) {
        worst = worst.max((x * na - sign * y * nn).abs());
    }
    worst
}

fn cmd_eig(app: &App) -> Result<()> {
    let (g, cos_ell) = app.patch_geometry()?;
    let (n, a) = (g.half_width(), g.core_half_width());

    for pair in detect_degeneracy(&g, cos_ell) {
        eprintln!(
            "degenerate geometry: modes {} and {} share eigenvalue {}",
            pair.lower, pair.upper, pair.eigenvalue
        );
    }
    let es = analytic_eigensystem(&g, cos_ell)?;
    let op = PatchOperator::new(&g, cos_ell)?;
    let numeric = op.numeric_eigensystem()?;
    if numeric.modes().len() != es.modes().len() {
        bail!(
            "mode-count mismatch: analytic {} vs numeric {}",
            es.modes().len(),
            numeric.modes().len()
        );
    }

    app.artifact("modes.csv", |w| Ok(es.write_modes_csv(w)?))?;
    app.artifact("spectrum.csv", |w| {
        writeln!(
            w,
            "k,l_k,family,scaled_wavenumber,lambda_analytic,lambda_numeric,\
             lambda_abs_diff,eigenvector_max_diff"
        )?;
        for (am, nm) in es.modes().iter().zip(numeric.modes()) {
            let (family, divisor) = mode_family(am.index, n, a);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                am.index,
                am.wavenumber,
                family,
                am.wavenumber / divisor,
                am.eigenvalue,
                nm.eigenvalue,
                (am.eigenvalue - nm.eigenvalue).abs(),
                aligned_mode_diff(am, nm),
            )?;
        }
        Ok(())
    })?;

    let lambda_diff = es
        .modes()
        .iter()
        .zip(numeric.modes())
        .map(|(am, nm)| (am.eigenvalue - nm.eigenvalue).abs())
        .fold(0.0f64, f64::max);
    let vector_diff = es
        .modes()
        .iter()
        .zip(numeric.modes())
        .map(|(am, nm)| aligned_mode_diff(am, nm))
        .fold(0.0f64, f64::max);
    println!(
        "patch n={n} a={a} N={} cos_ell={cos_ell}: {} modes",
        g.macro_ratio(),
        es.modes().len()
    );
    println!("max |lambda_analytic - lambda_numeric| = {lambda_diff:.3e}");
    println!("max aligned eigenvector deviation     = {vector_diff:.3e}");
    println!(
        "biorthonormality residual: analytic {:.3e}, numeric {:.3e}",
        es.biorthonormality_residual(),
        numeric.biorthonormality_residual()
    );
    println!(
        "transition identity residual: {:.3e}",
        verify_transition_identity(&es, &op)?
    );
    Ok(())
}

fn cmd_evolve(app: &App) -> Result<()> {
    let (g, cos_ell) = app.patch_geometry()?;
    let delta_t = app.num(app.cli.delta_t, "schedule", "delta_t", 0.5)?;
    let q = app.num(app.cli.q, "schedule", "q", 1)?;
    let t_end = app.num(app.cli.t_end, "schedule", "t_end", 2.5)?;
    let dt_micro = app.num(app.cli.dt_micro, "schedule", "dt_micro", 0.01)?;

    if !(delta_t > 0.0) {
        bail!("delta_t must be positive, got {delta_t}");
    }
    let ratio = t_end / delta_t;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) {
        bail!("t_end must be a positive integer multiple of delta_t, got t_end/delta_t = {ratio}");
    }
    let steps = steps as usize;

    let es = analytic_eigensystem(&g, cos_ell)?;
    let op = PatchOperator::new(&g, cos_ell)?;
    let forcing = SinusoidForcing::unit();
    let u0 = FieldVector::zeros(&g, 0.0);

    let mut exact = vec![u0.clone()];
    let mut direct = vec![u0.clone()];
    for m in 1..=steps {
        let t = m as f64 * delta_t;
        exact.push(exact_solution(&es, &u0, &forcing, t)?);
        direct.push(direct_integrate(&op, &u0, &forcing, t, dt_micro)?);
    }

    let kernel = TransitionKernel::new(&es, delta_t);
    let mut meso = vec![u0.clone()];
    for _ in 0..steps {
        let current = meso.last().expect("seeded with u0");
        let jet = TaylorJet::from_provider(&forcing, current.time(), q)?;
        meso.push(meso_step(&kernel, current, &jet)?);
    }

    app.artifact("exact.csv", |w| Ok(write_trajectory(w, &exact)?))?;
    app.artifact("meso.csv", |w| Ok(write_trajectory(w, &meso)?))?;
    app.artifact("direct.csv", |w| Ok(write_trajectory(w, &direct)?))?;
    app.artifact("differences.csv", |w| {
        writeln!(w, "t,exact_vs_meso,exact_vs_direct")?;
        for m in 0..=steps {
            writeln!(
                w,
                "{},{},{}",
                exact[m].time(),
                exact[m].interior_max_diff(&meso[m])?,
                exact[m].interior_max_diff(&direct[m])?,
            )?;
        }
        Ok(())
    })?;

    let last = steps;
    println!(
        "n={} a={} cos_ell={cos_ell} delta_t={delta_t} Q={q}: {steps} mesoscale steps to t={}",
        g.half_width(),
        g.core_half_width(),
        exact[last].time()
    );
    println!(
        "final interior deviations: exact vs meso {:.3e}, exact vs direct {:.3e}",
        exact[last].interior_max_diff(&meso[last])?,
        exact[last].interior_max_diff(&direct[last])?,
    );
    Ok(())
}

/// Runs a sweep with the half-widths distributed over the worker pool; rows
/// come back concatenated in half-width order, identical to a serial sweep.
fn parallel_sweep(ranges: &SweepRanges<f64>) -> SweepTables<f64> {
    let parts: Vec<SweepTables<f64>> = ranges
        .half_widths
        .par_iter()
        .map(|&n| {
            bound_sweep(&SweepRanges {
                half_widths: vec![n],
                core_half_widths: ranges.core_half_widths.clone(),
                cos_ells: ranges.cos_ells.clone(),
                delta_ts: ranges.delta_ts.clone(),
                taylor_orders: ranges.taylor_orders.clone(),
            })
        })
        .collect();
    let mut merged = SweepTables::default();
    for part in parts {
        merged.penetration.extend(part.penetration);
        merged.macro_bounds.extend(part.macro_bounds);
        merged.skipped.extend(part.skipped);
    }
    merged
}

/// Prints degenerate-geometry skips to standard error.
fn report_skips(tables: &SweepTables<f64>) {
    for line in &tables.skipped {
        eprintln!("skipped: {line}");
    }
}

fn cmd_bounds(app: &App) -> Result<()> {
    let ranges = app.sweep_ranges()?;
    let tables = parallel_sweep(&ranges);
    report_skips(&tables);
    app.artifact("penetration.csv", |w| Ok(tables.write_penetration_csv(w)?))?;
    app.artifact("macro_bounds.csv", |w| Ok(tables.write_macro_csv(w)?))?;
    println!(
        "{} remainder rows, {} macroscale rows, {} skipped parameter points",
        tables.penetration.len(),
        tables.macro_bounds.len(),
        tables.skipped.len()
    );
    Ok(())
}

fn cmd_gl2d(app: &App) -> Result<()> {
    let cfg = app.gl_config()?;
    let mode = app.choice(&app.cli.mode, "gl", "mode", parse_mode, CouplingMode::Mesoscale)?;
    let snapshot_times =
        app.list(&app.cli.snapshot_times, "gl", "snapshot_times", &[0.04, 0.4])?;

    let run = run_gl2d(&cfg, mode, &snapshot_times)?;
    app.artifact("gl_macro.csv", |w| Ok(write_macro_series(w, &run)?))?;
    app.artifact("gl_fields.csv", |w| Ok(write_field_snapshots(w, &run)?))?;

    let side = run.patches_per_side();
    println!(
        "{mode} coupling, {side}x{side} patches of {}x{} points, seed {}: \
         {} exchange rounds to t={}",
        2 * cfg.n + 1,
        2 * cfg.n + 1,
        cfg.seed,
        run.exchanges,
        cfg.t_end
    );
    Ok(())
}

fn cmd_comms(app: &App) -> Result<()> {
    let kind = app.choice(&app.cli.topology, "comms", "topology", parse_topology, TopologyKind::Grid)?;
    let patches = app.num(app.cli.patches, "comms", "patches", 4)?;
    let payload = app.num(app.cli.payload, "comms", "payload", 2)?;
    let delta_t = app.num(app.cli.delta_t, "comms", "delta_t", 0.2)?;
    let dt_micro = app.num(app.cli.dt_micro, "comms", "dt_micro", 1e-3)?;
    let t_end = app.num(app.cli.t_end, "comms", "t_end", 0.4)?;
    let choice = app.choice(&app.cli.cadence, "comms", "cadence", parse_cadence, CadenceChoice::Both)?;

    let topology = match kind {
        TopologyKind::Line => Topology::Line { patches },
        TopologyKind::Ring => Topology::Ring { patches },
        TopologyKind::Grid => Topology::Grid2dPeriodic { side: patches },
    };

    let micro = if choice != CadenceChoice::Meso {
        let ledger = simulate_exchange(&topology, Cadence::Micro { dt_micro }, t_end, payload)?;
        app.artifact("comms_micro.csv", |w| Ok(ledger.write_csv(w)?))?;
        println!(
            "micro cadence: {} rounds, {} messages, {} scalars",
            ledger.rounds(),
            ledger.total_messages(),
            ledger.total_scalars()
        );
        Some(ledger)
    } else {
        None
    };
    let meso = if choice != CadenceChoice::Micro {
        let ledger = simulate_exchange(&topology, Cadence::Meso { delta_t }, t_end, payload)?;
        app.artifact("comms_meso.csv", |w| Ok(ledger.write_csv(w)?))?;
        println!(
            "meso cadence:  {} rounds, {} messages, {} scalars",
            ledger.rounds(),
            ledger.total_messages(),
            ledger.total_scalars()
        );
        Some(ledger)
    } else {
        None
    };
    if let (Some(micro), Some(meso)) = (&micro, &meso) {
        println!("reduction factor: {}", reduction_factor(micro, meso)?);
    }
    Ok(())
}

/// Shared by `figures`: writes the four lowest-|lambda| modes of one family
/// as `k,l_k,lambda_k,j,v,z` rows.
fn write_family_modes(
    w: &mut BufWriter<fs::File>,
    es: &EigenSystem,
    family: &'static str,
) -> Result<()> {
    let g = *es.geometry();
    let (n, a) = (g.half_width(), g.core_half_width());
    let mut picks: Vec<&Mode<f64>> = es
        .modes()
        .iter()
        .filter(|m| mode_family(m.index, n, a).0 == family)
        .collect();
    picks.sort_by(|x, y| {
        x.eigenvalue
            .abs()
            .partial_cmp(&y.eigenvalue.abs())
            .expect("eigenvalues are finite")
            .then(x.index.cmp(&y.index))
    });
    picks.truncate(4);
    picks.sort_by_key(|m| m.index);
    if picks.len() < 4 {
        bail!("family `{family}` has only {} modes at n={n} a={a}", picks.len());
    }

    writeln!(w, "k,l_k,lambda_k,j,v,z")?;
    for mode in picks {
        for i in 0..g.points() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                mode.index,
                mode.wavenumber,
                mode.eigenvalue,
                g.coord(i),
                mode.right[i],
                mode.left[i]
            )?;
        }
    }
    Ok(())
}
