mod config;
mod experiments;
mod output;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use glmep::solver::{run_trials, TrialSpec};
use glmep::spectrum::LORENZ_EPS;
use glmep::state_evolution::{informative_v_r, noise_sensitivity_slope, StateEvolution, THRESHOLD_DELTA_HI};
use serde::Serialize;

use config::{ExperimentConfig, FunctionSpec, SpectrumSpec};
use experiments::{
    init_mode, lorenz_name, lorenz_table, monotonicity_name, run_experiment, sigma_w2_for_snr_db, signed_rows,
    unsigned, ExperimentRegistry, GRow, RunOptions, Sampling, SlopeRow, ThresholdRow,
};
use output::emit_csv;

#[derive(Parser)]
#[command(name = "glmep", version, about = "GLM-EP for y = f(Ax): solver, state evolution and spectrum design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo GLM-EP trials; per-iteration CSV.
    Run(RunArgs),
    /// State-evolution trace; CSV t, V_l, V_r, mse_pred.
    Se(SeArgs),
    /// Shape of G(v_r) for a nonlinearity.
    Classify(ClassifyArgs),
    /// Perfect-recovery threshold per spectrum.
    Threshold(ThresholdArgs),
    /// Small-noise slope MSE/sigma^2.
    Noise(NoiseArgs),
    /// Lorenz curves of two spectra; CSV u, L1, L2.
    Lorenz(LorenzArgs),
    /// Run an experiment config.
    Experiment(ExperimentArgs),
    /// SE against Monte Carlo for an se_accuracy config.
    Compare(ExperimentArgs),
    /// List experiments and their resolved default parameters.
    List,
}

#[derive(Args)]
struct Common {
    /// kind[:k=v,...] or @file.json
    #[arg(long, default_value = "abs")]
    f: String,
    #[arg(long, default_value_t = 1.1)]
    delta: f64,
    /// Write CSV here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1 << 15)]
    n: usize,
    /// kind[:k=v,...] or @file.json
    #[arg(long, default_value = "geometric:beta=0")]
    spectrum: String,
    #[arg(long, conflicts_with = "snr_db")]
    sigma_w2: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// uninformative, informative or informative:V
    #[arg(long, default_value = "uninformative")]
    init: String,
    #[arg(long, value_enum, default_value = "iid")]
    sampling: SamplingArg,
    /// Append the MSE minimized over the sign of the estimate.
    #[arg(long)]
    sign_resolved: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SamplingArg {
    Iid,
    Stratified,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Iid => Sampling::Iid,
            SamplingArg::Stratified => Sampling::Stratified,
        }
    }
}

#[derive(Args)]
struct SeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "geometric:beta=0")]
    spectrum: String,
    #[arg(long, default_value_t = 0.0)]
    sigma_w2: f64,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long, default_value = "uninformative")]
    init: String,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Also write the G(v_r) curve here.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    common: Common,
    /// Repeatable.
    #[arg(long, required = true)]
    spectrum: Vec<String>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Repeatable.
    #[arg(long, required = true)]
    spectrum: Vec<String>,
    /// Decreasing noise variances, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1e-6,3.16e-7,1e-7,3.16e-8,1e-8,3.16e-9,1e-9,3.16e-10,1e-10")]
    sigma_w2: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    init_v: f64,
}

#[derive(Args)]
struct LorenzArgs {
    #[arg(long)]
    spectrum1: String,
    #[arg(long)]
    spectrum2: String,
    #[arg(long, default_value_t = 1.1)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    emit_plot_data: bool,
    /// Discard cached cells of a different run in the output directory.
    #[arg(long)]
    fresh: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when a configured check failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Se(a) => cmd_se(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Lorenz(a) => cmd_lorenz(a),
        Command::Experiment(a) => cmd_experiment(a, false),
        Command::Compare(a) => cmd_experiment(a, true),
        Command::List => cmd_list(),
    }
}

fn write_rows<R: Serialize>(path: Option<&Path>, rows: &[R]) -> Result<()> {
    match path {
        Some(p) => emit_csv(File::create(p).with_context(|| format!("writing {}", p.display()))?, rows),
        None => emit_csv(io::stdout().lock(), rows),
    }
}

/// `uninformative` gives `None`; `informative` defaults V to 20.
fn parse_init(s: &str) -> Result<Option<f64>> {
    match s.split_once(':') {
        None if s == "uninformative" => Ok(None),
        None if s == "informative" => Ok(Some(20.0)),
        Some(("informative", v)) => {
            let v: f64 = v.parse().with_context(|| format!("init variance '{v}'"))?;
            if !(v > 0.0 && v.is_finite()) {
                bail!("init variance must be positive, got {v}");
            }
            Ok(Some(v))
        }
        _ => Err(anyhow!("unknown init mode '{s}' (expected uninformative, informative or informative:V)")),
    }
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let f = FunctionSpec::parse_arg(&a.common.f)?.build()?;
    let model = SpectrumSpec::parse_arg(&a.spectrum)?.at(a.common.delta)?;
    let sigma_w2 = match (a.sigma_w2, a.snr_db) {
        (_, Some(db)) => sigma_w2_for_snr_db(db),
        (Some(s), None) => s,
        (None, None) => 0.0,
    };
    let spec = TrialSpec {
        n: a.n,
        delta: a.common.delta,
        f,
        model,
        sigma_w2,
        t_max: a.iters,
        init: init_mode(parse_init(&a.init)?),
        sampling: Sampling::from(a.sampling).into(),
    };
    let rows = signed_rows(&run_trials(&spec, a.trials, a.seed)?);
    let out = a.common.output.as_deref();
    if a.sign_resolved {
        write_rows(out, &rows)?;
    } else {
        write_rows(out, &unsigned(&rows))?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct SeRow {
    t: usize,
    #[serde(rename = "V_l")]
    v_l: f64,
    #[serde(rename = "V_r")]
    v_r: f64,
    mse_pred: f64,
}

fn cmd_se(a: SeArgs) -> Result<bool> {
    let f = FunctionSpec::parse_arg(&a.common.f)?.build()?;
    let model = SpectrumSpec::parse_arg(&a.spectrum)?.at(a.common.delta)?;
    let v0 = parse_init(&a.init)?.map_or(1.0, informative_v_r);
    let tr = StateEvolution::shared(f, a.sigma_w2).trace(model.as_ref(), a.common.delta, a.iters, v0)?;
    let rows: Vec<SeRow> =
        tr.states.iter().map(|s| SeRow { t: s.t, v_l: s.v_l, v_r: s.v_r, mse_pred: s.predicted_mse }).collect();
    write_rows(a.common.output.as_deref(), &rows)?;
    eprintln!("converged: {}, final mse_pred: {:e}", tr.converged, tr.final_mse());
    Ok(true)
}

#[derive(Serialize)]
struct VerdictRow {
    f: String,
    delta: f64,
    verdict: String,
}

fn cmd_classify(a: ClassifyArgs) -> Result<bool> {
    let f = FunctionSpec::parse_arg(&a.common.f)?.build()?;
    let se = StateEvolution::shared(f.clone(), 0.0);
    let verdict = monotonicity_name(se.classify_g(a.common.delta, a.grid)?);
    if let Some(path) = &a.curve {
        let curve: Vec<GRow> =
            se.g_curve(a.common.delta, a.grid)?.into_iter().map(|(v_r, g)| GRow { v_r, g }).collect();
        write_rows(Some(path), &curve)?;
    }
    write_rows(
        a.common.output.as_deref(),
        &[VerdictRow { f: f.name().to_string(), delta: a.common.delta, verdict: verdict.to_string() }],
    )?;
    Ok(true)
}

fn cmd_threshold(a: ThresholdArgs) -> Result<bool> {
    let f = FunctionSpec::parse_arg(&a.common.f)?.build()?;
    let se = StateEvolution::shared(f.clone(), 0.0);
    let mut rows = Vec::new();
    for s in &a.spectrum {
        let spec = SpectrumSpec::parse_arg(s)?;
        let t = se.recovery_threshold(&spec.family(), a.tol, THRESHOLD_DELTA_HI)?;
        rows.push(ThresholdRow {
            family: spec.label(),
            threshold: t.delta,
            bracket_lo: t.bracket.0,
            bracket_hi: t.bracket.1,
            delta_opt: f.delta_opt(),
        });
    }
    write_rows(a.common.output.as_deref(), &rows)?;
    Ok(true)
}

fn cmd_noise(a: NoiseArgs) -> Result<bool> {
    let f = FunctionSpec::parse_arg(&a.common.f)?.build()?;
    let mut rows = Vec::new();
    for s in &a.spectrum {
        let spec = SpectrumSpec::parse_arg(s)?;
        let model = spec.at(a.common.delta)?;
        let ns = noise_sensitivity_slope(&f, model.as_ref(), a.common.delta, &a.sigma_w2, informative_v_r(a.init_v))?;
        for ((&s2, &m), &k) in ns.sigma_w2.iter().zip(&ns.mse).zip(&ns.slopes) {
            rows.push(SlopeRow { spectrum: spec.label(), sigma_w2: s2, mse: m, slope: k });
        }
        eprintln!("{}: extrapolated slope {:.6}, C = {:.6}", spec.label(), ns.extrapolated, ns.c);
    }
    write_rows(a.common.output.as_deref(), &rows)?;
    Ok(true)
}

fn cmd_lorenz(a: LorenzArgs) -> Result<bool> {
    let (s1, s2) = (SpectrumSpec::parse_arg(&a.spectrum1)?, SpectrumSpec::parse_arg(&a.spectrum2)?);
    let (rows, order) = lorenz_table(&s1, &s2, a.delta, a.grid)?;
    write_rows(a.output.as_deref(), &rows)?;
    let line =
        format!("{} vs {} at delta = {}: {} (eps {LORENZ_EPS:e})", s1.label(), s2.label(), a.delta, lorenz_name(order));
    if a.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(true)
}

fn cmd_experiment(a: ExperimentArgs, compare: bool) -> Result<bool> {
    let cfg = ExperimentConfig::load(&a.config)?;
    if compare && cfg.experiment != "se_accuracy" {
        bail!("compare needs an se_accuracy config, got '{}'", cfg.experiment);
    }
    let opts = RunOptions {
        paper_scale: a.paper_scale,
        emit_plot_data: a.emit_plot_data,
        fresh: a.fresh,
        output_dir: a.output_dir,
    };
    let done = run_experiment(&cfg, &opts)?;
    print!("{}", done.summary);
    println!("results in {}", done.dir.display());
    io::stdout().flush()?;
    Ok(done.outcome.passed())
}

fn cmd_list() -> Result<bool> {
    let registry = ExperimentRegistry::default();
    for e in registry.iter() {
        println!("{}: {}", e.name(), e.about());
        println!("  {}", serde_json::to_string(&e.resolve(&Default::default(), false)?)?);
    }
    Ok(true)
}
