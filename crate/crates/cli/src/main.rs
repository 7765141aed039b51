use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use speckle_core::compression::{PiecewiseConstantCode, ProjectionMode};
use speckle_core::harness::{
    denoise_demo, emit_outputs, psnr, run_experiment, run_method, summary_csv, uneven_signal, ExperimentConfig, Method,
};
use speckle_core::likelihood::ObjectiveContext;
use speckle_core::measurement::{make_piecewise_signal, Bounds, MeasurementInstance};
use speckle_core::theory::{corollary_inputs, recovery_bound, BoundInputs, BoundOutputs};

#[derive(Parser)]
#[command(name = "speckle", version, about = "Piecewise-constant recovery from speckle-corrupted measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a measurement instance of the preset signal and write it to a file.
    Simulate(SimulateArgs),
    /// Run one method on an instance file and print its report.
    Recover(RecoverArgs),
    /// Run a grid of experiments described by a TOML config.
    Experiment(ExperimentArgs),
    /// Print the recovery error bound constants.
    Bound(BoundArgs),
    /// Monte-Carlo check of the two pointwise denoisers.
    DenoiseDemo(DenoiseArgs),
}

#[derive(Args)]
struct SignalArgs {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    pieces: usize,
    #[arg(long, default_value_t = 0.5)]
    min: f64,
    #[arg(long, default_value_t = 2.0)]
    max: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_w: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_z: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Instance file written by `simulate`.
    instance: PathBuf,
    #[arg(long, default_value = "pgd")]
    method: String,
    /// Piece count for the multilevel methods; maximum jumps + 1 for the code.
    #[arg(long, default_value_t = 3)]
    pieces: usize,
    #[arg(long, default_value_t = 4)]
    bits: u32,
    #[arg(long, default_value_t = 0.5)]
    min: f64,
    #[arg(long, default_value_t = 2.0)]
    max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, conflicts_with = "approx_projection")]
    exact_projection: bool,
    #[arg(long)]
    approx_projection: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Restricts the run to one method.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, conflicts_with = "approx_projection")]
    exact_projection: bool,
    #[arg(long)]
    approx_projection: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    x_min: f64,
    #[arg(long, default_value_t = 2.0)]
    x_max: f64,
    /// Rate in bits per sample; ignored with `--jumps`.
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    /// Distortion; ignored with `--jumps`.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Use the `k`-jump rate `(2k/n) ln n` with `δ = 1/n`.
    #[arg(long)]
    jumps: Option<usize>,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn projection(exact: bool, approx: bool) -> Option<ProjectionMode> {
    match (exact, approx) {
        (true, _) => Some(ProjectionMode::Exact),
        (_, true) => Some(ProjectionMode::Approximate),
        _ => None,
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let s = &args.signal;
    let bounds = Bounds::new(s.min, s.max)?;
    let (boundaries, values) = uneven_signal(s.n, s.pieces)?;
    let truth = make_piecewise_signal(&boundaries, &values, s.n, bounds)?;
    let inst = MeasurementInstance::generate(&truth, args.m, args.sigma_w, args.sigma_z, args.seed)?;
    inst.write(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote m={} n={} seed={} to {}", inst.m(), inst.n(), args.seed, args.out.display());
    Ok(())
}

fn recover(args: RecoverArgs) -> Result<()> {
    let inst = MeasurementInstance::read(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let method: Method = args.method.parse()?;
    let bounds = Bounds::new(args.min, args.max)?;
    let code = PiecewiseConstantCode::new(inst.n(), args.pieces.saturating_sub(1), args.bits, bounds)?;
    let cfg = ExperimentConfig {
        n: inst.n(),
        pieces: args.pieces,
        projection: projection(args.exact_projection, args.approx_projection).unwrap_or_default(),
        ..ExperimentConfig::default()
    };
    let ctx = ObjectiveContext::from_instance(&inst)?;
    let report = run_method(method, &ctx, &code, &cfg, args.seed)?;
    let mut text = format!("method={method}\n{}", report.to_record());
    if let Some(truth) = &inst.truth {
        text.push_str(&format!("psnr_db={}\n", psnr(truth.values(), report.estimate.values())));
        text.push_str(&format!("nll_truth={}\n", ctx.nll(truth.values())?));
    }
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(method) = args.method {
        cfg.methods = vec![method.parse()?];
    }
    if let Some(mode) = projection(args.exact_projection, args.approx_projection) {
        cfg.projection = mode;
    }
    let Some(dir) = args.out.or_else(|| cfg.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let res = run_experiment(&cfg)?;
    emit_outputs(&res.rows, &res.summary, &dir)?;
    print!("{}", summary_csv(&res.summary));
    eprintln!("wrote {} rows to {}", res.rows.len(), dir.display());
    Ok(())
}

fn bound_table(out: &BoundOutputs, csv: bool) -> String {
    let fields = [
        ("gamma", out.gamma),
        ("alpha", out.alpha),
        ("rho1", out.rho1),
        ("rho2", out.rho2),
        ("ln_rho1", out.ln_rho1),
        ("ln_rho2", out.ln_rho2),
        ("mse_bound", out.mse_bound),
        ("failure_sum", out.failure_sum),
        ("success_raw", out.success_raw),
        ("success_clamped", out.success_clamped),
    ];
    if csv {
        let names: Vec<&str> = fields.iter().map(|f| f.0).collect();
        let values: Vec<String> = fields.iter().map(|f| f.1.to_string()).collect();
        format!("{},clamped\n{},{}\n", names.join(","), values.join(","), out.clamped)
    } else {
        let mut s: String = fields.iter().map(|(k, v)| format!("{k:<16}{v:.6e}\n")).collect();
        s.push_str(&format!("{:<16}{}\n", "clamped", out.clamped));
        s
    }
}

fn bound(args: BoundArgs) -> Result<()> {
    let inp = match args.jumps {
        Some(k) => corollary_inputs(k, args.n, args.m, args.epsilon, Bounds::new(args.x_min, args.x_max)?),
        None => BoundInputs {
            m: args.m,
            n: args.n,
            x_min: args.x_min,
            x_max: args.x_max,
            rate: args.rate,
            delta: args.delta,
            epsilon: args.epsilon,
        },
    };
    let out = recovery_bound(&inp)?;
    print!("{}", bound_table(&out, args.csv));
    Ok(())
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let r = denoise_demo(args.n, args.trials, args.level, args.seed)?;
    println!("estimator,empirical,predicted");
    println!("pointwise,{},{}", r.ml_relative_mse, r.ml_theory);
    println!("constant,{},{}", r.constant_scaled_mse, r.constant_theory);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Recover(a) => recover(a),
        Command::Experiment(a) => experiment(a),
        Command::Bound(a) => bound(a),
        Command::DenoiseDemo(a) => denoise(a),
    }
}
