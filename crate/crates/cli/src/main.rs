use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sgkl::experiments::{
    emit_report, generate_synthetic, nmse, read_report, run_joint_vs_individual,
    run_sensitivity_sweep, score, ExperimentConfig, ExperimentReport, ReportFormat, RunOptions,
    SweepParameter,
};
use sgkl::io::{
    load_checkpoint, load_dataset, load_matrix_csv, load_signals_csv, save_checkpoint,
    save_graph_csv, save_matrix_csv, save_psi, save_signals_csv,
};
use sgkl::learner::TracePoint;
use sgkl::{fit_from, infer_inductive, restore, GraphDataset, SgklConfig, SgklError, SgklModel};

#[derive(Parser)]
#[command(
    name = "sgkl",
    version,
    about = "Learn spectral graph kernel dictionaries and interpolate graph signals"
)]
struct Cli {
    /// JSON or TOML file with `sgkl` (learner) and `synthetic` (data) sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data and initialization seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Report format.
    #[arg(long, global = true, default_value = "csv")]
    format: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance: graphs, signals, clean signals,
    /// coefficients and kernel parameters.
    Generate,
    /// Learn kernels and coefficients, from CSV data or a synthetic instance.
    Fit(FitArgs),
    /// Fill in the missing entries of the training signals of a fitted model.
    Reconstruct(ReconstructArgs),
    /// Code and reconstruct new signals under a fitted model.
    Infer(InferArgs),
    /// Sensitivity sweep over one parameter on synthetic data.
    Sweep(SweepArgs),
    /// Joint versus individual learning over kernel discrepancy and signal count.
    JointVsIndividual(JointArgs),
    /// Merge report files and print the seed-averaged summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Graph CSV, once per graph.
    #[arg(long = "graph")]
    graphs: Vec<PathBuf>,
    /// Signal CSV, once per graph, in the order of `--graph`.
    #[arg(long = "signals")]
    signals: Vec<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Continue from a checkpoint written by an earlier `fit`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides the outer iteration limit.
    #[arg(long)]
    max_outer: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Checkpoint JSON written by `fit`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Clean signals per graph; when given, NMSE on the missing entries is
    /// printed.
    #[arg(long)]
    truth: Vec<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Signal CSV with the new signals.
    #[arg(long)]
    test: PathBuf,
    /// Graph the new signals live on.
    #[arg(long, default_value_t = 0)]
    graph_index: usize,
    /// Clean version of the new signals.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// One of snr, J, eta_s, eta_x, eta_w, eta_y, eta_c.
    #[arg(long)]
    param: SweepParameter,
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    grid: Vec<f64>,
    /// Seeds; defaults to `--seed` or 0.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Record wall-clock runtimes (reports are then not byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct JointArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    deltas: Vec<f64>,
    /// Signals per graph, increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files (csv or json, by extension).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(SgklError),
}

impl From<SgklError> for Failure {
    fn from(e: SgklError) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Dump<'a> {
    command: Vec<String>,
    error: String,
    psi: Option<&'a [f64]>,
    config: &'a ExperimentConfig,
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    format: ReportFormat,
    jobs: usize,
    seeds_default: u64,
    /// A config file was given; otherwise `fit --resume` keeps the
    /// checkpoint's learner settings.
    config_given: bool,
}

fn load_config(path: Option<&Path>) -> Outcome<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    let cfg: ExperimentConfig =
        parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    cfg.sgkl
        .validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    cfg.synthetic
        .validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn load_datasets(data: &DataArgs) -> Outcome<Vec<GraphDataset>> {
    if data.graphs.len() != data.signals.len() {
        return Err(Failure::Config(format!(
            "{} --graph files but {} --signals files",
            data.graphs.len(),
            data.signals.len()
        )));
    }
    Ok(data
        .graphs
        .iter()
        .zip(&data.signals)
        .map(|(g, s)| load_dataset(g, s))
        .collect::<sgkl::Result<Vec<_>>>()?)
}

fn report_path(ctx: &Context, stem: &str) -> PathBuf {
    ctx.out.join(format!("{stem}.{}", ctx.format.extension()))
}

fn write_trace(trace: &[TracePoint], path: &Path) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path).map_err(SgklError::from)?;
    for t in trace {
        w.serialize(t).map_err(SgklError::from)?;
    }
    w.flush().map_err(SgklError::from)?;
    Ok(())
}

fn save_model(model: &SgklModel, out: &Path) -> Outcome<()> {
    save_checkpoint(&model.checkpoint(), &out.join("model.json"))?;
    save_psi(&model.psi, &out.join("psi.json"))?;
    write_trace(&model.trace, &out.join("trace.csv"))?;
    if let Some(d) = &model.diagnostics.last_descent {
        d.write_csv(fs::File::create(out.join("descent.csv")).map_err(SgklError::from)?)?;
    }
    let d = &model.diagnostics;
    println!(
        "objective {:.6e} after {} outer iterations (converged: {}), psi written to {}",
        model.trace.last().map_or(f64::NAN, |t| t.objective),
        d.outer_iterations,
        d.converged,
        out.join("psi.json").display()
    );
    Ok(())
}

fn generate(ctx: &Context) -> Outcome<()> {
    let data = generate_synthetic(&ctx.cfg.synthetic)?;
    for (m, g) in data.graphs.iter().enumerate() {
        save_graph_csv(&g.graph, &ctx.out.join(format!("graph_{m}.csv")))?;
        save_signals_csv(&g.observed, &ctx.out.join(format!("signals_{m}.csv")))?;
        save_matrix_csv(&g.clean, &ctx.out.join(format!("clean_{m}.csv")))?;
        save_matrix_csv(
            &g.coefficients,
            &ctx.out.join(format!("coefficients_{m}.csv")),
        )?;
        save_psi(&g.psi, &ctx.out.join(format!("psi_{m}.json")))?;
        println!(
            "graph {m}: {} nodes, {} signals, SNR {:.2} dB",
            g.graph.node_count(),
            g.observed.signal_count(),
            g.empirical_snr_db()
        );
    }
    Ok(())
}

fn fit_command(ctx: &Context, args: &FitArgs) -> Outcome<()> {
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = match &resume {
        Some(ck) if !ctx.config_given => SgklConfig {
            seed: ctx.cfg.sgkl.seed,
            ..ck.config.clone()
        },
        _ => ctx.cfg.sgkl.clone(),
    };
    if let Some(m) = args.max_outer {
        cfg.max_outer_iters = m;
    }
    let synthetic = if args.data.graphs.is_empty() && args.data.signals.is_empty() {
        Some(generate_synthetic(&ctx.cfg.synthetic)?)
    } else {
        None
    };
    let datasets = match &synthetic {
        Some(data) => data.datasets(),
        None => load_datasets(&args.data)?,
    };
    let model = fit_from(&datasets, &cfg, resume.as_ref())?;
    save_model(&model, &ctx.out)?;
    if let Some(data) = &synthetic {
        for (m, s) in score(&model, data)?.iter().enumerate() {
            println!(
                "graph {m}: NMSE {:.6} (mean fill {:.6})",
                s.nmse, s.baseline_nmse
            );
        }
    }
    Ok(())
}

fn restore_model(checkpoint: &Path, data: &DataArgs) -> Outcome<SgklModel> {
    let ck = load_checkpoint(checkpoint)?;
    let datasets = load_datasets(data)?;
    Ok(restore(&datasets, &ck)?)
}

fn reconstruct(ctx: &Context, args: &ReconstructArgs) -> Outcome<()> {
    let model = restore_model(&args.checkpoint, &args.data)?;
    if !args.truth.is_empty() && args.truth.len() != model.num_graphs() {
        return Err(Failure::Config(format!(
            "{} --truth files for {} graphs",
            args.truth.len(),
            model.num_graphs()
        )));
    }
    for m in 0..model.num_graphs() {
        let rec = model.reconstruct(m)?;
        let path = ctx.out.join(format!("reconstruction_{m}.csv"));
        save_matrix_csv(&rec, &path)?;
        println!("graph {m}: reconstruction written to {}", path.display());
        if let Some(t) = args.truth.get(m) {
            let truth = load_matrix_csv(t)?;
            println!(
                "graph {m}: NMSE {:.6}",
                nmse(&truth, &rec, model.graphs[m].signals.masks())?
            );
        }
    }
    Ok(())
}

fn infer(ctx: &Context, args: &InferArgs) -> Outcome<()> {
    let model = restore_model(&args.checkpoint, &args.data)?;
    let test = load_signals_csv(&args.test)?;
    let result = infer_inductive(&model, args.graph_index, &test)?;
    save_matrix_csv(&result.reconstruction, &ctx.out.join("inferred.csv"))?;
    save_matrix_csv(
        &result.coefficients,
        &ctx.out.join("inferred_coefficients.csv"),
    )?;
    println!(
        "{} signals coded in {} sweeps, reconstruction written to {}",
        test.signal_count(),
        result.sweeps,
        ctx.out.join("inferred.csv").display()
    );
    if let Some(t) = &args.truth {
        let truth = load_matrix_csv(t)?;
        println!(
            "NMSE {:.6}",
            nmse(&truth, &result.reconstruction, test.masks())?
        );
    }
    Ok(())
}

fn seeds_or_default(seeds: &[u64], ctx: &Context) -> Vec<u64> {
    if seeds.is_empty() {
        vec![ctx.seeds_default]
    } else {
        seeds.to_vec()
    }
}

fn sweep(ctx: &Context, args: &SweepArgs) -> Outcome<()> {
    let opts = RunOptions {
        jobs: ctx.jobs,
        timing: args.timing,
    };
    let report = run_sensitivity_sweep(
        args.param,
        &args.grid,
        &ctx.cfg,
        &seeds_or_default(&args.seeds, ctx),
        &opts,
    )?;
    let path = report_path(ctx, &format!("sweep_{}", args.param.name()));
    emit_report(&report, ctx.format, &path)?;
    print_summary(&report);
    println!("report written to {}", path.display());
    Ok(())
}

fn joint(ctx: &Context, args: &JointArgs) -> Outcome<()> {
    if args.ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::Config("--ks must be increasing".into()));
    }
    let opts = RunOptions {
        jobs: ctx.jobs,
        timing: args.timing,
    };
    let report = run_joint_vs_individual(
        &args.deltas,
        &args.ks,
        &ctx.cfg,
        &seeds_or_default(&args.seeds, ctx),
        &opts,
    )?;
    let path = report_path(ctx, "joint_vs_individual");
    emit_report(&report, ctx.format, &path)?;
    print_summary(&report);
    println!("report written to {}", path.display());
    Ok(())
}

fn report(ctx: &Context, args: &ReportArgs) -> Outcome<()> {
    let mut merged = ExperimentReport::default();
    for input in &args.inputs {
        let format = match input.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            Some("csv") => ReportFormat::Csv,
            _ => {
                return Err(Failure::Config(format!(
                    "{}: expected a .csv or .json report",
                    input.display()
                )))
            }
        };
        merged.extend(read_report(input, format)?);
    }
    let path = report_path(ctx, "report");
    emit_report(&merged, ctx.format, &path)?;
    print_summary(&merged);
    println!("report written to {}", path.display());
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    for row in report.aggregates() {
        println!(
            "{} {}={} {} K={} graph {}: NMSE {:.6} ± {:.6} over {} runs (mean fill {:.6})",
            row.experiment,
            row.parameter,
            row.value,
            row.regime,
            row.k,
            row.graph.unwrap_or(0),
            row.nmse.unwrap_or(f64::NAN),
            row.nmse_std.unwrap_or(f64::NAN),
            row.runs.unwrap_or(0),
            row.baseline_nmse.unwrap_or(f64::NAN)
        );
    }
    for t in &report.thresholds {
        println!(
            "{} delta={}: threshold K = {}",
            t.experiment, t.delta, t.threshold_k
        );
    }
}

fn run(cli: &Cli, cfg: ExperimentConfig) -> Outcome<()> {
    fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    let ctx = Context {
        cfg,
        out: cli.out.clone(),
        format: cli.format,
        jobs: cli.jobs,
        seeds_default: cli.seed.unwrap_or(0),
        config_given: cli.config.is_some(),
    };
    match &cli.command {
        Command::Generate => generate(&ctx),
        Command::Fit(a) => fit_command(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::JointVsIndividual(a) => joint(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn write_dump(cli: &Cli, cfg: &ExperimentConfig, err: &SgklError) -> std::io::Result<PathBuf> {
    let psi = match err {
        SgklError::NumericalBlowUp { psi, .. } => Some(psi.as_slice()),
        _ => None,
    };
    let dump = Dump {
        command: std::env::args().collect(),
        error: err.to_string(),
        psi,
        config: cfg,
    };
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("sgkl_failure.json");
    fs::write(&path, serde_json::to_string_pretty(&dump)? + "\n")?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SGKL_LOG", "warn")).init();
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    let mut cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(Failure::Config(msg)) | Err(Failure::Run(SgklError::InvalidParameter(msg))) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.synthetic.seed = seed;
        cfg.sgkl.seed = seed;
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
    {
        log::warn!("could not size the worker pool: {e}");
    }
    match run(&cli, cfg.clone()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) if e.is_numerical() => {
            eprintln!("numerical failure: {e}");
            match write_dump(&cli, &cfg, &e) {
                Ok(path) => eprintln!("diagnostic dump written to {}", path.display()),
                Err(io) => eprintln!("could not write the diagnostic dump: {io}"),
            }
            ExitCode::from(3)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
