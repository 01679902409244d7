//! `embalance` command line: simulate benchmark models, compute gramians,
//! run reduction pipelines and reproduce the RC-ladder comparison.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use embalance::error::Error;
use embalance::gramian::{
    bilinear_gramians, lall_controllability_traced, lall_observability_traced,
    linear_part_gramians, ltv_gramians_traced, nonlinear_controllability_traced,
    nonlinear_observability_traced,
};
use embalance::io::{write_gramian, write_node_trace_csv, write_trajectory_csv};
use embalance::model::{random_stable_lti, PerturbationSets};
use embalance::pipeline::{
    build_lifted_model, compare_all, run_pipeline, simulate_reference, ComparisonRow,
    ExperimentConfig, PipelineKind,
};

/// Ships in-repo as the canonical benchmark configuration.
const BENCHMARK_CONFIG: &str = include_str!("../../../configs/benchmark.toml");

#[derive(Parser)]
#[command(
    name = "embalance",
    about = "Empirical balanced truncation of nonlinear state-space systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured model under its input signal.
    Simulate(CommonArgs),
    /// Compute a gramian (pair) and write CSV plus metadata sidecar.
    Gramian(GramianArgs),
    /// Run one reduction pipeline end to end.
    Reduce(CommonArgs),
    /// Run the canonical benchmark (target: rc-ladder).
    Bench(BenchArgs),
    /// Run every benchmark curve and emit the comparison table.
    Compare(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration file (TOML). Defaults to the built-in
    /// benchmark configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the reduced order k.
    #[arg(long)]
    order: Option<usize>,
    /// Override the simulation/RMS horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Override the quadrature node count.
    #[arg(long)]
    nodes: Option<usize>,
    /// Override the integrator method (rk45 or rk4).
    #[arg(long)]
    method: Option<String>,
    /// Output directory for CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the pipeline (full-nonlinear, bilinear-full, linear-part,
    /// lall, nonlinear-gramians, ltv).
    #[arg(long)]
    pipeline: Option<String>,
}

#[derive(Args)]
struct GramianArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which gramian to compute: lall-p, lall-q, ltv, bilinear,
    /// linear-part, nonlinear-p or nonlinear-q.
    #[arg(long = "gramian", alias = "kind", default_value = "nonlinear-p")]
    gramian: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark target; only "rc-ladder" is defined.
    #[arg(default_value = "rc-ladder")]
    target: String,
    #[command(flatten)]
    common: CommonArgs,
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_toml(BENCHMARK_CONFIG)?,
    };
    if let Some(order) = args.order {
        cfg.order = order;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(nodes) = args.nodes {
        cfg.quadrature.nodes = nodes;
    }
    if let Some(method) = &args.method {
        cfg.integrator.method = method.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(pipeline) = &args.pipeline {
        cfg.pipeline = parse_pipeline(pipeline)?;
    }
    Ok(cfg)
}

fn parse_pipeline(name: &str) -> Result<PipelineKind, Error> {
    Ok(match name {
        "full-nonlinear" => PipelineKind::FullNonlinear,
        "bilinear-full" => PipelineKind::BilinearFull,
        "linear-part" => PipelineKind::LinearPart,
        "lall" => PipelineKind::Lall,
        "nonlinear-gramians" => PipelineKind::NonlinearGramians,
        "ltv" => PipelineKind::Ltv,
        other => return Err(Error::Config(format!("unknown pipeline '{other}'"))),
    })
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_UNSTABLE: u8 = 4;

fn exit_code_for(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("EMBALANCE_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Gramian(args) => cmd_gramian(&args),
        Command::Reduce(args) => cmd_reduce(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_simulate(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let model = cfg.build_nonlinear_model()?;
    let traj = simulate_reference(&cfg, &model)?;
    match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("trajectory.csv");
            write_trajectory_csv(&path, &traj)?;
            println!("wrote {}", path.display());
        }
        None => {
            println!(
                "simulated {} points on [0, {}]; final output = {:.6e}",
                traj.len(),
                cfg.horizon,
                traj.outputs.as_ref().unwrap().last().unwrap()[0]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gramian(args: &GramianArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(&args.common)?;
    let icfg = cfg.integrator_config()?;
    let quad = cfg.observability_quadrature()?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let mut emit = |base: &str,
                    gram: &embalance::Gramian64,
                    trace: Option<&embalance::gramian::NodeTrace<f64>>|
     -> Result<(), Error> {
        let path = out_dir.join(base);
        write_gramian(&path, gram)?;
        written.push(path.with_extension("csv"));
        if let Some(tr) = trace {
            let tp = out_dir.join(format!("{base}_trace.csv"));
            write_node_trace_csv(&tp, tr)?;
            written.push(tp);
        }
        Ok(())
    };

    match args.gramian.as_str() {
        "lall-p" => {
            let model = cfg.build_nonlinear_model()?;
            let sets = PerturbationSets::identity(model.input_dim(), cfg.sets.m.clone())?;
            let (g, tr) =
                lall_controllability_traced(&model, &sets, &quad, &icfg, cfg.mean_mode()?)?;
            emit("gramian_lall_P", &g, Some(&tr))?;
        }
        "lall-q" => {
            let model = cfg.build_nonlinear_model()?;
            let sets = PerturbationSets::identity(model.state_dim(), cfg.sets.m.clone())?;
            let (g, tr) =
                lall_observability_traced(&model, &sets, &quad, &icfg, cfg.mean_mode()?)?;
            emit("gramian_lall_Q", &g, Some(&tr))?;
        }
        "ltv" => {
            let ltv = match cfg.model.preset.as_str() {
                "random-lti" => random_stable_lti(cfg.model.n, cfg.model.seed)?,
                "file" => embalance::io::load_lti_model(
                    cfg.model.path.as_ref().ok_or_else(|| {
                        Error::Config("model.preset = \"file\" requires model.path".into())
                    })?,
                )?,
                other => {
                    return Err(Error::Config(format!(
                        "ltv gramians need a linear preset, got '{other}'"
                    )))
                }
            };
            let (p, q, tp, tq) = ltv_gramians_traced(&ltv, &quad, &icfg, cfg.gramian.cond_limit)?;
            emit("gramian_ltv_P", &p, Some(&tp))?;
            emit("gramian_ltv_Q", &q, Some(&tq))?;
        }
        "bilinear" => {
            let model = cfg.build_nonlinear_model()?;
            let lifted = build_lifted_model(&cfg, &model)?;
            let (p, q) = bilinear_gramians(&lifted, &cfg.sets.m, cfg.gramian.normalize)?;
            emit("gramian_bilinear_P", &p, None)?;
            emit("gramian_bilinear_Q", &q, None)?;
        }
        "linear-part" => {
            let model = cfg.build_nonlinear_model()?;
            let lifted = build_lifted_model(&cfg, &model)?;
            let (p, q) = linear_part_gramians(&lifted)?;
            emit("gramian_linear_part_P", &p, None)?;
            emit("gramian_linear_part_Q", &q, None)?;
        }
        "nonlinear-p" => {
            let model = cfg.build_nonlinear_model()?;
            let sets =
                PerturbationSets::identity(model.state_dim(), cfg.nonlinear_sets.m_ctrl.clone())?;
            let ctrl_quad = cfg.controllability_quadrature()?;
            let (g, tr) = nonlinear_controllability_traced(
                &model,
                &sets,
                &ctrl_quad,
                &icfg,
                cfg.gramian.cond_limit,
            )?;
            emit("gramian_nonlinear_P", &g, Some(&tr))?;
        }
        "nonlinear-q" => {
            let model = cfg.build_nonlinear_model()?;
            let sets =
                PerturbationSets::identity(model.state_dim(), cfg.nonlinear_sets.m_obs.clone())?;
            let (g, tr) = nonlinear_observability_traced(&model, &sets, &quad, &icfg)?;
            emit("gramian_nonlinear_Q", &g, Some(&tr))?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown gramian kind '{other}' (expected lall-p, lall-q, ltv, bilinear, linear-part, nonlinear-p or nonlinear-q)"
            )))
        }
    }

    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_reduce(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let output = run_pipeline(&cfg)?;
    for r in &output.reports {
        println!(
            "{:<22} vs {:<16} rms = {:.6e}  relative = {:.6e}  ({} samples, horizon {})",
            r.pipeline, r.reference, r.rms, r.rms_relative, r.sample_count, r.horizon
        );
    }
    if let Some(hankel) = &output.hankel {
        let formatted: Vec<String> = hankel.iter().map(|s| format!("{s:.6e}")).collect();
        println!("hankel: {}", formatted.join(", "));
    }
    let mut unstable = false;
    if let Some(report) = &output.stability {
        println!("stability: {} ({})", report.verdict, report.details);
        unstable = report.verdict == embalance::balance::StabilityVerdict::Unstable;
    }
    for path in &output.artifacts {
        println!("wrote {}", path.display());
    }
    if unstable {
        Ok(ExitCode::from(EXIT_UNSTABLE))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<ExitCode, Error> {
    if args.target != "rc-ladder" {
        return Err(Error::Config(format!(
            "unknown bench target '{}' (only rc-ladder is defined)",
            args.target
        )));
    }
    let mut common = args.common.clone();
    if common.out.is_none() {
        common.out = Some(PathBuf::from("embalance-out"));
    }
    cmd_compare(&common)
}

fn cmd_compare(args: &CommonArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let table = compare_all(&cfg)?;

    println!("RMS table (method-specific references):");
    print_rows(&table.rows);
    if !table.uniform.is_empty() {
        println!("uniform (vs nonlinear reference):");
        print_rows(&table.uniform);
    }
    for path in &table.artifacts {
        println!("wrote {}", path.display());
    }

    if table.any_failed() {
        return Ok(ExitCode::from(EXIT_NUMERICAL));
    }
    let any_unstable = table
        .rows
        .iter()
        .chain(table.uniform.iter())
        .any(|r| r.stability.as_deref() == Some("unstable"));
    if any_unstable {
        return Ok(ExitCode::from(EXIT_UNSTABLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_rows(rows: &[ComparisonRow]) {
    for r in rows {
        let rms = r
            .rms
            .map(|v| format!("{v:.6e}"))
            .unwrap_or_else(|| "-".into());
        let rel = r
            .rms_relative
            .map(|v| format!("{v:.6e}"))
            .unwrap_or_else(|| "-".into());
        let status = r.error.clone().unwrap_or_else(|| "ok".into());
        let stability = r.stability.clone().unwrap_or_default();
        println!(
            "  {:<22} vs {:<16} rms = {:<14} rel = {:<14} {} {}",
            r.pipeline, r.reference, rms, rel, status, stability
        );
    }
}
