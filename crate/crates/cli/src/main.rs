use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use odenet::resnet::depth_convergence_study;
use odenet::solver::flow_map;
use odenet_cli::averaging::{averaging_csv, run_averaging, Family};
use odenet_cli::counterexample::run_counterexample;
use odenet_cli::run::{run_pipeline, write_outputs};
use odenet_cli::schedule::read_schedule;
use odenet_cli::{write_file, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "odenet", version, about = "Approximate flows by single-neuron ODENets and ResNets")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build piecewise and smoothed controls and report the flow error.
    Fit,
    /// Integrate a control schedule (or the configured target) over the domain grid.
    Simulate {
        /// Control-schedule file; defaults to the configured target.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Fast-switching experiment for a built-in family.
    Average {
        /// constant, alternation or linear_pair.
        #[arg(long, default_value = "alternation")]
        family: Family,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128,256")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 2048)]
        steps: usize,
    },
    /// Full run plus ResNet extraction and a depth study.
    Resnet {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
        depths: Vec<usize>,
    },
    /// Full run; succeeds only if budgets are met and every certificate holds.
    Verify,
    /// Attempt the reflection map on [-1, 1] and record the failure.
    Counterexample {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_deref().context("--config is required for this command")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn json(value: &impl serde::Serialize) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn simulate(cfg: &RunConfig, schedule: Option<&Path>, dir: &Path) -> anyhow::Result<()> {
    let f: Box<dyn odenet::VectorField> = match schedule {
        Some(p) => Box::new(read_schedule(p)?),
        None => cfg.target_field()?,
    };
    let points = cfg.domain.points();
    let ends = flow_map(&*f, &points, cfg.horizon, &cfg.solver)?;
    let n = cfg.domain.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (0..n).map(|j| format!("x{j}")).chain((0..n).map(|j| format!("y{j}"))).collect();
    w.write_record(&header)?;
    for (p, e) in points.iter().zip(&ends) {
        w.write_record(p.iter().chain(e).map(|v| v.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    write_file(dir, "simulate.csv", &text)?;
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Fit => {
            let cfg = RunConfig { resnet_depth: None, ..load(cli)? };
            let out = run_pipeline(&cfg)?;
            write_outputs(&out_dir(cli, Some(&cfg)), &out)?;
            Ok(out.report.budgets_met)
        }
        Command::Simulate { schedule } => {
            let cfg = load(cli)?;
            simulate(&cfg, schedule.as_deref(), &out_dir(cli, Some(&cfg)))?;
            Ok(true)
        }
        Command::Average { family, m, horizon, steps } => {
            let study = run_averaging(*family, m, *horizon, &odenet::SolverConfig::rk4(*steps))?;
            let dir = out_dir(cli, None);
            write_file(&dir, "averaging.csv", &averaging_csv(&study)?)?;
            write_file(&dir, "averaging_summary.json", &json(&study)?)?;
            Ok(true)
        }
        Command::Resnet { depths } => {
            let mut cfg = load(cli)?;
            let depth = cfg.resnet_depth.unwrap_or(depths.iter().copied().max().unwrap_or(256));
            cfg.resnet_depth = Some(depth);
            let mut out = run_pipeline(&cfg)?;
            if let Some(smooth) = &out.smooth {
                out.depth_rows = depth_convergence_study(smooth, &cfg.domain, depths, &cfg.solver)?;
            }
            write_outputs(&out_dir(cli, Some(&cfg)), &out)?;
            Ok(out.report.budgets_met)
        }
        Command::Verify => {
            let cfg = load(cli)?;
            let out = run_pipeline(&cfg)?;
            write_outputs(&out_dir(cli, Some(&cfg)), &out)?;
            Ok(out.report.budgets_met && out.report.certificates_hold())
        }
        Command::Counterexample { samples } => {
            let cfg = load(cli)?;
            let report = run_counterexample(&cfg, *samples)?;
            write_file(&out_dir(cli, Some(&cfg)), "counterexample.json", &json(&report)?)?;
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        eprintln!("error: worker pool: {e}");
        return ExitCode::from(2);
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
