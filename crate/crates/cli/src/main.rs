//! Command-line driver: train models and patches, run the two evaluation
//! pipelines, re-emit reports, and serve a model over the wire protocol.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 when a run
//! exceeds the per-image failure threshold. `IMPACTBENCH_LOG` controls
//! log verbosity.

use std::io::{stdin, stdout, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use impactbench::harness::{
    emit_report, load_model, load_report_rows, obtain_patch, run_experiment1, run_experiment2,
    run_explain, train_model, write_manifest, ExperimentConfig, HarnessError, ModelSpec,
    ReportRow, RunOutput,
};
use impactbench::harness::report::percent;
use impactbench::model::{serve_connection, spawn_server, ToyCnn};

#[derive(Parser)]
#[command(
    name = "impactbench",
    version,
    about = "Benchmark how much a classifier's decisions depend on the regions explainers flag"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy CNN on the configured dataset and save its weights.
    TrainModel {
        /// Where to write the weights (defaults to the config's model path).
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Train the adversarial patch and save the patch artifact.
    TrainPatch {
        /// Where to write the patch (defaults to the config's patch path).
        #[arg(long)]
        patch_out: Option<PathBuf>,
    },
    /// Write saliency and mask artifacts without computing metrics.
    Explain,
    /// General scenario: ablate each explainer's region and score impact.
    EvalGeneral,
    /// Adversarial scenario: patched images, success-filtered, scored for
    /// impact and patch coverage per scale.
    EvalAdversarial,
    /// Re-emit CSV and Markdown tables from a saved report JSON.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "report")]
        stem: String,
    },
    /// Serve a saved toy model over the line-delimited JSON protocol.
    ServeModel {
        #[arg(long)]
        weights: PathBuf,
        /// TCP listen address; port 0 picks an ephemeral port.
        #[arg(long, default_value = "127.0.0.1:4100")]
        addr: String,
        /// Serve a single session over stdin/stdout instead of TCP.
        #[arg(long)]
        stdio: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required for this command".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rows: &[ReportRow]) {
    for row in rows {
        let scale = row
            .scale
            .map(|s| format!(" scale={s}"))
            .unwrap_or_default();
        match &row.report {
            Some(report) => {
                let coverage = report
                    .impact_coverage
                    .map(|c| format!(" I_coverage={}", percent(c)))
                    .unwrap_or_default();
                println!(
                    "{}{scale}: n={} I={} I_strict={}{coverage}",
                    row.explainer,
                    report.n,
                    percent(report.impact_score),
                    percent(report.impact_strict),
                );
            }
            None => println!("{}{scale}: n/a (no records)", row.explainer),
        }
    }
}

fn finish_run(cfg: &ExperimentConfig, output: &RunOutput, stem: &str) -> Result<(), HarnessError> {
    let paths = emit_report(&output.rows, &cfg.out_dir, stem)?;
    write_manifest(&output.manifest, &cfg.out_dir)?;
    print_rows(&output.rows);
    if output.aborted > 0 {
        log::warn!("{} of {} images aborted", output.aborted, output.total);
    }
    println!(
        "wrote {}, {}, {}",
        paths.json.display(),
        paths.csv.display(),
        paths.markdown.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::TrainModel { weights_out } => {
            let cfg = load_config(cli)?;
            let (model, accuracy) = train_model(&cfg)?;
            let path = match weights_out {
                Some(path) => path.clone(),
                None => match &cfg.model {
                    ModelSpec::Toy { weights } => weights.clone(),
                    ModelSpec::Remote { .. } => {
                        return Err(HarnessError::Config(
                            "config points at a remote model; pass --weights-out".into(),
                        ))
                    }
                },
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            model.save(&path)?;
            println!(
                "trained model saved to {} (holdout accuracy {})",
                path.display(),
                percent(accuracy)
            );
            Ok(())
        }
        Command::TrainPatch { patch_out } => {
            let cfg = load_config(cli)?;
            let model = load_model(&cfg.model)?;
            let split = impactbench::harness::load_dataset(&cfg.dataset)?;
            let patch = obtain_patch(&cfg, model.as_ref(), &split)?;
            if let Some(path) = patch_out {
                patch.save(path)?;
                println!("patch saved to {}", path.display());
            }
            println!(
                "patch target={} side={} mean target probability {}",
                patch.target_class(),
                patch.side(),
                percent(patch.meta().final_mean_target_prob)
            );
            Ok(())
        }
        Command::Explain => {
            let cfg = load_config(cli)?;
            let manifest = run_explain(&cfg)?;
            write_manifest(&manifest, &cfg.out_dir)?;
            println!("wrote {} artifacts", manifest.artifacts.len());
            Ok(())
        }
        Command::EvalGeneral => {
            let cfg = load_config(cli)?;
            let output = run_experiment1(&cfg)?;
            finish_run(&cfg, &output, "experiment1")
        }
        Command::EvalAdversarial => {
            let cfg = load_config(cli)?;
            let output = run_experiment2(&cfg)?;
            finish_run(&cfg, &output, "experiment2")
        }
        Command::Report { input, stem } => {
            let rows = load_report_rows(input)?;
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let paths = emit_report(&rows, &out_dir, stem)?;
            print_rows(&rows);
            println!(
                "wrote {}, {}, {}",
                paths.json.display(),
                paths.csv.display(),
                paths.markdown.display()
            );
            Ok(())
        }
        Command::ServeModel {
            weights,
            addr,
            stdio,
        } => {
            let model = ToyCnn::load(weights)?;
            if *stdio {
                let input = BufReader::new(stdin().lock());
                serve_connection(input, stdout().lock(), &model)?;
                return Ok(());
            }
            let handle = spawn_server(Arc::new(model), addr).map_err(HarnessError::Model)?;
            println!("listening on {}", handle.addr());
            loop {
                std::thread::park();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("IMPACTBENCH_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            match error {
                HarnessError::TooManyFailures { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
