use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smkc_cli::{
    cmd_ablate, cmd_bench, cmd_diagnose, cmd_generate, cmd_run, cmd_sweep_m, init_threads,
    CliError, Overrides, RunConfig,
};

/// Variable-cardinality time-series anomaly benchmark and training-free detectors.
#[derive(Parser)]
#[command(name = "smkc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// JSON configuration file; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Comma-separated variants (full6, log3, cos3, base2, log3+band8, ...,
    /// statspool_knn) or `all` for the eleven scaling variants.
    #[arg(long, global = true)]
    variants: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single anomaly rate to evaluate.
    #[arg(long, global = true)]
    rate: Option<f64>,
    /// in_dist_C or holdout_C.
    #[arg(long, global = true)]
    protocol: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the benchmark datasets.
    Generate,
    /// Generate, represent, score and evaluate.
    Run,
    /// Sweep the hash width and report collisions and detection metrics.
    SweepM,
    /// Time representation build and scoring per variant.
    Bench,
    /// Cosine versus log-distance kernel diagnostic.
    Diagnose,
    /// Representation and sketch ablations.
    Ablate,
}

fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        out: flags.out.clone(),
        seeds: flags.seeds.clone(),
        variants: flags.variants.clone(),
        threads: flags.threads,
        rate: flags.rate,
        protocol: flags.protocol.clone(),
    })?;
    Ok(cfg)
}

fn fmt_opt(x: Option<usize>) -> String {
    x.map_or_else(|| "avg".to_string(), |c| c.to_string())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.flags)?;
    init_threads(cfg.threads);
    match cli.command {
        Command::Generate => {
            for s in cmd_generate(&cfg)? {
                println!(
                    "seed {}: train {} val {} test {}",
                    s.seed, s.train, s.val, s.test
                );
                for (rate, p) in &s.prevalence {
                    println!("  rate {rate}: test prevalence {p:.4}");
                }
            }
        }
        Command::Run => {
            let r = cmd_run(&cfg)?;
            println!(
                "{:<16} {:>5} {:>4} {:>15} {:>15} {:>15}",
                "variant", "rate", "C", "AUPRC", "AUROC", "TPR@1%FPR"
            );
            for a in &r.averaged {
                println!(
                    "{:<16} {:>5.2} {:>4} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4}",
                    a.variant,
                    a.anomaly_rate,
                    fmt_opt(a.cardinality),
                    a.auprc_mean,
                    a.auprc_std,
                    a.auroc_mean,
                    a.auroc_std,
                    a.tpr_at_1fpr_mean,
                    a.tpr_at_1fpr_std
                );
            }
        }
        Command::SweepM => {
            println!(
                "{:>4} {:>10} {:>10} {:>15} {:>15}",
                "m", "val_coll", "pres_coll", "AUPRC", "AUROC"
            );
            for r in cmd_sweep_m(&cfg)? {
                println!(
                    "{:>4} {:>10.4} {:>10.4} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4}",
                    r.m,
                    r.value_collision,
                    r.presence_collision,
                    r.auprc_mean,
                    r.auprc_std,
                    r.auroc_mean,
                    r.auroc_std
                );
            }
        }
        Command::Bench => {
            println!(
                "{:<16} {:>4} {:>8} {:>9} {:>10} {:>10} {:>10}",
                "variant", "L", "dim", "rel_cost", "build_s", "score_s", "total_s"
            );
            for r in cmd_bench(&cfg)? {
                println!(
                    "{:<16} {:>4} {:>8} {:>9.4} {:>10.4} {:>10.4} {:>10.4}",
                    r.variant,
                    r.len,
                    r.feature_dim,
                    r.complexity_proxy,
                    r.build_seconds,
                    r.score_seconds,
                    r.total_seconds
                );
            }
        }
        Command::Diagnose => {
            let d = cmd_diagnose(&cfg)?;
            println!(
                "{:<24} {:>11} {:>11} {:>12} {:>12}",
                "task", "cos_AUROC", "cos_AUPRC", "log_AUROC", "log_AUPRC"
            );
            for r in &d.rows {
                println!(
                    "{:<24} {:>11.3} {:>11.3} {:>12.3} {:>12.3}",
                    r.task, r.cosine_auroc, r.cosine_auprc, r.logdist_auroc, r.logdist_auprc
                );
            }
            println!(
                "segment x{}: max |dCos| = {:.2e}, max |dLogDist| = {:.3}",
                d.figure.scale, d.figure.max_cos_change, d.figure.max_logdist_change
            );
        }
        Command::Ablate => {
            println!(
                "{:<28} {:>15} {:>15} {:>9}",
                "variant", "AUPRC", "AUROC", "dAUPRC"
            );
            for r in cmd_ablate(&cfg)? {
                println!(
                    "{:<28} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>+9.4}",
                    r.variant,
                    r.auprc_mean,
                    r.auprc_std,
                    r.auroc_mean,
                    r.auroc_std,
                    r.delta_auprc_vs_base
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
