//! Subcommands of the `smkc` binary. Each command resolves a [`RunConfig`],
//! writes its tables under the output directory together with the resolved
//! configuration, and returns a summary for printing.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smkc::benchgen::build_dataset;
use smkc::dataset::write_dataset;
use smkc::evalkit::report::{scaling_rows, write_csv, write_json, ScalingRow};
use smkc::evalkit::{
    ablations, aggregate, cosine_collapse_diagnostic, run_ablations, run_protocol,
    scaling_benchmark, sweep_m, AblationRow, AggregateRow, DiagnosticOutput, SweepRow, TimingRow,
};

pub use config::{Overrides, RunConfig};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Errors with the process exit code they map to.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or flags (exit code 1).
    Config(String),
    /// Data, numerical or I/O failure while running (exit code 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<smkc::Error> for CliError {
    fn from(e: smkc::Error) -> Self {
        match e {
            smkc::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn context(what: &str) -> impl Fn(smkc::Error) -> CliError + '_ {
    move |e| match e {
        smkc::Error::Config(m) => CliError::Config(format!("{what}: {m}")),
        other => CliError::Runtime(format!("{what}: {other}")),
    }
}

/// Report envelope: the resolved configuration travels with every result.
#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    seeds: &'a [u64],
    config: &'a RunConfig,
    results: T,
}

fn prepare(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.out.display())))?;
    write_json(&cfg.out.join(RESOLVED_CONFIG), cfg).map_err(context("writing resolved config"))?;
    Ok(cfg.out.clone())
}

fn summary<T: Serialize>(
    out: &Path,
    file: &str,
    command: &str,
    cfg: &RunConfig,
    results: T,
) -> Result<(), CliError> {
    let s = Summary {
        command,
        seeds: &cfg.seeds,
        config: cfg,
        results,
    };
    write_json(&out.join(file), &s).map_err(context(file))
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Observed test prevalence per configured rate, pooled over cardinalities.
    pub prevalence: BTreeMap<String, f64>,
}

/// Writes one dataset per seed under `<out>/dataset_seed<N>/`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<SplitSummary>, CliError> {
    let out = prepare(cfg)?;
    let mut res = Vec::new();
    for &seed in &cfg.seeds {
        let gen = smkc::benchgen::GenConfig {
            seed,
            ..cfg.gen.clone()
        };
        let ds = build_dataset(cfg.protocol, &gen).map_err(context("generating dataset"))?;
        write_dataset(&ds, &out.join(format!("dataset_seed{seed}")))
            .map_err(context("writing dataset"))?;
        let mut prevalence = BTreeMap::new();
        for &rate in &cfg.gen.anomaly_rates {
            let cells: Vec<_> = ds.test.iter().filter(|c| c.rate == rate).collect();
            let n: usize = cells.iter().map(|c| c.windows.len()).sum();
            let pos: usize = cells
                .iter()
                .flat_map(|c| &c.windows)
                .filter(|r| r.window.label.is_anomalous())
                .count();
            prevalence.insert(format!("{rate:.2}"), pos as f64 / n.max(1) as f64);
        }
        res.push(SplitSummary {
            seed,
            train: ds.train.len(),
            val: ds.val.len(),
            test: ds.test.iter().map(|c| c.windows.len()).sum(),
            prevalence,
        });
    }
    summary(&out, "generate_summary.json", "generate", cfg, &res)?;
    Ok(res)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResults {
    pub averaged: Vec<AggregateRow>,
    pub quality: Vec<ScalingRow>,
}

/// Rate used for the per-variant quality table: 0.10 when evaluated,
/// otherwise the first configured rate.
fn reference_rate(rates: &[f64]) -> f64 {
    rates
        .iter()
        .copied()
        .find(|r| (r - 0.10).abs() < 1e-12)
        .unwrap_or(rates[0])
}

/// End-to-end generate, represent, score and evaluate.
///
/// Writes `metrics_raw.csv`, `table2_avg.csv` (uniform over C, mean and std
/// over seeds), `table_per_c.csv`, `table1_quality.csv`, `scores.csv` and
/// `summary.json`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunResults, CliError> {
    let out = prepare(cfg)?;
    let exp = cfg.experiment();
    let run =
        run_protocol(cfg.protocol, &cfg.variants, &exp, &cfg.seeds).map_err(context("run"))?;
    let averaged = aggregate(&run.rows, false);
    let per_c = aggregate(&run.rows, true);
    let quality = scaling_rows(&averaged, reference_rate(&cfg.gen.anomaly_rates));
    let w = |name: &str, r: smkc::Result<()>| r.map_err(context(name));
    w(
        "metrics_raw.csv",
        write_csv(&out.join("metrics_raw.csv"), &run.rows),
    )?;
    w(
        "table2_avg.csv",
        write_csv(&out.join("table2_avg.csv"), &averaged),
    )?;
    w(
        "table_per_c.csv",
        write_csv(&out.join("table_per_c.csv"), &per_c),
    )?;
    w(
        "table1_quality.csv",
        write_csv(&out.join("table1_quality.csv"), &quality),
    )?;
    w(
        "scores.csv",
        write_csv(&out.join("scores.csv"), &run.scores),
    )?;
    let res = RunResults { averaged, quality };
    summary(&out, "summary.json", "run", cfg, &res)?;
    Ok(res)
}

/// Hash-width sweep: `table5_msweep.csv` and `msweep_raw.csv`.
pub fn cmd_sweep_m(cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let out = prepare(cfg)?;
    let s = &cfg.sweep;
    let res = sweep_m(
        &s.m_values,
        s.variant,
        &cfg.experiment(),
        &cfg.seeds,
        s.rate,
    )
    .map_err(context("sweep-m"))?;
    write_csv(&out.join("table5_msweep.csv"), &res.table).map_err(context("table5_msweep.csv"))?;
    write_csv(&out.join("msweep_raw.csv"), &res.rows).map_err(context("msweep_raw.csv"))?;
    summary(&out, "sweep_summary.json", "sweep-m", cfg, &res.table)?;
    Ok(res.table)
}

/// Timing table for the configured variants: `table1_scaling.csv`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<TimingRow>, CliError> {
    let out = prepare(cfg)?;
    let variants = cfg.rep_variants()?;
    let rows =
        scaling_benchmark(&variants, &cfg.experiment(), &cfg.bench).map_err(context("bench"))?;
    write_csv(&out.join("table1_scaling.csv"), &rows).map_err(context("table1_scaling.csv"))?;
    summary(&out, "bench_summary.json", "bench", cfg, &rows)?;
    Ok(rows)
}

/// Cosine versus log-distance diagnostic: `table7_diagnostic.csv`.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnosticOutput, CliError> {
    let out = prepare(cfg)?;
    let res = cosine_collapse_diagnostic(&cfg.gen, &cfg.hash, &cfg.diagnostic)
        .map_err(context("diagnose"))?;
    write_csv(&out.join("table7_diagnostic.csv"), &res.rows)
        .map_err(context("table7_diagnostic.csv"))?;
    summary(&out, "diagnostic_summary.json", "diagnose", cfg, &res)?;
    Ok(res)
}

/// Representation ablations under holdout_C: `table6_ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    let out = prepare(cfg)?;
    let list = ablations(&cfg.hash);
    let (table, raw) = run_ablations(&list, &cfg.experiment(), &cfg.seeds, cfg.ablation.rate)
        .map_err(context("ablate"))?;
    write_csv(&out.join("table6_ablation.csv"), &table).map_err(context("table6_ablation.csv"))?;
    write_csv(&out.join("ablation_raw.csv"), &raw).map_err(context("ablation_raw.csv"))?;
    summary(&out, "ablation_summary.json", "ablate", cfg, &table)?;
    Ok(table)
}

/// Sets the size of the global worker pool. Only the first call takes effect.
pub fn init_threads(threads: Option<usize>) {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let _ = b.build_global();
}
