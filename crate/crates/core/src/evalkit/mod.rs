//! Metrics, experiment protocols, sweeps, the scaling benchmark and the
//! kernel diagnostic.

mod bench;
mod diagnostic;
mod experiment;
mod metrics;
pub mod report;

pub use bench::{scaling_benchmark, BenchConfig, TimingRow};
pub use diagnostic::{
    cosine_collapse_diagnostic, kernel_summaries, scale_rows, segment_scaling_change,
    DiagnosticConfig, DiagnosticOutput, DiagnosticRow, KernelChange,
};
pub use experiment::{
    ablations, aggregate, evaluate_dataset, fit_exact, mean_collisions, mean_std, rep_kind,
    run_ablations, run_protocol, scaling_variants, sweep_m, Ablation, AblationRow, AggregateRow,
    DetectorConfig, ExperimentConfig, Method, MetricRow, RunOutput, ScoreRecord, Scorer,
    SweepOutput, SweepRow,
};
pub use metrics::{auprc, auroc, evaluate, tpr_at_fpr, Metrics};
