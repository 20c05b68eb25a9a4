use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchgen::{generate_window, GenConfig, IdPool, Protocol, Split};
use crate::detector::{Projector, ReferenceIndex};
use crate::error::{Error, Result};
use crate::kernelrep::{complexity_proxy, RepBuilder, RepOptions, RepVariant};
use crate::rng::mix64;
use crate::sketch::{build_hashed_sequence, Window};

use super::experiment::{rep_kind, ExperimentConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Window lengths to time.
    pub lens: Vec<usize>,
    /// Timed repetitions after one untimed warm-up; the median is reported.
    pub repetitions: usize,
    pub reference_windows: usize,
    pub query_windows: usize,
    /// Cardinality of the timed query windows.
    pub cardinality: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lens: vec![64],
            repetitions: 5,
            reference_windows: 100,
            query_windows: 100,
            cardinality: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub variant: String,
    pub rep: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub feature_dim: usize,
    pub complexity_proxy: f64,
    pub build_seconds: f64,
    pub score_seconds: f64,
    pub total_seconds: f64,
    pub repetitions: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_windows(gen: &GenConfig, bench: &BenchConfig) -> Result<(Vec<Window>, Vec<Window>)> {
    let train_pool = IdPool::new("trn", gen.id_pool_size);
    let test_pool = IdPool::new("tst", gen.id_pool_size);
    let train_c = Protocol::HoldoutC.train_cardinalities();
    let reference = (0..bench.reference_windows)
        .map(|i| {
            generate_window(
                gen,
                &train_pool,
                Split::Train,
                train_c[i % train_c.len()],
                0.0,
                i,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = (0..bench.query_windows)
        .map(|i| {
            generate_window(
                gen,
                &test_pool,
                Split::Test,
                bench.cardinality,
                0.0,
                i,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference, queries))
}

/// Median wall time of representation build and of projection plus kNN
/// scoring over fixed normal query windows, for each variant and length.
///
/// Runs single-threaded so times are comparable across variants.
pub fn scaling_benchmark(
    variants: &[RepVariant],
    cfg: &ExperimentConfig,
    bench: &BenchConfig,
) -> Result<Vec<TimingRow>> {
    if bench.repetitions == 0 || bench.reference_windows == 0 || bench.query_windows == 0 {
        return Err(Error::config(
            "benchmark needs at least one repetition, reference and query window",
        ));
    }
    let width = cfg.hash.width();
    let mut rows = Vec::new();
    for &len in &bench.lens {
        let gen = GenConfig {
            window_len: len,
            seed: bench.seed,
            ..cfg.gen.clone()
        };
        gen.validate()?;
        let (reference, queries) = bench_windows(&gen, bench)?;
        for &variant in variants {
            variant.validate(len, width)?;
            let opts = RepOptions {
                include_tau: cfg.detector.include_tau,
                bandwidth: cfg.detector.bandwidth,
                ..RepOptions::default()
            };
            let builder = RepBuilder::new(variant, width, opts)?;
            let proj = Projector::gaussian(
                builder.feature_dim(len),
                cfg.detector.projection_dim,
                mix64(cfg.detector.projection_seed ^ mix64(bench.seed)),
            );
            let features = |ws: &[Window]| -> Result<Vec<Vec<f64>>> {
                ws.iter()
                    .map(|w| {
                        Ok(builder
                            .build(&build_hashed_sequence(w, &cfg.hash))?
                            .features(opts.include_tau))
                    })
                    .collect()
            };
            let ref_feats = features(&reference)?;
            let index =
                ReferenceIndex::from_projected(proj.project_batch(&ref_feats)?, cfg.detector.k)?;
            drop(ref_feats);

            let mut build = Vec::new();
            let mut score = Vec::new();
            for rep in 0..=bench.repetitions {
                let t0 = Instant::now();
                let feats = features(&queries)?;
                let b = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let mut total = 0.0;
                for chunk in feats.chunks(16) {
                    for q in proj.project_batch(chunk)? {
                        total += index.score_projected(q)?;
                    }
                }
                std::hint::black_box(total);
                let s = t1.elapsed().as_secs_f64();
                if rep > 0 {
                    build.push(b);
                    score.push(s);
                }
            }
            let totals: Vec<f64> = build.iter().zip(&score).map(|(b, s)| b + s).collect();
            rows.push(TimingRow {
                variant: variant.to_string(),
                rep: rep_kind(&variant).to_string(),
                len,
                feature_dim: variant.feature_dim(len, width),
                complexity_proxy: complexity_proxy(&variant, len, width),
                build_seconds: median(build),
                score_seconds: median(score),
                total_seconds: median(totals),
                repetitions: bench.repetitions,
            });
        }
    }
    Ok(rows)
}
