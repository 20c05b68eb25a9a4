//! Cosine versus log-distance kernels under magnitude-only perturbations.
//!
//! Cosine similarity ignores per-row rescaling, so a magnitude change on a
//! short segment of `g`, multiplicative (amplitude) or additive (norm offset),
//! leaves `Cos(g)` untouched while `LogDist(g)` moves.
//! Each window is summarized by the mean off-diagonal kernel dissimilarity
//! (`1 - Cos` and `LogDist`), and the summaries are used directly as scores.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::{generate_window, GenConfig, IdPool, Split};
use crate::error::Result;
use crate::kernelrep::{cos_kernel, logdist_kernel, robust_bandwidth};
use crate::matrix::Mat;
use crate::rng::{seeded_rng, stream_key};
use crate::sketch::{build_hashed_sequence, HashConfig};

use super::metrics::{auprc, auroc};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticConfig {
    /// Windows per class and task.
    pub n_per_class: usize,
    pub cardinality: usize,
    /// Factor applied to the segment rows of `g` in the amplitude task.
    pub amplitude_scale: f64,
    /// Added to the norm of each segment row of `g` in the additive task.
    pub additive_offset: f64,
    /// Segment scale used for the single-window kernel-difference check.
    pub figure_scale: f64,
    pub seed: u64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        DiagnosticConfig {
            n_per_class: 200,
            cardinality: 6,
            amplitude_scale: 4.0,
            additive_offset: 4.0,
            figure_scale: 2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub task: String,
    pub cosine_auroc: f64,
    pub cosine_auprc: f64,
    pub logdist_auroc: f64,
    pub logdist_auprc: f64,
}

/// Largest kernel change caused by scaling one segment of one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelChange {
    pub scale: f64,
    pub max_cos_change: f64,
    pub max_logdist_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticOutput {
    pub rows: Vec<DiagnosticRow>,
    pub figure: KernelChange,
}

fn mean_off_diagonal(k: &Mat) -> f64 {
    let n = k.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += k.get(i, j);
            }
        }
    }
    s / (n * (n - 1)) as f64
}

/// `(mean(1 - Cos), mean LogDist)` over off-diagonal entries.
pub fn kernel_summaries(g: &Mat) -> Result<(f64, f64)> {
    let cos = 1.0 - mean_off_diagonal(&cos_kernel(g));
    let log = mean_off_diagonal(&logdist_kernel(g, robust_bandwidth(g)?));
    Ok((cos, log))
}

/// Multiplies rows `a..b` of `g` by `scale`.
pub fn scale_rows(g: &Mat, a: usize, b: usize, scale: f64) -> Mat {
    let mut out = g.clone();
    for t in a..b {
        out.row_mut(t).iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn segment(len: usize, seed: u64, key: &[u64]) -> (usize, usize) {
    let mut rng = seeded_rng(seed, stream_key(key));
    let (lo, hi) = ((len / 8).max(1), (len / 4).max(1));
    let n = rng.random_range(lo..=hi);
    let a = rng.random_range(0..=len - n);
    (a, a + n)
}

/// Adds `delta` to the norm of rows `a..b` of `g`, keeping their directions.
pub fn add_to_norms(g: &Mat, a: usize, b: usize, delta: f64) -> Mat {
    let mut out = g.clone();
    for t in a..b {
        let row = out.row_mut(t);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let s = (norm + delta) / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Kernel change when one segment of `g` is scaled by `scale`.
pub fn segment_scaling_change(g: &Mat, a: usize, b: usize, scale: f64) -> Result<KernelChange> {
    let h = scale_rows(g, a, b, scale);
    Ok(KernelChange {
        scale,
        max_cos_change: max_abs_diff(&cos_kernel(g), &cos_kernel(&h)),
        max_logdist_change: max_abs_diff(
            &logdist_kernel(g, robust_bandwidth(g)?),
            &logdist_kernel(&h, robust_bandwidth(&h)?),
        ),
    })
}

/// Balanced normal/anomalous sets for the amplitude and additive tasks,
/// scored by kernel summaries, plus the single-window kernel change.
pub fn cosine_collapse_diagnostic(
    gen: &GenConfig,
    hash: &HashConfig,
    diag: &DiagnosticConfig,
) -> Result<DiagnosticOutput> {
    gen.validate()?;
    hash.validate()?;
    let gen = GenConfig {
        seed: diag.seed,
        ..gen.clone()
    };
    let pool = IdPool::new("tst", gen.id_pool_size);
    let len = gen.window_len;
    let n = diag.n_per_class;
    let window =
        |i: usize| generate_window(&gen, &pool, Split::Test, diag.cardinality, 0.0, i, None);

    let mut rows = Vec::new();
    for (task, name) in ["amplitude_scaling", "additive_perturbation"]
        .into_iter()
        .enumerate()
    {
        let mut cos = Vec::with_capacity(2 * n);
        let mut log = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let index = task * 2 * n + i;
            let w = window(index)?;
            let anomalous = i >= n;
            let g = if !anomalous {
                build_hashed_sequence(&w, hash).g
            } else {
                let (a, b) = segment(len, diag.seed, &[0xd1a6, task as u64, index as u64]);
                let g = build_hashed_sequence(&w, hash).g;
                match task {
                    0 => scale_rows(&g, a, b, diag.amplitude_scale),
                    _ => add_to_norms(&g, a, b, diag.additive_offset),
                }
            };
            let (c, l) = kernel_summaries(&g)?;
            cos.push(c);
            log.push(l);
            labels.push(anomalous);
        }
        rows.push(DiagnosticRow {
            task: name.to_string(),
            cosine_auroc: auroc(&cos, &labels)?,
            cosine_auprc: auprc(&cos, &labels)?,
            logdist_auroc: auroc(&log, &labels)?,
            logdist_auprc: auprc(&log, &labels)?,
        });
    }

    let g = build_hashed_sequence(&window(4 * n)?, hash).g;
    let (a, b) = segment(len, diag.seed, &[0xf16, 0]);
    let figure = segment_scaling_change(&g, a, b, diag.figure_scale)?;
    Ok(DiagnosticOutput { rows, figure })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_window_row_rescaling_keeps_cosine() {
        let gen = GenConfig::default();
        let pool = IdPool::new("tst", 1000);
        let w = generate_window(&gen, &pool, Split::Test, 5, 0.0, 3, None).unwrap();
        let g = build_hashed_sequence(&w, &HashConfig::default()).g;
        let mut h = g.clone();
        for t in 0..h.rows() {
            let s = 0.5 + (t % 7) as f64;
            h.row_mut(t).iter_mut().for_each(|v| *v *= s);
        }
        assert!(max_abs_diff(&cos_kernel(&g), &cos_kernel(&h)) <= 1e-6);
    }

    #[test]
    fn summaries_are_bounded() {
        let g = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let (c, l) = kernel_summaries(&g).unwrap();
        assert!((0.0..=1.0).contains(&c));
        assert!(l > 0.0);
    }
}
