//! Training-free scoring: a fixed Gaussian random projection of flattened
//! representations followed by mean cosine distance to the `K` nearest
//! vectors of a normal-only reference set.
//!
//! Neighbor search is exact. Reference sets here are at most tens of
//! thousands of 256-dimensional vectors, where a linear scan is fast enough;
//! an approximate index could replace [`ReferenceIndex::score_projected`]
//! without touching callers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, Mat};
use crate::rng::{gaussian_matrix, stream_key};
use crate::sketch::Window;

pub const DEFAULT_PROJECTION_DIM: usize = 256;
pub const DEFAULT_K: usize = 20;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x0005_eed0_f00d;

/// Column tile for batch projection. Every output coordinate is accumulated
/// tile by tile in the same order whatever the batch size, so projecting a
/// vector alone or inside a batch gives bit-identical results.
const TILE: usize = 512;

/// Norm below which a projected vector is treated as zero.
const ZERO_NORM: f64 = 1e-300;

/// A `d_out x d_in` matrix with i.i.d. `N(0, 1/d_out)` entries.
///
/// Entries come from ChaCha8 seeded with `seed` on a stream keyed by the
/// shape, so the matrix depends only on `(d_in, d_out, seed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub seed: u64,
    pub matrix: Mat,
}

pub fn make_projection(d_in: usize, d_out: usize, seed: u64) -> ProjectionSpec {
    assert!(
        d_in >= 1 && d_out >= 1,
        "projection dimensions must be positive"
    );
    let std = 1.0 / (d_out as f64).sqrt();
    let stream = stream_key(&[0x9a55, d_in as u64, d_out as u64]);
    ProjectionSpec {
        d_in,
        d_out,
        seed,
        matrix: gaussian_matrix(d_out, d_in, std, seed, stream),
    }
}

/// Maps flattened features into the space the reference index lives in.
#[derive(Clone, Debug, PartialEq)]
pub enum Projector {
    Gaussian(ProjectionSpec),
    /// Features are used as they are (the StatsPool baseline).
    Identity {
        dim: usize,
    },
}

impl Projector {
    pub fn gaussian(d_in: usize, d_out: usize, seed: u64) -> Self {
        Projector::Gaussian(make_projection(d_in, d_out, seed))
    }

    pub fn d_in(&self) -> usize {
        match self {
            Projector::Gaussian(p) => p.d_in,
            Projector::Identity { dim } => *dim,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Projector::Gaussian(p) => p.d_out,
            Projector::Identity { dim } => *dim,
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_batch(std::slice::from_ref(&x))?.pop().unwrap())
    }

    /// Projects a batch with a cache-friendly column-tiled loop.
    pub fn project_batch<V: AsRef<[f64]>>(&self, xs: &[V]) -> Result<Vec<Vec<f64>>> {
        let d_in = self.d_in();
        for x in xs {
            let found = x.as_ref().len();
            if found != d_in {
                return Err(Error::DimensionMismatch {
                    expected: d_in,
                    found,
                });
            }
        }
        let p = match self {
            Projector::Identity { .. } => {
                return Ok(xs.iter().map(|x| x.as_ref().to_vec()).collect())
            }
            Projector::Gaussian(p) => p,
        };
        let mut out = vec![vec![0.0; p.d_out]; xs.len()];
        let mut lo = 0;
        while lo < d_in {
            let hi = (lo + TILE).min(d_in);
            for r in 0..p.d_out {
                let m = &p.matrix.row(r)[lo..hi];
                for (x, o) in xs.iter().zip(out.iter_mut()) {
                    o[r] += dot(m, &x.as_ref()[lo..hi]);
                }
            }
            lo = hi;
        }
        Ok(out)
    }
}

/// Returns the unit vector and whether the input was (numerically) zero.
/// Zero vectors stay zero, which puts them at cosine distance 1 from everything.
pub fn l2_normalize(mut v: Vec<f64>) -> (Vec<f64>, bool) {
    let norm = dot(&v, &v).sqrt();
    if norm < ZERO_NORM || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        return (v, true);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    (v, false)
}

/// Normal-only reference set of projected, unit-normalized vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceIndex {
    vectors: Mat,
    zero: Vec<bool>,
    k: usize,
}

impl ReferenceIndex {
    /// Builds an index from already projected vectors.
    pub fn from_projected(projected: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if projected.is_empty() {
            return Err(Error::config("reference set is empty"));
        }
        if k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        let dim = projected[0].len();
        let mut zero = Vec::with_capacity(projected.len());
        let mut rows = Vec::with_capacity(projected.len());
        for v in projected {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let (u, z) = l2_normalize(v);
            zero.push(z);
            rows.push(u);
        }
        Ok(ReferenceIndex {
            vectors: Mat::from_rows(&rows),
            zero,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    /// Number of stored vectors that were zero before normalization.
    pub fn zero_count(&self) -> usize {
        self.zero.iter().filter(|&&z| z).count()
    }

    /// Mean cosine distance from a projected query to its `min(K, N)` nearest
    /// references. The query is normalized here; a zero query scores 1.
    pub fn score_projected(&self, query: Vec<f64>) -> Result<f64> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        let (q, _) = l2_normalize(query);
        let mut d: Vec<f64> = (0..self.len())
            .map(|i| (1.0 - dot(&q, self.vectors.row(i))).clamp(0.0, 2.0))
            .collect();
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d.truncate(k);
        }
        // Sorting the kept distances makes the sum independent of reference order.
        d.sort_unstable_by(f64::total_cmp);
        Ok(d.iter().sum::<f64>() / k as f64)
    }
}

/// Projects, normalizes and stores `features` as the reference set.
pub fn fit_reference<V: AsRef<[f64]> + Sync>(
    features: &[V],
    proj: &Projector,
    k: usize,
) -> Result<ReferenceIndex> {
    if features.is_empty() {
        return Err(Error::config("reference set is empty"));
    }
    let projected = features
        .par_chunks(32)
        .map(|chunk| proj.project_batch(chunk))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    ReferenceIndex::from_projected(projected, k)
}

pub fn score_knn(feature: &[f64], proj: &Projector, index: &ReferenceIndex) -> Result<f64> {
    index.score_projected(proj.project(feature)?)
}

/// Length of [`stats_pool`] output.
pub const STATS_DIM: usize = 9;

/// Pooled window statistics over observed entries:
/// `[mean, std, min, max, skew, mean |Δ|, observed fraction, mean n_t, std n_t]`.
///
/// Standard deviations are population (ddof 0). `skew` is the mean cubed
/// standardized value (0 when the std is 0). `mean |Δ|` averages
/// `|x_{t,j} - x_{t-1,j}|` over pairs where both entries are observed (0 if
/// there are none). All statistics are symmetric in the variables.
pub fn stats_pool(w: &Window) -> [f64; STATS_DIM] {
    let (len, c) = (w.len(), w.cardinality());
    let obs: Vec<f64> = (0..len * c)
        .filter(|&k| w.mask()[k])
        .map(|k| w.values()[k])
        .collect();
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let min = obs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let skew = if std > 0.0 {
        obs.iter().map(|x| ((x - mean) / std).powi(3)).sum::<f64>() / n
    } else {
        0.0
    };
    let (mut dsum, mut dcount) = (0.0, 0usize);
    for t in 1..len {
        for j in 0..c {
            if w.observed(t, j) && w.observed(t - 1, j) {
                dsum += (w.value(t, j) - w.value(t - 1, j)).abs();
                dcount += 1;
            }
        }
    }
    let mean_abs_diff = if dcount > 0 {
        dsum / dcount as f64
    } else {
        0.0
    };
    let counts: Vec<f64> = (0..len).map(|t| w.observed_count(t) as f64).collect();
    let n_mean = counts.iter().sum::<f64>() / len as f64;
    let n_std = (counts.iter().map(|x| (x - n_mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    [
        mean,
        std,
        min,
        max,
        skew,
        mean_abs_diff,
        n / (len * c) as f64,
        n_mean,
        n_std,
    ]
}

/// Per-feature z-scoring fitted on training statistics; constant features
/// get unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsScaler {
    pub mean: [f64; STATS_DIM],
    pub std: [f64; STATS_DIM],
}

impl StatsScaler {
    pub fn fit(stats: &[[f64; STATS_DIM]]) -> Self {
        let n = stats.len().max(1) as f64;
        let mut mean = [0.0; STATS_DIM];
        let mut std = [0.0; STATS_DIM];
        for k in 0..STATS_DIM {
            mean[k] = stats.iter().map(|s| s[k]).sum::<f64>() / n;
            let v = stats.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
        }
        StatsScaler { mean, std }
    }

    pub fn transform(&self, s: &[f64; STATS_DIM]) -> Vec<f64> {
        (0..STATS_DIM)
            .map(|k| (s[k] - self.mean[k]) / self.std[k])
            .collect()
    }
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `(s - median) / (1.4826 MAD + 1e-12)`; an increasing affine map, so ranks
/// are unchanged.
pub fn robust_standardize(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let med = median_of(scores);
    let dev: Vec<f64> = scores.iter().map(|s| (s - med).abs()).collect();
    let scale = 1.4826 * median_of(&dev) + 1e-12;
    scores.iter().map(|s| (s - med) / scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn projection_is_deterministic_and_scaled() {
        let a = make_projection(300, 256, 9);
        let b = make_projection(300, 256, 9);
        assert_eq!(a, b);
        assert_ne!(a.matrix, make_projection(300, 256, 10).matrix);
        let mean_sq: f64 = (0..300)
            .map(|j| (0..256).map(|i| a.matrix.get(i, j).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 300.0;
        assert!(
            (mean_sq - 1.0).abs() <= 0.1,
            "mean squared column norm {mean_sq}"
        );
    }

    #[test]
    fn batch_and_single_projection_agree_bitwise() {
        let p = Projector::gaussian(1500, 16, 3);
        let mut rng = seeded_rng(1, 1);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..1500).map(|_| rng.random::<f64>()).collect())
            .collect();
        let batch = p.project_batch(&xs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            assert_eq!(&p.project(x).unwrap(), b);
        }
        assert!(p.project(&[1.0]).is_err());
    }

    #[test]
    fn jl_preserves_pairwise_distances() {
        let d = 24576;
        let p = Projector::gaussian(d, 256, 42);
        let mut rng = seeded_rng(2, 2);
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let ys = p.project_batch(&xs).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            for j in i + 1..100 {
                let exact = crate::matrix::sq_dist(&xs[i], &xs[j]).sqrt();
                let proj = crate::matrix::sq_dist(&ys[i], &ys[j]).sqrt();
                worst = worst.max((proj / exact - 1.0).abs());
            }
        }
        assert!(worst <= 0.25, "worst relative distortion {worst}");
    }

    #[test]
    fn reference_vectors_are_unit() {
        let p = Projector::gaussian(10, 8, 1);
        let feats = vec![vec![1.0; 10], vec![1.0; 10], vec![0.0; 10]];
        let idx = fit_reference(&feats, &p, 20).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.vector(0), idx.vector(1));
        assert_eq!(idx.zero_count(), 1);
        for i in 0..2 {
            assert!((dot(idx.vector(i), idx.vector(i)) - 1.0).abs() < 1e-9);
        }
        let ragged = vec![vec![1.0; 10], vec![1.0; 9]];
        assert!(fit_reference(&ragged, &p, 1).is_err());
    }

    #[test]
    fn duplicate_and_orthogonal_queries() {
        let id = Projector::Identity { dim: 3 };
        let refs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let idx = fit_reference(&refs, &id, 1).unwrap();
        assert!(score_knn(&[2.0, 0.0, 0.0], &id, &idx).unwrap().abs() < 1e-9);
        let idx2 = fit_reference(&refs, &id, 2).unwrap();
        assert!((score_knn(&[0.0, 0.0, 5.0], &id, &idx2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score_knn(&[0.0, 0.0, 0.0], &id, &idx2).unwrap(), 1.0);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let id = Projector::Identity { dim: 3 };
        let refs = vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, -0.7, 1.1],
            vec![3.0, 1.0, -1.0],
            vec![0.0, 0.5, 0.5],
        ];
        let q = [0.4, 1.0, 0.9];
        let idx = fit_reference(&refs, &id, 3).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut all: Vec<f64> = refs
            .iter()
            .map(|r| 1.0 - r.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (norm(r) * norm(&q)))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = (all[0] + all[1] + all[2]) / 3.0;
        assert!((score_knn(&q, &id, &idx).unwrap() - oracle).abs() < 1e-12);

        // N < K uses all references; insertion order does not matter.
        let big_k = fit_reference(&refs, &id, 50).unwrap();
        let mut rev = refs.clone();
        rev.reverse();
        let big_k_rev = fit_reference(&rev, &id, 50).unwrap();
        let s = score_knn(&q, &id, &big_k).unwrap();
        assert!((s - all.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        assert_eq!(s, score_knn(&q, &id, &big_k_rev).unwrap());
    }

    #[test]
    fn stats_pool_hand_computed() {
        // 2 x 3 window; entry (1, 2) missing.
        let w = Window::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1.0, 2.0, 3.0, 4.0, 6.0, 0.0],
            vec![true, true, true, true, true, false],
            2,
        )
        .unwrap();
        let s = stats_pool(&w);
        // Observed: 1, 2, 3, 4, 6 -> mean 3.2, var (4.84+1.44+0.04+0.64+7.84)/5 = 2.96
        let std = 2.96f64.sqrt();
        let skew = [1.0, 2.0, 3.0, 4.0, 6.0f64]
            .iter()
            .map(|x| ((x - 3.2) / std).powi(3))
            .sum::<f64>()
            / 5.0;
        let expected = [3.2, std, 1.0, 6.0, skew, 3.5, 5.0 / 6.0, 2.5, 0.5];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
        let perm = stats_pool(&w.permute_columns(&[2, 0, 1]));
        assert_eq!(s, perm);
    }

    #[test]
    fn stats_pool_constant_window() {
        let w = Window::new(vec!["x".into(), "y".into()], vec![1.5; 8], vec![true; 8], 4).unwrap();
        let s = stats_pool(&w);
        assert_eq!(s[0], 1.5);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[4], 0.0);
        assert_eq!(s[5], 0.0);
    }

    #[test]
    fn robust_standardize_examples() {
        assert_eq!(robust_standardize(&[4.0, 4.0, 4.0]), vec![0.0, 0.0, 0.0]);
        let z = robust_standardize(&[0.0, 1.0, 2.0]);
        let e = 1.0 / (1.4826 + 1e-12);
        assert!((z[0] + e).abs() < 1e-12 && z[1] == 0.0 && (z[2] - e).abs() < 1e-12);
    }
}
