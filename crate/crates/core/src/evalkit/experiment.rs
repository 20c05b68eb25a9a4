use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchgen::{build_dataset, AnomalyType, GenConfig, LabeledDataset, Protocol, TestCell};
use crate::detector::{
    fit_reference, robust_standardize, stats_pool, Projector, ReferenceIndex, StatsScaler,
    DEFAULT_K, DEFAULT_PROJECTION_DIM, DEFAULT_PROJECTION_SEED,
};
use crate::error::{Error, Result};
use crate::kernelrep::{
    complexity_proxy, BandwidthScope, ChannelSet, RepBuilder, RepOptions, RepVariant,
};
use crate::rng::mix64;
use crate::sketch::{build_hashed_sequence, collision_fraction, HashConfig, SketchStream, Window};

use super::metrics::evaluate;

/// Windows embedded per batch; bounds peak memory of flattened features.
const BATCH: usize = 16;

/// A scoring method: RandProj-kNN on a representation, or the StatsPool-kNN baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    RandProj(RepVariant),
    StatsPool,
}

impl Method {
    pub fn feature_dim(&self, len: usize, width: usize) -> usize {
        match self {
            Method::RandProj(v) => v.feature_dim(len, width),
            Method::StatsPool => crate::detector::STATS_DIM,
        }
    }

    /// Relative cost; the pooled-statistics baseline has no kernel stage.
    pub fn complexity_proxy(&self, len: usize, width: usize) -> f64 {
        match self {
            Method::RandProj(v) => complexity_proxy(v, len, width),
            Method::StatsPool => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::RandProj(v) => write!(f, "{v}"),
            Method::StatsPool => f.write_str("statspool_knn"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "statspool_knn" | "statspool" => Ok(Method::StatsPool),
            other => other.parse().map(Method::RandProj),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The eleven scaling-study variants, in table order.
pub fn scaling_variants() -> Vec<RepVariant> {
    use RepVariant::*;
    vec![
        Band {
            width: 8,
            channels: ChannelSet::LOG3,
        },
        Band {
            width: 4,
            channels: ChannelSet::LOG3,
        },
        RepVariant::LOG3,
        Projected { dim: 128 },
        RepVariant::FULL6,
        Projected { dim: 64 },
        Anchor {
            count: 16,
            channels: ChannelSet::LOG3,
        },
        Anchor {
            count: 8,
            channels: ChannelSet::LOG3,
        },
        RepVariant::BASE2,
        Downsampled { len: 16 },
        Sequence,
    ]
}

/// Kind of representation, as labelled in the scaling table.
pub fn rep_kind(v: &RepVariant) -> &'static str {
    match v {
        RepVariant::Band { .. } => "bandfeat",
        RepVariant::Anchor { .. } => "anchorfeat",
        RepVariant::Sequence => "seq",
        _ => "img",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub projection_dim: usize,
    pub k: usize,
    /// Combined with the run seed to pick the projection matrix.
    pub projection_seed: u64,
    /// Append the scale token to the flattened features.
    pub include_tau: bool,
    pub bandwidth: BandwidthScope,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            projection_dim: DEFAULT_PROJECTION_DIM,
            k: DEFAULT_K,
            projection_seed: DEFAULT_PROJECTION_SEED,
            include_tau: false,
            bandwidth: BandwidthScope::Evaluated,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projection_dim == 0 {
            return Err(Error::config("projection_dim must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        Ok(())
    }
}

/// Everything that determines a run apart from the seed list and methods.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub hash: HashConfig,
    pub detector: DetectorConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.hash.validate()?;
        self.detector.validate()
    }

    fn for_seed(&self, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            ..self.gen.clone()
        }
    }
}

enum Embedder {
    Rep {
        builder: RepBuilder,
        proj: Projector,
        include_tau: bool,
        hash: HashConfig,
    },
    Stats {
        scaler: StatsScaler,
    },
}

impl Embedder {
    fn embed_chunk(&self, windows: &[&Window]) -> Result<Vec<Vec<f64>>> {
        match self {
            Embedder::Rep {
                builder,
                proj,
                include_tau,
                hash,
            } => {
                let feats = windows
                    .iter()
                    .map(|w| {
                        let hs = build_hashed_sequence(w, hash);
                        Ok(builder.build(&hs)?.features(*include_tau))
                    })
                    .collect::<Result<Vec<_>>>()?;
                proj.project_batch(&feats)
            }
            Embedder::Stats { scaler } => Ok(windows
                .iter()
                .map(|w| scaler.transform(&stats_pool(w)))
                .collect()),
        }
    }

    fn embed(&self, windows: &[&Window]) -> Result<Vec<Vec<f64>>> {
        let parts = windows
            .par_chunks(BATCH)
            .map(|c| self.embed_chunk(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }
}

/// A method fitted on normal reference windows.
pub struct Scorer {
    pub method: Method,
    embedder: Embedder,
    index: ReferenceIndex,
}

impl Scorer {
    /// Fits the reference index. Every reference window must be labeled normal.
    pub fn fit(
        method: Method,
        reference: &[&Window],
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Self> {
        if let Some(w) = reference.iter().find(|w| w.label.is_anomalous()) {
            return Err(Error::config(format!(
                "reference set contains an anomalous window ({:?})",
                w.anomaly
            )));
        }
        let len = cfg.gen.window_len;
        let det = &cfg.detector;
        let embedder = match method {
            Method::RandProj(variant) => {
                let width = cfg.hash.width();
                variant.validate(len, width)?;
                let opts = RepOptions {
                    include_tau: det.include_tau,
                    bandwidth: det.bandwidth,
                    ..RepOptions::default()
                };
                let builder = RepBuilder::new(variant, width, opts)?;
                let d_in = builder.feature_dim(len);
                let proj = Projector::gaussian(
                    d_in,
                    det.projection_dim,
                    mix64(det.projection_seed ^ mix64(seed)),
                );
                Embedder::Rep {
                    builder,
                    proj,
                    include_tau: det.include_tau,
                    hash: cfg.hash,
                }
            }
            Method::StatsPool => {
                let stats: Vec<_> = reference.par_iter().map(|w| stats_pool(w)).collect();
                Embedder::Stats {
                    scaler: StatsScaler::fit(&stats),
                }
            }
        };
        let projected = embedder.embed(reference)?;
        let index = ReferenceIndex::from_projected(projected, det.k)?;
        Ok(Scorer {
            method,
            embedder,
            index,
        })
    }

    pub fn index(&self) -> &ReferenceIndex {
        &self.index
    }

    pub fn score(&self, windows: &[&Window]) -> Result<Vec<f64>> {
        let emb = self.embedder.embed(windows)?;
        emb.into_par_iter()
            .map(|q| self.index.score_projected(q))
            .collect()
    }
}

/// Identity-projection reference fit, exposed for checks against exact
/// distances on unprojected features.
pub fn fit_exact(features: &[Vec<f64>], k: usize) -> Result<ReferenceIndex> {
    let dim = features.first().map_or(0, Vec::len);
    fit_reference(features, &Projector::Identity { dim }, k)
}

/// Metrics of one method on one test cell for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub protocol: Protocol,
    pub variant: String,
    #[serde(rename = "C")]
    pub cardinality: usize,
    pub anomaly_rate: f64,
    pub seed: u64,
    pub auprc: f64,
    pub auroc: f64,
    pub tpr_at_1fpr: f64,
    pub wall_seconds: f64,
    pub feature_dim: usize,
    pub complexity_proxy: f64,
    pub value_collision: f64,
    pub presence_collision: f64,
    pub n_windows: usize,
    pub n_anomalous: usize,
}

/// Per-window score, raw and robustly standardized within its cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub seed: u64,
    pub variant: String,
    pub window_id: String,
    #[serde(rename = "C")]
    pub cardinality: usize,
    pub anomaly_rate: f64,
    pub label: String,
    pub anomaly_type: String,
    pub raw_score: f64,
    pub standardized_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<MetricRow>,
    pub scores: Vec<ScoreRecord>,
}

impl RunOutput {
    fn extend(&mut self, other: RunOutput) {
        self.rows.extend(other.rows);
        self.scores.extend(other.scores);
    }
}

/// Mean collision fractions `(value, presence)` over windows.
pub fn mean_collisions<'a>(
    windows: impl Iterator<Item = &'a Window>,
    buckets: usize,
) -> (f64, f64) {
    let (mut v, mut p, mut n) = (0.0, 0.0, 0usize);
    for w in windows {
        v += collision_fraction(w.ids(), buckets, SketchStream::Value);
        p += collision_fraction(w.ids(), buckets, SketchStream::Presence);
        n += 1;
    }
    let n = n.max(1) as f64;
    (v / n, p / n)
}

fn score_cell(
    scorer: &Scorer,
    cell: &TestCell,
    ds: &LabeledDataset,
    cfg: &ExperimentConfig,
) -> Result<RunOutput> {
    let windows: Vec<&Window> = cell.windows.iter().map(|r| &r.window).collect();
    let start = Instant::now();
    let raw = scorer.score(&windows)?;
    let wall = start.elapsed().as_secs_f64();
    let labels: Vec<bool> = windows.iter().map(|w| w.label.is_anomalous()).collect();
    let m = evaluate(&raw, &labels)?;
    let (vc, pc) = mean_collisions(windows.iter().copied(), cfg.hash.buckets);
    let variant = scorer.method.to_string();
    let len = cfg.gen.window_len;
    let row = MetricRow {
        protocol: ds.protocol,
        variant: variant.clone(),
        cardinality: cell.cardinality,
        anomaly_rate: cell.rate,
        seed: ds.seed,
        auprc: m.auprc,
        auroc: m.auroc,
        tpr_at_1fpr: m.tpr_at_1fpr,
        wall_seconds: wall,
        feature_dim: scorer.method.feature_dim(len, cfg.hash.width()),
        complexity_proxy: scorer.method.complexity_proxy(len, cfg.hash.width()),
        value_collision: vc,
        presence_collision: pc,
        n_windows: windows.len(),
        n_anomalous: labels.iter().filter(|&&l| l).count(),
    };
    let std = robust_standardize(&raw);
    let scores = cell
        .windows
        .iter()
        .zip(raw.iter().zip(&std))
        .map(|(r, (&s, &z))| ScoreRecord {
            seed: ds.seed,
            variant: variant.clone(),
            window_id: r.id.clone(),
            cardinality: r.cardinality,
            anomaly_rate: r.rate,
            label: r.window.label.as_str().to_string(),
            anomaly_type: r
                .window
                .anomaly
                .map(AnomalyType::as_str)
                .unwrap_or("")
                .to_string(),
            raw_score: s,
            standardized_score: z,
        })
        .collect();
    Ok(RunOutput {
        rows: vec![row],
        scores,
    })
}

/// Fits `method` on the normal training windows of `ds` and scores every test cell.
///
/// Only `ds.train` enters the reference index.
pub fn evaluate_dataset(
    ds: &LabeledDataset,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<RunOutput> {
    let reference: Vec<&Window> = ds.train.iter().map(|r| &r.window).collect();
    let scorer = Scorer::fit(method, &reference, cfg, ds.seed)?;
    let mut out = RunOutput::default();
    for cell in &ds.test {
        out.extend(score_cell(&scorer, cell, ds, cfg)?);
    }
    Ok(out)
}

/// Generates one dataset per seed and evaluates every method on it.
pub fn run_protocol(
    protocol: Protocol,
    methods: &[Method],
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<RunOutput> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::config("no variants selected"));
    }
    if seeds.is_empty() {
        return Err(Error::config("no seeds selected"));
    }
    let mut out = RunOutput::default();
    for &seed in seeds {
        let ds = build_dataset(protocol, &cfg.for_seed(seed))?;
        for &m in methods {
            out.extend(evaluate_dataset(&ds, m, cfg)?);
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean +- std over seeds, optionally per cardinality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: Protocol,
    pub variant: String,
    /// `None` when averaged uniformly over cardinalities.
    #[serde(rename = "C")]
    pub cardinality: Option<usize>,
    pub anomaly_rate: f64,
    pub n_seeds: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub tpr_at_1fpr_mean: f64,
    pub tpr_at_1fpr_std: f64,
    pub wall_seconds_mean: f64,
    pub feature_dim: usize,
    pub complexity_proxy: f64,
}

/// Aggregates raw rows.
///
/// With `per_c == false`, each seed's metrics are first averaged uniformly
/// over cardinalities, then mean and std are taken across seeds. Group order
/// follows first appearance in `rows`.
pub fn aggregate(rows: &[MetricRow], per_c: bool) -> Vec<AggregateRow> {
    type Key = (Protocol, String, Option<usize>, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<&MetricRow>> = HashMap::new();
    for r in rows {
        let key = (
            r.protocol,
            r.variant.clone(),
            per_c.then_some(r.cardinality),
            r.anomaly_rate.to_bits(),
        );
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let mut seeds: Vec<u64> = members.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let per_seed = |f: &dyn Fn(&MetricRow) -> f64| -> Vec<f64> {
                seeds
                    .iter()
                    .map(|s| {
                        let v: Vec<f64> = members
                            .iter()
                            .filter(|r| r.seed == *s)
                            .map(|r| f(r))
                            .collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect()
            };
            let (auprc_mean, auprc_std) = mean_std(&per_seed(&|r| r.auprc));
            let (auroc_mean, auroc_std) = mean_std(&per_seed(&|r| r.auroc));
            let (tpr_mean, tpr_std) = mean_std(&per_seed(&|r| r.tpr_at_1fpr));
            let (wall, _) = mean_std(&per_seed(&|r| r.wall_seconds));
            AggregateRow {
                protocol: key.0,
                variant: key.1.clone(),
                cardinality: key.2,
                anomaly_rate: f64::from_bits(key.3),
                n_seeds: seeds.len(),
                auprc_mean,
                auprc_std,
                auroc_mean,
                auroc_std,
                tpr_at_1fpr_mean: tpr_mean,
                tpr_at_1fpr_std: tpr_std,
                wall_seconds_mean: wall,
                feature_dim: members[0].feature_dim,
                complexity_proxy: members[0].complexity_proxy,
            }
        })
        .collect()
}

/// One hash width of the collision sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub value_collision: f64,
    pub presence_collision: f64,
    pub n_seeds: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOutput {
    pub table: Vec<SweepRow>,
    pub rows: Vec<MetricRow>,
}

/// Hash-width sweep under holdout_C at a single anomaly rate.
///
/// Each seed's dataset is generated once and shared by all widths, so the
/// widths are compared on identical windows. Collision fractions are averaged
/// over the training windows, the population whose identifiers the sketch is
/// fitted on.
pub fn sweep_m(
    m_values: &[usize],
    method: Method,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    rate: f64,
) -> Result<SweepOutput> {
    if m_values.is_empty() {
        return Err(Error::config("empty m list"));
    }
    let mut base = cfg.clone();
    base.gen.anomaly_rates = vec![rate];
    base.validate()?;
    let mut per_m: Vec<RunOutput> = vec![RunOutput::default(); m_values.len()];
    let mut coll = vec![(0.0, 0.0); m_values.len()];
    for &seed in seeds {
        let ds = build_dataset(Protocol::HoldoutC, &base.for_seed(seed))?;
        for (k, &m) in m_values.iter().enumerate() {
            let mut c = base.clone();
            c.hash.buckets = m;
            c.hash.validate()?;
            per_m[k].extend(evaluate_dataset(&ds, method, &c)?);
            let (v, p) = mean_collisions(ds.train.iter().map(|r| &r.window), m);
            coll[k].0 += v / seeds.len() as f64;
            coll[k].1 += p / seeds.len() as f64;
        }
    }
    let mut out = SweepOutput::default();
    for (k, &m) in m_values.iter().enumerate() {
        let agg = aggregate(&per_m[k].rows, false);
        let a = &agg[0];
        out.table.push(SweepRow {
            m,
            value_collision: coll[k].0,
            presence_collision: coll[k].1,
            n_seeds: a.n_seeds,
            auprc_mean: a.auprc_mean,
            auprc_std: a.auprc_std,
            auroc_mean: a.auroc_mean,
            auroc_std: a.auroc_std,
        });
        out.rows.extend(per_m[k].rows.iter().cloned());
    }
    Ok(out)
}

/// A named ablation: a representation plus sketch settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub name: &'static str,
    pub variant: RepVariant,
    pub hash: HashConfig,
}

/// Training-free analogues of the component ablations. Rows that only make
/// sense for a trained encoder (positional encoding, masking schedule) have
/// no counterpart here.
pub fn ablations(base: &HashConfig) -> Vec<Ablation> {
    let img = |ch| RepVariant::Image(ch);
    let with = |f: &dyn Fn(&mut HashConfig)| {
        let mut h = *base;
        f(&mut h);
        h
    };
    vec![
        Ablation {
            name: "base",
            variant: RepVariant::FULL6,
            hash: *base,
        },
        Ablation {
            name: "log_only",
            variant: img(ChannelSet::LOG3),
            hash: *base,
        },
        Ablation {
            name: "cos_only",
            variant: img(ChannelSet::COS3),
            hash: *base,
        },
        Ablation {
            name: "no_delta_only",
            variant: img(ChannelSet::NO_DELTA),
            hash: *base,
        },
        Ablation {
            name: "no_absdelta_only",
            variant: img(ChannelSet::NO_ABSDELTA),
            hash: *base,
        },
        Ablation {
            name: "no_deltas_and_absdeltas",
            variant: img(ChannelSet::NO_DELTAS),
            hash: *base,
        },
        Ablation {
            name: "no_presence_stream",
            variant: RepVariant::FULL6,
            hash: with(&|h| h.presence = false),
        },
        Ablation {
            name: "no_sqrt_nt_normalization",
            variant: RepVariant::FULL6,
            hash: with(&|h| h.sqrt_normalize = false),
        },
        Ablation {
            name: "lambda_linear_no_saturation",
            variant: RepVariant::FULL6,
            hash: with(&|h| h.saturate = false),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub n_seeds: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub delta_auprc_vs_base: f64,
}

/// Ablation table under holdout_C at one rate, sorted by AUPRC (descending).
pub fn run_ablations(
    list: &[Ablation],
    cfg: &ExperimentConfig,
    seeds: &[u64],
    rate: f64,
) -> Result<(Vec<AblationRow>, Vec<MetricRow>)> {
    let mut base = cfg.clone();
    base.gen.anomaly_rates = vec![rate];
    base.validate()?;
    let mut raw: Vec<Vec<MetricRow>> = vec![Vec::new(); list.len()];
    for &seed in seeds {
        let ds = build_dataset(Protocol::HoldoutC, &base.for_seed(seed))?;
        for (k, a) in list.iter().enumerate() {
            let mut c = base.clone();
            c.hash = a.hash;
            c.validate()?;
            let mut rows = evaluate_dataset(&ds, Method::RandProj(a.variant), &c)?.rows;
            rows.iter_mut().for_each(|r| r.variant = a.name.to_string());
            raw[k].extend(rows);
        }
    }
    let aggs: Vec<AggregateRow> = raw.iter().map(|r| aggregate(r, false).remove(0)).collect();
    let base_auprc = list
        .iter()
        .position(|a| a.name == "base")
        .map_or(f64::NAN, |i| aggs[i].auprc_mean);
    let mut table: Vec<AblationRow> = aggs
        .iter()
        .map(|a| AblationRow {
            variant: a.variant.clone(),
            n_seeds: a.n_seeds,
            auprc_mean: a.auprc_mean,
            auprc_std: a.auprc_std,
            auroc_mean: a.auroc_mean,
            auroc_std: a.auroc_std,
            delta_auprc_vs_base: a.auprc_mean - base_auprc,
        })
        .collect();
    table.sort_by(|a, b| {
        b.auprc_mean
            .total_cmp(&a.auprc_mean)
            .then(a.variant.cmp(&b.variant))
    });
    Ok((table, raw.into_iter().flatten().collect()))
}
