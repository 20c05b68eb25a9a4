//! Synthetic variable-cardinality benchmark.
//!
//! Two latent AR(1) factors with unit stationary variance drive every window.
//! Each variable identifier is mapped by MD5 to one of four groups
//! (`+z1`, `-z1`, `z2`, noise-only) and to a fixed mixing weight, so a variable
//! behaves the same way in every window it appears in. Values are
//! `X_tj = w_j f(group_j, z_t) + noise`, then masked entry-wise with at least
//! one observed variable per step. Anomalous windows carry exactly one
//! injected anomaly over one contiguous segment.
//!
//! All randomness for a window comes from a ChaCha8 stream keyed by
//! `(seed, split, C, rate, index)`, so any window can be regenerated in
//! isolation and generation order does not matter.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, stream_key};
use crate::sketch::{digest_u128, hash_stream, Label, Stream, Window};

/// Anomaly rates allowed under the standard protocols.
pub const STANDARD_RATES: [f64; 4] = [0.01, 0.05, 0.10, 0.20];

/// Tries allowed to find a composition that satisfies an anomaly's requirements.
pub const MAX_COMPOSITION_TRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyType {
    FactorSpike,
    CouplingChange,
    SparseSpikes,
    ChannelReassignment,
    LagCopy,
    RegimeSwitch,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 6] = [
        AnomalyType::FactorSpike,
        AnomalyType::CouplingChange,
        AnomalyType::SparseSpikes,
        AnomalyType::ChannelReassignment,
        AnomalyType::LagCopy,
        AnomalyType::RegimeSwitch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::FactorSpike => "factor_spike",
            AnomalyType::CouplingChange => "coupling_change",
            AnomalyType::SparseSpikes => "sparse_spikes",
            AnomalyType::ChannelReassignment => "channel_reassignment",
            AnomalyType::LagCopy => "lag_copy",
            AnomalyType::RegimeSwitch => "regime_switch",
        }
    }

    /// Whether some composition of `c` variables can satisfy this type.
    pub fn feasible_for(self, c: usize) -> bool {
        match self {
            AnomalyType::ChannelReassignment => c >= 2,
            _ => c >= 1,
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyType::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown anomaly type {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "in_dist_C")]
    InDistC,
    #[serde(rename = "holdout_C")]
    HoldoutC,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::InDistC => "in_dist_C",
            Protocol::HoldoutC => "holdout_C",
        }
    }

    pub fn train_cardinalities(self) -> Vec<usize> {
        match self {
            Protocol::InDistC => vec![1, 2, 3, 4, 6, 8, 12, 16],
            Protocol::HoldoutC => vec![1, 2, 4, 8],
        }
    }

    pub fn test_cardinalities(self) -> Vec<usize> {
        match self {
            Protocol::InDistC => vec![1, 2, 3, 4, 6, 8, 12, 16],
            Protocol::HoldoutC => vec![3, 6, 12, 16],
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_dist_C" | "in_dist_c" | "in_dist" => Ok(Protocol::InDistC),
            "holdout_C" | "holdout_c" | "holdout" => Ok(Protocol::HoldoutC),
            _ => Err(Error::config(format!(
                "unknown protocol {s:?} (expected in_dist_C or holdout_C)"
            ))),
        }
    }
}

/// Generator settings. The anomaly magnitudes are calibration knobs: they are
/// set so the training-free detector is well above prevalence without being
/// perfect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub window_len: usize,
    /// Probability that an entry is missing.
    pub p_miss: f64,
    pub obs_noise_std: f64,
    /// AR(1) coefficients; each normal window uses one, chosen uniformly.
    pub regimes: Vec<f64>,
    /// Test anomaly rates, one test cell per (C, rate).
    pub anomaly_rates: Vec<f64>,
    pub val_rate: f64,
    /// Anomaly segment length range as fractions of the window length.
    pub segment_frac: [f64; 2],
    /// Overrides the protocol's training cardinalities.
    pub train_c: Option<Vec<usize>>,
    /// Overrides the protocol's test cardinalities.
    pub test_c: Option<Vec<usize>>,
    pub train_per_c: usize,
    pub val_per_c: usize,
    pub test_per_c: usize,
    /// Identifiers per pool (`trn_*` and `tst_*`).
    pub id_pool_size: usize,
    pub mix_range: [f64; 2],
    /// Factor-spike pulse, in stationary latent standard deviations.
    pub factor_spike_sigma: f64,
    /// Sparse-spike magnitude, in observation-noise standard deviations.
    pub sparse_spike_sigma: f64,
    pub sparse_spike_count: usize,
    /// Lag-copy shift as a fraction of the window length.
    pub lag_frac: f64,
    pub seed: u64,
    /// Reject anomaly rates outside the standard set.
    pub strict_rates: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            window_len: 64,
            p_miss: 0.1,
            obs_noise_std: 0.1,
            regimes: vec![0.6, 0.9],
            anomaly_rates: STANDARD_RATES.to_vec(),
            val_rate: 0.10,
            segment_frac: [0.125, 0.25],
            train_c: None,
            test_c: None,
            train_per_c: 250,
            val_per_c: 50,
            test_per_c: 400,
            id_pool_size: 1000,
            mix_range: [0.5, 1.5],
            factor_spike_sigma: 10.0,
            sparse_spike_sigma: 150.0,
            sparse_spike_count: 3,
            lag_frac: 0.25,
            seed: 0,
            strict_rates: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.window_len < 8 {
            return err(format!(
                "window_len must be at least 8, got {}",
                self.window_len
            ));
        }
        if !(0.0..1.0).contains(&self.p_miss) {
            return err(format!("p_miss must be in [0, 1), got {}", self.p_miss));
        }
        if !(self.obs_noise_std >= 0.0 && self.obs_noise_std.is_finite()) {
            return err("obs_noise_std must be non-negative".into());
        }
        if self.regimes.is_empty() {
            return err("at least one regime is required".into());
        }
        if let Some(r) = self.regimes.iter().find(|r| r.is_nan() || r.abs() >= 1.0) {
            return err(format!("regime coefficient {r} is not in (-1, 1)"));
        }
        let rates = self
            .anomaly_rates
            .iter()
            .chain(std::iter::once(&self.val_rate));
        for &r in rates {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("anomaly rate {r} is not in [0, 1]"));
            }
        }
        if self.strict_rates {
            for &r in &self.anomaly_rates {
                if !STANDARD_RATES.iter().any(|&p| (p - r).abs() < 1e-12) {
                    return err(format!(
                        "anomaly rate {r} not allowed in strict mode; allowed rates are {{0.01, 0.05, 0.10, 0.20}}"
                    ));
                }
            }
        }
        let [lo, hi] = self.segment_frac;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return err(format!(
                "segment_frac must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
            ));
        }
        let [wlo, whi] = self.mix_range;
        if wlo.is_nan() || whi.is_nan() || wlo > whi {
            return err(format!(
                "mix_range must satisfy lo <= hi, got [{wlo}, {whi}]"
            ));
        }
        if !(self.lag_frac > 0.0 && self.lag_frac < 1.0) {
            return err(format!("lag_frac must be in (0, 1), got {}", self.lag_frac));
        }
        for c in self.train_c.iter().chain(self.test_c.iter()).flatten() {
            if *c == 0 || *c > self.id_pool_size {
                return err(format!(
                    "cardinality {c} must be in 1..={} (id pool size)",
                    self.id_pool_size
                ));
            }
        }
        Ok(())
    }

    pub fn train_cardinalities(&self, protocol: Protocol) -> Vec<usize> {
        self.train_c
            .clone()
            .unwrap_or_else(|| protocol.train_cardinalities())
    }

    pub fn test_cardinalities(&self, protocol: Protocol) -> Vec<usize> {
        self.test_c
            .clone()
            .unwrap_or_else(|| protocol.test_cardinalities())
    }

    fn segment_bounds(&self) -> (usize, usize) {
        let l = self.window_len as f64;
        let lo = (self.segment_frac[0] * l).round().max(1.0) as usize;
        let hi = (self.segment_frac[1] * l).round().max(lo as f64) as usize;
        (lo, hi.min(self.window_len))
    }

    fn lag(&self) -> usize {
        ((self.lag_frac * self.window_len as f64).round() as usize).max(1)
    }
}

/// Group of an identifier: 0 `+z1`, 1 `-z1`, 2 `z2`, 3 noise-only.
pub fn assign_group(id: &str) -> u8 {
    hash_stream(id, Stream::Group, 4) as u8
}

/// Mixing weight of an identifier, uniform on `[lo, hi)` from `MD5(id ‖ "#mix")`.
///
/// The top 53 bits of the big-endian digest give the uniform variate.
pub fn mixing_weight(id: &str, range: [f64; 2]) -> f64 {
    let u = (digest_u128(id, "#mix") >> 75) as f64 / (1u64 << 53) as f64;
    range[0] + (range[1] - range[0]) * u
}

#[inline]
fn coupling(group: u8, z: [f64; 2]) -> f64 {
    match group {
        0 => z[0],
        1 => -z[0],
        2 => z[1],
        _ => 0.0,
    }
}

fn draw_innovations(len: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..len)
        .map(|_| {
            [
                StandardNormal.sample(&mut *rng),
                StandardNormal.sample(&mut *rng),
            ]
        })
        .collect()
}

/// AR(1) recursion over `innov[from..]`, continuing from `latents[from - 1]`.
fn run_ar1(latents: &mut [[f64; 2]], innov: &[[f64; 2]], rho: f64, from: usize) {
    let s = (1.0 - rho * rho).sqrt();
    for t in from..latents.len() {
        if t == 0 {
            latents[0] = innov[0];
        } else {
            let p = latents[t - 1];
            latents[t] = [rho * p[0] + s * innov[t][0], rho * p[1] + s * innov[t][1]];
        }
    }
}

/// Two independent AR(1) chains `z_t = rho z_{t-1} + e_t`, `e_t ~ N(0, 1 - rho^2)`,
/// started from `N(0, 1)`; the stationary variance is 1 for every `rho`.
pub fn sample_latents(rho: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    assert!(rho.abs() < 1.0, "AR coefficient must satisfy |rho| < 1");
    let innov = draw_innovations(len, rng);
    let mut z = vec![[0.0; 2]; len];
    run_ar1(&mut z, &innov, rho, 0);
    z
}

fn draw_noise(len: usize, c: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len * c)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut *rng);
            e * std
        })
        .collect()
}

/// Noise-free-plus-noise values `w_j f(group_j, z_t) + eta` (row-major `L x C`).
pub fn render_window(
    ids: &[String],
    latents: &[[f64; 2]],
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Vec<f64> {
    let c = ids.len();
    let groups: Vec<u8> = ids.iter().map(|id| assign_group(id)).collect();
    let weights: Vec<f64> = ids
        .iter()
        .map(|id| mixing_weight(id, cfg.mix_range))
        .collect();
    let noise = draw_noise(latents.len(), c, cfg.obs_noise_std, rng);
    let mut x = Vec::with_capacity(latents.len() * c);
    for (t, z) in latents.iter().enumerate() {
        for j in 0..c {
            x.push(weights[j] * coupling(groups[j], *z) + noise[t * c + j]);
        }
    }
    x
}

/// I.i.d. Bernoulli(1 - p_miss) mask; an all-missing row gets one uniformly
/// chosen entry switched on.
pub fn apply_missingness(len: usize, c: usize, p_miss: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..len * c)
        .map(|_| rng.random::<f64>() >= p_miss)
        .collect();
    for row in mask.chunks_mut(c) {
        if !row.iter().any(|&m| m) {
            let j = rng.random_range(0..c);
            row[j] = true;
        }
    }
    mask
}

/// Everything needed to render a window and to re-render it after a
/// latent-level perturbation.
#[derive(Clone, Debug)]
pub struct LatentWindow {
    pub ids: Vec<String>,
    pub groups: Vec<u8>,
    pub weights: Vec<f64>,
    pub rho: f64,
    innovations: Vec<[f64; 2]>,
    pub latents: Vec<[f64; 2]>,
    noise: Vec<f64>,
    pub mask: Vec<bool>,
    len: usize,
}

impl LatentWindow {
    pub fn sample(ids: Vec<String>, rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Self {
        let len = cfg.window_len;
        let c = ids.len();
        let groups = ids.iter().map(|id| assign_group(id)).collect();
        let weights = ids
            .iter()
            .map(|id| mixing_weight(id, cfg.mix_range))
            .collect();
        let rho = cfg.regimes[rng.random_range(0..cfg.regimes.len())];
        let innovations = draw_innovations(len, rng);
        let mut latents = vec![[0.0; 2]; len];
        run_ar1(&mut latents, &innovations, rho, 0);
        let noise = draw_noise(len, c, cfg.obs_noise_std, rng);
        let mask = apply_missingness(len, c, cfg.p_miss, rng);
        LatentWindow {
            ids,
            groups,
            weights,
            rho,
            innovations,
            latents,
            noise,
            mask,
            len,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.ids.len()
    }

    fn render_raw(&self, groups: &[u8], weights: &[f64]) -> Vec<f64> {
        let c = self.ids.len();
        let mut x = Vec::with_capacity(self.len * c);
        for t in 0..self.len {
            let z = self.latents[t];
            for j in 0..c {
                let k = t * c + j;
                x.push(weights[k] * coupling(groups[k], z) + self.noise[k]);
            }
        }
        x
    }

    fn per_entry(&self) -> (Vec<u8>, Vec<f64>) {
        let c = self.ids.len();
        let mut g = Vec::with_capacity(self.len * c);
        let mut w = Vec::with_capacity(self.len * c);
        for _ in 0..self.len {
            g.extend_from_slice(&self.groups);
            w.extend_from_slice(&self.weights);
        }
        (g, w)
    }

    /// Unmasked values.
    pub fn raw_values(&self) -> Vec<f64> {
        let (g, w) = self.per_entry();
        self.render_raw(&g, &w)
    }

    pub fn render(&self) -> Window {
        self.finish(self.raw_values(), Label::Normal, None)
    }

    fn finish(&self, values: Vec<f64>, label: Label, anomaly: Option<AnomalyType>) -> Window {
        Window::new(self.ids.clone(), values, self.mask.clone(), self.len)
            .expect("generator produces valid windows")
            .with_label(label, anomaly)
    }

    fn has_coupled(&self, factor: usize) -> bool {
        self.groups.iter().any(|&g| match factor {
            0 => g == 0 || g == 1,
            _ => g == 2,
        })
    }

    fn non_noise_groups(&self) -> Vec<u8> {
        let mut g: Vec<u8> = self.groups.iter().copied().filter(|&g| g < 3).collect();
        g.sort_unstable();
        g.dedup();
        g
    }
}

fn sample_segment(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    min_start: usize,
) -> Option<(usize, usize)> {
    let (lo, hi) = cfg.segment_bounds();
    let len = rng.random_range(lo..=hi);
    if min_start + len > cfg.window_len {
        return None;
    }
    let start = rng.random_range(min_start..=cfg.window_len - len);
    Some((start, start + len))
}

/// Applies one anomaly to `base` over a random segment.
///
/// Returns `None` when the composition does not meet the type's requirements
/// or the perturbation is not visible on any observed entry.
fn try_inject(
    base: &LatentWindow,
    kind: AnomalyType,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Option<Window> {
    let c = base.cardinality();
    let len = cfg.window_len;
    let before = base.raw_values();
    let (mut groups, mut weights) = base.per_entry();
    let mut draft = base.clone();
    let values = match kind {
        AnomalyType::FactorSpike => {
            let factor = rng.random_range(0..2usize);
            if !base.has_coupled(factor) {
                return None;
            }
            let (a, b) = sample_segment(rng, cfg, 0)?;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for z in &mut draft.latents[a..b] {
                z[factor] += sign * cfg.factor_spike_sigma;
            }
            draft.render_raw(&groups, &weights)
        }
        AnomalyType::CouplingChange => {
            let coupled: Vec<usize> = (0..c).filter(|&j| base.groups[j] < 3).collect();
            let &j = coupled.choose(rng)?;
            let (a, b) = sample_segment(rng, cfg, 0)?;
            for t in a..b {
                weights[t * c + j] = -weights[t * c + j];
            }
            draft.render_raw(&groups, &weights)
        }
        AnomalyType::SparseSpikes => {
            let (a, b) = sample_segment(rng, cfg, 0)?;
            let observed: Vec<usize> = (a * c..b * c).filter(|&k| base.mask[k]).collect();
            let n = cfg.sparse_spike_count.min(observed.len());
            if n == 0 {
                return None;
            }
            let mut x = before.clone();
            for i in sample_indices(rng, observed.len(), n) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                x[observed[i]] += sign * cfg.sparse_spike_sigma * cfg.obs_noise_std;
            }
            x
        }
        AnomalyType::ChannelReassignment => {
            let present = base.non_noise_groups();
            if present.len() < 2 {
                return None;
            }
            let pick: Vec<u8> = sample_indices(rng, present.len(), 2)
                .into_iter()
                .map(|i| present[i])
                .collect();
            let members = |g: u8| (0..c).filter(|&j| base.groups[j] == g).collect::<Vec<_>>();
            let &j1 = members(pick[0]).choose(rng)?;
            let &j2 = members(pick[1]).choose(rng)?;
            let (a, b) = sample_segment(rng, cfg, 0)?;
            for t in a..b {
                groups.swap(t * c + j1, t * c + j2);
            }
            draft.render_raw(&groups, &weights)
        }
        AnomalyType::LagCopy => {
            let lag = cfg.lag();
            let (a, b) = sample_segment(rng, cfg, lag)?;
            let mut x = before.clone();
            for t in a..b {
                let (dst, src) = (t * c, (t - lag) * c);
                x[dst..dst + c].copy_from_slice(&before[src..src + c]);
            }
            x
        }
        AnomalyType::RegimeSwitch => {
            let others: Vec<f64> = cfg
                .regimes
                .iter()
                .copied()
                .filter(|&r| r != base.rho)
                .collect();
            let &rho = others.choose(rng)?;
            if !(base.has_coupled(0) || base.has_coupled(1)) {
                return None;
            }
            let (a, _) = sample_segment(rng, cfg, 1)?;
            run_ar1(&mut draft.latents, &base.innovations, rho, a);
            draft.render_raw(&groups, &weights)
        }
    };
    let visible = values
        .iter()
        .zip(&before)
        .zip(&base.mask)
        .any(|((x, y), &m)| m && x != y);
    debug_assert_eq!(values.len(), len * c);
    visible.then(|| base.finish(values, Label::Anomalous, Some(kind)))
}

/// Injects `kind` into `base`, resampling the segment until the perturbation is
/// visible. Composition is fixed; see [`generate_anomalous`] for resampling it.
pub fn inject_anomaly(
    base: &LatentWindow,
    kind: AnomalyType,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Result<Window> {
    for _ in 0..MAX_COMPOSITION_TRIES {
        if let Some(w) = try_inject(base, kind, rng, cfg) {
            return Ok(w);
        }
    }
    Err(Error::Generation {
        anomaly: kind.to_string(),
        cardinality: base.cardinality(),
        tries: MAX_COMPOSITION_TRIES,
    })
}

/// Samples compositions from `pool` until `kind` can be applied visibly.
pub fn generate_anomalous(
    pool: &IdPool,
    c: usize,
    kind: AnomalyType,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Result<(LatentWindow, Window)> {
    for _ in 0..MAX_COMPOSITION_TRIES {
        let base = LatentWindow::sample(pool.sample(c, rng), rng, cfg);
        if let Some(w) = try_inject(&base, kind, rng, cfg) {
            return Ok((base, w));
        }
    }
    Err(Error::Generation {
        anomaly: kind.to_string(),
        cardinality: c,
        tries: MAX_COMPOSITION_TRIES,
    })
}

/// A named identifier pool (`<prefix>_<i>`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdPool {
    pub prefix: String,
    pub size: usize,
}

impl IdPool {
    pub fn new(prefix: &str, size: usize) -> Self {
        IdPool {
            prefix: prefix.to_string(),
            size,
        }
    }

    pub fn id(&self, i: usize) -> String {
        format!("{}_{}", self.prefix, i)
    }

    /// `c` distinct identifiers, uniformly at random.
    pub fn sample(&self, c: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        sample_indices(rng, self.size, c)
            .into_iter()
            .map(|i| self.id(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord {
    pub id: String,
    pub split: Split,
    pub cardinality: usize,
    /// Configured anomaly rate of the cell this window belongs to.
    pub rate: f64,
    pub window: Window,
}

/// Test windows of one `(C, rate)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TestCell {
    pub cardinality: usize,
    pub rate: f64,
    pub windows: Vec<WindowRecord>,
}

impl TestCell {
    pub fn prevalence(&self) -> f64 {
        let pos = self
            .windows
            .iter()
            .filter(|r| r.window.label.is_anomalous())
            .count();
        pos as f64 / self.windows.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub protocol: Protocol,
    pub seed: u64,
    pub train_pool: IdPool,
    pub test_pool: IdPool,
    pub train: Vec<WindowRecord>,
    pub val: Vec<WindowRecord>,
    pub test: Vec<TestCell>,
}

impl LabeledDataset {
    pub fn test_cell(&self, c: usize, rate: f64) -> Option<&TestCell> {
        self.test
            .iter()
            .find(|cell| cell.cardinality == c && (cell.rate - rate).abs() < 1e-12)
    }

    pub fn records(&self) -> impl Iterator<Item = &WindowRecord> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(self.test.iter().flat_map(|c| &c.windows))
    }
}

fn rate_key(rate: f64) -> u64 {
    (rate * 1e6).round() as u64
}

/// Window identifier, e.g. `test-c6-r0.10-00042`.
pub fn window_id(split: Split, c: usize, rate: Option<f64>, index: usize) -> String {
    match rate {
        Some(r) => format!("{}-c{}-r{:.2}-{:05}", split.as_str(), c, r, index),
        None => format!("{}-c{}-{:05}", split.as_str(), c, index),
    }
}

/// Anomaly type per window of an `n`-window cell: exactly `round(rate n)`
/// slots (at least one when `rate > 0`) are anomalous, with types cycling
/// through the feasible types from a seeded offset so every type appears
/// equally often up to one window.
fn anomaly_slots(
    n: usize,
    rate: f64,
    seed: u64,
    split: Split,
    c: usize,
) -> Vec<Option<AnomalyType>> {
    let mut k = (rate * n as f64).round() as usize;
    if rate > 0.0 && n > 0 {
        k = k.max(1);
    }
    let feasible: Vec<AnomalyType> = AnomalyType::ALL
        .into_iter()
        .filter(|a| a.feasible_for(c))
        .collect();
    let mut rng = seeded_rng(
        seed,
        stream_key(&[0x00a5_519e, split.tag(), c as u64, rate_key(rate)]),
    );
    let offset = rng.random_range(0..feasible.len());
    let mut slots = vec![None; n];
    for (i, s) in slots[..k.min(n)].iter_mut().enumerate() {
        *s = Some(feasible[(i + offset) % feasible.len()]);
    }
    slots.shuffle(&mut rng);
    slots
}

/// Generates one window of a cell; reproducible from its coordinates alone.
pub fn generate_window(
    cfg: &GenConfig,
    pool: &IdPool,
    split: Split,
    c: usize,
    rate: f64,
    index: usize,
    anomaly: Option<AnomalyType>,
) -> Result<Window> {
    let key = stream_key(&[split.tag(), c as u64, rate_key(rate), index as u64]);
    let mut rng = seeded_rng(cfg.seed, key);
    let Some(kind) = anomaly else {
        let ids = pool.sample(c, &mut rng);
        return Ok(LatentWindow::sample(ids, &mut rng, cfg).render());
    };
    generate_anomalous(pool, c, kind, &mut rng, cfg).map(|(_, w)| w)
}

fn generate_cell(
    cfg: &GenConfig,
    pool: &IdPool,
    split: Split,
    c: usize,
    rate: f64,
    n: usize,
) -> Result<Vec<WindowRecord>> {
    let slots = anomaly_slots(n, rate, cfg.seed, split, c);
    let id_rate = (split == Split::Test).then_some(rate);
    slots
        .par_iter()
        .enumerate()
        .map(|(i, &anom)| {
            let window = generate_window(cfg, pool, split, c, rate, i, anom)?;
            Ok(WindowRecord {
                id: window_id(split, c, id_rate, i),
                split,
                cardinality: c,
                rate,
                window,
            })
        })
        .collect()
}

/// Builds train (normal only), validation and per-(C, rate) test splits.
pub fn build_dataset(protocol: Protocol, cfg: &GenConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let train_pool = IdPool::new("trn", cfg.id_pool_size);
    let test_pool = IdPool::new("tst", cfg.id_pool_size);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in cfg.train_cardinalities(protocol) {
        train.extend(generate_cell(
            cfg,
            &train_pool,
            Split::Train,
            c,
            0.0,
            cfg.train_per_c,
        )?);
        val.extend(generate_cell(
            cfg,
            &train_pool,
            Split::Val,
            c,
            cfg.val_rate,
            cfg.val_per_c,
        )?);
    }
    let mut test = Vec::new();
    for c in cfg.test_cardinalities(protocol) {
        for &rate in &cfg.anomaly_rates {
            test.push(TestCell {
                cardinality: c,
                rate,
                windows: generate_cell(cfg, &test_pool, Split::Test, c, rate, cfg.test_per_c)?,
            });
        }
    }
    Ok(LabeledDataset {
        protocol,
        seed: cfg.seed,
        train_pool,
        test_pool,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg() -> GenConfig {
        GenConfig {
            train_per_c: 20,
            val_per_c: 10,
            test_per_c: 50,
            seed: 11,
            ..GenConfig::default()
        }
    }

    #[test]
    fn group_golden_and_frequencies() {
        // MD5("s1#group") mod 4 = 3 (external md5sum).
        assert_eq!(assign_group("s1"), 3);
        assert_eq!(assign_group("trn_0"), 3);
        assert_eq!(assign_group("s1"), assign_group("s1"));
        let mut counts = [0usize; 4];
        for i in 0..10_000 {
            counts[assign_group(&format!("pool_{i}")) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.23..=0.27).contains(&f), "group frequency {f}");
        }
    }

    #[test]
    fn mixing_weights_in_range_and_stable() {
        for i in 0..200 {
            let id = format!("trn_{i}");
            let w = mixing_weight(&id, [0.5, 1.5]);
            assert!((0.5..1.5).contains(&w));
            assert_eq!(w, mixing_weight(&id, [0.5, 1.5]));
        }
    }

    #[test]
    fn latents_have_unit_variance_and_ar_correlation() {
        let mut rng = seeded_rng(3, 0);
        let z = sample_latents(0.9, 100_000, &mut rng);
        let x: Vec<f64> = z.iter().map(|v| v[0]).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");

        let z = sample_latents(0.6, 100_000, &mut rng);
        let x: Vec<f64> = z.iter().map(|v| v[1]).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        let r1 = cov / var;
        assert!((r1 - 0.6).abs() < 0.03, "lag-1 autocorrelation {r1}");
    }

    #[test]
    fn zero_rho_is_white_noise() {
        let mut a = seeded_rng(5, 9);
        let mut b = seeded_rng(5, 9);
        let z = sample_latents(0.0, 50, &mut a);
        let innov = draw_innovations(50, &mut b);
        for t in 0..50 {
            assert_eq!(z[t], innov[t]);
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn ids_with_groups(groups: &[u8]) -> Vec<String> {
        groups
            .iter()
            .map(|&g| {
                (0..)
                    .map(|i| format!("probe_{i}"))
                    .find(|id| assign_group(id) == g)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn rendering_respects_groups() {
        let cfg = GenConfig::default();
        let mut rng = seeded_rng(1, 1);
        let ids = ids_with_groups(&[3, 0, 1]);
        let z = sample_latents(0.6, 10_000, &mut rng);
        let x = render_window(&ids, &z, &mut rng, &cfg);
        let col = |j: usize| (0..10_000).map(|t| x[t * 3 + j]).collect::<Vec<_>>();
        let z1: Vec<f64> = z.iter().map(|v| v[0]).collect();
        let z2: Vec<f64> = z.iter().map(|v| v[1]).collect();
        assert!(corr(&col(0), &z1).abs() <= 0.1);
        assert!(corr(&col(0), &z2).abs() <= 0.1);
        assert!(corr(&col(1), &col(2)) <= -0.8);

        let quiet = GenConfig {
            obs_noise_std: 0.0,
            ..GenConfig::default()
        };
        let x = render_window(&ids, &z[..5], &mut rng, &quiet);
        let w = mixing_weight(&ids[1], quiet.mix_range);
        for t in 0..5 {
            assert_eq!(x[t * 3 + 1], w * z[t][0]);
            assert_eq!(x[t * 3], 0.0);
        }
    }

    #[test]
    fn missingness_rules() {
        let mut rng = seeded_rng(2, 2);
        assert!(apply_missingness(20, 4, 0.0, &mut rng).iter().all(|&m| m));
        assert!(apply_missingness(50, 1, 0.9, &mut rng).iter().all(|&m| m));
        let m = apply_missingness(10_000, 8, 0.2, &mut rng);
        let frac = m.iter().filter(|&&b| b).count() as f64 / m.len() as f64;
        assert!((frac - 0.8).abs() < 0.01, "observed fraction {frac}");
        assert!(m.chunks(8).all(|r| r.iter().any(|&b| b)));
    }

    #[test]
    fn sparse_spikes_touch_three_entries() {
        let cfg = GenConfig {
            p_miss: 0.0,
            ..GenConfig::default()
        };
        let pool = IdPool::new("trn", 100);
        let mut rng = seeded_rng(4, 4);
        let base = LatentWindow::sample(pool.sample(5, &mut rng), &mut rng, &cfg);
        let normal = base.render();
        let anom = inject_anomaly(&base, AnomalyType::SparseSpikes, &mut rng, &cfg).unwrap();
        let diffs: Vec<f64> = normal
            .values()
            .iter()
            .zip(anom.values())
            .map(|(a, b)| b - a)
            .filter(|d| *d != 0.0)
            .collect();
        assert_eq!(diffs.len(), 3);
        for d in diffs {
            assert!((d.abs() - cfg.sparse_spike_sigma * cfg.obs_noise_std).abs() < 1e-12);
        }
    }

    #[test]
    fn every_type_is_visible_and_labeled() {
        let cfg = GenConfig::default();
        let pool = IdPool::new("trn", 1000);
        for (k, kind) in AnomalyType::ALL.into_iter().enumerate() {
            for c in [1, 2, 6] {
                if !kind.feasible_for(c) {
                    continue;
                }
                let mut rng = seeded_rng(8, (k * 10 + c) as u64);
                let (base, w) = generate_anomalous(&pool, c, kind, &mut rng, &cfg).unwrap();
                assert_eq!(w.label, Label::Anomalous);
                assert_eq!(w.anomaly, Some(kind));
                let normal = base.render();
                let differs =
                    (0..w.len() * c).any(|i| w.mask()[i] && w.values()[i] != normal.values()[i]);
                assert!(differs, "{kind} at C={c} not visible");
            }
        }
    }

    #[test]
    fn factor_spike_needs_coupled_variable() {
        let cfg = GenConfig::default();
        let ids = ids_with_groups(&[3]);
        let mut rng = seeded_rng(6, 6);
        let base = LatentWindow::sample(ids, &mut rng, &cfg);
        let err = inject_anomaly(&base, AnomalyType::FactorSpike, &mut rng, &cfg).unwrap_err();
        assert!(matches!(err, Error::Generation { cardinality: 1, .. }));
        let base2 = LatentWindow::sample(ids_with_groups(&[0]), &mut rng, &cfg);
        assert!(inject_anomaly(&base2, AnomalyType::ChannelReassignment, &mut rng, &cfg).is_err());
        // With resampling the composition, a C=1 factor spike is always on a coupled variable.
        let pool = IdPool::new("trn", 1000);
        for s in 0..20 {
            let mut rng = seeded_rng(6, 100 + s);
            let (base, _) =
                generate_anomalous(&pool, 1, AnomalyType::FactorSpike, &mut rng, &cfg).unwrap();
            assert!(base.groups[0] < 3);
        }
    }

    #[test]
    fn holdout_dataset_shape_and_pools() {
        let cfg = small_cfg();
        let ds = build_dataset(Protocol::HoldoutC, &cfg).unwrap();
        let train_c: HashSet<usize> = ds.train.iter().map(|r| r.cardinality).collect();
        let test_c: HashSet<usize> = ds.test.iter().map(|c| c.cardinality).collect();
        assert_eq!(train_c, HashSet::from([1, 2, 4, 8]));
        assert_eq!(test_c, HashSet::from([3, 6, 12, 16]));
        assert!(ds.train.iter().all(|r| r.window.label == Label::Normal));
        let train_ids: HashSet<&String> = ds.train.iter().flat_map(|r| r.window.ids()).collect();
        let test_ids: HashSet<&String> = ds
            .test
            .iter()
            .flat_map(|c| &c.windows)
            .flat_map(|r| r.window.ids())
            .collect();
        assert!(train_ids.is_disjoint(&test_ids));
        for cell in &ds.test {
            assert!((cell.prevalence() - cell.rate).abs() <= 0.02);
        }
        for r in ds.records() {
            for t in 0..r.window.len() {
                assert!(r.window.observed_count(t) >= 1);
            }
        }
    }

    #[test]
    fn prevalence_at_ten_percent() {
        let slots = anomaly_slots(1000, 0.10, 1, Split::Test, 6);
        let n = slots.iter().filter(|s| s.is_some()).count();
        assert!((80..=120).contains(&n));
    }

    #[test]
    fn windows_reproduce_in_isolation() {
        let cfg = small_cfg();
        let ds = build_dataset(Protocol::HoldoutC, &cfg).unwrap();
        let cell = ds.test_cell(6, 0.10).unwrap();
        let rec = &cell.windows[7];
        let again = generate_window(
            &cfg,
            &ds.test_pool,
            Split::Test,
            6,
            0.10,
            7,
            rec.window.anomaly,
        )
        .unwrap();
        assert_eq!(again, rec.window);
    }

    #[test]
    fn in_dist_protocol_generates_c1_anomalies() {
        let cfg = GenConfig {
            train_per_c: 5,
            val_per_c: 20,
            test_per_c: 30,
            anomaly_rates: vec![0.20],
            ..GenConfig::default()
        };
        let ds = build_dataset(Protocol::InDistC, &cfg).unwrap();
        assert_eq!(ds.test.len(), 8);
        let c1 = ds.test_cell(1, 0.20).unwrap();
        assert!(c1.windows.iter().any(|r| r.window.label.is_anomalous()));
    }

    #[test]
    fn strict_rate_validation() {
        let cfg = GenConfig {
            anomaly_rates: vec![0.5],
            ..GenConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("0.01, 0.05, 0.10, 0.20"), "{msg}");
        let relaxed = GenConfig {
            strict_rates: false,
            ..cfg
        };
        assert!(relaxed.validate().is_ok());
        let bad = GenConfig {
            regimes: vec![1.0],
            ..GenConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
