//! Hybrid kernel images and their scaling variants.
//!
//! From a hashed sequence `g` three sequences are derived: `g`, its first
//! difference `dg` (first row zero) and `|dg|`. For each sequence `z` two
//! `L x L` kernels are available:
//!
//! * `Cos(z)_ij = (1 + <z_i, z_j> / (|z_i| |z_j|)) / 2`, in `[0, 1]`;
//! * `LogDist(z)_ij = ln(1 + |z_i - z_j|^2 / (2 sigma(z)^2))`, with
//!   `sigma(z)` the median pairwise distance.
//!
//! Channels are always stacked in the order
//! `Cos(g), Cos(dg), Cos(|dg|), LogDist(g), LogDist(dg), LogDist(|dg|)`.
//! Band and anchor variants evaluate only `w` near-diagonal lags or `r`
//! anchor columns of the same kernels, so their cost is linear in `L`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, sq_dist, Mat};
use crate::rng::{gaussian_matrix, stream_key};
use crate::sketch::HashedSequence;

/// Floor for norms and bandwidths.
pub const EPS: f64 = 1e-12;

/// Stream tag for the sequence-projection matrix of `proj(d')`.
const SEQ_PROJECTION_STREAM: u64 = 0x7072_6f6a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Source {
    Raw,
    Delta,
    AbsDelta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    CosG,
    CosDelta,
    CosAbsDelta,
    LogG,
    LogDelta,
    LogAbsDelta,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::CosG,
        Channel::CosDelta,
        Channel::CosAbsDelta,
        Channel::LogG,
        Channel::LogDelta,
        Channel::LogAbsDelta,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_cosine(self) -> bool {
        self.index() < 3
    }

    fn source(self) -> Source {
        match self.index() % 3 {
            0 => Source::Raw,
            1 => Source::Delta,
            _ => Source::AbsDelta,
        }
    }
}

/// A subset of the six hybrid-image channels, kept in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const FULL6: ChannelSet = ChannelSet(0b11_1111);
    pub const LOG3: ChannelSet = ChannelSet(0b11_1000);
    pub const COS3: ChannelSet = ChannelSet(0b00_0111);
    pub const BASE2: ChannelSet = ChannelSet(0b00_1001);
    pub const NO_DELTA: ChannelSet = ChannelSet(0b10_1101);
    pub const NO_ABSDELTA: ChannelSet = ChannelSet(0b01_1011);
    /// Same channels as [`ChannelSet::BASE2`].
    pub const NO_DELTAS: ChannelSet = ChannelSet::BASE2;

    const NAMED: [(&'static str, ChannelSet); 6] = [
        ("full6", ChannelSet::FULL6),
        ("log3", ChannelSet::LOG3),
        ("cos3", ChannelSet::COS3),
        ("base2", ChannelSet::BASE2),
        ("no_delta", ChannelSet::NO_DELTA),
        ("no_absdelta", ChannelSet::NO_ABSDELTA),
    ];

    pub fn from_channels(channels: &[Channel]) -> Self {
        ChannelSet(channels.iter().fold(0, |acc, c| acc | (1 << c.index())))
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn channels(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |&c| self.contains(c))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn name(self) -> String {
        // NO_DELTAS shares its bits with BASE2; both keep Cos(g) + LogDist(g).
        Self::NAMED
            .iter()
            .find(|(_, s)| *s == self)
            .map(|(n, _)| n.to_string())
            .unwrap_or_else(|| format!("ch{:06b}", self.0))
    }

    pub fn parse(name: &str) -> Option<Self> {
        if name == "no_deltas_and_absdeltas" {
            return Some(ChannelSet::NO_DELTAS);
        }
        Self::NAMED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| *s)
    }

    fn needs(self, source: Source) -> (bool, bool) {
        let cos = self
            .channels()
            .any(|c| c.is_cosine() && c.source() == source);
        let log = self
            .channels()
            .any(|c| !c.is_cosine() && c.source() == source);
        (cos, log)
    }
}

impl fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChannelSet({})", self.name())
    }
}

/// A representation variant. Image variants materialize `K x L x L`; band and
/// anchor variants are linear in `L`; `Sequence` is `g` itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RepVariant {
    Image(ChannelSet),
    /// Project each `g_t` to `dim` dimensions, then build the six-channel image.
    Projected {
        dim: usize,
    },
    /// Mean-pool time to `len` rows, then build the six-channel image.
    Downsampled {
        len: usize,
    },
    Band {
        width: usize,
        channels: ChannelSet,
    },
    Anchor {
        count: usize,
        channels: ChannelSet,
    },
    Sequence,
}

impl RepVariant {
    pub const FULL6: RepVariant = RepVariant::Image(ChannelSet::FULL6);
    pub const LOG3: RepVariant = RepVariant::Image(ChannelSet::LOG3);
    pub const COS3: RepVariant = RepVariant::Image(ChannelSet::COS3);
    pub const BASE2: RepVariant = RepVariant::Image(ChannelSet::BASE2);

    pub fn channel_count(&self) -> usize {
        match self {
            RepVariant::Image(ch) | RepVariant::Band { channels: ch, .. } => ch.len(),
            RepVariant::Anchor { channels, .. } => channels.len(),
            RepVariant::Projected { .. } | RepVariant::Downsampled { .. } => 6,
            RepVariant::Sequence => 1,
        }
    }

    /// Flattened feature length for a window of `len` steps and sequence width `width`.
    pub fn feature_dim(&self, len: usize, width: usize) -> usize {
        match *self {
            RepVariant::Image(ch) => ch.len() * len * len,
            RepVariant::Projected { .. } => 6 * len * len,
            RepVariant::Downsampled { len: p } => 6 * p * p,
            RepVariant::Band { width: w, channels } => channels.len() * w * len,
            RepVariant::Anchor { count, channels } => channels.len() * len * count,
            RepVariant::Sequence => len * width,
        }
    }

    /// Tensor shape for a window of `len` steps and sequence width `width`.
    pub fn shape(&self, len: usize, width: usize) -> Vec<usize> {
        match *self {
            RepVariant::Image(ch) => vec![ch.len(), len, len],
            RepVariant::Projected { .. } => vec![6, len, len],
            RepVariant::Downsampled { len: p } => vec![6, p, p],
            RepVariant::Band { width: w, channels } => vec![channels.len(), w, len],
            RepVariant::Anchor { count, channels } => vec![channels.len(), len, count],
            RepVariant::Sequence => vec![len, width],
        }
    }

    /// Checks parameters against the window length and sequence width.
    pub fn validate(&self, len: usize, width: usize) -> Result<()> {
        if len < 2 {
            return Err(Error::config(format!(
                "{self}: window length {len} too short, need at least 2 steps"
            )));
        }
        let bad = |msg: String| Err(Error::config(format!("{self}: {msg}")));
        match *self {
            RepVariant::Image(ch) if ch.is_empty() => bad("empty channel set".into()),
            RepVariant::Projected { dim } if dim == 0 || dim > width => {
                bad(format!("projection dim must be in 1..={width}, got {dim}"))
            }
            RepVariant::Downsampled { len: p } if p < 2 || p > len => {
                bad(format!("pooled length must be in 2..={len}, got {p}"))
            }
            RepVariant::Band { width: w, channels } => {
                if channels.is_empty() {
                    bad("empty channel set".into())
                } else if w == 0 || w >= len {
                    bad(format!("band width must be in 1..{len}, got {w}"))
                } else {
                    Ok(())
                }
            }
            RepVariant::Anchor { count, channels } => {
                if channels.is_empty() {
                    bad("empty channel set".into())
                } else if count == 0 || count > len {
                    bad(format!("anchor count must be in 1..={len}, got {count}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RepVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepVariant::Image(ch) => write!(f, "{}", ch.name()),
            RepVariant::Projected { dim } => write!(f, "full6+proj{dim}"),
            RepVariant::Downsampled { len } => write!(f, "full6+down{len}"),
            RepVariant::Band { width, channels } => write!(f, "{}+band{width}", channels.name()),
            RepVariant::Anchor { count, channels } => {
                write!(f, "{}+anchor{count}", channels.name())
            }
            RepVariant::Sequence => write!(f, "seq"),
        }
    }
}

impl FromStr for RepVariant {
    type Err = Error;

    /// Accepts the names produced by `Display`, plus `projN`/`downN` shorthands.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unknown = || Error::config(format!("unknown representation variant {s:?}"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| unknown());
        if s == "seq" {
            return Ok(RepVariant::Sequence);
        }
        if let Some(ch) = ChannelSet::parse(s) {
            return Ok(RepVariant::Image(ch));
        }
        let (head, tail) = match s.split_once('+') {
            Some((h, t)) => (h, t),
            None => ("full6", s),
        };
        let channels = ChannelSet::parse(head).ok_or_else(unknown)?;
        if let Some(n) = tail.strip_prefix("band") {
            Ok(RepVariant::Band {
                width: num(n)?,
                channels,
            })
        } else if let Some(n) = tail.strip_prefix("anchor") {
            Ok(RepVariant::Anchor {
                count: num(n)?,
                channels,
            })
        } else if let Some(n) = tail.strip_prefix("proj") {
            if channels != ChannelSet::FULL6 {
                return Err(unknown());
            }
            Ok(RepVariant::Projected { dim: num(n)? })
        } else if let Some(n) = tail.strip_prefix("down") {
            if channels != ChannelSet::FULL6 {
                return Err(unknown());
            }
            Ok(RepVariant::Downsampled { len: num(n)? })
        } else {
            Err(unknown())
        }
    }
}

impl Serialize for RepVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RepVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which pairs the LogDist bandwidth of band/anchor variants is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthScope {
    /// Median over the pairs the feature map evaluates; keeps the cost linear in `L`.
    #[default]
    Evaluated,
    /// Median over all `L(L-1)/2` pairs; entries equal the full-image slices.
    AllPairs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepOptions {
    /// Append the scale token as one extra feature coordinate.
    pub include_tau: bool,
    pub bandwidth: BandwidthScope,
    /// Seed of the sequence projection used by `proj(d')`.
    pub projection_seed: u64,
}

impl Default for RepOptions {
    fn default() -> Self {
        RepOptions {
            include_tau: false,
            bandwidth: BandwidthScope::Evaluated,
            projection_seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub variant: RepVariant,
    pub shape: Vec<usize>,
    pub tensor: Vec<f64>,
    pub tau: f64,
}

impl Representation {
    /// Flattened tensor, optionally followed by the scale token.
    pub fn features(&self, include_tau: bool) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.tensor.len() + 1);
        f.extend_from_slice(&self.tensor);
        if include_tau {
            f.push(self.tau);
        }
        f
    }

    pub fn feature_dim(&self) -> usize {
        self.tensor.len()
    }

    /// The `k`-th slab along the first tensor axis.
    pub fn channel(&self, k: usize) -> &[f64] {
        let stride: usize = self.shape[1..].iter().product();
        &self.tensor[k * stride..(k + 1) * stride]
    }
}

/// `dz_0 = 0`, `dz_t = z_t - z_{t-1}`.
pub fn first_difference(g: &Mat) -> Mat {
    let mut out = Mat::zeros(g.rows(), g.cols());
    for t in 1..g.rows() {
        let (prev, cur) = (g.row(t - 1), g.row(t));
        for (o, (&a, &b)) in out.row_mut(t).iter_mut().zip(cur.iter().zip(prev)) {
            *o = a - b;
        }
    }
    out
}

fn row_norms(z: &Mat) -> Vec<f64> {
    (0..z.rows())
        .map(|i| dot(z.row(i), z.row(i)).sqrt())
        .collect()
}

#[inline]
fn cos_entry(dot_ij: f64, ni: f64, nj: f64) -> f64 {
    if ni < EPS || nj < EPS {
        0.5
    } else {
        (0.5 * (1.0 + dot_ij / (ni * nj))).clamp(0.0, 1.0)
    }
}

#[inline]
fn logdist_entry(sq: f64, sigma: f64) -> f64 {
    (sq / (2.0 * sigma * sigma)).ln_1p()
}

/// Cosine kernel mapped to `[0, 1]`; rows with norm below [`EPS`] score 0.5
/// against everything, themselves included.
pub fn cos_kernel(z: &Mat) -> Mat {
    let n = z.rows();
    let norms = row_norms(z);
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cos_entry(dot(z.row(i), z.row(j)), norms[i], norms[j]);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Median of the square roots of `sq` (exact order statistics; mean of the
/// two central values for even counts), floored at [`EPS`].
fn median_distance(sq: &mut [f64]) -> f64 {
    let n = sq.len();
    debug_assert!(n > 0);
    let k = n / 2;
    let (left, hi, _) = sq.select_nth_unstable_by(k, f64::total_cmp);
    let hi = hi.sqrt();
    let med = if n % 2 == 1 {
        hi
    } else {
        let lo = left
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .sqrt();
        0.5 * (lo + hi)
    };
    med.max(EPS)
}

fn upper_sq_distances(z: &Mat) -> Vec<f64> {
    let n = z.rows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(sq_dist(z.row(i), z.row(j)));
        }
    }
    out
}

/// Median pairwise Euclidean distance between rows, floored at [`EPS`].
pub fn robust_bandwidth(z: &Mat) -> Result<f64> {
    if z.rows() < 2 {
        return Err(Error::BandwidthUndefined { rows: z.rows() });
    }
    Ok(median_distance(&mut upper_sq_distances(z)))
}

/// `ln(1 + |z_i - z_j|^2 / (2 sigma^2))`; symmetric with a zero diagonal.
pub fn logdist_kernel(z: &Mat, sigma: f64) -> Mat {
    let n = z.rows();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = logdist_entry(sq_dist(z.row(i), z.row(j)), sigma);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// `tanh(ln sigma(g))`.
pub fn scale_token(g: &Mat) -> Result<f64> {
    Ok(robust_bandwidth(g)?.ln().tanh())
}

/// The three derived sequences, restricted to the columns that carry signal.
struct Sources {
    seqs: [Mat; 3],
}

impl Sources {
    fn new(g: &Mat) -> Self {
        let raw = g.drop_zero_columns();
        let delta = first_difference(&raw);
        let abs = delta.map(f64::abs);
        Sources {
            seqs: [raw, delta, abs],
        }
    }

    fn get(&self, s: Source) -> &Mat {
        &self.seqs[s as usize]
    }
}

/// Full `L x L` image for `channels`, stacked in canonical order.
fn image_tensor(g: &Mat, channels: ChannelSet) -> Vec<f64> {
    let n = g.rows();
    let src = Sources::new(g);
    let mut cos: [Option<Mat>; 3] = [None, None, None];
    let mut log: [Option<Mat>; 3] = [None, None, None];
    for (k, s) in [Source::Raw, Source::Delta, Source::AbsDelta]
        .into_iter()
        .enumerate()
    {
        let (need_cos, need_log) = channels.needs(s);
        let z = src.get(s);
        if need_cos {
            cos[k] = Some(cos_kernel(z));
        }
        if need_log {
            let mut sq = upper_sq_distances(z);
            let mut out = Mat::zeros(n, n);
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    // filled before the median selection reorders `sq`
                    out.set(i, j, sq[idx]);
                    idx += 1;
                }
            }
            let sigma = median_distance(&mut sq);
            for i in 0..n {
                for j in i + 1..n {
                    let v = logdist_entry(out.get(i, j), sigma);
                    out.set(i, j, v);
                    out.set(j, i, v);
                }
            }
            log[k] = Some(out);
        }
    }
    let mut tensor = Vec::with_capacity(channels.len() * n * n);
    for c in channels.channels() {
        let k = c.source() as usize;
        let m = if c.is_cosine() { &cos[k] } else { &log[k] };
        tensor.extend_from_slice(m.as_ref().expect("channel computed").as_slice());
    }
    tensor
}

/// Cosine and log-distance values of one source, each computed on demand.
type SourceCache = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Evaluates the requested kernels on an explicit list of `(i, j)` pairs.
///
/// Returns one value vector per channel (canonical order) and the
/// evaluated-pairs bandwidth of `g` (used for the scale token).
fn pairwise_channels(
    src: &Sources,
    channels: ChannelSet,
    pairs: &[(usize, usize)],
    scope: BandwidthScope,
) -> (Vec<Vec<f64>>, Option<f64>) {
    let mut out = Vec::with_capacity(channels.len());
    let mut raw_sigma = None;
    let mut cache: [Option<SourceCache>; 3] = [None, None, None];
    for (k, s) in [Source::Raw, Source::Delta, Source::AbsDelta]
        .into_iter()
        .enumerate()
    {
        let (need_cos, need_log) = channels.needs(s);
        let need_log = need_log || (s == Source::Raw && scope == BandwidthScope::Evaluated);
        if !need_cos && !need_log {
            continue;
        }
        let z = src.get(s);
        let cos_vals = need_cos.then(|| {
            let norms = row_norms(z);
            pairs
                .iter()
                .map(|&(i, j)| cos_entry(dot(z.row(i), z.row(j)), norms[i], norms[j]))
                .collect::<Vec<_>>()
        });
        let log_vals = need_log.then(|| {
            let sq: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| sq_dist(z.row(i), z.row(j)))
                .collect();
            let sigma = match scope {
                BandwidthScope::Evaluated => {
                    let mut off: Vec<f64> = pairs
                        .iter()
                        .zip(&sq)
                        .filter(|((i, j), _)| i != j)
                        .map(|(_, &d)| d)
                        .collect();
                    median_distance(&mut off)
                }
                BandwidthScope::AllPairs => median_distance(&mut upper_sq_distances(z)),
            };
            if s == Source::Raw {
                raw_sigma = Some(sigma);
            }
            sq.into_iter()
                .map(|d| logdist_entry(d, sigma))
                .collect::<Vec<_>>()
        });
        cache[k] = Some((cos_vals, log_vals));
    }
    for c in channels.channels() {
        let entry = cache[c.source() as usize]
            .as_ref()
            .expect("source computed");
        let vals = if c.is_cosine() { &entry.0 } else { &entry.1 };
        out.push(vals.clone().expect("channel computed"));
    }
    (out, raw_sigma)
}

fn band_tensor(
    g: &Mat,
    width: usize,
    channels: ChannelSet,
    scope: BandwidthScope,
) -> (Vec<f64>, f64) {
    let n = g.rows();
    let src = Sources::new(g);
    let mut pairs = Vec::with_capacity(width * n);
    for lag in 1..=width {
        for t in 0..n.saturating_sub(lag) {
            pairs.push((t, t + lag));
        }
    }
    let (vals, raw_sigma) = pairwise_channels(&src, channels, &pairs, scope);
    let mut tensor = vec![0.0; channels.len() * width * n];
    for (ci, v) in vals.iter().enumerate() {
        let mut idx = 0;
        for lag in 1..=width {
            let base = ci * width * n + (lag - 1) * n;
            for t in 0..n.saturating_sub(lag) {
                tensor[base + t] = v[idx];
                idx += 1;
            }
        }
    }
    let sigma = match (scope, raw_sigma) {
        (BandwidthScope::Evaluated, Some(s)) => s,
        _ => median_distance(&mut upper_sq_distances(src.get(Source::Raw))),
    };
    (tensor, sigma)
}

/// Anchor time indices `floor(i * L / r)`.
pub fn anchor_indices(len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|i| i * len / count).collect()
}

fn anchor_tensor(
    g: &Mat,
    count: usize,
    channels: ChannelSet,
    scope: BandwidthScope,
) -> (Vec<f64>, f64) {
    let n = g.rows();
    let src = Sources::new(g);
    let anchors = anchor_indices(n, count);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|t| anchors.iter().map(move |&a| (t, a)))
        .collect();
    let (vals, raw_sigma) = pairwise_channels(&src, channels, &pairs, scope);
    let mut tensor = Vec::with_capacity(channels.len() * n * count);
    for v in vals {
        tensor.extend(v);
    }
    let sigma = match (scope, raw_sigma) {
        (BandwidthScope::Evaluated, Some(s)) => s,
        _ => median_distance(&mut upper_sq_distances(src.get(Source::Raw))),
    };
    (tensor, sigma)
}

/// Mean-pools rows into `len` contiguous bins `[floor(i L / len), floor((i+1) L / len))`.
pub fn mean_pool_time(g: &Mat, len: usize) -> Mat {
    let n = g.rows();
    let mut out = Mat::zeros(len, g.cols());
    for i in 0..len {
        let (a, b) = (i * n / len, (i + 1) * n / len);
        let inv = 1.0 / (b - a) as f64;
        let row = out.row_mut(i);
        for t in a..b {
            for (o, &v) in row.iter_mut().zip(g.row(t)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Builds representations of one variant, caching the sequence projection.
pub struct RepBuilder {
    variant: RepVariant,
    width: usize,
    opts: RepOptions,
    projection: Option<Mat>,
}

impl RepBuilder {
    /// `width` is the hashed-sequence width `2m`.
    pub fn new(variant: RepVariant, width: usize, opts: RepOptions) -> Result<Self> {
        if let RepVariant::Projected { dim } = variant {
            if dim == 0 || dim > width {
                return Err(Error::config(format!(
                    "{variant}: projection dim must be in 1..={width}, got {dim}"
                )));
            }
        }
        let projection = match variant {
            RepVariant::Projected { dim } => Some(gaussian_matrix(
                width,
                dim,
                1.0 / (dim as f64).sqrt(),
                opts.projection_seed,
                stream_key(&[SEQ_PROJECTION_STREAM, width as u64, dim as u64]),
            )),
            _ => None,
        };
        Ok(RepBuilder {
            variant,
            width,
            opts,
            projection,
        })
    }

    pub fn variant(&self) -> RepVariant {
        self.variant
    }

    pub fn options(&self) -> &RepOptions {
        &self.opts
    }

    pub fn feature_dim(&self, len: usize) -> usize {
        self.variant.feature_dim(len, self.width) + usize::from(self.opts.include_tau)
    }

    pub fn build(&self, hs: &HashedSequence) -> Result<Representation> {
        if hs.width() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                found: hs.width(),
            });
        }
        let len = hs.len();
        self.variant.validate(len, self.width)?;
        let g = &hs.g;
        let (tensor, tau) = match self.variant {
            RepVariant::Image(ch) => (image_tensor(g, ch), scale_token(g)?),
            RepVariant::Projected { .. } => {
                let p = self.projection.as_ref().expect("projection matrix");
                let z = project_rows(g, p);
                (image_tensor(&z, ChannelSet::FULL6), scale_token(g)?)
            }
            RepVariant::Downsampled { len: p } => {
                let pooled = mean_pool_time(g, p);
                (
                    image_tensor(&pooled, ChannelSet::FULL6),
                    scale_token(&pooled)?,
                )
            }
            RepVariant::Band { width, channels } => {
                let (t, sigma) = band_tensor(g, width, channels, self.opts.bandwidth);
                (t, sigma.ln().tanh())
            }
            RepVariant::Anchor { count, channels } => {
                let (t, sigma) = anchor_tensor(g, count, channels, self.opts.bandwidth);
                (t, sigma.ln().tanh())
            }
            RepVariant::Sequence => (g.as_slice().to_vec(), scale_token(g)?),
        };
        Ok(Representation {
            variant: self.variant,
            shape: self.variant.shape(len, self.width),
            tensor,
            tau,
        })
    }
}

/// `g P`, skipping zero entries of `g`.
fn project_rows(g: &Mat, p: &Mat) -> Mat {
    let mut out = Mat::zeros(g.rows(), p.cols());
    for t in 0..g.rows() {
        let row = g.row(t);
        let dst = out.row_mut(t);
        for (k, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &w) in dst.iter_mut().zip(p.row(k)) {
                *o += v * w;
            }
        }
    }
    out
}

/// Builds `variant` with default options.
pub fn build_representation(hs: &HashedSequence, variant: RepVariant) -> Result<Representation> {
    RepBuilder::new(variant, hs.width(), RepOptions::default())?.build(hs)
}

/// `(K, w, L)` tensor of lags `1..=w`; entries past the end are zero.
pub fn band_features(
    hs: &HashedSequence,
    width: usize,
    channels: ChannelSet,
    scope: BandwidthScope,
) -> Result<Representation> {
    let opts = RepOptions {
        bandwidth: scope,
        ..RepOptions::default()
    };
    RepBuilder::new(RepVariant::Band { width, channels }, hs.width(), opts)?.build(hs)
}

/// `(K, L, r)` tensor of kernel values against `r` evenly spaced anchors.
pub fn anchor_features(
    hs: &HashedSequence,
    count: usize,
    channels: ChannelSet,
    scope: BandwidthScope,
) -> Result<Representation> {
    let opts = RepOptions {
        bandwidth: scope,
        ..RepOptions::default()
    };
    RepBuilder::new(RepVariant::Anchor { count, channels }, hs.width(), opts)?.build(hs)
}

/// Analytical compute cost relative to the six-channel image (`6 L^2 d`).
pub fn complexity_proxy(variant: &RepVariant, len: usize, dim: usize) -> f64 {
    let l = len as f64;
    let full = 6.0 * l * l * dim as f64;
    let cost = match *variant {
        RepVariant::Image(ch) => ch.len() as f64 * l * l * dim as f64,
        RepVariant::Projected { dim: p } => 6.0 * l * l * p as f64,
        RepVariant::Downsampled { len: p } => 6.0 * (p * p) as f64 * dim as f64,
        RepVariant::Band { width, channels } => {
            channels.len() as f64 * l * width as f64 * dim as f64
        }
        RepVariant::Anchor { count, channels } => {
            channels.len() as f64 * l * count as f64 * dim as f64
        }
        RepVariant::Sequence => l * dim as f64,
    };
    cost / full
}
