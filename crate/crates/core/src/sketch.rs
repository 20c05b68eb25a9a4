//! Signed feature hashing of variable-cardinality windows into a fixed-width
//! hashed state sequence.
//!
//! Each variable identifier is hashed with MD5 under independent suffixes to
//! obtain a value bucket/sign and a presence bucket/sign. At every time step
//! the observed values are accumulated into `m` value buckets and the mask
//! into `m` presence buckets; the step vector is
//!
//! ```text
//! g_t = (1/sqrt(n_t)) * [phi_v, lambda(n_t) * phi_p],  lambda(n) = min(a_pres * n, 1)
//! ```
//!
//! where `n_t` is the number of observed variables. Steps with `n_t = 0` map
//! to the zero vector. The result does not depend on column order.

use std::collections::HashSet;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::benchgen::AnomalyType;
use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Hash stream selector; each maps to a distinct digest suffix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Val,
    ValSign,
    Pres,
    PresSign,
    Group,
}

impl Stream {
    pub fn suffix(self) -> &'static str {
        match self {
            Stream::Val => "#val",
            Stream::ValSign => "#val_sign",
            Stream::Pres => "#pres",
            Stream::PresSign => "#pres_sign",
            Stream::Group => "#group",
        }
    }
}

/// The two sketch streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchStream {
    Value,
    Presence,
}

impl SketchStream {
    fn bucket_stream(self) -> Stream {
        match self {
            SketchStream::Value => Stream::Val,
            SketchStream::Presence => Stream::Pres,
        }
    }

    fn sign_stream(self) -> Stream {
        match self {
            SketchStream::Value => Stream::ValSign,
            SketchStream::Presence => Stream::PresSign,
        }
    }
}

/// MD5 of `id ‖ suffix`, read as a big-endian unsigned 128-bit integer.
pub fn digest_u128(id: &str, suffix: &str) -> u128 {
    let mut hasher = Md5::new();
    hasher.update(id.as_bytes());
    hasher.update(suffix.as_bytes());
    let bytes: [u8; 16] = hasher.finalize().into();
    u128::from_be_bytes(bytes)
}

/// Bucket index `MD5(id ‖ suffix) mod modulus`.
pub fn hash_stream(id: &str, stream: Stream, modulus: u64) -> u64 {
    assert!(modulus >= 1, "modulus must be positive");
    (digest_u128(id, stream.suffix()) % modulus as u128) as u64
}

/// `+1` when the sign hash is even, `-1` otherwise.
pub fn sign_of(id: &str, stream: SketchStream) -> f64 {
    if hash_stream(id, stream.sign_stream(), 2) == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

/// A length-`L` window over `C` identified variables with a missingness mask.
///
/// Values and mask are stored row-major (`t * C + j`). Unobserved values are
/// stored as 0 and never read.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    ids: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
    len: usize,
    pub label: Label,
    pub anomaly: Option<AnomalyType>,
}

impl Window {
    pub fn new(ids: Vec<String>, values: Vec<f64>, mask: Vec<bool>, len: usize) -> Result<Self> {
        let c = ids.len();
        if len == 0 {
            return Err(Error::InvalidWindow(
                "window length must be positive".into(),
            ));
        }
        if c == 0 {
            return Err(Error::InvalidWindow("window has no variables".into()));
        }
        if values.len() != len * c || mask.len() != len * c {
            return Err(Error::InvalidWindow(format!(
                "expected {}x{} values and mask, got {} and {}",
                len,
                c,
                values.len(),
                mask.len()
            )));
        }
        let mut seen = HashSet::with_capacity(c);
        for id in &ids {
            if id.is_empty() {
                return Err(Error::InvalidWindow("empty variable identifier".into()));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidWindow(format!("duplicate identifier {id:?}")));
            }
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(Window {
            ids,
            values,
            mask,
            len,
            label: Label::Normal,
            anomaly: None,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cardinality(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.ids.len() + j]
    }

    pub fn observed(&self, t: usize, j: usize) -> bool {
        self.mask[t * self.ids.len() + j]
    }

    pub fn value_row(&self, t: usize) -> &[f64] {
        let c = self.ids.len();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn mask_row(&self, t: usize) -> &[bool] {
        let c = self.ids.len();
        &self.mask[t * c..(t + 1) * c]
    }

    pub fn observed_count(&self, t: usize) -> usize {
        self.mask_row(t).iter().filter(|&&m| m).count()
    }

    /// Reorders the variable columns; `order[k]` is the source column of new column `k`.
    pub fn permute_columns(&self, order: &[usize]) -> Window {
        let c = self.ids.len();
        assert_eq!(order.len(), c, "permutation length");
        let ids = order.iter().map(|&k| self.ids[k].clone()).collect();
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for t in 0..self.len {
            for &k in order {
                values.push(self.value(t, k));
                mask.push(self.observed(t, k));
            }
        }
        Window {
            ids,
            values,
            mask,
            len: self.len,
            label: self.label,
            anomaly: self.anomaly,
        }
    }

    pub fn with_label(mut self, label: Label, anomaly: Option<AnomalyType>) -> Self {
        self.label = label;
        self.anomaly = anomaly;
        self
    }
}

/// Sketch configuration. The three flags exist for representation ablations;
/// the defaults give the standard construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashConfig {
    /// Buckets per stream (`m`); rows of the sequence have width `2m`.
    pub buckets: usize,
    /// Presence slope; the presence half saturates at `1 / a_pres` observed variables.
    pub a_pres: f64,
    /// Include the presence stream (otherwise that half is zero).
    pub presence: bool,
    /// Divide each step by `sqrt(n_t)`.
    pub sqrt_normalize: bool,
    /// Clamp `lambda(n_t)` at 1.
    pub saturate: bool,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            buckets: 128,
            a_pres: 0.2,
            presence: true,
            sqrt_normalize: true,
            saturate: true,
        }
    }
}

impl HashConfig {
    pub fn with_buckets(buckets: usize) -> Self {
        HashConfig {
            buckets,
            ..Default::default()
        }
    }

    pub fn width(&self) -> usize {
        2 * self.buckets
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::config("hash buckets must be at least 1"));
        }
        if !(self.a_pres > 0.0 && self.a_pres.is_finite()) {
            return Err(Error::config("a_pres must be a positive finite number"));
        }
        Ok(())
    }

    /// Presence scaling `lambda(n)`.
    pub fn lambda(&self, n: usize) -> f64 {
        let lin = self.a_pres * n as f64;
        if self.saturate {
            lin.min(1.0)
        } else {
            lin
        }
    }
}

/// Per-identifier buckets and signs for both streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdHashes {
    pub val_bucket: usize,
    pub val_sign: i8,
    pub pres_bucket: usize,
    pub pres_sign: i8,
}

impl IdHashes {
    pub fn compute(id: &str, buckets: usize) -> Self {
        let m = buckets as u64;
        let sign = |s: SketchStream| if sign_of(id, s) > 0.0 { 1 } else { -1 };
        IdHashes {
            val_bucket: hash_stream(id, Stream::Val, m) as usize,
            val_sign: sign(SketchStream::Value),
            pres_bucket: hash_stream(id, Stream::Pres, m) as usize,
            pres_sign: sign(SketchStream::Presence),
        }
    }
}

/// The fixed-width sequence `g` (`L x 2m`) and observed counts `n_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashedSequence {
    pub g: Mat,
    pub counts: Vec<usize>,
}

impl HashedSequence {
    pub fn len(&self) -> usize {
        self.g.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.g.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.g.cols()
    }

    pub fn buckets(&self) -> usize {
        self.g.cols() / 2
    }

    pub fn value_half(&self, t: usize) -> &[f64] {
        &self.g.row(t)[..self.buckets()]
    }

    pub fn presence_half(&self, t: usize) -> &[f64] {
        &self.g.row(t)[self.buckets()..]
    }
}

/// Value and presence sketches for one time step.
pub fn sketch_step(
    values: &[f64],
    mask: &[bool],
    ids: &[String],
    cfg: &HashConfig,
) -> (Vec<f64>, Vec<f64>, usize) {
    assert!(
        values.len() == mask.len() && mask.len() == ids.len(),
        "values, mask and ids must share a length"
    );
    let hashes: Vec<IdHashes> = ids
        .iter()
        .map(|id| IdHashes::compute(id, cfg.buckets))
        .collect();
    let mut phi_v = vec![0.0; cfg.buckets];
    let mut phi_p = vec![0.0; cfg.buckets];
    let n = accumulate_step(values, mask, &hashes, &mut phi_v, &mut phi_p);
    (phi_v, phi_p, n)
}

fn accumulate_step(
    values: &[f64],
    mask: &[bool],
    hashes: &[IdHashes],
    phi_v: &mut [f64],
    phi_p: &mut [f64],
) -> usize {
    let mut n = 0;
    for ((&v, &m), h) in values.iter().zip(mask).zip(hashes) {
        if !m {
            continue;
        }
        n += 1;
        phi_v[h.val_bucket] += f64::from(h.val_sign) * v;
        phi_p[h.pres_bucket] += f64::from(h.pres_sign);
    }
    n
}

/// Concatenates and normalizes one step: `(1/sqrt(n)) [phi_v, lambda(n) phi_p]`.
pub fn assemble_g(phi_v: &[f64], phi_p: &[f64], n_t: usize, cfg: &HashConfig) -> Vec<f64> {
    let mut out = vec![0.0; phi_v.len() + phi_p.len()];
    assemble_into(phi_v, phi_p, n_t, cfg, &mut out);
    out
}

fn assemble_into(phi_v: &[f64], phi_p: &[f64], n_t: usize, cfg: &HashConfig, out: &mut [f64]) {
    let m = phi_v.len();
    if n_t == 0 {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let scale = if cfg.sqrt_normalize {
        1.0 / (n_t as f64).sqrt()
    } else {
        1.0
    };
    let pres_scale = if cfg.presence {
        cfg.lambda(n_t) * scale
    } else {
        0.0
    };
    for (o, &v) in out[..m].iter_mut().zip(phi_v) {
        *o = v * scale;
    }
    for (o, &p) in out[m..].iter_mut().zip(phi_p) {
        *o = p * pres_scale;
    }
}

pub fn build_hashed_sequence(w: &Window, cfg: &HashConfig) -> HashedSequence {
    let m = cfg.buckets;
    let hashes: Vec<IdHashes> = w.ids().iter().map(|id| IdHashes::compute(id, m)).collect();
    let mut g = Mat::zeros(w.len(), 2 * m);
    let mut counts = Vec::with_capacity(w.len());
    let mut phi_v = vec![0.0; m];
    let mut phi_p = vec![0.0; m];
    for t in 0..w.len() {
        phi_v.iter_mut().for_each(|x| *x = 0.0);
        phi_p.iter_mut().for_each(|x| *x = 0.0);
        let n = accumulate_step(
            w.value_row(t),
            w.mask_row(t),
            &hashes,
            &mut phi_v,
            &mut phi_p,
        );
        assemble_into(&phi_v, &phi_p, n, cfg, g.row_mut(t));
        counts.push(n);
    }
    HashedSequence { g, counts }
}

/// `1 - |distinct buckets| / C` for the given stream.
pub fn collision_fraction(ids: &[String], buckets: usize, stream: SketchStream) -> f64 {
    assert!(!ids.is_empty(), "collision fraction needs at least one id");
    let distinct: HashSet<u64> = ids
        .iter()
        .map(|id| hash_stream(id, stream.bucket_stream(), buckets as u64))
        .collect();
    1.0 - distinct.len() as f64 / ids.len() as f64
}
