//! Run configuration: one JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smkc::benchgen::{GenConfig, Protocol};
use smkc::evalkit::{
    scaling_variants, BenchConfig, DetectorConfig, DiagnosticConfig, ExperimentConfig, Method,
};
use smkc::kernelrep::RepVariant;
use smkc::sketch::HashConfig;

use crate::CliError;

/// Hash-width sweep settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub m_values: Vec<usize>,
    pub variant: Method,
    pub rate: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            m_values: vec![32, 64, 128, 256, 512],
            variant: Method::RandProj(RepVariant::FULL6),
            rate: 0.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub rate: f64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings { rate: 0.10 }
    }
}

/// Every setting of every subcommand. Unknown keys are rejected and every
/// field has a default, so `{}` is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub variants: Vec<Method>,
    /// Output directory; `--out` takes precedence.
    pub out: PathBuf,
    /// Worker threads; `None` uses all available cores.
    pub threads: Option<usize>,
    pub gen: GenConfig,
    pub hash: HashConfig,
    pub detector: DetectorConfig,
    pub sweep: SweepSettings,
    pub ablation: AblationSettings,
    pub bench: BenchConfig,
    pub diagnostic: DiagnosticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            protocol: Protocol::HoldoutC,
            seeds: vec![0, 1, 2],
            variants: vec![
                Method::RandProj(RepVariant::FULL6),
                Method::RandProj(RepVariant::LOG3),
                Method::RandProj("log3+band8".parse().expect("valid variant")),
                Method::StatsPool,
            ],
            out: PathBuf::from("out"),
            threads: None,
            gen: GenConfig::default(),
            hash: HashConfig::default(),
            detector: DetectorConfig::default(),
            sweep: SweepSettings::default(),
            ablation: AblationSettings::default(),
            bench: BenchConfig::default(),
            diagnostic: DiagnosticConfig::default(),
        }
    }
}

/// Command-line values that replace configuration fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<String>,
    pub variants: Option<String>,
    pub threads: Option<usize>,
    pub rate: Option<f64>,
    pub protocol: Option<String>,
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("invalid seed {t:?} in --seeds")))
        })
        .collect()
}

/// Comma-separated method names; `all` expands to the eleven scaling variants.
pub fn parse_variants(s: &str) -> Result<Vec<Method>, CliError> {
    if s.trim() == "all" {
        return Ok(scaling_variants()
            .into_iter()
            .map(Method::RandProj)
            .collect());
    }
    s.split(',')
        .map(|t| {
            t.parse::<Method>()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies flag overrides; flags win over the file.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(s) = &o.seeds {
            self.seeds = parse_seeds(s)?;
        }
        if let Some(v) = &o.variants {
            self.variants = parse_variants(v)?;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        if let Some(r) = o.rate {
            self.gen.anomaly_rates = vec![r];
            self.sweep.rate = r;
            self.ablation.rate = r;
        }
        if let Some(p) = &o.protocol {
            self.protocol = p
                .parse()
                .map_err(|e: smkc::Error| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            gen: self.gen.clone(),
            hash: self.hash,
            detector: self.detector,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.experiment().validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.variants.is_empty() {
            return Err(CliError::Config("variant list is empty".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        for m in &self.variants {
            if let Method::RandProj(v) = m {
                v.validate(self.gen.window_len, self.hash.width())?;
            }
        }
        Ok(())
    }

    /// Representation variants only; the pooled-statistics baseline has no
    /// representation to time.
    pub fn rep_variants(&self) -> Result<Vec<RepVariant>, CliError> {
        self.variants
            .iter()
            .map(|m| match m {
                Method::RandProj(v) => Ok(*v),
                Method::StatsPool => Err(CliError::Config(
                    "statspool_knn has no representation to benchmark".into(),
                )),
            })
            .collect()
    }
}
