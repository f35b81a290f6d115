//! Run configuration: one TOML document with a section per component,
//! environment overrides and a content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::{DstmdConfig, DstmdPipeline, EmdConfig, EmdPipeline, EmdVariant, EstmdPipeline};
use crate::detector::{Detector, DetectorKind};
use crate::error::{Result, StmdError};
use crate::eval::MatchingConfig;
use crate::frontend::{LaminaConfig, RetinaConfig};
use crate::stmdnet::{FeedbackConfig, StmdNet, StmdNetConfig};
use crate::synthgen::SynthConfig;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "STMD_";

/// Front end shared by the classical detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalConfig {
    pub retina: RetinaConfig,
    pub lamina: LaminaConfig,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            retina: RetinaConfig::default(),
            lamina: LaminaConfig::plain(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstmdConfig {
    /// OFF-arm delay, frames.
    pub tau: usize,
}

impl Default for EstmdConfig {
    fn default() -> Self {
        Self { tau: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Minimum response kept as a detection (only positive responses count).
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { threshold: 0.0 }
    }
}

/// Axes of the factorial sweep; an empty axis is not swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub detectors: Vec<DetectorKind>,
    /// Target speed, px/frame at the base rate.
    pub velocity: Vec<f64>,
    /// Side of a square target, px.
    pub target_size: Vec<f64>,
    /// Background mean minus target luminance.
    pub contrast: Vec<f64>,
    pub rate_factor: Vec<usize>,
    /// ESTMD delay and DSTMD OFF-arm delays.
    pub tau: Vec<usize>,
    pub decay_g: Vec<f64>,
    pub inhib_gain: Vec<f64>,
    pub frac_order: Vec<f64>,
    /// Largest number of cells a sweep may contain.
    pub cell_budget: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            detectors: vec![DetectorKind::Estmd, DetectorKind::StmdNet],
            velocity: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            target_size: Vec::new(),
            contrast: Vec::new(),
            rate_factor: Vec::new(),
            tau: Vec::new(),
            decay_g: Vec::new(),
            inhib_gain: Vec::new(),
            frac_order: Vec::new(),
            cell_budget: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub width: usize,
    pub height: usize,
    /// Timed frames, after `skip`.
    pub frames: usize,
    pub skip: usize,
    pub detectors: Vec<DetectorKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 480,
            height: 270,
            frames: 200,
            skip: 10,
            detectors: vec![DetectorKind::StmdNet, DetectorKind::StmdNetF, DetectorKind::Dstmd],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorKind,
    pub classical: ClassicalConfig,
    pub emd: EmdConfig,
    pub estmd: EstmdConfig,
    pub dstmd: DstmdConfig,
    pub stmdnet: StmdNetConfig,
    pub feedback: FeedbackConfig,
    pub detect: DetectConfig,
    pub matching: MatchingConfig,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::StmdNet,
            classical: ClassicalConfig::default(),
            emd: EmdConfig::default(),
            estmd: EstmdConfig::default(),
            dstmd: DstmdConfig::default(),
            stmdnet: StmdNetConfig::default(),
            feedback: FeedbackConfig::default(),
            detect: DetectConfig::default(),
            matching: MatchingConfig::default(),
            synth: SynthConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> StmdError {
    StmdError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Prefixes a parameter error with the section it came from.
fn in_section(section: &str, e: StmdError) -> StmdError {
    match e {
        StmdError::Parameter { name, reason } => config_err(format!("{section}.{name}"), reason),
        other => other,
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("config", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = match e.path().to_string() {
                p if p == "." => "config".to_string(),
                p => p,
            };
            config_err(key, e.inner().message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| StmdError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            StmdError::Config { key, reason } => StmdError::Config {
                key,
                reason: format!("{reason} (in {})", path.display()),
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Applies `STMD_<SECTION>_<KEY>` overrides. Nested keys join with `_`,
    /// e.g. `STMD_STMDNET_MEDULLA_DECAY_G`. Values are TOML literals; bare
    /// words are taken as strings. Unknown `STMD_` names are rejected.
    pub fn apply_env_overrides<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut doc = toml::Value::try_from(&*self).expect("config always serializes");
        let mut leaves = Vec::new();
        collect_leaves(&doc, &mut Vec::new(), &mut leaves);
        let mut touched = false;
        for (name, value) in vars {
            let (name, value) = (name.as_ref(), value.as_ref());
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some(path) = leaves.iter().find(|p| p.join("_").to_ascii_uppercase() == rest) else {
                return Err(config_err(name, "no config key matches this override"));
            };
            let slot = leaf_mut(&mut doc, path);
            *slot = parse_literal(value);
            touched = true;
        }
        if touched {
            let text = toml::to_string(&doc).expect("toml value serializes");
            *self = Self::from_toml_str(&text)?;
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<()> {
        self.apply_env_overrides(std::env::vars())
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.classical
            .retina
            .kernel()
            .map_err(|e| in_section("classical.retina", e))?;
        self.classical
            .lamina
            .validate()
            .map_err(|e| in_section("classical.lamina", e))?;
        self.emd.validate().map_err(|e| in_section("emd", e))?;
        if self.estmd.tau < 1 {
            return Err(config_err("estmd.tau", "must be at least 1"));
        }
        self.dstmd.validate().map_err(|e| in_section("dstmd", e))?;
        self.stmdnet
            .retina
            .kernel()
            .map_err(|e| in_section("stmdnet.retina", e))?;
        self.stmdnet
            .lamina
            .validate()
            .map_err(|e| in_section("stmdnet.lamina", e))?;
        self.stmdnet
            .medulla
            .validate()
            .map_err(|e| in_section("stmdnet.medulla", e))?;
        self.stmdnet
            .ldfc
            .validate()
            .map_err(|e| in_section("stmdnet.ldfc", e))?;
        self.feedback.validate().map_err(|e| in_section("feedback", e))?;
        self.matching.validate().map_err(|e| in_section("matching", e))?;
        self.synth.validate()?;
        if self.sweep.detectors.is_empty() {
            return Err(config_err("sweep.detectors", "must name at least one detector"));
        }
        if self.bench.frames < 1 {
            return Err(config_err("bench.frames", "must be positive"));
        }
        Ok(())
    }

    /// A fresh detector of `kind` built from the relevant sections.
    pub fn build_detector(&self, kind: DetectorKind) -> Result<Box<dyn Detector>> {
        let c = &self.classical;
        Ok(match kind {
            DetectorKind::Hr => Box::new(EmdPipeline::new(EmdVariant::Hr, &c.retina, self.emd)?),
            DetectorKind::Bl => Box::new(EmdPipeline::new(EmdVariant::Bl, &c.retina, self.emd)?),
            DetectorKind::HrBl => Box::new(EmdPipeline::new(EmdVariant::HrBl, &c.retina, self.emd)?),
            DetectorKind::Estmd => Box::new(EstmdPipeline::new(&c.retina, &c.lamina, self.estmd.tau)?),
            DetectorKind::Dstmd => Box::new(DstmdPipeline::new(&c.retina, &c.lamina, self.dstmd)?),
            DetectorKind::StmdNet => Box::new(StmdNet::new(self.stmdnet)?),
            DetectorKind::StmdNetF => Box::new(StmdNet::with_feedback(self.stmdnet, self.feedback)?),
        })
    }
}

fn collect_leaves(v: &toml::Value, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                path.push(k.clone());
                collect_leaves(child, path, out);
                path.pop();
            }
        }
        _ => out.push(path.clone()),
    }
}

fn leaf_mut<'a>(mut v: &'a mut toml::Value, path: &[String]) -> &'a mut toml::Value {
    for k in path {
        v = v
            .as_table_mut()
            .and_then(|t| t.get_mut(k))
            .expect("path came from this document");
    }
    v
}

fn parse_literal(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}
