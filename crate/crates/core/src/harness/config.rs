use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::{EncoderConfig, EncoderKind, PretrainConfig};
use crate::error::{MgmError, Result};
use crate::fusion::{FixtureConfig, MetaConfig, DEFAULT_TEST_FRACTION};
use crate::graph::{SplitRatios, SynthConfig};
use crate::memory::MemoryMode;
use crate::mgm::MgmConfig;

/// Graph files on disk. Without them the synthetic generator is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFiles {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    /// Class order; fixes the column order of every probability vector.
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseConfig {
    /// Stages to run, each in 1..=4.
    pub stages: Vec<u8>,
    /// Use the generated fixture instead of files.
    pub fixture: Option<FixtureConfig>,
    /// Gold labels, `media_id<TAB>label_name`, class order from `label_names`.
    pub gold: Option<PathBuf>,
    pub label_names: Vec<String>,
    pub text: Vec<PathBuf>,
    pub graph: Vec<PathBuf>,
    pub test_fraction: f64,
    pub meta: MetaConfig,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            stages: vec![1, 2],
            fixture: None,
            gold: None,
            label_names: Vec::new(),
            text: Vec::new(),
            graph: Vec::new(),
            test_fraction: DEFAULT_TEST_FRACTION,
            meta: MetaConfig::default(),
        }
    }
}

/// Everything a command needs, as one flat JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub graph: Option<GraphFiles>,
    /// Used when `graph` is absent. Its seed is replaced by the run seed, so
    /// every seed draws a fresh graph.
    pub synth: SynthConfig,
    pub encoder: EncoderKind,
    /// Full encoder settings; the preset of `encoder` when absent.
    pub encoder_config: Option<EncoderConfig>,
    pub pretrain: PretrainConfig,
    pub mgm: MgmConfig,
    pub splits: SplitRatios,
    pub label_fraction: f64,
    pub seeds: Vec<u64>,
    /// Skip EM and report the pre-trained backbone only.
    pub vanilla: bool,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Node ids for `predict`; every node when empty.
    pub predict_nodes: Vec<String>,
    /// Predictions TSV read by `eval`.
    pub predictions: Option<PathBuf>,
    pub sweep_k: Vec<usize>,
    pub sweep_eta: Vec<f64>,
    pub fractions: Vec<f64>,
    pub masses: Vec<f64>,
    pub fuse: FuseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "synthetic".into(),
            graph: None,
            synth: SynthConfig::default(),
            encoder: EncoderKind::Gcn,
            encoder_config: None,
            pretrain: PretrainConfig::default(),
            mgm: MgmConfig::default(),
            splits: SplitRatios::default(),
            label_fraction: 1.0,
            seeds: vec![0],
            vanilla: false,
            out: PathBuf::from("runs"),
            checkpoint: None,
            predict_nodes: Vec::new(),
            predictions: None,
            sweep_k: (1..=7).collect(),
            sweep_eta: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            fractions: vec![0.6, 0.8, 1.0],
            masses: vec![1.0, 0.9, 0.6],
            fuse: FuseConfig::default(),
        }
    }
}

/// Command-line values; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub encoder: Option<EncoderKind>,
    pub k: Option<usize>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub memory_mode: Option<MemoryMode>,
    pub mass: Option<f64>,
    pub vanilla: bool,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

/// Parses a comma-separated seed list such as `0,1,2`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: std::result::Result<Vec<u64>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match seeds {
        Ok(s) if !s.is_empty() => Ok(s),
        Ok(_) => Err(MgmError::Config("empty seed list".into())),
        Err(e) => Err(MgmError::Config(format!("bad seed list '{text}': {e}"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MgmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies the environment seed list, then the flags (flag > env > file).
    pub fn resolve(mut self, env_seeds: Option<&str>, flags: &Overrides) -> Result<Self> {
        if let Some(text) = env_seeds {
            self.seeds = parse_seeds(text)?;
        }
        if let Some(s) = &flags.seeds {
            self.seeds = s.clone();
        }
        if let Some(o) = &flags.out {
            self.out = o.clone();
        }
        if let Some(kind) = flags.encoder {
            if self.encoder != kind {
                self.encoder_config = None;
            }
            self.encoder = kind;
        }
        if let Some(k) = flags.k {
            self.mgm.k = k;
        }
        if let Some(eta) = flags.eta {
            self.mgm.eta = eta;
        }
        if let Some(alpha) = flags.alpha {
            self.mgm.alpha = alpha;
        }
        if let Some(mode) = flags.memory_mode {
            self.mgm.memory_mode = mode;
        }
        if let Some(mass) = flags.mass {
            self.mgm.mass = mass;
        }
        if flags.vanilla {
            self.vanilla = true;
        }
        if let Some(c) = &flags.checkpoint {
            self.checkpoint = Some(c.clone());
        }
        if let Some(p) = &flags.predictions {
            self.predictions = Some(p.clone());
        }
        Ok(self)
    }

    pub fn encoder_settings(&self) -> EncoderConfig {
        self.encoder_config
            .clone()
            .unwrap_or_else(|| EncoderConfig::preset(self.encoder))
    }

    /// MGM settings with the vanilla switch applied.
    pub fn effective_mgm(&self) -> MgmConfig {
        let mut m = self.mgm.clone();
        if self.vanilla {
            m.eta = 1.0;
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(MgmError::Config("seed list is empty".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(MgmError::Config(format!(
                "label fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        self.encoder_settings().validate()?;
        self.effective_mgm().validate()?;
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(g) = &self.graph {
            if g.label_names.is_empty() {
                return Err(MgmError::Config("graph.label_names is empty".into()));
            }
            paths.extend([g.nodes.as_path(), g.edges.as_path(), g.labels.as_path()]);
        }
        paths.extend(self.checkpoint.as_deref());
        paths.extend(self.predictions.as_deref());
        paths.extend(self.fuse.gold.as_deref());
        paths.extend(self.fuse.text.iter().map(PathBuf::as_path));
        paths.extend(self.fuse.graph.iter().map(PathBuf::as_path));
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(MgmError::Config(format!("{} does not exist", missing.display())));
        }
        Ok(())
    }

    pub(crate) fn validate_grid(&self) -> Result<()> {
        if self.sweep_k.is_empty() || self.sweep_eta.is_empty() {
            return Err(MgmError::Config("sweep grid is empty".into()));
        }
        if let Some(bad) = self.sweep_eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(MgmError::Config(format!("sweep η {bad} outside [0, 1]")));
        }
        Ok(())
    }

    pub(crate) fn validate_fractions(&self, values: &[f64], what: &str) -> Result<()> {
        if values.is_empty() {
            return Err(MgmError::Config(format!("{what} list is empty")));
        }
        if let Some(bad) = values.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(MgmError::Config(format!("{what} {bad} outside (0, 1]")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_env_beats_file() {
        let file = RunConfig {
            seeds: vec![9],
            ..RunConfig::default()
        };
        let none = Overrides::default();
        assert_eq!(file.clone().resolve(None, &none).unwrap().seeds, vec![9]);
        assert_eq!(file.clone().resolve(Some("1, 2"), &none).unwrap().seeds, vec![1, 2]);
        let flags = Overrides {
            seeds: Some(vec![5]),
            eta: Some(0.6),
            ..Overrides::default()
        };
        let r = file.resolve(Some("1,2"), &flags).unwrap();
        assert_eq!(r.seeds, vec![5]);
        assert_eq!(r.mgm.eta, 0.6);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seeds":[3],"mgm":{"k":5},"pretrain":{"max_epochs":7}}"#).unwrap();
        assert_eq!(c.mgm.k, 5);
        assert_eq!(c.mgm.eta, MgmConfig::default().eta);
        assert_eq!(c.pretrain.max_epochs, 7);
        assert_eq!(c.sweep_eta.last(), Some(&1.0));
    }

    #[test]
    fn validation_catches_missing_paths_and_seeds() {
        let mut c = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().category(), "config");
        c.seeds = vec![0];
        c.checkpoint = Some("/nonexistent/model.json".into());
        assert!(c.validate().unwrap_err().to_string().contains("does not exist"));
        assert!(parse_seeds("1,x").is_err());
        assert!(parse_seeds(" ").is_err());
    }
}
