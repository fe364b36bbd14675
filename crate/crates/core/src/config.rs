//! Run configuration: named presets, TOML files layered over a preset,
//! dotted-key overrides, validation and the schedule dump.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conventions::ConventionRegistry;
use crate::dataio::Stream;
use crate::evalkit::{LinearSchedule, Protocol, FUSION_WEIGHTS};
use crate::network::StgcnConfig;
use crate::pretrain::{format_pairs, iterations_per_epoch, LrSchedule, PretrainConfig};

/// Relative dataset paths are resolved against this directory when set.
pub const DATA_ROOT_ENV: &str = "MSCLR_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected `desk` or `paper`)")]
    UnknownPreset(String),
    #[error("cannot parse {origin}: {reason}")]
    Parse { origin: String, reason: String },
    #[error("invalid override `{0}` (expected key=value)")]
    Override(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Dataset directory or manifest.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Directory of convention TOML files replacing the built-in registry.
    pub conventions_dir: Option<PathBuf>,
    /// Pretraining formats.
    pub formats: Vec<String>,
    /// Formats with a linear head at evaluation; empty means `formats`.
    pub eval_formats: Vec<String>,
    pub streams: Vec<Stream>,
    pub train_split: String,
    pub pretrain: PretrainConfig,
    pub linear: LinearSchedule,
    pub eval: Protocol,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                preset,
                dataset: None,
                output_dir: PathBuf::from("runs/desk"),
                conventions_dir: None,
                formats: vec!["kinectv2".into(), "smplx".into()],
                eval_formats: vec!["kinectv2".into()],
                streams: vec![Stream::Joint],
                train_split: "train".into(),
                pretrain: PretrainConfig::default(),
                linear: LinearSchedule {
                    epochs: 20,
                    batch_size: 16,
                    lr: LrSchedule {
                        base: 0.1,
                        milestones: vec![16],
                        decay: 0.1,
                    },
                    ..LinearSchedule::default()
                },
                eval: Protocol::default(),
            },
            Preset::Paper => Self {
                preset,
                dataset: None,
                output_dir: PathBuf::from("runs/paper"),
                conventions_dir: None,
                formats: vec!["smpl".into(), "smplx".into(), "berkeley_mhad".into(), "kinectv2".into()],
                eval_formats: vec!["kinectv2".into()],
                streams: Stream::ALL.to_vec(),
                train_split: "train".into(),
                pretrain: PretrainConfig {
                    epochs: 300,
                    batch_size: 128,
                    lr: LrSchedule {
                        base: 0.1,
                        milestones: vec![250],
                        decay: 0.1,
                    },
                    sgd_momentum: 0.9,
                    weight_decay: 1e-4,
                    bank_size: 32768,
                    frames: 50,
                    network: StgcnConfig::full_scale(),
                    ..PretrainConfig::default()
                },
                linear: LinearSchedule::default(),
                eval: Protocol {
                    fusion_weights: FUSION_WEIGHTS,
                    ..Protocol::default()
                },
            },
        }
    }

    /// Parses a TOML document layered over the preset it names (desk when
    /// absent). Keys missing from the document keep the preset value.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let parse = |reason: String| ConfigError::Parse {
            origin: origin.to_string(),
            reason,
        };
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| parse(e.to_string()))?;
        let preset = match doc.get("preset") {
            None => Preset::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(parse(format!("preset must be a string, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).expect("config serializes");
        merge(&mut base, doc);
        base.try_into().map_err(|e: toml::de::Error| parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `dotted.key=value`. The value is read as a TOML value and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Override(assignment.to_string()));
        }
        let value = parse_value(raw.trim());
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        let mut cursor = &mut table;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::Override(format!("`{part}` in `{key}` is not a section")))?;
        }
        cursor.insert(parts[parts.len() - 1].to_string(), value);
        *self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: format!("override `{assignment}`"),
            reason: e.to_string(),
        })?;
        Ok(())
    }

    pub fn eval_formats(&self) -> &[String] {
        if self.eval_formats.is_empty() {
            &self.formats
        } else {
            &self.eval_formats
        }
    }

    /// Dataset location with the data-root variable applied to relative paths.
    pub fn dataset_path(&self) -> Option<PathBuf> {
        let p = self.dataset.as_ref()?;
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if p.is_relative() => Some(PathBuf::from(root).join(p)),
            _ => Some(p.clone()),
        }
    }

    pub fn registry(&self) -> Result<ConventionRegistry> {
        match &self.conventions_dir {
            None => Ok(ConventionRegistry::builtin()),
            Some(dir) => ConventionRegistry::from_dir(dir).map_err(|e| ConfigError::Invalid(vec![e.to_string()])),
        }
    }

    /// Checks everything that can be checked without training. All
    /// problems are reported together.
    pub fn validate(&self, registry: &ConventionRegistry) -> Result<()> {
        let mut problems = Vec::new();
        if self.formats.is_empty() {
            problems.push("formats must not be empty".to_string());
        }
        for f in self.formats.iter().chain(&self.eval_formats) {
            if registry.get(f).is_none() {
                problems.push(format!("unknown convention `{f}` (known: {})", registry.names().join(", ")));
            }
        }
        for f in &self.eval_formats {
            if !self.formats.contains(f) {
                problems.push(format!("eval format `{f}` is not pretrained"));
            }
        }
        let mut seen = self.formats.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.formats.len() {
            problems.push("formats contain duplicates".into());
        }
        let mut streams = self.streams.clone();
        streams.sort();
        streams.dedup();
        if streams.is_empty() || streams.len() != self.streams.len() {
            problems.push("streams must be non-empty and distinct".into());
        }
        if let Some(p) = self.dataset_path() {
            if !p.exists() {
                problems.push(format!("dataset {} does not exist", p.display()));
            }
        }
        if let Err(e) = self.pretrain.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.linear.validate() {
            problems.push(e.to_string());
        }
        if self.eval.fusion_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            problems.push("fusion weights must be finite and non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Resolved training and evaluation schedule, without running anything.
    pub fn schedule(&self, records: Option<usize>) -> ScheduleDump {
        let p = &self.pretrain;
        let pairs = format_pairs(&self.formats);
        ScheduleDump {
            preset: self.preset,
            formats: self.formats.clone(),
            streams: self.streams.clone(),
            format_pairs: pairs.clone(),
            pretrain: PretrainSchedule {
                epochs: p.epochs,
                batch_size: p.batch_size,
                lr_base: p.lr.base,
                lr_milestones: p.lr.milestones.clone(),
                lr_decay: p.lr.decay,
                lr_final: p.lr.lr_at(p.epochs.saturating_sub(1)),
                sgd_momentum: p.sgd_momentum,
                weight_decay: p.weight_decay,
                frames: p.frames,
                temperature: p.temperature,
                ema_momentum: p.ema_momentum,
                bank_size: p.bank_size,
                seed: p.seed,
                augmentation_seed: p.augmentation.seed,
                records,
                iterations_per_epoch: records.map(|n| iterations_per_epoch(n, pairs.len(), p.batch_size.min(n))),
            },
            linear: self.linear.clone(),
            fusion_weights: self.eval.fusion_weights,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub lr_final: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub frames: usize,
    pub temperature: f64,
    pub ema_momentum: f64,
    pub bank_size: usize,
    pub seed: u64,
    pub augmentation_seed: u64,
    pub records: Option<usize>,
    pub iterations_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDump {
    pub preset: Preset,
    pub formats: Vec<String>,
    pub streams: Vec<Stream>,
    pub format_pairs: Vec<(String, String)>,
    pub pretrain: PretrainSchedule,
    pub linear: LinearSchedule,
    pub fusion_weights: [f64; 3],
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_schedule() {
        let d = RunConfig::preset(Preset::Paper).schedule(None);
        assert_eq!(d.pretrain.epochs, 300);
        assert_eq!(d.pretrain.lr_base, 0.1);
        assert_eq!(d.pretrain.lr_milestones, vec![250]);
        assert!((d.pretrain.lr_final - 0.01).abs() < 1e-15);
        assert_eq!((d.pretrain.sgd_momentum, d.pretrain.weight_decay, d.pretrain.frames), (0.9, 1e-4, 50));
        assert_eq!((d.linear.epochs, d.linear.batch_size, d.linear.lr.base), (100, 128, 3.0));
        assert_eq!((d.linear.lr.milestones.clone(), d.linear.lr.decay), (vec![80], 0.1));
        assert_eq!(d.fusion_weights, [0.6, 0.6, 0.4]);
        assert_eq!(d.format_pairs.len(), 12);
    }

    #[test]
    fn file_layers_over_named_preset() {
        let text = "preset = \"paper\"\nformats = [\"kinectv2\"]\n[pretrain]\nepochs = 7\n[pretrain.network]\ntemporal_kernel = 5\n";
        let c = RunConfig::from_toml_str(text, "test").unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.pretrain.epochs, 7);
        assert_eq!(c.pretrain.network.temporal_kernel, 5);
        assert_eq!(c.pretrain.bank_size, 32768);
        assert_eq!(c.linear.epochs, 100);
        let back = RunConfig::from_toml_str(&c.to_toml_string(), "roundtrip").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_presets_rejected() {
        assert!(matches!(RunConfig::from_toml_str("preset = \"huge\"", "t"), Err(ConfigError::UnknownPreset(_))));
        assert!(matches!(RunConfig::from_toml_str("epochs = 3", "t"), Err(ConfigError::Parse { .. })));
        assert!(matches!(RunConfig::from_toml_str("[pretrain]\nepoch = 3", "t"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("pretrain.epochs=3").unwrap();
        c.apply_override("formats=[\"smpl\"]").unwrap();
        c.apply_override("train_split = dev").unwrap();
        c.apply_override("streams=[\"bone\"]").unwrap();
        assert_eq!(c.pretrain.epochs, 3);
        assert_eq!(c.formats, vec!["smpl".to_string()]);
        assert_eq!(c.train_split, "dev");
        assert_eq!(c.streams, vec![Stream::Bone]);
        assert!(c.apply_override("noequals").is_err());
        assert!(c.apply_override("pretrain.epochs=\"many\"").is_err());
    }

    #[test]
    fn validation_collects_problems() {
        let reg = ConventionRegistry::builtin();
        RunConfig::default().validate(&reg).unwrap();
        RunConfig::preset(Preset::Paper).validate(&reg).unwrap();
        let c = RunConfig {
            formats: vec!["openpose".into()],
            eval_formats: vec!["smpl".into()],
            streams: vec![],
            ..RunConfig::default()
        };
        match c.validate(&reg) {
            Err(ConfigError::Invalid(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iterations_scale_with_pairs() {
        let mut c = RunConfig::default();
        let two = c.schedule(Some(60)).pretrain.iterations_per_epoch.unwrap();
        c.formats = vec!["kinectv2".into()];
        let one = c.schedule(Some(60)).pretrain.iterations_per_epoch.unwrap();
        assert_eq!((one, two), (4, 8));
    }
}
