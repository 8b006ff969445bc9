//! The run configuration: one JSON record with a default for every field.
//! Values are layered defaults → config file → `--set key.path=value`
//! overrides → dedicated flags, and the resolved record is echoed into
//! every output directory so a run can be replayed from it alone.

use std::path::{Path, PathBuf};

use gridguard::env::EnvConfig;
use gridguard::ppo::{PpoConfig, TrainSchedule};
use gridguard::screening::AgentMode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Which reading of the hyperparameter table seeds the `ppo` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PpoPreset {
    /// Discount and entropy rows swapped into their plausible places.
    #[default]
    Swapped,
    /// The table exactly as printed.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub ks: Vec<usize>,
    pub modes: Vec<AgentMode>,
    /// Step traces are written for the first this-many sets of each k.
    pub trace_sets: usize,
    pub resume: bool,
    /// Policy checkpoint for agent mode.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self { ks: vec![1, 2], modes: vec![AgentMode::NoAgent], trace_sets: 3, resume: false, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case file; `None` uses the bundled 14-bus case.
    pub case: Option<PathBuf>,
    /// Master seed: training episodes, evaluation and screening all derive
    /// from it.
    pub seed: u64,
    /// Worker threads for training rollouts and screening; 0 = all cores.
    pub jobs: usize,
    pub output_dir: PathBuf,
    /// Benign environment of the general-policy phase.
    pub train_env: EnvConfig,
    /// Hostile environment: critical and mixed training phases, evaluation
    /// and screening.
    pub env: EnvConfig,
    pub ppo_preset: PpoPreset,
    pub ppo: PpoConfig,
    pub schedule: TrainSchedule,
    pub screen: ScreenSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: None,
            seed: 0,
            jobs: 0,
            output_dir: PathBuf::from("runs/default"),
            train_env: EnvConfig::default(),
            env: EnvConfig::hostile(),
            ppo_preset: PpoPreset::Swapped,
            ppo: PpoConfig::default(),
            schedule: TrainSchedule::default(),
            screen: ScreenSection::default(),
        }
    }
}

/// Everything that can change a [`RunConfig`] besides its defaults.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    pub file: Option<PathBuf>,
    /// `key.path=value` pairs; the value is parsed as JSON, falling back to
    /// a plain string.
    pub sets: Vec<String>,
    /// Flag overrides, applied last, as `(key.path, value)`.
    pub flags: Vec<(String, Value)>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key '{path}'")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just made an object")
            }
            _ => return Err(CliError::Usage(format!("override '{path}': '{}' is not a section", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(CliError::Usage(format!("unknown config key '{path}'")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::Usage(format!("unknown config key '{path}'")))?;
    }
    unreachable!("paths have at least one part")
}

pub fn parse_override(text: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{text}' is not key.path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    pub fn resolve(layers: &Layers) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serialises");
        let mut preset = PpoPreset::Swapped;
        if let Some(path) = &layers.file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if let Some(p) = file.get("ppo_preset") {
                preset = serde_json::from_value(p.clone()).map_err(|e| CliError::Input(format!("ppo_preset: {e}")))?;
            }
            // Apply the preset before the file so explicit ppo values win.
            if preset == PpoPreset::AsPrinted {
                doc["ppo"] = serde_json::to_value(PpoConfig::hyper_table_as_printed()).expect("serialises");
            }
            merge(&mut doc, file);
        }
        let mut overrides = Vec::new();
        for s in &layers.sets {
            overrides.push(parse_override(s)?);
        }
        overrides.extend(layers.flags.iter().cloned());
        for (key, value) in overrides {
            if key == "ppo_preset" {
                let p: PpoPreset =
                    serde_json::from_value(value.clone()).map_err(|e| CliError::Usage(format!("ppo_preset: {e}")))?;
                if p != preset {
                    let table = match p {
                        PpoPreset::Swapped => PpoConfig::default(),
                        PpoPreset::AsPrinted => PpoConfig::hyper_table_as_printed(),
                    };
                    doc["ppo"] = serde_json::to_value(table).expect("serialises");
                    preset = p;
                }
            }
            set_path(&mut doc, &key, value)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.finish();
        Ok(cfg)
    }

    /// Propagates shared values into the sections that consume them.
    fn finish(&mut self) {
        self.schedule.seed = self.seed;
        self.train_env.sync_threshold();
        self.env.sync_threshold();
    }

    pub fn validate(&self, n_lines: usize) -> Result<(), CliError> {
        self.train_env.validate(n_lines).map_err(|e| CliError::Input(format!("train_env: {e}")))?;
        self.env.validate(n_lines).map_err(|e| CliError::Input(format!("env: {e}")))?;
        self.ppo.validate().map_err(CliError::Input)?;
        if let Some(&k) = self.screen.ks.iter().find(|&&k| k < 1 || k > n_lines) {
            return Err(CliError::Usage(format!("k = {k} out of range 1..={n_lines}")));
        }
        Ok(())
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(self).expect("config serialises") + "\n";
        let path = dir.join("config.json");
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
