//! Configuration file layered under command-line flags.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rpc_core::codec::ArchitectureConfig;
use rpc_core::train::{Preset, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::{CmdResult, Failure};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Preset the `train` section is layered over.
    pub preset: Option<String>,
    /// Any subset of the training fields; see [`TrainConfig`].
    pub train: Map<String, Value>,
    pub codec: CodecSettings,
    pub sabr: SabrSettings,
    pub eval: EvalSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSettings {
    pub checkpoint: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub k_prime: Option<usize>,
    pub k_diffuse: Option<usize>,
    pub entropy: Option<bool>,
    /// Expected layout; a checkpoint with a different one is refused.
    pub architecture: Option<ArchitectureConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SabrSettings {
    pub enabled: Option<bool>,
    pub target_quality: Option<f64>,
    pub target_rate: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub dataset: Option<PathBuf>,
    pub variants: Option<Vec<String>>,
    pub metrics: Option<Vec<String>>,
    pub iterations: Option<usize>,
    pub out: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> CmdResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))
    }
}

/// Flag value if given, else config value. A flag that disagrees with the
/// config is logged.
pub fn resolve<T: PartialEq + Debug>(name: &str, flag: Option<T>, config: Option<T>) -> Option<T> {
    match (flag, config) {
        (Some(f), Some(c)) => {
            if f != c {
                warn!("--{name} {f:?} overrides config value {c:?}");
            }
            Some(f)
        }
        (f, c) => f.or(c),
    }
}

/// Flags accepted by `train`, already converted to JSON keyed by
/// [`TrainConfig`] field names.
pub type TrainOverrides = Vec<(&'static str, Value)>;

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Preset, then the config file's `train` section, then flags.
pub fn resolve_train(config: &CliConfig, preset_flag: Option<String>, flags: TrainOverrides) -> CmdResult<TrainConfig> {
    let preset_name = resolve("preset", preset_flag, config.preset.clone()).unwrap_or_else(|| "desk".into());
    let preset = Preset::parse(&preset_name)
        .ok_or_else(|| Failure::Config(format!("unknown preset {preset_name:?} (desk, paper-prime, paper-diffusion)")))?;
    let mut value = serde_json::to_value(TrainConfig::preset(preset)).map_err(Failure::runtime)?;
    merge(&mut value, &Value::Object(config.train.clone()));
    for (key, flag) in flags {
        if let Some(from_file) = config.train.get(key) {
            if *from_file != flag {
                warn!("--{} {flag} overrides config value {from_file}", key.replace('_', "-"));
            }
        }
        value[key] = flag;
    }
    let resolved: TrainConfig = serde_json::from_value(value).map_err(|e| Failure::Config(format!("train config: {e}")))?;
    resolved.validate().map_err(Failure::config)?;
    Ok(resolved)
}

/// Logs the settings a command actually runs with.
pub fn log_resolved(command: &str, value: &impl Serialize) {
    match serde_json::to_string(value) {
        Ok(json) => info!("{command} config: {json}"),
        Err(e) => warn!("cannot serialize {command} config: {e}"),
    }
}
