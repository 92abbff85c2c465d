//! Single-file run configuration with dotted-key overrides.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::baselines::BaselineConfig;
use crate::bench::EvalConfig;
use crate::objective::LossConfig;
use crate::perception::{PerceptionConfig, RigKind};
use crate::policy::ArchConfig;
use crate::sim::{DynamicsConfig, ObstacleSpec, ScenarioConfig, SpeedSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{key}`{}", .suggestion.as_ref().map(|s| format!("; did you mean `{}`?", s)).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("invalid override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub scenario: ScenarioConfig,
    pub dynamics: DynamicsConfig,
    pub perception: PerceptionConfig,
    pub arch: ArchConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
}

impl Config {
    /// Desk-scale preset: four agents, one obstacle, 16×16 cameras and a
    /// small encoder.
    pub fn smoke() -> Self {
        let mut c = Config::default();
        c.train.batch_size = 32;
        c.train.horizon = 64;
        c.train.iterations = 2000;
        c.train.agents_min = 4;
        c.train.agents_max = 4;
        c.train.checkpoint_every = 500;
        c.scenario.n_agents = 4;
        c.scenario.ring_radius = 3.0;
        c.scenario.obstacles = ObstacleSpec::Count { n: 1 };
        c.scenario.obstacle_radius = [0.3, 0.6];
        c.scenario.speed = SpeedSpec::Fixed { value: 1.5 };
        c.scenario.initial_speed_fraction = 1.0;
        c.perception.camera_width = 16;
        c.perception.camera_height = 16;
        c.perception.pano_width = 32;
        c.perception.pano_height = 8;
        c.perception.preprocess.pool = 2;
        c.arch = ArchConfig {
            input_height: 4,
            input_width: 16,
            channels: vec![4, 8, 8],
            first_kernel: [3, 3],
            strides: vec![[2, 2], [2, 2], [1, 1]],
            d_z: 16,
            d_h: 16,
        };
        c
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            other => Err(ConfigError::Invalid(format!("unknown preset `{}` (expected default or smoke)", other))),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate()?;
        self.loss.validate()?;
        self.scenario.validate().map_err(|e| e.to_string())?;
        self.dynamics.validate().map_err(|e| e.to_string())?;
        let p = &self.perception;
        p.preprocess.validate(p.pano_width, p.pano_height).map_err(|e| e.to_string())?;
        self.arch.validate().map_err(|e| e.to_string())?;
        self.baseline.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn to_value(&self) -> Value {
        Value::try_from(self).expect("config serializes")
    }

    /// Parses `text` on top of `base`, rejecting unknown keys.
    pub fn from_text_over(base: &Config, text: &str) -> Result<Self, ConfigError> {
        let user: Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let known = known_keys();
        for key in leaf_paths(&user) {
            check_key(&key, &known)?;
        }
        let mut v = base.to_value();
        merge(&mut v, user);
        from_value(v)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_text_over(&Config::default(), text)
    }

    pub fn load_over(base: &Config, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_text_over(base, &text)
    }

    /// Applies `key=value` overrides in order; values parse as TOML literals
    /// and fall back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let known = known_keys();
        let mut v = self.to_value();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let key = key.trim();
            check_key(key, &known)?;
            let value = parse_literal(raw.trim());
            set_path(&mut v, key, value);
        }
        from_value(v)
    }

    /// Every dotted key with its value in `self`, sorted.
    pub fn key_listing(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten(&self.to_value(), String::new(), &mut out);
        out
    }
}

fn from_value(v: Value) -> Result<Config, ConfigError> {
    let cfg: Config = v.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

fn parse_literal(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("x = {}", raw))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let t = cur.as_table_mut().expect("known keys address tables");
        cur = t.entry(p.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    cur.as_table_mut().expect("known keys address tables").insert(parts[parts.len() - 1].to_string(), value);
}

fn leaf_paths(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    flatten(v, String::new(), &mut out);
    out.into_iter().map(|(k, _)| k).collect()
}

fn flatten(v: &Value, prefix: String, out: &mut Vec<(String, String)>) {
    match v {
        Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{}.{}", prefix, k) };
                flatten(x, key, out);
            }
        }
        other => out.push((prefix, other.to_string())),
    }
}

/// Keys of every variant shape a config can take.
fn known_keys() -> BTreeSet<String> {
    let mut samples = vec![Config::default(), Config::smoke()];
    let mut alt = Config::default();
    alt.scenario.obstacles = ObstacleSpec::Count { n: 1 };
    alt.scenario.speed = SpeedSpec::Fixed { value: 1.0 };
    alt.perception.preprocess.beta = Some(1.0);
    alt.perception.preprocess.gamma = Some(0.0);
    alt.perception.rig = RigKind::Forward;
    samples.push(alt);
    samples.iter().flat_map(|c| leaf_paths(&c.to_value())).collect()
}

/// Every dotted key a config file or override may set.
pub fn valid_keys() -> Vec<String> {
    known_keys().into_iter().collect()
}

fn check_key(key: &str, known: &BTreeSet<String>) -> Result<(), ConfigError> {
    if known.contains(key) {
        return Ok(());
    }
    let suggestion = known
        .iter()
        .map(|k| (strsim::levenshtein(key, k), k))
        .min()
        .map(|(_, k)| k.clone());
    Err(ConfigError::UnknownKey { key: key.to_string(), suggestion })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let c = Config::default();
        assert_eq!(Config::from_text(&c.to_text()).unwrap(), c);
        let s = Config::smoke();
        assert_eq!(Config::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn weight_echo_is_exact() {
        let text = Config::default().to_text();
        let section = text.split("[loss.weights]").nth(1).unwrap();
        for line in ["velocity = 1.0", "vel_pred = 2.0", "collision = 5.0", "obstacle = 2.0", "acc = 0.01", "jerk = 0.001"] {
            assert!(section.lines().any(|l| l == line), "{}", line);
        }
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let e = Config::from_text("[train]\nbatch_sise = 8\n").unwrap_err();
        match e {
            ConfigError::UnknownKey { key, suggestion } => {
                assert_eq!(key, "train.batch_sise");
                assert_eq!(suggestion.as_deref(), Some("train.batch_size"));
            }
            other => panic!("{}", other),
        }
        assert!(matches!(
            Config::default().with_overrides(&["loss.weights.colision=1"]),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn overrides_win_and_parse_types() {
        let c = Config::default()
            .with_overrides(&["train.batch_size=8", "loss.weights.collision=7.5", "perception.rig=forward", "scenario.obstacles.kind=count", "scenario.obstacles.n=3"])
            .unwrap();
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.loss.weights.collision, 7.5);
        assert_eq!(c.perception.rig, RigKind::Forward);
        assert_eq!(c.scenario.obstacles, ObstacleSpec::Count { n: 3 });
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_text("[train]\nhorizon = 16\n").unwrap();
        assert_eq!(c.train.horizon, 16);
        assert_eq!(c.train.batch_size, 1024);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(Config::default().with_overrides(&["train.grad_decay=1.5"]), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::default().with_overrides(&["nonsense"]), Err(ConfigError::Override(_))));
    }

    #[test]
    fn listing_covers_every_section() {
        let keys = Config::default().key_listing();
        for s in ["train.", "loss.", "scenario.", "dynamics.", "perception.", "arch.", "baseline.", "eval."] {
            assert!(keys.iter().any(|(k, _)| k.starts_with(s)), "{}", s);
        }
    }
}
