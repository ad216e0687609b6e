//! Flat `key=value` run configuration covering every tunable of the engine.

use std::fmt::Display;
use std::str::FromStr;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::episode::EpisodeConfig;
use crate::grpo::{ObjectiveConfig, DEFAULT_STD_FLOOR};
use crate::metrics::DEFAULT_BOUNDARY_TOLERANCE;
use crate::reward::RewardConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("line {0}: expected `key=value`")]
    Syntax(usize),
    #[error("artifact has no embedded `config` object")]
    MissingEmbedded,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
    pub objective: ObjectiveConfig,
    pub std_floor: f64,
    pub boundary_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reward: RewardConfig::default(),
            episode: EpisodeConfig::default(),
            objective: ObjectiveConfig::default(),
            std_floor: DEFAULT_STD_FLOOR,
            boundary_tolerance: DEFAULT_BOUNDARY_TOLERANCE,
        }
    }
}

/// Every key, in the order they are written out.
pub const KEYS: &[&str] = &[
    "alpha",
    "p",
    "max_turns",
    "sim_threshold",
    "iou_threshold",
    "l1_threshold_px",
    "l1_mode",
    "point_dist_threshold_px",
    "keyframe_edge",
    "max_search_turns",
    "topk_text",
    "topk_image",
    "frame_count",
    "lowres_edge",
    "highres_edge",
    "max_generated_tokens",
    "max_feedback_tokens",
    "max_refused_searches",
    "epsilon",
    "ratio_mode",
    "aggregation",
    "kl_coef",
    "std_floor",
    "boundary_tolerance",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn lower<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let r = &mut self.reward;
        let e = &mut self.episode;
        let o = &mut self.objective;
        match key {
            "alpha" => r.alpha = parse(key, value)?,
            "p" => r.p = parse(key, value)?,
            "max_turns" => r.max_turns = parse(key, value)?,
            "sim_threshold" => r.sim_threshold = parse(key, value)?,
            "iou_threshold" => r.iou_threshold = parse(key, value)?,
            "l1_threshold_px" => r.l1_threshold_px = parse(key, value)?,
            "l1_mode" => r.l1_mode = parse(key, value)?,
            "point_dist_threshold_px" => r.point_dist_threshold_px = parse(key, value)?,
            "keyframe_edge" => {
                r.keyframe_edge = match value.trim() {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "max_search_turns" => e.max_search_turns = parse(key, value)?,
            "topk_text" => e.topk_text = parse(key, value)?,
            "topk_image" => e.topk_image = parse(key, value)?,
            "frame_count" => e.frame_count = parse(key, value)?,
            "lowres_edge" => e.lowres_edge = parse(key, value)?,
            "highres_edge" => e.highres_edge = parse(key, value)?,
            "max_generated_tokens" => e.max_generated_tokens = parse(key, value)?,
            "max_feedback_tokens" => e.max_feedback_tokens = parse(key, value)?,
            "max_refused_searches" => e.max_refused_searches = parse(key, value)?,
            "epsilon" => o.epsilon = parse(key, value)?,
            "ratio_mode" => o.ratio_mode = parse(key, value)?,
            "aggregation" => o.aggregation = parse(key, value)?,
            "kl_coef" => o.kl_coef = parse(key, value)?,
            "std_floor" => self.std_floor = parse(key, value)?,
            "boundary_tolerance" => self.boundary_tolerance = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let r = &self.reward;
        let e = &self.episode;
        let o = &self.objective;
        Some(match key {
            "alpha" => r.alpha.to_string(),
            "p" => r.p.to_string(),
            "max_turns" => r.max_turns.to_string(),
            "sim_threshold" => r.sim_threshold.to_string(),
            "iou_threshold" => r.iou_threshold.to_string(),
            "l1_threshold_px" => r.l1_threshold_px.to_string(),
            "l1_mode" => lower(&r.l1_mode),
            "point_dist_threshold_px" => r.point_dist_threshold_px.to_string(),
            "keyframe_edge" => r.keyframe_edge.map_or("none".to_string(), |v| v.to_string()),
            "max_search_turns" => e.max_search_turns.to_string(),
            "topk_text" => e.topk_text.to_string(),
            "topk_image" => e.topk_image.to_string(),
            "frame_count" => e.frame_count.to_string(),
            "lowres_edge" => e.lowres_edge.to_string(),
            "highres_edge" => e.highres_edge.to_string(),
            "max_generated_tokens" => e.max_generated_tokens.to_string(),
            "max_feedback_tokens" => e.max_feedback_tokens.to_string(),
            "max_refused_searches" => e.max_refused_searches.to_string(),
            "epsilon" => o.epsilon.to_string(),
            "ratio_mode" => lower(&o.ratio_mode),
            "aggregation" => lower(&o.aggregation),
            "kl_coef" => o.kl_coef.to_string(),
            "std_floor" => self.std_floor.to_string(),
            "boundary_tolerance" => self.boundary_tolerance.to_string(),
            _ => return None,
        })
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    /// Unset keys keep their defaults.
    pub fn parse_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    /// String-valued JSON object with one member per key.
    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = KEYS
            .iter()
            .map(|k| (k.to_string(), Value::String(self.get(k).unwrap_or_default())))
            .collect();
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let obj = value.as_object().ok_or(ConfigError::MissingEmbedded)?;
        let mut cfg = RunConfig::default();
        for (k, v) in obj {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            cfg.set(k, &text)?;
        }
        Ok(cfg)
    }

    /// Reads the `config` member echoed into an output artifact.
    pub fn from_artifact(artifact: &Value) -> Result<Self, ConfigError> {
        Self::from_json(artifact.get("config").ok_or(ConfigError::MissingEmbedded)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.episode
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let eps = self.objective.epsilon;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ConfigError::Invalid(format!("epsilon must lie in (0, 1), got {eps}")));
        }
        if !(self.std_floor > 0.0) {
            return Err(ConfigError::Invalid("std_floor must be positive".into()));
        }
        if !(self.objective.kl_coef >= 0.0) {
            return Err(ConfigError::Invalid("kl_coef must be non-negative".into()));
        }
        if !(self.boundary_tolerance >= 0.0) {
            return Err(ConfigError::Invalid("boundary_tolerance must be non-negative".into()));
        }
        Ok(())
    }
}
