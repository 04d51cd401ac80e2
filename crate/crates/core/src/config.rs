//! Run configuration: one flat TOML table. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AdamConfig;
use crate::augment::NoiseConfig;
use crate::curriculum::HorizonRule;
use crate::embedstore::PrecomputeParams;
use crate::environment::EnvConfig;
use crate::trainer::{TrainerConfig, UpdateMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config i/o error: {0}")]
    Io(String),
}

impl ConfigError {
    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) | ConfigError::Invalid { key: k, .. } => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: Option<String>,
    pub store: Option<String>,
    pub seed: u64,

    pub optimiser: String,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub workers: usize,
    pub rollout_len: usize,
    /// Encoder pooling stride of the original feature extractor; recorded,
    /// unused by the synthetic encoder.
    pub preprocessing_stride: u32,
    pub node_spacing_m: f64,
    pub rotation_granularity_deg: f64,
    /// Checked against the graph when set.
    pub n_actions: Option<usize>,
    pub rotations: u32,
    pub max_rotation_deg: f64,
    pub sigma_global: f64,
    pub theta_global: f64,
    pub sigma_local: f64,
    pub p_stutter: f64,
    pub n_c: u32,
    pub curriculum_threshold: f64,

    pub window: usize,
    pub horizon_min_steps: u32,
    pub horizon_per_hop: u32,
    pub value_loss_weight: f64,
    pub probe_weight: f64,
    pub reset_noise_each_episode: bool,
    pub noise_goal: bool,
    pub goal_radius_m: f64,
    pub precision: Precision,
    pub width: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub update_mode: String,
    pub total_env_steps: u64,
    pub metrics_every: u64,
    pub stop_after_final_level_steps: Option<u64>,

    pub embedding_dim: usize,
    /// Seed of the synthetic encoder and frame layout; separate from `seed`
    /// so runs with different seeds share one world.
    pub store_seed: u64,
    pub frames_per_edge: u32,
    pub fd_delta: f64,

    pub eval_tasks: usize,
    pub eval_min_hops: u32,
    pub episodes_per_task: usize,
    pub eval_greedy: bool,
    pub fixed_goal_starts: usize,
    pub density_radius_m: f64,
    pub probe_episodes: usize,
    pub probe_min_hops: u32,
    pub ratio_bin: f64,
    pub distance_bin_m: f64,

    pub bench_workers: usize,
    pub bench_duration_s: f64,
    pub bench_warmup_s: f64,
    pub bench_forward: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainerConfig::default();
        let e = EnvConfig::default();
        let p = PrecomputeParams::default();
        let a = AdamConfig::default();
        RunConfig {
            graph: None,
            store: None,
            seed: 0,
            optimiser: "adam".into(),
            lr: t.lr,
            gamma: t.gamma,
            entropy_weight: t.entropy_weight,
            workers: t.workers,
            rollout_len: t.rollout_len,
            preprocessing_stride: 3,
            node_spacing_m: 1.0,
            rotation_granularity_deg: 90.0,
            n_actions: None,
            rotations: p.rotations,
            max_rotation_deg: p.max_rotation_deg,
            sigma_global: e.noise.sigma_global,
            theta_global: e.noise.theta_global,
            sigma_local: e.noise.sigma_local,
            p_stutter: e.p_stutter,
            n_c: t.n_c,
            curriculum_threshold: t.threshold,
            window: t.window,
            horizon_min_steps: t.horizon.min_steps,
            horizon_per_hop: t.horizon.per_hop,
            value_loss_weight: t.value_loss_weight,
            probe_weight: t.probe_weight,
            reset_noise_each_episode: e.reset_noise_each_episode,
            noise_goal: e.noise_goal,
            goal_radius_m: e.goal_radius_m,
            precision: Precision::F64,
            width: t.width,
            adam_beta1: a.beta1,
            adam_beta2: a.beta2,
            adam_eps: a.eps,
            update_mode: "locked".into(),
            total_env_steps: t.total_env_steps,
            metrics_every: t.metrics_every,
            stop_after_final_level_steps: None,
            embedding_dim: p.dim,
            store_seed: 0,
            frames_per_edge: 30,
            fd_delta: p.fd_delta,
            eval_tasks: 500,
            eval_min_hops: 1,
            episodes_per_task: 1,
            eval_greedy: false,
            fixed_goal_starts: 11,
            density_radius_m: 3.0,
            probe_episodes: 1000,
            probe_min_hops: 10,
            ratio_bin: 0.1,
            distance_bin_m: 10.0,
            bench_workers: 8,
            bench_duration_s: 30.0,
            bench_warmup_s: 1.0,
            bench_forward: true,
        }
    }
}

fn unknown_key(msg: &str) -> Option<String> {
    let rest = msg.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.into(),
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

impl RunConfig {
    /// Parses `text` (may be empty), applies `key=value` overrides in order,
    /// and validates the result.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), override_value(v.trim()));
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| {
            let msg = e.to_string();
            match unknown_key(&msg) {
                Some(k) => ConfigError::UnknownKey(k),
                None => ConfigError::Parse(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.optimiser != "adam" {
            return Err(invalid("optimiser", format!("only \"adam\" is supported, got {:?}", self.optimiser)));
        }
        if self.rotation_granularity_deg != 90.0 {
            return Err(invalid("rotation_granularity_deg", "turn actions are 90 degrees"));
        }
        let pos = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(k, format!("{v} must be positive")))
            }
        };
        let nonneg = |k: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(k, format!("{v} must be finite and non-negative")))
            }
        };
        let prob = |k: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(k, format!("{v} outside [0, 1]")))
            }
        };
        let count = |k: &str, v: u64| if v > 0 { Ok(()) } else { Err(invalid(k, "must be at least 1")) };
        nonneg("lr", self.lr)?;
        prob("gamma", self.gamma)?;
        nonneg("entropy_weight", self.entropy_weight)?;
        nonneg("value_loss_weight", self.value_loss_weight)?;
        nonneg("probe_weight", self.probe_weight)?;
        count("workers", self.workers as u64)?;
        count("rollout_len", self.rollout_len as u64)?;
        count("preprocessing_stride", self.preprocessing_stride as u64)?;
        pos("node_spacing_m", self.node_spacing_m)?;
        count("rotations", self.rotations as u64)?;
        nonneg("max_rotation_deg", self.max_rotation_deg)?;
        nonneg("sigma_global", self.sigma_global)?;
        prob("theta_global", self.theta_global)?;
        nonneg("sigma_local", self.sigma_local)?;
        prob("p_stutter", self.p_stutter)?;
        count("n_c", self.n_c as u64)?;
        prob("curriculum_threshold", self.curriculum_threshold)?;
        count("window", self.window as u64)?;
        nonneg("goal_radius_m", self.goal_radius_m)?;
        count("width", self.width as u64)?;
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(invalid("adam_beta1", "outside [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid("adam_beta2", "outside [0, 1)"));
        }
        pos("adam_eps", self.adam_eps)?;
        self.update_mode()?;
        count("total_env_steps", self.total_env_steps)?;
        count("metrics_every", self.metrics_every)?;
        count("embedding_dim", self.embedding_dim as u64)?;
        count("frames_per_edge", self.frames_per_edge as u64)?;
        pos("fd_delta", self.fd_delta)?;
        count("eval_tasks", self.eval_tasks as u64)?;
        count("episodes_per_task", self.episodes_per_task as u64)?;
        count("fixed_goal_starts", self.fixed_goal_starts as u64)?;
        nonneg("density_radius_m", self.density_radius_m)?;
        count("probe_episodes", self.probe_episodes as u64)?;
        pos("ratio_bin", self.ratio_bin)?;
        pos("distance_bin_m", self.distance_bin_m)?;
        count("bench_workers", self.bench_workers as u64)?;
        nonneg("bench_duration_s", self.bench_duration_s)?;
        nonneg("bench_warmup_s", self.bench_warmup_s)?;
        Ok(())
    }

    pub fn update_mode(&self) -> Result<UpdateMode, ConfigError> {
        match self.update_mode.as_str() {
            "locked" => Ok(UpdateMode::Locked),
            "relaxed" => Ok(UpdateMode::Relaxed),
            other => Err(invalid("update_mode", format!("expected \"locked\" or \"relaxed\", got {other:?}"))),
        }
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig, ConfigError> {
        Ok(TrainerConfig {
            gamma: self.gamma,
            rollout_len: self.rollout_len,
            entropy_weight: self.entropy_weight,
            value_loss_weight: self.value_loss_weight,
            probe_weight: self.probe_weight,
            workers: self.workers,
            lr: self.lr,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            width: self.width,
            total_env_steps: self.total_env_steps,
            seed: self.seed,
            metrics_every: self.metrics_every,
            mode: self.update_mode()?,
            n_c: self.n_c,
            window: self.window,
            threshold: self.curriculum_threshold,
            horizon: self.horizon_rule(),
            stop_after_final_level_steps: self.stop_after_final_level_steps,
        })
    }

    pub fn horizon_rule(&self) -> HorizonRule {
        HorizonRule {
            min_steps: self.horizon_min_steps,
            per_hop: self.horizon_per_hop,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            p_stutter: self.p_stutter,
            noise: NoiseConfig {
                sigma_global: self.sigma_global,
                theta_global: self.theta_global,
                sigma_local: self.sigma_local,
            },
            reset_noise_each_episode: self.reset_noise_each_episode,
            noise_goal: self.noise_goal,
            goal_radius_m: self.goal_radius_m,
        }
    }

    pub fn precompute_params(&self) -> PrecomputeParams {
        PrecomputeParams {
            rotations: self.rotations,
            dim: self.embedding_dim,
            seed: self.store_seed,
            max_rotation_deg: self.max_rotation_deg,
            fd_delta: self.fd_delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_hyperparameter_table() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.entropy_weight, 5e-4);
        assert_eq!(c.workers, 128);
        assert_eq!(c.rollout_len, 50);
        assert_eq!(c.preprocessing_stride, 3);
        assert_eq!(c.node_spacing_m, 1.0);
        assert_eq!(c.rotation_granularity_deg, 90.0);
        assert_eq!(c.rotations, 5);
        assert_eq!(c.max_rotation_deg, 8.0);
        assert_eq!((c.sigma_global, c.theta_global, c.sigma_local), (0.01, 0.15, 0.01));
        assert_eq!(c.p_stutter, 0.05);
        assert_eq!(c.n_c, 100);
        assert_eq!(c.curriculum_threshold, 0.8);
        assert_eq!(c.optimiser, "adam");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("lr = 1e-3\nlearning_rate = 2\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("learning_rate".into()));
        let e = RunConfig::from_toml_with("", &["bogus=1".into()]).unwrap_err();
        assert_eq!(e.key(), Some("bogus"));
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::from_toml_with(
            "workers = 4\n",
            &["workers=1".into(), "precision=f32".into(), "update_mode=relaxed".into(), "graph=g.txt".into()],
        )
        .unwrap();
        assert_eq!(c.workers, 1);
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.trainer_config().unwrap().mode, UpdateMode::Relaxed);
        assert_eq!(c.graph.as_deref(), Some("g.txt"));
    }

    #[test]
    fn invalid_values_name_their_key() {
        for (text, key) in [
            ("gamma = 1.5", "gamma"),
            ("workers = 0", "workers"),
            ("p_stutter = -0.1", "p_stutter"),
            ("update_mode = \"fast\"", "update_mode"),
            ("optimiser = \"sgd\"", "optimiser"),
        ] {
            assert_eq!(RunConfig::from_toml(text).unwrap_err().key(), Some(key), "{text}");
        }
        assert!(matches!(RunConfig::from_toml("lr = \"x\""), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            seed: 9,
            stop_after_final_level_steps: Some(5),
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
