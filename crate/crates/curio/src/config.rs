//! Run configuration: one TOML file with a section per module, all
//! defaults overridable, validated before anything runs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PpoConfig;
use crate::captioner::CaptionerConfig;
use crate::curiosity::CuriosityConfig;
use crate::perception::PerceptionConfig;
use crate::speaker::SpeakerPolicy;
use crate::world::{GenConfig, MotionConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings for the evaluation pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Seed for the similarity-table token embeddings.
    pub similarity_seed: u64,
    /// Steps per surprisal window.
    pub surprisal_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            similarity_seed: 0x5111,
            surprisal_window: crate::metrics::SURPRISAL_WINDOW,
        }
    }
}

/// The full run configuration. Every field has a documented default, so
/// an empty file is a valid config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; derives every stream used in a run.
    pub seed: u64,
    pub world: GenConfig,
    pub motion: MotionConfig,
    pub perception: PerceptionConfig,
    pub curiosity: CuriosityConfig,
    pub ppo: PpoConfig,
    pub speaker: SpeakerPolicy,
    pub captioner: CaptionerConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    /// Parses and fully validates a TOML config file.
    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.curiosity
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.ppo.validate().map_err(|e| invalid(e.to_string()))?;
        self.speaker.validate().map_err(|e| invalid(e.to_string()))?;
        self.captioner
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.world.grid_size < 16 {
            return Err(invalid(format!(
                "world.grid_size {} must be at least 16",
                self.world.grid_size
            )));
        }
        if self.world.rooms < 2 {
            return Err(invalid(format!(
                "world.rooms {} must be at least 2",
                self.world.rooms
            )));
        }
        if self.world.max_range <= 0.0 {
            return Err(invalid(format!(
                "world.max_range {} must be positive",
                self.world.max_range
            )));
        }
        if self.perception.frame_h < 8 || self.perception.frame_w < 8 {
            return Err(invalid(format!(
                "perception.frame_h/frame_w {}x{} must be at least 8x8",
                self.perception.frame_h, self.perception.frame_w
            )));
        }
        if self.perception.feature_dim == 0 {
            return Err(invalid("perception.feature_dim must be positive".into()));
        }
        if self.metrics.surprisal_window == 0 {
            return Err(invalid("metrics.surprisal_window must be positive".into()));
        }
        if self.motion.rotate_deg <= 0.0 || self.motion.forward_m <= 0.0 {
            return Err(invalid(format!(
                "motion.rotate_deg {} and motion.forward_m {} must be positive",
                self.motion.rotate_deg, self.motion.forward_m
            )));
        }
        Ok(())
    }

    /// Serializes the config back to TOML; `parse(dump(c)) == c`.
    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_all_defaults() {
        let config = RunConfig::parse("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.ppo.rollout, 128);
        assert_eq!(config.ppo.epochs, 3);
        assert!((config.ppo.lr - 1e-4).abs() < 1e-18);
        assert!((config.ppo.lambda - 0.1).abs() < 1e-12);
        assert!((config.curiosity.beta - 0.2).abs() < 1e-12);
        assert!((config.curiosity.penalty - 0.01).abs() < 1e-12);
        assert_eq!(config.curiosity.repeat_threshold, 5);
    }

    #[test]
    fn out_of_range_beta_names_the_field() {
        let err = RunConfig::parse("[curiosity]\nbeta = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("curiosity.beta"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::parse("[ppo]\nlearning_rate = 0.1\n"),
            Err(ConfigError::Syntax(_))
        ));
        assert!(RunConfig::parse("[typo_section]\nx = 1\n").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut config = RunConfig::default();
        config.seed = 99;
        config.ppo.updates = 5;
        config.speaker.threshold = 3.0;
        let reparsed = RunConfig::parse(&config.dump()).unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let config = RunConfig::parse("seed = 7\n[world]\ngrid_size = 32\n").unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.world.grid_size, 32);
        assert_eq!(config.world.rooms, GenConfig::default().rooms);
        assert_eq!(config.perception, PerceptionConfig::default());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = RunConfig::parse_file(Path::new("/nonexistent/config.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }

    #[test]
    fn module_invariants_are_enforced() {
        assert!(RunConfig::parse("[ppo]\nclip = 0.0\n").is_err());
        assert!(RunConfig::parse("[captioner]\nlayers = 5\n").is_err());
        assert!(RunConfig::parse("[speaker]\nwindow = 0\n").is_err());
        assert!(RunConfig::parse("[world]\ngrid_size = 4\n").is_err());
    }
}
