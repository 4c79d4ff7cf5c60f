//! Speaker policies: per-step predicates that decide when the captioner
//! fires, plus loquacity accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curiosity::RewardRecord;
use crate::world::Observation;

/// Reward records considered by the curiosity trigger.
pub const SURPRISAL_WINDOW: usize = 20;

/// Minimum image-area fraction for an object to count toward the object
/// trigger.
pub const DEFAULT_MIN_AREA: f32 = 0.01;

#[derive(Debug, Error)]
pub enum SpeakerError {
    #[error("invalid speaker config: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Object,
    Depth,
    Curiosity,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Object => "object",
            PolicyKind::Depth => "depth",
            PolicyKind::Curiosity => "curiosity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "object" => Some(PolicyKind::Object),
            "depth" => Some(PolicyKind::Depth),
            "curiosity" => Some(PolicyKind::Curiosity),
            _ => None,
        }
    }
}

/// One speaking rule: a kind, its threshold, and trigger options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerPolicy {
    pub kind: PolicyKind,
    /// Object count O, normalized mean depth D, or surprisal sum S,
    /// depending on `kind`.
    pub threshold: f64,
    /// Reward records summed by the curiosity trigger.
    pub window: usize,
    /// Minimum area fraction for the object trigger.
    pub min_area: f32,
    /// Steps to stay silent after speaking; 0 disables the cooldown.
    pub refractory: usize,
}

impl Default for SpeakerPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Object,
            threshold: 1.0,
            window: SURPRISAL_WINDOW,
            min_area: DEFAULT_MIN_AREA,
            refractory: 0,
        }
    }
}

impl SpeakerPolicy {
    pub fn new(kind: PolicyKind, threshold: f64) -> Self {
        Self {
            kind,
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpeakerError> {
        if self.window == 0 {
            return Err(SpeakerError::BadConfig("speaker.window must be at least 1".into()));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(SpeakerError::BadConfig(format!(
                "speaker.threshold {} must be finite and non-negative",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_area) {
            return Err(SpeakerError::BadConfig(format!(
                "speaker.min_area {} outside [0, 1]",
                self.min_area
            )));
        }
        Ok(())
    }

    /// The value the predicate compares against the threshold.
    pub fn trigger_value(&self, obs: &Observation, rewards: &[RewardRecord]) -> f64 {
        match self.kind {
            PolicyKind::Object => obs
                .visible
                .iter()
                .filter(|v| v.area_frac >= self.min_area)
                .count() as f64,
            PolicyKind::Depth => {
                if obs.depth_norm.is_empty() {
                    0.0
                } else {
                    obs.depth_norm.iter().map(|&d| d as f64).sum::<f64>()
                        / obs.depth_norm.len() as f64
                }
            }
            PolicyKind::Curiosity => {
                let start = rewards.len().saturating_sub(self.window);
                rewards[start..].iter().map(|r| r.raw_surprisal).sum()
            }
        }
    }
}

/// One speaker activation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEvent {
    pub step: usize,
    pub kind: PolicyKind,
    pub threshold: f64,
    /// Count, mean depth, or surprisal sum that crossed the threshold.
    pub value: f64,
    /// Index of the caption generated for this event, once produced.
    pub caption: Option<usize>,
}

/// Evaluates the policy at one step. Object counts are inclusive
/// ("at least O"); depth and curiosity are strict ("above").
pub fn should_speak(
    policy: &SpeakerPolicy,
    obs: &Observation,
    rewards: &[RewardRecord],
) -> (bool, f64) {
    let value = policy.trigger_value(obs, rewards);
    let fire = match policy.kind {
        PolicyKind::Object => value >= policy.threshold,
        PolicyKind::Depth | PolicyKind::Curiosity => value > policy.threshold,
    };
    (fire, value)
}

/// Mean number of speaker activations per episode.
pub fn loquacity(events_per_episode: &[Vec<SpeakerEvent>]) -> f64 {
    if events_per_episode.is_empty() {
        return 0.0;
    }
    events_per_episode.iter().map(Vec::len).sum::<usize>() as f64
        / events_per_episode.len() as f64
}
