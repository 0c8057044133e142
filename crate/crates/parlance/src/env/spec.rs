//! Episode configuration: arities, action set, vocabulary, observability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("spec error: {0} landmarks but palette has only {1} colors")]
    PaletteTooSmallForLandmarks(usize, usize),
    #[error("spec error: {0} agents but palette has only {1} colors")]
    PaletteTooSmallForAgents(usize, usize),
    #[error("spec error: vocabulary must have at least 2 symbols (silence plus one word)")]
    VocabTooSmall,
    #[error("spec error: horizon must be at least 1")]
    ZeroHorizon,
    #[error("spec error: at least one agent and one landmark required")]
    EmptyWorld,
    #[error("spec error: action set must not be empty")]
    NoActions,
}

/// What a goal asks its recipient to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Goto,
    LookAt,
    DoNothing,
}

impl ActionKind {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            ActionKind::Goto => 0,
            ActionKind::LookAt => 1,
            ActionKind::DoNothing => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Goto => "goto",
            ActionKind::LookAt => "look_at",
            ActionKind::DoNothing => "do_nothing",
        }
    }
}

/// Which channels agents can read.
///
/// * `Comm`: other agents' physical state is hidden; the symbol channel is
///   open. Communication is the only way to convey a goal.
/// * `GazeVisible`: agents see each other (position, velocity, gaze); the
///   symbol channel is closed. Pointing becomes possible.
/// * `PositionVisible`: agents see each other's position and velocity but
///   not gaze; symbol channel closed. Guiding/pushing remain.
/// * `Blind`: agents see only landmarks and themselves; symbol channel
///   closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservabilityMode {
    Comm,
    GazeVisible,
    PositionVisible,
    Blind,
}

impl ObservabilityMode {
    pub fn comm_enabled(self) -> bool {
        matches!(self, ObservabilityMode::Comm)
    }

    pub fn others_visible(self) -> bool {
        matches!(self, ObservabilityMode::GazeVisible | ObservabilityMode::PositionVisible)
    }

    pub fn gaze_visible(self) -> bool {
        matches!(self, ObservabilityMode::GazeVisible)
    }
}

/// One environment configuration to sample episodes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    /// Number of agents (N).
    #[serde(default = "default_agents")]
    pub agents: usize,
    /// Number of landmarks (M).
    #[serde(default = "default_landmarks")]
    pub landmarks: usize,
    /// Actions goals may ask for.
    #[serde(default = "default_actions")]
    pub actions: Vec<ActionKind>,
    /// Vocabulary size K, including the silence symbol at index 0.
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    /// Episode length T in timesteps.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_mode")]
    pub mode: ObservabilityMode,
    /// Colors entities may take. Landmark colors are drawn distinct within
    /// an episode, and so are agent colors, so references are unambiguous.
    #[serde(default = "default_palette")]
    pub palette: Vec<[f64; 3]>,
}

fn default_agents() -> usize {
    2
}
fn default_landmarks() -> usize {
    3
}
fn default_actions() -> Vec<ActionKind> {
    vec![ActionKind::Goto]
}
fn default_vocab() -> usize {
    20
}
fn default_horizon() -> usize {
    16
}
fn default_mode() -> ObservabilityMode {
    ObservabilityMode::Comm
}

/// Red, green, blue.
pub fn default_palette() -> Vec<[f64; 3]> {
    vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            agents: default_agents(),
            landmarks: default_landmarks(),
            actions: default_actions(),
            vocab: default_vocab(),
            horizon: default_horizon(),
            mode: default_mode(),
            palette: default_palette(),
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.agents == 0 || self.landmarks == 0 {
            return Err(SpecError::EmptyWorld);
        }
        if self.landmarks > self.palette.len() {
            return Err(SpecError::PaletteTooSmallForLandmarks(self.landmarks, self.palette.len()));
        }
        if self.agents > self.palette.len() {
            return Err(SpecError::PaletteTooSmallForAgents(self.agents, self.palette.len()));
        }
        if self.vocab < 2 {
            return Err(SpecError::VocabTooSmall);
        }
        if self.horizon == 0 {
            return Err(SpecError::ZeroHorizon);
        }
        if self.actions.is_empty() {
            return Err(SpecError::NoActions);
        }
        Ok(())
    }

    pub fn entities(&self) -> usize {
        self.agents + self.landmarks
    }
}

/// A private instruction held by one agent, possibly about another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub action: ActionKind,
    /// World-frame location the action refers to; coincides with a landmark.
    pub target: [f64; 2],
    /// Index of that landmark in the world.
    pub target_landmark: usize,
    /// Agent that should perform the action.
    pub recipient: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        assert_eq!(EpisodeSpec::default().validate(), Ok(()));
    }

    #[test]
    fn palette_too_small_is_an_error() {
        let spec = EpisodeSpec { landmarks: 4, ..EpisodeSpec::default() };
        assert_eq!(
            spec.validate(),
            Err(SpecError::PaletteTooSmallForLandmarks(4, 3))
        );
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let r: Result<EpisodeSpec, _> = serde_json::from_str(r#"{"agents": 2, "bogus": 1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn missing_keys_take_defaults() {
        let s: EpisodeSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(s, EpisodeSpec::default());
    }
}
