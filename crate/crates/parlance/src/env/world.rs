//! World sampling and goal assignment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Site, StreamKey, Streams};

use super::spec::{ActionKind, EpisodeSpec, Goal, SpecError};

pub const AGENT_RADIUS: f64 = 0.08;
pub const LANDMARK_RADIUS: f64 = 0.04;
/// Half-width of the square arena entities spawn in.
pub const ARENA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Landmark,
}

/// Physical state of one entity. Landmarks keep zero velocity and gaze for
/// the whole episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub kind: EntityKind,
    pub p: [f64; 2],
    pub pdot: [f64; 2],
    /// Gaze location (agents only; zero for landmarks).
    pub v: [f64; 2],
    pub color: [f64; 3],
    pub radius: f64,
}

/// One sampled episode instantiation: initial entity states, per-agent
/// private rotation frames, and (after [`assign_goals`]) the goal list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: EpisodeSpec,
    pub agents: Vec<EntityState>,
    pub landmarks: Vec<EntityState>,
    /// Row-major private rotation matrix per agent.
    pub frames: Vec<[f64; 4]>,
    pub goals: Vec<Goal>,
}

impl World {
    /// Rotate a world-frame vector into agent `i`'s reference frame:
    /// `R_i * x` in column convention.
    pub fn to_frame(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        let r = &self.frames[i];
        [r[0] * x[0] + r[1] * x[1], r[2] * x[0] + r[3] * x[1]]
    }

    /// Rotate an agent-frame vector back to the world frame (`R_i^T  x`).
    pub fn from_frame(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        let r = &self.frames[i];
        [r[0] * x[0] + r[2] * x[1], r[1] * x[0] + r[3] * x[1]]
    }
}

/// Sample entity positions, colors, and private frames for one episode.
///
/// Positions are i.i.d. uniform in the arena square; velocities start at
/// zero; each agent gazes at its own position; landmark colors are a
/// distinct draw from the palette, as are agent colors.
pub fn sample_world(
    spec: &EpisodeSpec,
    streams: &Streams,
    iteration: u64,
    episode: u64,
) -> Result<World, SpecError> {
    spec.validate()?;
    let mut rng = streams.open(StreamKey {
        iteration,
        episode,
        timestep: 0,
        site: Site::WorldInit,
    });

    let mut pos = |rng: &mut rand_chacha::ChaCha8Rng| {
        [rng.gen_range(-ARENA..=ARENA), rng.gen_range(-ARENA..=ARENA)]
    };

    let mut agent_colors: Vec<usize> = (0..spec.palette.len()).collect();
    agent_colors.shuffle(&mut rng);
    let mut landmark_colors: Vec<usize> = (0..spec.palette.len()).collect();
    landmark_colors.shuffle(&mut rng);

    let agents = (0..spec.agents)
        .map(|i| {
            let p = pos(&mut rng);
            EntityState {
                kind: EntityKind::Agent,
                p,
                pdot: [0.0, 0.0],
                v: p,
                color: spec.palette[agent_colors[i]],
                radius: AGENT_RADIUS,
            }
        })
        .collect();

    let landmarks = (0..spec.landmarks)
        .map(|i| EntityState {
            kind: EntityKind::Landmark,
            p: pos(&mut rng),
            pdot: [0.0, 0.0],
            v: [0.0, 0.0],
            color: spec.palette[landmark_colors[i]],
            radius: LANDMARK_RADIUS,
        })
        .collect();

    let frames = (0..spec.agents)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            [c, -s, s, c]
        })
        .collect();

    Ok(World { spec: spec.clone(), agents, landmarks, frames, goals: Vec::new() })
}

/// Assign one private goal to every agent.
///
/// Recipients form a uniformly random permutation of the agents, so each
/// agent is the recipient of exactly one goal and no agent receives
/// conflicting instructions. Targets are uniformly chosen landmarks; the
/// action is uniform over the spec's action set.
pub fn assign_goals(world: &mut World, streams: &Streams, iteration: u64, episode: u64) {
    let mut rng = streams.open(StreamKey {
        iteration,
        episode,
        timestep: 0,
        site: Site::Goals,
    });
    let n = world.agents.len();
    let mut recipients: Vec<usize> = (0..n).collect();
    recipients.shuffle(&mut rng);

    world.goals = (0..n)
        .map(|holder| {
            let lm = rng.gen_range(0..world.landmarks.len());
            let action = *world.spec.actions[..].choose(&mut rng).expect("validated non-empty");
            Goal {
                action,
                target: world.landmarks[lm].p,
                target_landmark: lm,
                recipient: recipients[holder],
            }
        })
        .collect();
}

/// Goals whose holder differs from the recipient, i.e. the ones that force
/// coordination. Returned as `(holder, goal)` pairs.
pub fn cross_goals(world: &World) -> impl Iterator<Item = (usize, &Goal)> {
    world.goals.iter().enumerate().filter(|(holder, g)| *holder != g.recipient)
}

/// Force every goal to point at another agent (only meaningful for N >= 2):
/// recipients become a uniformly random derangement-like shift of the
/// holders. Used by evaluation suites that want communication exercised in
/// every episode.
pub fn force_cross_goals(world: &mut World, streams: &Streams, iteration: u64, episode: u64) {
    let n = world.agents.len();
    if n < 2 {
        return;
    }
    let mut rng = streams.open(StreamKey {
        iteration,
        episode,
        timestep: 1,
        site: Site::Goals,
    });
    let shift = rng.gen_range(1..n);
    for (holder, goal) in world.goals.iter_mut().enumerate() {
        goal.recipient = (holder + shift) % n;
    }
}

impl World {
    /// Action one-hot, target in holder frame, recipient color — the goal as
    /// its holder observes it with the holder at `holder_p`.
    pub fn goal_features(&self, holder: usize, holder_p: [f64; 2]) -> Vec<f64> {
        let goal = &self.goals[holder];
        let mut out = vec![0.0; ActionKind::COUNT];
        out[goal.action.index()] = 1.0;
        let rel = self.to_frame(holder, [goal.target[0] - holder_p[0], goal.target[1] - holder_p[1]]);
        out.extend_from_slice(&rel);
        out.extend_from_slice(&self.agents[goal.recipient].color);
        out
    }
}

/// Width of the goal feature vector.
pub const GOAL_DIM: usize = ActionKind::COUNT + 2 + 3;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn streams() -> Streams {
        Streams::new(99)
    }

    #[test]
    fn sampled_world_has_expected_arity_and_distinct_landmark_colors() {
        let spec = EpisodeSpec { agents: 2, landmarks: 3, ..EpisodeSpec::default() };
        for ep in 0..1000 {
            let w = sample_world(&spec, &streams(), 0, ep).unwrap();
            assert_eq!(w.agents.len() + w.landmarks.len(), 5);
            assert_eq!(w.frames.len(), 2);
            let colors: HashSet<[u64; 3]> = w
                .landmarks
                .iter()
                .map(|l| [l.color[0].to_bits(), l.color[1].to_bits(), l.color[2].to_bits()])
                .collect();
            assert_eq!(colors.len(), 3, "landmark colors must be pairwise distinct");
            for e in w.agents.iter().chain(&w.landmarks) {
                assert!(e.p[0].abs() <= ARENA && e.p[1].abs() <= ARENA);
                assert_eq!(e.pdot, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn minimal_world() {
        let spec = EpisodeSpec { agents: 1, landmarks: 1, ..EpisodeSpec::default() };
        let w = sample_world(&spec, &streams(), 0, 0).unwrap();
        assert_eq!(w.agents.len() + w.landmarks.len(), 2);
    }

    #[test]
    fn goal_recipients_are_a_permutation() {
        let spec = EpisodeSpec::default();
        let mut saw_identity = false;
        let mut saw_swap = false;
        for ep in 0..1000 {
            let mut w = sample_world(&spec, &streams(), 0, ep).unwrap();
            assign_goals(&mut w, &streams(), 0, ep);
            let mut recipients: Vec<usize> = w.goals.iter().map(|g| g.recipient).collect();
            recipients.sort_unstable();
            assert_eq!(recipients, vec![0, 1]);
            if w.goals[0].recipient == 0 {
                saw_identity = true;
            } else {
                saw_swap = true;
            }
        }
        assert!(saw_identity && saw_swap, "both permutations should occur");
    }

    #[test]
    fn goal_targets_sit_on_landmarks_and_actions_respect_spec() {
        let spec = EpisodeSpec { actions: vec![ActionKind::Goto], ..EpisodeSpec::default() };
        for ep in 0..200 {
            let mut w = sample_world(&spec, &streams(), 3, ep).unwrap();
            assign_goals(&mut w, &streams(), 3, ep);
            for g in &w.goals {
                assert_eq!(g.action, ActionKind::Goto);
                assert_eq!(g.target, w.landmarks[g.target_landmark].p);
            }
        }
    }

    #[test]
    fn frames_are_rotations() {
        let w = sample_world(&EpisodeSpec::default(), &streams(), 7, 7).unwrap();
        for f in &w.frames {
            let det = f[0] * f[3] - f[1] * f[2];
            assert!((det - 1.0).abs() < 1e-12);
            // orthonormal rows
            assert!((f[0] * f[0] + f[1] * f[1] - 1.0).abs() < 1e-12);
            assert!((f[0] * f[2] + f[1] * f[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_round_trip_and_isometry() {
        let w = sample_world(&EpisodeSpec::default(), &streams(), 1, 1).unwrap();
        let x = [0.3, -0.8];
        let y = w.to_frame(0, x);
        let back = w.from_frame(0, y);
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        let n0 = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let n1 = (y[0] * y[0] + y[1] * y[1]).sqrt();
        assert!((n0 - n1).abs() < 1e-12);
    }
}
