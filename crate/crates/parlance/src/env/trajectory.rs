//! Serializable per-timestep episode records.
//!
//! Trajectory files are JSONL: one record per line per timestep. Field names
//! are part of the tool's interface and stay stable:
//!
//! * `episode`, `t` — indices
//! * `entities` — agents (by index) then landmarks (by index), each with
//!   `kind`, `p`, `pdot`, `v`, `color`, `radius`
//! * `utterances` — one K-vector per agent (one-hot at evaluation time)
//! * `goals` — per holder: `action`, `target`, `target_landmark`, `recipient`
//! * `frames` — row-major private rotation matrix per agent

use serde::{Deserialize, Serialize};

use super::spec::Goal;
use super::world::{EntityState, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub episode: usize,
    pub t: usize,
    pub entities: Vec<EntityState>,
    pub utterances: Vec<Vec<f64>>,
    pub goals: Vec<Goal>,
    pub frames: Vec<[f64; 4]>,
}

impl TimestepRecord {
    pub fn agent_count(&self) -> usize {
        self.utterances.len()
    }

    pub fn agent(&self, i: usize) -> &EntityState {
        &self.entities[i]
    }

    pub fn landmarks(&self) -> &[EntityState] {
        &self.entities[self.agent_count()..]
    }

    /// The committed symbol of agent `i`: argmax of its utterance vector,
    /// with ties going to the lower index. Index 0 is silence.
    pub fn symbol(&self, i: usize) -> usize {
        let u = &self.utterances[i];
        let mut best = 0;
        for (k, &v) in u.iter().enumerate() {
            if v > u[best] {
                best = k;
            }
        }
        best
    }
}

/// Group a flat record stream by episode index, preserving order.
pub fn group_episodes(records: &[TimestepRecord]) -> Vec<Vec<&TimestepRecord>> {
    let mut out: Vec<Vec<&TimestepRecord>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(ep) if ep[0].episode == r.episode => ep.push(r),
            _ => out.push(vec![r]),
        }
    }
    out
}

/// Snapshot the sampled world at t = 0 (before any step) as a record.
pub fn initial_record(world: &World, episode: usize) -> TimestepRecord {
    let silence = {
        let mut c = vec![0.0; world.spec.vocab];
        c[0] = 1.0;
        c
    };
    TimestepRecord {
        episode,
        t: 0,
        entities: world.agents.iter().chain(&world.landmarks).cloned().collect(),
        utterances: vec![silence; world.agents.len()],
        goals: world.goals.clone(),
        frames: world.frames.clone(),
    }
}
