//! Per-agent observations in the agent's private reference frame.
//!
//! Every visible entity contributes one feature row
//! `[rel pos | rel vel | rel gaze | color | kind]`, all spatial parts rotated
//! by the observer's private frame. What counts as visible depends on the
//! observability mode; in `Comm` mode the physical state of other agents is
//! absent from the observation entirely, not zero-masked.

use crate::autodiff::{Graph, Tensor, Var};

use super::physics::SimState;
use super::spec::ObservabilityMode;
use super::world::World;

/// Width of one entity feature row.
pub const PHYS_DIM: usize = 10;

/// What one agent sees at one timestep.
pub struct Observation {
    /// `[E x PHYS_DIM]`, observer's own row first, then (mode permitting)
    /// other agents by index, then landmarks by index.
    pub phys_rows: Var,
    /// Incoming symbol streams as `(emitting agent, utterance)` pairs,
    /// ordered by emitter index. Empty unless the mode has communication.
    pub comm_streams: Vec<(usize, Var)>,
    /// Goal features `[1 x GOAL_DIM]`: action one-hot, target location in
    /// the observer's frame, recipient color.
    pub goal: Var,
}

/// Transpose of agent `i`'s rotation, as a tape constant. Row vectors are
/// world-to-frame rotated via `x * R^T`.
fn rot_t(g: &Graph, world: &World, i: usize) -> Var {
    let r = &world.frames[i];
    g.constant(Tensor::matrix(2, 2, vec![r[0], r[2], r[1], r[3]]))
}

pub fn observe(
    g: &Graph,
    world: &World,
    sim: &SimState,
    utterances: &[Var],
    agent: usize,
) -> Observation {
    let mode = world.spec.mode;
    let rt = rot_t(g, world, agent);
    let p_i = sim.p[agent];
    let mut rows: Vec<Var> = Vec::with_capacity(world.spec.entities());

    // Self: relative position is identically zero.
    {
        let me = &world.agents[agent];
        let zero = g.constant(Tensor::row(&[0.0, 0.0]));
        let rel_vel = g.matmul(sim.pdot[agent], rt);
        let rel_gaze = g.matmul(g.sub(sim.v[agent], p_i), rt);
        let tail = g.constant(Tensor::row(&[me.color[0], me.color[1], me.color[2], 1.0]));
        rows.push(g.concat_cols(&[zero, rel_vel, rel_gaze, tail]));
    }

    if mode.others_visible() {
        for j in 0..world.agents.len() {
            if j == agent {
                continue;
            }
            let other = &world.agents[j];
            let rel_pos = g.matmul(g.sub(sim.p[j], p_i), rt);
            let rel_vel = g.matmul(sim.pdot[j], rt);
            let rel_gaze = if mode.gaze_visible() {
                g.matmul(g.sub(sim.v[j], p_i), rt)
            } else {
                g.constant(Tensor::row(&[0.0, 0.0]))
            };
            let tail = g.constant(Tensor::row(&[other.color[0], other.color[1], other.color[2], 1.0]));
            rows.push(g.concat_cols(&[rel_pos, rel_vel, rel_gaze, tail]));
        }
    }

    for lm in &world.landmarks {
        let lm_p = g.constant(Tensor::row(&lm.p));
        let rel_pos = g.matmul(g.sub(lm_p, p_i), rt);
        let tail = g.constant(Tensor::row(&[
            0.0,
            0.0,
            0.0,
            0.0,
            lm.color[0],
            lm.color[1],
            lm.color[2],
            0.0,
        ]));
        rows.push(g.concat_cols(&[rel_pos, tail]));
    }

    let comm_streams = if mode.comm_enabled() {
        (0..world.agents.len())
            .filter(|&j| j != agent)
            .map(|j| (j, utterances[j]))
            .collect()
    } else {
        Vec::new()
    };

    let goal = goal_row(g, world, sim, agent);

    Observation {
        phys_rows: g.stack_rows(&rows),
        comm_streams,
        goal,
    }
}

/// The observer's private goal as features: action one-hot, target relative
/// to the observer in its frame, recipient color.
fn goal_row(g: &Graph, world: &World, sim: &SimState, agent: usize) -> Var {
    let goal = &world.goals[agent];
    let mut onehot = vec![0.0; super::spec::ActionKind::COUNT];
    onehot[goal.action.index()] = 1.0;
    let head = g.constant(Tensor::row(&onehot));
    let target = g.constant(Tensor::row(&goal.target));
    let rel = g.matmul(g.sub(target, sim.p[agent]), rot_t(g, world, agent));
    let color = &world.agents[goal.recipient].color;
    let tail = g.constant(Tensor::row(color));
    g.concat_cols(&[head, rel, tail])
}
