//! Transition dynamics, expressed as tape operations.
//!
//! Per agent and timestep:
//!
//! ```text
//! p'    = p + pdot * DT
//! pdot' = GAMMA * pdot + (u_p + f) * DT
//! v'    = commanded gaze location
//! ```
//!
//! with `f` the smoothed pairwise collision force. Landmarks never move.

use crate::autodiff::{Graph, Tensor, Var};

use super::world::World;

/// Simulation timestep.
pub const DT: f64 = 0.1;
/// Velocity carry-over per step; the damping coefficient is `1 - GAMMA`.
pub const GAMMA: f64 = 0.5;
/// Peak collision force scale.
pub const COLLISION_GAIN: f64 = 3.0;
/// Width of the logistic contact smoothing, in world units.
pub const COLLISION_WIDTH: f64 = 0.05;

/// Positions, velocities, and gaze locations of the agents on the tape.
/// Landmark state lives in [`World`] and never changes.
#[derive(Debug, Clone)]
pub struct SimState {
    pub p: Vec<Var>,
    pub pdot: Vec<Var>,
    pub v: Vec<Var>,
}

/// Load the initial world state onto the tape as differentiable leaves.
pub fn init_sim(g: &Graph, world: &World) -> SimState {
    SimState {
        p: world.agents.iter().map(|a| g.leaf(Tensor::row(&a.p))).collect(),
        pdot: world.agents.iter().map(|a| g.leaf(Tensor::row(&a.pdot))).collect(),
        v: world.agents.iter().map(|a| g.leaf(Tensor::row(&a.v))).collect(),
    }
}

/// Motor force and gaze command for one agent, both in the agent's own
/// reference frame.
#[derive(Debug, Clone, Copy)]
pub struct AgentAction {
    /// Force `u_p`, agent frame.
    pub force: Var,
    /// Gaze target relative to the agent's position, agent frame.
    pub gaze: Var,
}

/// Pairwise soft repulsion between agents.
///
/// For a pair at center distance `d` the magnitude is
/// `COLLISION_GAIN * logistic((r_i + r_j - d) / COLLISION_WIDTH)` along the
/// separating direction; the pair receives equal and opposite forces, so the
/// total over all agents is exactly zero. The norm is softened so the force
/// is differentiable everywhere; exactly coincident centers fall back to a
/// fixed arbitrary direction (+x).
pub fn interaction_forces(g: &Graph, world: &World, positions: &[Var]) -> Vec<Var> {
    let n = positions.len();
    let mut forces: Vec<Var> = (0..n).map(|_| g.constant(Tensor::row(&[0.0, 0.0]))).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = g.sub(positions[i], positions[j]);
            let d2 = g.sqnorm(delta);
            let dir = if g.item(d2) < 1e-18 {
                g.constant(Tensor::row(&[1.0, 0.0]))
            } else {
                let soft = g.sqrt(g.add(d2, g.scalar(1e-12)));
                g.scale_by(delta, g.recip(soft))
            };
            let dist = g.sqrt(g.add(d2, g.scalar(1e-12)));
            let overlap = g.sub(
                g.scalar(world.agents[i].radius + world.agents[j].radius),
                dist,
            );
            let magnitude = g.scale(g.sigmoid(g.scale(overlap, 1.0 / COLLISION_WIDTH)), COLLISION_GAIN);
            let f_ij = g.scale_by(dir, magnitude);
            forces[i] = g.add(forces[i], f_ij);
            forces[j] = g.sub(forces[j], f_ij);
        }
    }
    forces
}

/// Advance every agent one step given frame-local actions.
pub fn step(g: &Graph, world: &World, sim: &SimState, actions: &[AgentAction]) -> SimState {
    assert_eq!(actions.len(), sim.p.len(), "one action per agent");
    let forces = interaction_forces(g, world, &sim.p);
    let mut next = SimState { p: Vec::new(), pdot: Vec::new(), v: Vec::new() };
    for i in 0..sim.p.len() {
        let rot = g.constant(Tensor::matrix(2, 2, world.frames[i].to_vec()));
        // Row convention: world vector = frame vector * R.
        let u_world = g.matmul(actions[i].force, rot);
        let gaze_world = g.add(sim.p[i], g.matmul(actions[i].gaze, rot));

        next.p.push(g.add(sim.p[i], g.scale(sim.pdot[i], DT)));
        let accel = g.scale(g.add(u_world, forces[i]), DT);
        next.pdot.push(g.add(g.scale(sim.pdot[i], GAMMA), accel));
        next.v.push(gaze_world);
    }
    next
}
