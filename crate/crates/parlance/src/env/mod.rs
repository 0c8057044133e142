//! The grounded 2-D particle world: entity states, transition dynamics,
//! rotated per-agent observations, goal assignment, and the physically
//! grounded reward terms, all expressed as differentiable tape operations.

pub mod observe;
pub mod physics;
pub mod reward;
pub mod spec;
pub mod trajectory;
pub mod world;

pub use observe::{observe, Observation, PHYS_DIM};
pub use physics::{init_sim, interaction_forces, step, AgentAction, SimState, DT, GAMMA};
pub use spec::{ActionKind, EpisodeSpec, Goal, ObservabilityMode, SpecError};
pub use trajectory::{group_episodes, initial_record, TimestepRecord};
pub use world::{assign_goals, cross_goals, force_cross_goals, sample_world, EntityKind, EntityState, World, GOAL_DIM};
