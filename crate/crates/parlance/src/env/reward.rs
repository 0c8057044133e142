//! Physically-grounded reward terms.
//!
//! The shared physical reward is the time-and-goal mean of negated squared
//! distances — recipient position to target for `goto`, gaze to target for
//! `look_at`, displacement from the initial position for `do_nothing` — with
//! a quadratic penalty on motor force magnitudes. Utterances carry a
//! separate cost proportional to non-silence mass; the silence symbol is
//! free.

use crate::autodiff::{Graph, Tensor, Var};

use super::physics::SimState;
use super::spec::{ActionKind, Goal};
use super::trajectory::TimestepRecord;
use super::world::World;

/// Squared-distance term of one goal at one (post-step) state.
pub fn goal_sq_dist(
    g: &Graph,
    world: &World,
    sim: &SimState,
    goal: &Goal,
    initial_positions: &[[f64; 2]],
) -> Var {
    let r = goal.recipient;
    match goal.action {
        ActionKind::Goto => {
            let target = g.constant(Tensor::row(&goal.target));
            g.sqnorm(g.sub(sim.p[r], target))
        }
        ActionKind::LookAt => {
            let target = g.constant(Tensor::row(&goal.target));
            g.sqnorm(g.sub(sim.v[r], target))
        }
        ActionKind::DoNothing => {
            let home = g.constant(Tensor::row(&initial_positions[r]));
            g.sqnorm(g.sub(sim.p[r], home))
        }
    }
}

/// Scalar terms accumulated over a rollout, combined at the end.
#[derive(Default)]
pub struct RewardParts {
    /// One per (timestep, goal): squared distance.
    pub goal_sq_dists: Vec<Var>,
    /// One per (timestep, agent): squared motor-force magnitude.
    pub action_sqmags: Vec<Var>,
    /// One per (timestep, agent): non-silence utterance mass, `1 - c[0]`.
    pub utterance_on: Vec<Var>,
}

fn sum_vars(g: &Graph, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = g.add(acc, *v);
    }
    acc
}

impl RewardParts {
    /// `-(mean goal squared distance) - lambda_a * (mean squared force)`.
    pub fn physical(&self, g: &Graph, lambda_a: f64) -> Var {
        let dist = g.scale(sum_vars(g, &self.goal_sq_dists), -1.0 / self.goal_sq_dists.len() as f64);
        if lambda_a == 0.0 || self.action_sqmags.is_empty() {
            return dist;
        }
        let act = g.scale(
            sum_vars(g, &self.action_sqmags),
            -lambda_a / self.action_sqmags.len() as f64,
        );
        g.add(dist, act)
    }

    /// `-lambda_u * sum of non-silence mass` over agents and timesteps.
    pub fn utterance_cost(&self, g: &Graph, lambda_u: f64) -> Var {
        if self.utterance_on.is_empty() || lambda_u == 0.0 {
            return g.scalar(0.0);
        }
        g.scale(sum_vars(g, &self.utterance_on), -lambda_u)
    }
}

/// Non-silence mass of one utterance vector: `1 - c[0]`.
pub fn utterance_on_mass(g: &Graph, utterance: Var) -> Var {
    let silence = g.slice_cols(utterance, 0, 1);
    g.sub(g.scalar(1.0), silence)
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Goal-distance part of the physical reward, recomputed from records:
/// mean over post-initial timesteps and goals of the negated squared
/// distance. Matches the tape-side term for the same trajectory.
pub fn goal_distance_score(episode: &[&TimestepRecord]) -> f64 {
    let goals = &episode[0].goals;
    let initial = episode[0];
    let steps = &episode[1..];
    let mut total = 0.0;
    let mut count = 0usize;
    for rec in steps {
        for goal in goals {
            let recipient = rec.agent(goal.recipient);
            let d2 = match goal.action {
                ActionKind::Goto => sq_dist(recipient.p, goal.target),
                ActionKind::LookAt => sq_dist(recipient.v, goal.target),
                ActionKind::DoNothing => sq_dist(recipient.p, initial.agent(goal.recipient).p),
            };
            total -= d2;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Mode, Streams};
    use crate::env::physics::init_sim;
    use crate::env::spec::EpisodeSpec;
    use crate::env::trajectory::initial_record;
    use crate::env::world::sample_world;

    fn world_on_target() -> World {
        let mut w = sample_world(&EpisodeSpec::default(), &Streams::new(1), 0, 0).unwrap();
        w.goals = vec![
            Goal {
                action: ActionKind::Goto,
                target: w.agents[0].p,
                target_landmark: 0,
                recipient: 0,
            },
            Goal {
                action: ActionKind::Goto,
                target: w.agents[1].p,
                target_landmark: 1,
                recipient: 1,
            },
        ];
        w
    }

    #[test]
    fn sitting_on_target_scores_zero() {
        let w = world_on_target();
        let g = Graph::new(Mode::Eval);
        let sim = init_sim(&g, &w);
        let init: Vec<[f64; 2]> = w.agents.iter().map(|a| a.p).collect();
        let mut parts = RewardParts::default();
        for _ in 0..4 {
            for goal in &w.goals {
                parts.goal_sq_dists.push(goal_sq_dist(&g, &w, &sim, goal, &init));
            }
        }
        assert_eq!(g.item(parts.physical(&g, 0.01)), 0.0);
    }

    #[test]
    fn unit_distance_scores_minus_one_per_goal() {
        let mut w = world_on_target();
        w.goals[0].target = [w.agents[0].p[0] + 1.0, w.agents[0].p[1]];
        w.goals[1].target = [w.agents[1].p[0], w.agents[1].p[1] + 1.0];
        let g = Graph::new(Mode::Eval);
        let sim = init_sim(&g, &w);
        let init: Vec<[f64; 2]> = w.agents.iter().map(|a| a.p).collect();
        let mut parts = RewardParts::default();
        for goal in &w.goals {
            parts.goal_sq_dists.push(goal_sq_dist(&g, &w, &sim, goal, &init));
        }
        assert!((g.item(parts.physical(&g, 0.0)) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_invariant_to_goal_relabeling() {
        let mut w = world_on_target();
        w.goals[0].target = [0.3, -0.4];
        w.goals[1].target = [-0.2, 0.9];
        let score = |world: &World| {
            let g = Graph::new(Mode::Eval);
            let sim = init_sim(&g, world);
            let init: Vec<[f64; 2]> = world.agents.iter().map(|a| a.p).collect();
            let mut parts = RewardParts::default();
            for goal in &world.goals {
                parts.goal_sq_dists.push(goal_sq_dist(&g, world, &sim, goal, &init));
            }
            g.item(parts.physical(&g, 0.0))
        };
        let a = score(&w);
        let mut swapped = w.clone();
        swapped.goals.reverse();
        assert_eq!(a, score(&swapped));
    }

    #[test]
    fn utterance_cost_cases() {
        let g = Graph::new(Mode::Eval);
        let k = 5;
        // All silence: zero cost.
        let mut parts = RewardParts::default();
        let silence = {
            let mut c = vec![0.0; k];
            c[0] = 1.0;
            g.constant(Tensor::row(&c))
        };
        parts.utterance_on.push(utterance_on_mass(&g, silence));
        assert_eq!(g.item(parts.utterance_cost(&g, 0.05)), 0.0);

        // One hard non-silence symbol at lambda_u = 0.05 costs -0.05.
        let mut hard = vec![0.0; k];
        hard[3] = 1.0;
        let hard = g.constant(Tensor::row(&hard));
        let mut parts = RewardParts::default();
        parts.utterance_on.push(utterance_on_mass(&g, hard));
        assert!((g.item(parts.utterance_cost(&g, 0.05)) + 0.05).abs() < 1e-15);

        // Soft utterance with 0.7 silence mass costs -0.3 * lambda_u.
        let soft = g.constant(Tensor::row(&[0.7, 0.1, 0.1, 0.05, 0.05]));
        let mut parts = RewardParts::default();
        parts.utterance_on.push(utterance_on_mass(&g, soft));
        assert!((g.item(parts.utterance_cost(&g, 0.05)) + 0.3 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn record_score_is_isometry_invariant() {
        let streams = Streams::new(8);
        let mut w = sample_world(&EpisodeSpec::default(), &streams, 0, 3).unwrap();
        crate::env::world::assign_goals(&mut w, &streams, 0, 3);
        // Fake three steps of drift.
        let mut records = vec![initial_record(&w, 0)];
        for t in 1..=3 {
            let mut r = initial_record(&w, 0);
            r.t = t;
            for e in r.entities.iter_mut() {
                e.p[0] += 0.05 * t as f64;
                e.v[1] -= 0.02 * t as f64;
            }
            records.push(r);
        }
        let refs: Vec<&TimestepRecord> = records.iter().collect();
        let base = goal_distance_score(&refs);

        // Apply a global rotation + translation to every position, gaze, and
        // goal target.
        let theta: f64 = 1.1;
        let (s, c) = theta.sin_cos();
        let iso = |p: [f64; 2]| [c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 2.0];
        let mut moved = records.clone();
        for r in moved.iter_mut() {
            for e in r.entities.iter_mut() {
                e.p = iso(e.p);
                e.v = iso(e.v);
            }
            for goal in r.goals.iter_mut() {
                goal.target = iso(goal.target);
            }
        }
        let refs2: Vec<&TimestepRecord> = moved.iter().collect();
        let transformed = goal_distance_score(&refs2);
        assert!((base - transformed).abs() < 1e-9, "{base} vs {transformed}");
    }
}
