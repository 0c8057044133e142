//! The shared stochastic policy.
//!
//! One parameter set serves every agent in every episode. Each observed
//! physical entity runs through the same two-layer encoder and the results
//! are softmax-pooled; each incoming symbol stream (joined with its own
//! recurrent memory slot) runs through the same communication encoder, which
//! also emits per-stream memory updates and goal predictions. Pooled
//! features, the private goal, and the output memory feed a final module
//! that yields motor force, gaze command, symbol logits, and an output
//! memory update. Because pooling is permutation invariant and weights are
//! tied across modules, the same parameters work for any number of agents
//! and landmarks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gumbel, DiffError, Graph, Mode, Site, StreamKey, Streams, Tensor, Var};
use crate::env::{Observation, GOAL_DIM, PHYS_DIM};

/// Sizes that determine parameter shapes. Input widths (entity features,
/// goal vector) are fixed by the observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    /// Hidden width of every processing module, and the pooled feature width.
    pub hidden: usize,
    /// Width of each memory slot.
    pub memory: usize,
    /// Vocabulary size K, silence included.
    pub vocab: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch { hidden: 64, memory: 32, vocab: 20 }
    }
}

impl Arch {
    /// Output head width: force (2) + gaze (2) + symbol logits (K) + output
    /// memory update.
    pub fn head_width(&self) -> usize {
        4 + self.vocab + self.memory
    }

    /// Named parameter slots and their shapes, in registry order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h = self.hidden;
        let m = self.memory;
        let k = self.vocab;
        vec![
            ("phys.w1", vec![PHYS_DIM, h]),
            ("phys.b1", vec![1, h]),
            ("phys.w2", vec![h, h]),
            ("phys.b2", vec![1, h]),
            ("comm.w1", vec![k + m, h]),
            ("comm.b1", vec![1, h]),
            ("comm.w2", vec![h, h]),
            ("comm.b2", vec![1, h]),
            ("comm.mem_w", vec![h, m]),
            ("comm.mem_b", vec![1, m]),
            ("comm.goal_w", vec![h, GOAL_DIM]),
            ("comm.goal_b", vec![1, GOAL_DIM]),
            ("out.w1", vec![2 * h + GOAL_DIM + m, h]),
            ("out.b1", vec![1, h]),
            ("out.w2", vec![h, h]),
            ("out.b2", vec![1, h]),
            ("out.head_w", vec![h, self.head_width()]),
            ("out.head_b", vec![1, self.head_width()]),
            ("comm.empty_pool", vec![1, h]),
        ]
    }
}

// Registry indices, in `Arch::layout` order.
const PHYS_W1: usize = 0;
const PHYS_B1: usize = 1;
const PHYS_W2: usize = 2;
const PHYS_B2: usize = 3;
const COMM_W1: usize = 4;
const COMM_B1: usize = 5;
const COMM_W2: usize = 6;
const COMM_B2: usize = 7;
const COMM_MEM_W: usize = 8;
const COMM_MEM_B: usize = 9;
const COMM_GOAL_W: usize = 10;
const COMM_GOAL_B: usize = 11;
const OUT_W1: usize = 12;
const OUT_B1: usize = 13;
const OUT_W2: usize = 14;
const OUT_B2: usize = 15;
const OUT_HEAD_W: usize = 16;
const OUT_HEAD_B: usize = 17;
const COMM_EMPTY_POOL: usize = 18;

/// The policy's weights: a flat registry of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub arch: Arch,
    tensors: Vec<Tensor>,
}

impl Params {
    /// Gaussian fan-in initialization; the output head starts small so
    /// initial actions and logits sit near zero.
    pub fn init(arch: &Arch, streams: &Streams) -> Params {
        use rand_distr::{Distribution, Normal};
        let tensors = arch
            .layout()
            .iter()
            .enumerate()
            .map(|(index, (name, shape))| {
                if shape[0] == 1 || name.ends_with("b1") || name.ends_with("b2") {
                    // Biases and the learned empty-pool vector start at zero.
                    return Tensor::zeros(shape.clone());
                }
                let mut rng = streams.open(StreamKey {
                    iteration: 0,
                    episode: 0,
                    timestep: 0,
                    site: Site::ParamInit { index },
                });
                let fan_in = shape[0] as f64;
                let scale = if *name == "out.head_w" { 0.1 } else { 1.0 };
                let normal = Normal::new(0.0, scale / fan_in.sqrt()).unwrap();
                Tensor::new(
                    shape.clone(),
                    (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect(),
                )
            })
            .collect();
        Params { arch: arch.clone(), tensors }
    }

    pub fn from_tensors(arch: Arch, tensors: Vec<Tensor>) -> Params {
        let layout = arch.layout();
        assert_eq!(tensors.len(), layout.len(), "parameter count mismatch");
        for (t, (name, shape)) in tensors.iter().zip(&layout) {
            assert_eq!(t.shape(), &shape[..], "shape mismatch for {name}");
        }
        Params { arch, tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arch
            .layout()
            .iter()
            .position(|(n, _)| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.arch.layout().iter().position(|(n, _)| *n == name)?;
        Some(&mut self.tensors[i])
    }
}

/// Tape handles for every parameter, registered once per rollout so weight
/// tying and gradient accumulation fall out of reuse.
pub struct ParamVars {
    vars: Vec<Var>,
}

pub fn register_params(g: &Graph, params: &Params) -> ParamVars {
    ParamVars {
        vars: params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(i, t.clone()))
            .collect(),
    }
}

impl ParamVars {
    fn v(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

/// Noise scales and the symbol temperature used during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyNoise {
    /// Std of the Gaussian added to motor force and gaze commands.
    pub sigma_u: f64,
    /// Std of the Gaussian inside memory updates.
    pub sigma_m: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Dropout rate between hidden layers.
    pub dropout: f64,
}

impl Default for PolicyNoise {
    fn default() -> Self {
        PolicyNoise { sigma_u: 0.1, sigma_m: 0.05, tau: 1.0, dropout: 0.1 }
    }
}

/// Per-agent recurrent state: one slot per incoming stream (keyed by the
/// emitting agent) plus the output-module memory.
#[derive(Clone)]
pub struct MemoryBank {
    pub stream: BTreeMap<usize, Var>,
    pub output: Var,
}

/// Zero-initialized memories for agent `agent` among `n_agents`.
pub fn init_memory(g: &Graph, arch: &Arch, n_agents: usize, agent: usize) -> MemoryBank {
    let zero = || g.constant(Tensor::zeros(vec![1, arch.memory]));
    MemoryBank {
        stream: (0..n_agents).filter(|&j| j != agent).map(|j| (j, zero())).collect(),
        output: zero(),
    }
}

/// One action draw plus the recurrent-state updates that produced it.
pub struct ActionSample {
    /// Motor force `u_p`, agent frame, `[1 x 2]`.
    pub force: Var,
    /// Gaze target relative to the agent, agent frame, `[1 x 2]`.
    pub gaze: Var,
    /// Utterance `c`, `[1 x K]`: a simplex point in training, one-hot at
    /// evaluation.
    pub utterance: Var,
    /// Raw symbol logits (log-probabilities up to a constant).
    pub logits: Var,
    /// Per-stream goal predictions, `(about agent, [1 x GOAL_DIM])`. Never
    /// fed back into action computation.
    pub goal_predictions: Vec<(usize, Var)>,
}

/// Two-layer module with elu units and dropout between the hidden layers.
pub fn fc2(
    g: &Graph,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    dropout: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Var, DiffError> {
    let h1 = g.elu(g.add_row(g.matmul(x, w1), b1));
    let h1 = g.dropout(h1, dropout, rng)?;
    Ok(g.elu(g.add_row(g.matmul(h1, w2), b2)))
}

/// Gumbel-Softmax sample from unnormalized log-probabilities.
///
/// Soft mode returns `softmax((logits + eps) / tau)`; hard mode returns the
/// exact one-hot at `argmax(logits + eps)`, which is distributed as the
/// categorical with probabilities `softmax(logits)`.
pub fn gumbel_softmax_sample(
    g: &Graph,
    logits: Var,
    tau: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    hard: bool,
) -> Result<Var, DiffError> {
    if !(tau > 0.0) {
        return Err(DiffError::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    let k = g.shape(logits)[1];
    let eps = Tensor::row(&(0..k).map(|_| gumbel(rng)).collect::<Vec<_>>());
    if hard {
        let v = g.value(logits);
        let mut best = 0;
        for i in 1..k {
            if v.data()[i] + eps.data()[i] > v.data()[best] + eps.data()[best] {
                best = i;
            }
        }
        let mut onehot = vec![0.0; k];
        onehot[best] = 1.0;
        Ok(g.constant(Tensor::row(&onehot)))
    } else {
        let e = g.constant(eps);
        Ok(g.softmax(g.scale(g.add(logits, e), 1.0 / tau), 1))
    }
}

/// Additive memory update `m' = tanh(m + dm + eps)`.
pub fn update_memory(
    g: &Graph,
    m: Var,
    dm: Var,
    sigma_m: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Var, DiffError> {
    let s = g.add(m, dm);
    let s = g.gaussian_noise(s, sigma_m, rng)?;
    Ok(g.tanh(s))
}

/// Everything a forward pass needs besides the observation.
pub struct PolicyCtx<'a> {
    pub g: &'a Graph,
    pub vars: &'a ParamVars,
    pub arch: &'a Arch,
    pub noise: PolicyNoise,
    pub streams: &'a Streams,
    pub iteration: u64,
    pub episode: u64,
}

impl<'a> PolicyCtx<'a> {
    fn rng(&self, t: usize, site: Site) -> rand_chacha::ChaCha8Rng {
        self.streams.open(StreamKey {
            iteration: self.iteration,
            episode: self.episode,
            timestep: t as u64,
            site,
        })
    }
}

/// Map one observation to an action sample and the next memory bank.
pub fn policy_forward(
    ctx: &PolicyCtx,
    obs: &Observation,
    memory: &MemoryBank,
    agent: usize,
    t: usize,
) -> Result<(ActionSample, MemoryBank), DiffError> {
    let g = ctx.g;
    let p = ctx.vars;
    let hard = g.mode() == Mode::Eval;

    // Physical entities through the shared encoder, pooled.
    let mut rng = ctx.rng(t, Site::Dropout { agent, module: 0 });
    let phys_h = fc2(
        g,
        obs.phys_rows,
        p.v(PHYS_W1),
        p.v(PHYS_B1),
        p.v(PHYS_W2),
        p.v(PHYS_B2),
        ctx.noise.dropout,
        &mut rng,
    )?;
    let phi_x = g.softpool(phys_h);

    // Symbol streams through the shared encoder, with per-stream memory.
    let mut next_stream_memory = BTreeMap::new();
    let mut goal_predictions = Vec::new();
    let phi_c = if obs.comm_streams.is_empty() {
        p.v(COMM_EMPTY_POOL)
    } else {
        let rows: Vec<Var> = obs
            .comm_streams
            .iter()
            .map(|(j, c)| g.concat_cols(&[*c, memory.stream[j]]))
            .collect();
        let stacked = g.stack_rows(&rows);
        let mut rng = ctx.rng(t, Site::Dropout { agent, module: 1 });
        let comm_h = fc2(
            g,
            stacked,
            p.v(COMM_W1),
            p.v(COMM_B1),
            p.v(COMM_W2),
            p.v(COMM_B2),
            ctx.noise.dropout,
            &mut rng,
        )?;
        let dm_rows = g.add_row(g.matmul(comm_h, p.v(COMM_MEM_W)), p.v(COMM_MEM_B));
        let pred_rows = g.add_row(g.matmul(comm_h, p.v(COMM_GOAL_W)), p.v(COMM_GOAL_B));
        for (row, (j, _)) in obs.comm_streams.iter().enumerate() {
            let dm = g.slice_rows(dm_rows, row, 1);
            let mut rng = ctx.rng(t, Site::MemoryNoise { agent, slot: j + 1 });
            let updated = update_memory(g, memory.stream[j], dm, ctx.noise.sigma_m, &mut rng)?;
            next_stream_memory.insert(*j, updated);
            goal_predictions.push((*j, g.slice_rows(pred_rows, row, 1)));
        }
        g.softpool(comm_h)
    };

    // Output module over pooled features, private goal, output memory.
    let z = g.concat_cols(&[phi_x, phi_c, obs.goal, memory.output]);
    let mut rng = ctx.rng(t, Site::Dropout { agent, module: 2 });
    let out_h = fc2(
        g,
        z,
        p.v(OUT_W1),
        p.v(OUT_B1),
        p.v(OUT_W2),
        p.v(OUT_B2),
        ctx.noise.dropout,
        &mut rng,
    )?;
    let head = g.add_row(g.matmul(out_h, p.v(OUT_HEAD_W)), p.v(OUT_HEAD_B));
    let k = ctx.arch.vocab;
    let psi_u = g.slice_cols(head, 0, 2);
    let psi_v = g.slice_cols(head, 2, 2);
    let logits = g.slice_cols(head, 4, k);
    let dm_out = g.slice_cols(head, 4 + k, ctx.arch.memory);

    let mut rng = ctx.rng(t, Site::ActionNoise { agent });
    let force = g.gaussian_noise(psi_u, ctx.noise.sigma_u, &mut rng)?;
    let gaze = g.gaussian_noise(psi_v, ctx.noise.sigma_u, &mut rng)?;

    let mut rng = ctx.rng(t, Site::Gumbel { agent });
    let utterance = gumbel_softmax_sample(g, logits, ctx.noise.tau, &mut rng, hard)?;

    let mut rng = ctx.rng(t, Site::MemoryNoise { agent, slot: 0 });
    let output_memory = update_memory(g, memory.output, dm_out, ctx.noise.sigma_m, &mut rng)?;

    Ok((
        ActionSample { force, gaze, utterance, logits, goal_predictions },
        MemoryBank { stream: next_stream_memory, output: output_memory },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_diff_grad, max_rel_err};
    use crate::env::physics::init_sim;
    use crate::env::{observe, sample_world, ActionKind, EpisodeSpec, Goal, World};

    fn small_arch() -> Arch {
        Arch { hidden: 8, memory: 4, vocab: 5 }
    }

    fn comm_world(seed: u64) -> World {
        let spec = EpisodeSpec { vocab: 5, ..EpisodeSpec::default() };
        let mut w = sample_world(&spec, &Streams::new(seed), 0, 0).unwrap();
        w.goals = vec![
            Goal { action: ActionKind::Goto, target: w.landmarks[1].p, target_landmark: 1, recipient: 1 },
            Goal { action: ActionKind::Goto, target: w.landmarks[2].p, target_landmark: 2, recipient: 0 },
        ];
        w
    }

    fn silence_utterances(g: &Graph, n: usize, k: usize) -> Vec<Var> {
        (0..n)
            .map(|_| {
                let mut c = vec![0.0; k];
                c[0] = 1.0;
                g.constant(Tensor::row(&c))
            })
            .collect()
    }

    /// Deterministic eval-mode forward for agent 0; returns (force, gaze,
    /// logits) values.
    fn eval_forward(params: &Params, world: &World) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let streams = Streams::new(0);
        let g = Graph::new(Mode::Eval);
        let vars = register_params(&g, params);
        let sim = init_sim(&g, world);
        let utt = silence_utterances(&g, world.agents.len(), params.arch.vocab);
        let obs = observe(&g, world, &sim, &utt, 0);
        let memory = init_memory(&g, &params.arch, world.agents.len(), 0);
        let ctx = PolicyCtx {
            g: &g,
            vars: &vars,
            arch: &params.arch,
            noise: PolicyNoise::default(),
            streams: &streams,
            iteration: 0,
            episode: 0,
        };
        let (action, _) = policy_forward(&ctx, &obs, &memory, 0, 0).unwrap();
        (
            g.value(action.force).data().to_vec(),
            g.value(action.gaze).data().to_vec(),
            g.value(action.logits).data().to_vec(),
        )
    }

    #[test]
    fn zero_weights_give_zero_preactivations() {
        let arch = small_arch();
        let params = Params::from_tensors(
            arch.clone(),
            arch.layout().iter().map(|(_, s)| Tensor::zeros(s.clone())).collect(),
        );
        let w = comm_world(5);
        let (force, gaze, logits) = eval_forward(&params, &w);
        assert!(force.iter().all(|&v| v == 0.0));
        assert!(gaze.iter().all(|&v| v == 0.0));
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let arch = small_arch();
        let params = Params::init(&arch, &Streams::new(3));
        let w = comm_world(6);
        let a = eval_forward(&params, &w);
        let b = eval_forward(&params, &w);
        assert_eq!(a, b);
    }

    #[test]
    fn fc2_gradient_matches_central_differences() {
        let arch = small_arch();
        let streams = Streams::new(17);
        let params = Params::init(&arch, &streams);
        let x0 = Tensor::matrix(3, PHYS_DIM, (0..3 * PHYS_DIM).map(|i| (i as f64 * 0.37).sin()).collect());

        let run = |w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| -> (f64, Option<(Graph, Var, Var, Var, Var, Var)>) {
            let g = Graph::new(Mode::Eval);
            let x = g.constant(x0.clone());
            let w1v = g.leaf(w1.clone());
            let b1v = g.leaf(b1.clone());
            let w2v = g.leaf(w2.clone());
            let b2v = g.leaf(b2.clone());
            let mut rng = streams.open(StreamKey { iteration: 0, episode: 0, timestep: 0, site: Site::Dropout { agent: 0, module: 0 } });
            let h = fc2(&g, x, w1v, b1v, w2v, b2v, 0.0, &mut rng).unwrap();
            let root = g.sqnorm(h);
            let val = g.item(root);
            (val, Some((g, w1v, b1v, w2v, b2v, root)))
        };

        let (w1, b1, w2, b2) = (
            params.get("phys.w1").unwrap().clone(),
            params.get("phys.b1").unwrap().clone(),
            params.get("phys.w2").unwrap().clone(),
            params.get("phys.b2").unwrap().clone(),
        );

        let f = |inputs: &[Tensor]| run(&inputs[0], &inputs[1], &inputs[2], &inputs[3]).0;
        let numeric = central_diff_grad(&f, &[w1.clone(), b1.clone(), w2.clone(), b2.clone()], 1e-5);

        let (_, built) = run(&w1, &b1, &w2, &b2);
        let (g, w1v, b1v, w2v, b2v, root) = built.unwrap();
        let grads = g.backward(root).unwrap();
        let analytic = vec![
            grads.grad(&g, w1v),
            grads.grad(&g, b1v),
            grads.grad(&g, w2v),
            grads.grad(&g, b2v),
        ];
        let err = max_rel_err(&analytic, &numeric, 1e-6);
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn landmark_permutation_leaves_actions_bit_identical() {
        let params = Params::init(&small_arch(), &Streams::new(21));
        let w = comm_world(9);
        let base = eval_forward(&params, &w);

        let mut permuted = w.clone();
        permuted.landmarks.rotate_left(1);
        // Keep goal targets pointing at the same physical landmark.
        for goal in permuted.goals.iter_mut() {
            goal.target_landmark = (goal.target_landmark + permuted.landmarks.len() - 1) % permuted.landmarks.len();
        }
        let shuffled = eval_forward(&params, &permuted);
        assert_eq!(base, shuffled);
    }

    #[test]
    fn agent_relabeling_swaps_actions_exactly() {
        let params = Params::init(&small_arch(), &Streams::new(33));
        let w = comm_world(14);

        // Swap the two agents wholesale: states, frames, goal holders, and
        // goal recipients.
        let mut swapped = w.clone();
        swapped.agents.swap(0, 1);
        swapped.frames.swap(0, 1);
        swapped.goals.swap(0, 1);
        for goal in swapped.goals.iter_mut() {
            goal.recipient = 1 - goal.recipient;
        }

        let run_agent = |world: &World, agent: usize| -> Vec<f64> {
            let streams = Streams::new(0);
            let g = Graph::new(Mode::Eval);
            let vars = register_params(&g, &params);
            let sim = init_sim(&g, world);
            let utt = silence_utterances(&g, 2, params.arch.vocab);
            let obs = observe(&g, world, &sim, &utt, agent);
            let memory = init_memory(&g, &params.arch, 2, agent);
            let ctx = PolicyCtx {
                g: &g,
                vars: &vars,
                arch: &params.arch,
                noise: PolicyNoise::default(),
                streams: &streams,
                iteration: 0,
                episode: 0,
            };
            let (action, _) = policy_forward(&ctx, &obs, &memory, agent, 0).unwrap();
            let mut out = g.value(action.force).data().to_vec();
            out.extend_from_slice(g.value(action.logits).data());
            out
        };

        assert_eq!(run_agent(&w, 0), run_agent(&swapped, 1));
        assert_eq!(run_agent(&w, 1), run_agent(&swapped, 0));
    }

    #[test]
    fn goal_prediction_head_has_no_effect_on_actions() {
        let arch = small_arch();
        let params = Params::init(&arch, &Streams::new(40));
        let mut ablated = params.clone();
        for name in ["comm.goal_w", "comm.goal_b"] {
            let t = ablated.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let w = comm_world(2);
        assert_eq!(eval_forward(&params, &w), eval_forward(&ablated, &w));
    }

    #[test]
    fn variable_arity_without_reinstantiation() {
        let params = Params::init(&small_arch(), &Streams::new(55));
        for n in 1..=4usize {
            for m in 1..=3usize {
                let spec = EpisodeSpec {
                    agents: n,
                    landmarks: m,
                    vocab: 5,
                    palette: vec![
                        [1.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0],
                        [0.0, 0.0, 1.0],
                        [1.0, 1.0, 0.0],
                    ],
                    ..EpisodeSpec::default()
                };
                let mut w = sample_world(&spec, &Streams::new(60), 0, (n * 10 + m) as u64).unwrap();
                w.goals = (0..n)
                    .map(|i| Goal {
                        action: ActionKind::Goto,
                        target: w.landmarks[0].p,
                        target_landmark: 0,
                        recipient: i,
                    })
                    .collect();
                let (force, _, logits) = eval_forward(&params, &w);
                assert_eq!(force.len(), 2);
                assert_eq!(logits.len(), 5);
            }
        }
    }

    #[test]
    fn hard_gumbel_matches_categorical_frequencies() {
        let streams = Streams::new(77);
        let probs = [0.7, 0.2, 0.1];
        let logits_t = Tensor::row(&probs.map(f64::ln));
        let draws = 100_000;
        let mut counts = [0usize; 3];
        let g = Graph::new(Mode::Eval);
        let logits = g.constant(logits_t);
        for i in 0..draws {
            let mut rng = streams.open(StreamKey {
                iteration: i as u64,
                episode: 0,
                timestep: 0,
                site: Site::Gumbel { agent: 0 },
            });
            let c = gumbel_softmax_sample(&g, logits, 1.0, &mut rng, true).unwrap();
            let v = g.value(c);
            let k = v.data().iter().position(|&x| x == 1.0).unwrap();
            counts[k] += 1;
        }
        for (k, &p) in probs.iter().enumerate() {
            let freq = counts[k] as f64 / draws as f64;
            assert!((freq - p).abs() < 0.01, "symbol {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn soft_gumbel_stays_on_simplex() {
        let streams = Streams::new(78);
        let g = Graph::new(Mode::Train);
        let logits = g.constant(Tensor::row(&[0.3, -1.0, 2.0, 0.0]));
        for i in 0..50 {
            let mut rng = streams.open(StreamKey {
                iteration: i,
                episode: 0,
                timestep: 0,
                site: Site::Gumbel { agent: 0 },
            });
            let c = gumbel_softmax_sample(&g, logits, 1.0, &mut rng, false).unwrap();
            let v = g.value(c);
            let sum: f64 = v.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        // tau <= 0 is a parameter error
        let mut rng = streams.open(StreamKey { iteration: 0, episode: 0, timestep: 0, site: Site::Gumbel { agent: 0 } });
        assert!(gumbel_softmax_sample(&g, logits, 0.0, &mut rng, false).is_err());
    }

    #[test]
    fn memory_update_cases() {
        let streams = Streams::new(80);
        let mut rng = streams.open(StreamKey { iteration: 0, episode: 0, timestep: 0, site: Site::MemoryNoise { agent: 0, slot: 0 } });
        let g = Graph::new(Mode::Train);

        let zero = g.constant(Tensor::row(&[0.0]));
        let m1 = update_memory(&g, zero, zero, 0.0, &mut rng).unwrap();
        assert_eq!(g.value(m1).data(), &[0.0]);

        let m = g.constant(Tensor::row(&[0.5]));
        let dm = g.constant(Tensor::row(&[0.3]));
        let m2 = update_memory(&g, m, dm, 0.0, &mut rng).unwrap();
        assert!((g.item(m2) - 0.8f64.tanh()).abs() < 1e-15);
        assert!((g.item(m2) - 0.6640367702678490).abs() < 1e-10);

        // Outputs stay within (-1, 1) even for large drives and noise.
        let big = g.constant(Tensor::row(&[50.0, -50.0]));
        let dm2 = g.constant(Tensor::row(&[5.0, -5.0]));
        let m3 = update_memory(&g, big, dm2, 0.5, &mut rng).unwrap();
        assert!(g.value(m3).data().iter().all(|v| v.abs() < 1.0 + 1e-12));
    }

    #[test]
    fn forward_gradient_matches_central_differences() {
        let arch = small_arch();
        let streams = Streams::new(91);
        let params = Params::init(&arch, &streams);
        let w = comm_world(30);

        let run = |tensors: &[Tensor]| -> f64 {
            let p = Params::from_tensors(arch.clone(), tensors.to_vec());
            let g = Graph::new(Mode::Train);
            let vars = register_params(&g, &p);
            let sim = init_sim(&g, &w);
            let utt = silence_utterances(&g, 2, arch.vocab);
            let obs = observe(&g, &w, &sim, &utt, 0);
            let memory = init_memory(&g, &arch, 2, 0);
            let ctx = PolicyCtx {
                g: &g,
                vars: &vars,
                arch: &arch,
                noise: PolicyNoise::default(),
                streams: &streams,
                iteration: 0,
                episode: 0,
            };
            let (action, bank) = policy_forward(&ctx, &obs, &memory, 0, 0).unwrap();
            let root = g.add(
                g.add(g.sqnorm(action.force), g.sqnorm(action.utterance)),
                g.sqnorm(bank.output),
            );
            g.item(root)
        };

        // Analytic gradients via the tape.
        let g = Graph::new(Mode::Train);
        let vars = register_params(&g, &params);
        let sim = init_sim(&g, &w);
        let utt = silence_utterances(&g, 2, arch.vocab);
        let obs = observe(&g, &w, &sim, &utt, 0);
        let memory = init_memory(&g, &arch, 2, 0);
        let ctx = PolicyCtx {
            g: &g,
            vars: &vars,
            arch: &arch,
            noise: PolicyNoise::default(),
            streams: &streams,
            iteration: 0,
            episode: 0,
        };
        let (action, bank) = policy_forward(&ctx, &obs, &memory, 0, 0).unwrap();
        let root = g.add(
            g.add(g.sqnorm(action.force), g.sqnorm(action.utterance)),
            g.sqnorm(bank.output),
        );
        let analytic = g.backward(root).unwrap().into_param_grads(&g, &params.shapes());

        let numeric = central_diff_grad(&run, params.tensors(), 1e-5);
        let err = max_rel_err(&analytic, &numeric, 1e-4);
        assert!(err < 1e-5, "rel err {err}");
    }
}
