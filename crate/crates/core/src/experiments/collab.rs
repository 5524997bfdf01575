//! Best-response robots for the two-player gridworld and team evaluation.
//!
//! The human model is folded into the environment dynamics, and the robot is
//! a tabular softmax policy trained with REINFORCE against it. A robot with
//! memory also sees a bucketed particle-posterior mean of the human's latent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bpd::LatentPolicyModel;
use crate::coop::TwoPlayerGridworld;
use crate::error::{BpdError, Result};
use crate::experiments::humans::{HumanWalker, SimulatedHuman};
use crate::gridworld::RingRoutes;
use crate::inference::ParticlePosterior;
use crate::math;
use crate::mdp::TabularPolicy;
use crate::optim::Adam;
use crate::par;
use crate::rng::{self, Rng};

/// Model of the human partner used during training or evaluation.
#[derive(Debug, Clone, Copy)]
pub enum HumanModelSpec<'a> {
    /// A fixed Markov policy over the human's own gridworld state (normally
    /// the MaxEnt policy; any tabular policy is accepted).
    MaxEnt(&'a TabularPolicy),
    /// A fresh policy drawn from the latent model at the start of every episode.
    BpdSamplePerEpisode(&'a LatentPolicyModel),
    /// A scripted human with a habitual side.
    FixedScripted(SimulatedHuman),
}

impl HumanModelSpec<'_> {
    pub fn validate(&self, game: &TwoPlayerGridworld) -> Result<()> {
        let w = game.world();
        match self {
            HumanModelSpec::MaxEnt(p) => {
                if p.num_states() != w.num_states() || p.num_actions() != game.num_agent_actions() {
                    return Err(BpdError::ShapeMismatch("human policy does not match the gridworld".into()));
                }
            }
            HumanModelSpec::BpdSamplePerEpisode(m) => {
                if m.num_states() != w.num_states() || m.num_actions() != game.num_agent_actions() {
                    return Err(BpdError::ShapeMismatch("human model does not match the gridworld".into()));
                }
            }
            HumanModelSpec::FixedScripted(h) => {
                h.validate()?;
                w.routes()?;
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            HumanModelSpec::MaxEnt(_) => "maxent",
            HumanModelSpec::BpdSamplePerEpisode(_) => "bpd",
            HumanModelSpec::FixedScripted(_) => "scripted",
        }
    }
}

/// Per-episode instance of a human model.
enum HumanActor<'a> {
    Table(&'a TabularPolicy),
    Sampled(TabularPolicy),
    Scripted(HumanWalker<'a>),
}

impl<'a> HumanActor<'a> {
    fn start(spec: &HumanModelSpec<'a>, game: &'a TwoPlayerGridworld, routes: Option<&'a RingRoutes>, rng: &mut Rng) -> Self {
        match spec {
            HumanModelSpec::MaxEnt(p) => HumanActor::Table(p),
            HumanModelSpec::BpdSamplePerEpisode(m) => {
                let z = m.sample_latent(rng);
                HumanActor::Sampled(m.policy(&z))
            }
            HumanModelSpec::FixedScripted(h) => {
                HumanActor::Scripted(HumanWalker::new(*h, game.world(), routes.expect("validated")))
            }
        }
    }

    fn act(&mut self, game: &TwoPlayerGridworld, joint: usize, rng: &mut Rng) -> usize {
        match self {
            HumanActor::Table(p) => rng::sample_categorical(rng, p.row(game.human_view(joint))),
            HumanActor::Sampled(p) => rng::sample_categorical(rng, p.row(game.human_view(joint))),
            HumanActor::Scripted(w) => {
                let s = game.decode(joint);
                w.act(s.human_cell, s.human_carrying, rng)
            }
        }
    }
}

/// Largest robot table (joint states × memory buckets) training will allocate.
pub const MAX_ROBOT_CONTEXTS: usize = 2_000_000;

/// Settings for the robot's inference summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Buckets per latent dimension.
    pub buckets: usize,
    /// Posterior means are clamped to `[-radius, radius]` before bucketing.
    pub radius: f64,
    pub particles: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            buckets: 5,
            radius: 2.0,
            particles: 64,
        }
    }
}

/// Inference model and bucketing used by a robot with memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMemory {
    pub model: LatentPolicyModel,
    pub cfg: MemoryConfig,
}

impl RobotMemory {
    pub fn num_buckets(&self) -> usize {
        self.cfg.buckets.pow(self.model.latent_dim() as u32)
    }

    /// Flat bucket index of a latent mean.
    pub fn bucket(&self, mean: &[f64]) -> usize {
        let b = self.cfg.buckets;
        let r = self.cfg.radius;
        mean.iter().fold(0, |acc, &m| {
            let u = (m.clamp(-r, r) + r) / (2.0 * r);
            acc * b + ((u * b as f64) as usize).min(b - 1)
        })
    }
}

/// Tabular robot policy over joint states (times memory buckets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPolicy {
    pub num_joint_states: usize,
    pub num_actions: usize,
    pub memory: Option<RobotMemory>,
    /// Row-major `[context][action]`, context = `joint · buckets + bucket`.
    pub probs: Vec<f64>,
}

impl RobotPolicy {
    pub fn uniform(game: &TwoPlayerGridworld, memory: Option<RobotMemory>) -> Self {
        let na = game.num_agent_actions();
        let nb = memory.as_ref().map_or(1, RobotMemory::num_buckets);
        let n = game.num_states() * nb;
        RobotPolicy {
            num_joint_states: game.num_states(),
            num_actions: na,
            memory,
            probs: vec![1.0 / na as f64; n * na],
        }
    }

    pub fn num_contexts(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn row(&self, ctx: usize) -> &[f64] {
        &self.probs[ctx * self.num_actions..(ctx + 1) * self.num_actions]
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..self.num_contexts() {
            let row = self.row(c);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(BpdError::Numerical(format!("robot context {c} is not a distribution")));
            }
        }
        Ok(())
    }

    /// The memoryless policy as a plain tabular policy over joint states.
    pub fn as_tabular(&self) -> Result<TabularPolicy> {
        if self.memory.is_some() {
            return Err(BpdError::config("robot.memory", "a robot with memory is not Markov in the joint state"));
        }
        TabularPolicy::new(self.num_joint_states, self.num_actions, self.probs.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: RobotPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Tracks the robot's memory context through an episode.
struct MemoryTracker<'a> {
    mem: &'a RobotMemory,
    posterior: ParticlePosterior,
}

impl<'a> MemoryTracker<'a> {
    fn new(mem: &'a RobotMemory, rng: &mut Rng) -> Self {
        let posterior = ParticlePosterior::from_prior(mem.model.latent_dim(), mem.cfg.particles.max(1), rng)
            .expect("at least one particle");
        MemoryTracker { mem, posterior }
    }

    fn bucket(&self) -> usize {
        self.mem.bucket(&self.posterior.mean())
    }

    fn observe(&mut self, human_state: usize, human_action: usize) {
        // softmax likelihoods are positive, so the update cannot fail
        let _ = self.posterior.update(&self.mem.model, human_state, human_action);
    }
}

/// One robot decision recorded for the policy gradient.
#[derive(Debug, Clone, Copy)]
struct Decision {
    ctx: usize,
    action: usize,
    reward: f64,
}

fn run_episode(
    game: &TwoPlayerGridworld,
    robot: &RobotPolicy,
    human: &HumanModelSpec<'_>,
    routes: Option<&RingRoutes>,
    start: usize,
    horizon: usize,
    rng: &mut Rng,
) -> (f64, Vec<Decision>) {
    let mut actor = HumanActor::start(human, game, routes, rng);
    let mut tracker = robot.memory.as_ref().map(|m| MemoryTracker::new(m, rng));
    let nb = robot.memory.as_ref().map_or(1, RobotMemory::num_buckets);
    let g = game.discount();
    let mut state = start;
    let mut ret = 0.0;
    let mut disc = 1.0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let ctx = state * nb + tracker.as_ref().map_or(0, MemoryTracker::bucket);
        let a_r = rng::sample_categorical(rng, robot.row(ctx));
        let a_h = actor.act(game, state, rng);
        if let Some(t) = tracker.as_mut() {
            t.observe(game.human_view(state), a_h);
        }
        let (next, r) = game.step(state, a_h, a_r);
        disc *= g;
        ret += disc * r;
        out.push(Decision {
            ctx,
            action: a_r,
            reward: r,
        });
        state = next;
    }
    (ret, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollabConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub horizon: usize,
    pub lr: f64,
    /// Step size of the per-context running-average baseline.
    pub baseline_lr: f64,
    /// Entropy bonus per visited context, decayed linearly to zero over
    /// training; keeps the robot from locking into a deadlock too early.
    pub entropy_coef: f64,
    pub memory: MemoryConfig,
    pub seed: u64,
}

impl Default for CollabConfig {
    fn default() -> Self {
        CollabConfig {
            iterations: 2000,
            episodes_per_iter: 128,
            horizon: 60,
            lr: 0.1,
            baseline_lr: 0.1,
            entropy_coef: 0.1,
            memory: MemoryConfig::default(),
            seed: 0,
        }
    }
}

impl CollabConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("collab.iterations", self.iterations),
            ("collab.episodes_per_iter", self.episodes_per_iter),
            ("collab.horizon", self.horizon),
            ("collab.memory.buckets", self.memory.buckets),
            ("collab.memory.particles", self.memory.particles),
        ] {
            if v == 0 {
                return Err(BpdError::config(name, "must be at least 1"));
            }
        }
        if !(self.lr > 0.0) || !(self.baseline_lr > 0.0 && self.baseline_lr <= 1.0) {
            return Err(BpdError::config("collab.lr", "step sizes must be positive (baseline_lr ≤ 1)"));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(BpdError::config("collab.entropy_coef", "must be non-negative"));
        }
        if !(self.memory.radius > 0.0) {
            return Err(BpdError::config("collab.memory.radius", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub robot: RobotPolicy,
    /// Mean discounted team return of each training batch.
    pub curve: Vec<f64>,
}

/// Train a robot to maximize team return against `human`.
///
/// With `memory = Some(model)` the robot also conditions on the bucketed
/// particle-posterior mean of the human's latent under `model`.
pub fn train_best_response(
    game: &TwoPlayerGridworld,
    human: &HumanModelSpec<'_>,
    memory: Option<&LatentPolicyModel>,
    cfg: &CollabConfig,
) -> Result<BestResponse> {
    cfg.validate()?;
    human.validate(game)?;
    let routes = game.world().routes().ok();
    let memory = memory.map(|m| RobotMemory {
        model: m.clone(),
        cfg: cfg.memory,
    });
    if let Some(m) = &memory {
        if m.model.num_states() != game.world().num_states() {
            return Err(BpdError::ShapeMismatch("memory model does not match the gridworld".into()));
        }
        let contexts = (m.cfg.buckets as u128)
            .checked_pow(m.model.latent_dim() as u32)
            .map(|b| b * game.num_states() as u128);
        if contexts.is_none_or(|c| c > MAX_ROBOT_CONTEXTS as u128) {
            return Err(BpdError::config(
                "collab.memory.buckets",
                format!(
                    "{}^{} buckets × {} joint states exceeds {MAX_ROBOT_CONTEXTS} robot contexts; \
                     use fewer buckets or a smaller latent",
                    m.cfg.buckets,
                    m.model.latent_dim(),
                    game.num_states()
                ),
            ));
        }
    }
    let mut robot = RobotPolicy::uniform(game, memory);
    let na = robot.num_actions;
    let nctx = robot.num_contexts();
    let mut logits = vec![0.0; nctx * na];
    let mut baseline = vec![0.0; nctx];
    let mut adam = Adam::new(logits.len(), cfg.lr, 0.9);
    let starts = game.starts();
    let g = game.discount();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let episodes = par::map_range(cfg.episodes_per_iter, |e| {
            let idx = (it * cfg.episodes_per_iter + e) as u64;
            let mut r = rng::stream(cfg.seed, "collab.train", idx);
            run_episode(game, &robot, human, routes.as_ref(), starts[e % starts.len()], cfg.horizon, &mut r)
        });
        let mut grad = vec![0.0; logits.len()];
        let mut base_sum = vec![0.0; nctx];
        let mut base_n = vec![0u32; nctx];
        let scale = 1.0 / cfg.episodes_per_iter as f64;
        let ent_coef = cfg.entropy_coef * (1.0 - it as f64 / cfg.iterations as f64) * scale;
        for (_, decisions) in &episodes {
            let mut go = 0.0;
            let mut to_go = vec![0.0; decisions.len()];
            for (t, d) in decisions.iter().enumerate().rev() {
                go = d.reward + g * go;
                to_go[t] = go;
            }
            let mut disc = g;
            for (d, &ret) in decisions.iter().zip(&to_go) {
                let adv = disc * (ret - baseline[d.ctx]) * scale;
                let row = robot.row(d.ctx);
                let h = math::entropy(row);
                for a in 0..na {
                    let ind = if a == d.action { 1.0 } else { 0.0 };
                    // descent direction on −(J + entropy bonus)
                    grad[d.ctx * na + a] -= adv * (ind - row[a]);
                    if row[a] > 0.0 {
                        grad[d.ctx * na + a] += ent_coef * row[a] * (row[a].ln() + h);
                    }
                }
                base_sum[d.ctx] += ret;
                base_n[d.ctx] += 1;
                disc *= g;
            }
        }
        curve.push(math::mean(&episodes.iter().map(|(r, _)| *r).collect::<Vec<_>>()));
        adam.step(&mut logits, &grad);
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(BpdError::Diverged {
                iteration: it,
                reason: "non-finite robot logits".into(),
                log_csv: curve.iter().enumerate().map(|(i, r)| format!("{i},{r}\n")).collect(),
            });
        }
        for c in 0..nctx {
            if base_n[c] > 0 {
                baseline[c] += cfg.baseline_lr * (base_sum[c] / base_n[c] as f64 - baseline[c]);
            }
            let row = math::softmax(&logits[c * na..(c + 1) * na]);
            robot.probs[c * na..(c + 1) * na].copy_from_slice(&row);
        }
    }
    Ok(BestResponse { robot, curve })
}

/// Mean discounted team return with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamEval {
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std: f64,
    pub episodes: usize,
}

/// Roll out robot and human together. Each episode plays every start state
/// once and averages the returns; the interval is over episodes.
pub fn eval_team(
    game: &TwoPlayerGridworld,
    robot: &RobotPolicy,
    human: &HumanModelSpec<'_>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TeamEval> {
    human.validate(game)?;
    robot.validate()?;
    if robot.num_joint_states != game.num_states() || robot.num_actions != game.num_agent_actions() {
        return Err(BpdError::ShapeMismatch("robot policy does not match the game".into()));
    }
    if episodes == 0 || horizon == 0 {
        return Err(BpdError::config("episodes", "episodes and horizon must be at least 1"));
    }
    let routes = game.world().routes().ok();
    let starts = game.starts();
    let returns = par::map_range(episodes, |e| {
        let total: f64 = starts
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let mut r = rng::stream(seed, "collab.eval", (e * starts.len() + k) as u64);
                run_episode(game, robot, human, routes.as_ref(), s, horizon, &mut r).0
            })
            .sum();
        total / starts.len() as f64
    });
    let mean = math::mean(&returns);
    let std = math::std_dev(&returns);
    let half = 1.96 * std / (episodes as f64).sqrt();
    Ok(TeamEval {
        mean_return: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        std,
        episodes,
    })
}

/// Population version of [`eval_team`]: each episode pairs the robot with the
/// next human of `humans` (cyclically).
pub fn eval_team_population(
    game: &TwoPlayerGridworld,
    robot: &RobotPolicy,
    humans: &[SimulatedHuman],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TeamEval> {
    if humans.is_empty() {
        return Err(BpdError::Empty("human population".into()));
    }
    let per: Vec<f64> = (0..episodes)
        .map(|e| {
            let spec = HumanModelSpec::FixedScripted(humans[e % humans.len()]);
            eval_team(game, robot, &spec, 1, horizon, seed.wrapping_add(e as u64)).map(|t| t.mean_return)
        })
        .collect::<Result<_>>()?;
    let mean = math::mean(&per);
    let std = math::std_dev(&per);
    let half = 1.96 * std / (episodes.max(1) as f64).sqrt();
    Ok(TeamEval {
        mean_return: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        std,
        episodes,
    })
}

/// The deterministic per-state policy of a fully consistent scripted human.
pub fn scripted_policy_table(game: &TwoPlayerGridworld, human: &SimulatedHuman) -> Result<TabularPolicy> {
    if human.consistency != 1.0 {
        return Err(BpdError::config("human.consistency", "only a fully consistent human is Markov"));
    }
    let w = game.world();
    let routes = w.routes()?;
    let mut rng = rng::stream(0, "unused", 0);
    let actions: Vec<usize> = (0..w.num_states())
        .map(|s| {
            let (cell, carrying) = w.decode(s);
            HumanWalker::new(*human, w, &routes).act(cell, carrying, &mut rng)
        })
        .collect();
    TabularPolicy::deterministic(game.num_agent_actions(), &actions)
}

/// One row of the collaboration results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollabRow {
    pub robot: String,
    pub human: String,
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn write_collab_csv<W: Write>(w: W, rows: &[CollabRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| BpdError::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}
