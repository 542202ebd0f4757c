//! Worker-side pieces of asynchronous actor-critic training with imitating
//! agents: rollouts, losses, testing episodes and the curriculum controller.
//!
//! The shared parameter store and the scheduling of workers live in the std
//! crate; everything here is single-owner and deterministic given its seed.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expert::Demonstration;
use crate::geometry::{box_delta, ActionDelta};
use crate::mdp::{reset, Episode, EpisodeConfig, Observation};
use crate::nn::loss::{actor_critic_loss, discounted_returns, masked_l1, ActorCriticStep};
use crate::nn::{ModelConfig, OutputGrad, PolicyValueNet, RecurrentState, Tape, ACTION_DIM};
use crate::optim::clip_grad_norm;
use crate::rng::PortableRng;
use crate::synthworld::SyntheticSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Training workers `P`, split evenly between imitation and RL.
    pub workers: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    /// L2 weight decay, applied to imitation updates only.
    pub weight_decay: f64,
    /// Budget of finished training episodes.
    pub episodes: usize,
    pub sigma_min: f64,
    pub value_coef: f64,
    /// Reported only: with a constant sigma the entropy has no parameter gradient.
    pub entropy_coef: f64,
    pub window: usize,
    pub initial_horizon: usize,
    pub horizon_increment: usize,
    pub imitation_only: bool,
    pub rl_only: bool,
    pub curriculum_disabled: bool,
    pub seed: u64,
    pub testing_workers: usize,
    /// Global gradient-norm cap per rollout; 0 disables.
    pub grad_clip: f64,
    /// Context factor of the crop.
    pub context: f64,
    /// Write a checkpoint every this many episodes; 0 only at the end.
    pub checkpoint_every: usize,
    /// Single-threaded round-robin scheduling.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 16,
            t_max: 5,
            gamma: 1.0,
            tau: 0.25,
            lr: 1e-4,
            weight_decay: 1e-4,
            episodes: 3000,
            sigma_min: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.0,
            window: 100,
            initial_horizon: 8,
            horizon_increment: 8,
            imitation_only: false,
            rl_only: false,
            curriculum_disabled: false,
            seed: 0,
            testing_workers: 1,
            grad_clip: 0.0,
            context: 1.5,
            checkpoint_every: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.workers == 0 {
            return err("workers must be >= 1");
        }
        if self.imitation_only && self.rl_only {
            return err("imitation_only and rl_only are exclusive");
        }
        if !self.imitation_only && !self.rl_only && self.workers % 2 != 0 {
            return err("workers must be even when both worker kinds are enabled");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return err("tau must lie in (0, 1)");
        }
        if self.t_max == 0 || self.window == 0 || self.initial_horizon == 0 {
            return err("t_max, window and initial_horizon must be >= 1");
        }
        if !(self.lr > 0.0)
            || self.weight_decay < 0.0
            || !(self.sigma_min > 0.0)
            || self.value_coef < 0.0
        {
            return err("lr and sigma_min must be > 0; weight_decay and value_coef >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err("gamma must lie in [0, 1]");
        }
        if self.testing_workers == 0 {
            return err("at least one testing worker is required");
        }
        if self.grad_clip < 0.0 || !(self.context > 0.0) {
            return err("grad_clip >= 0 and context > 0 required");
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("workers", format!("{}", self.workers)),
            ("t_max", format!("{}", self.t_max)),
            ("gamma", format!("{}", self.gamma)),
            ("tau", format!("{}", self.tau)),
            ("lr", format!("{}", self.lr)),
            ("weight_decay", format!("{}", self.weight_decay)),
            ("episodes", format!("{}", self.episodes)),
            ("sigma_min", format!("{}", self.sigma_min)),
            ("value_coef", format!("{}", self.value_coef)),
            ("entropy_coef", format!("{}", self.entropy_coef)),
            ("window", format!("{}", self.window)),
            ("initial_horizon", format!("{}", self.initial_horizon)),
            ("horizon_increment", format!("{}", self.horizon_increment)),
            ("imitation_only", format!("{}", self.imitation_only)),
            ("rl_only", format!("{}", self.rl_only)),
            (
                "curriculum_disabled",
                format!("{}", self.curriculum_disabled),
            ),
            ("seed", format!("{}", self.seed)),
            ("testing_workers", format!("{}", self.testing_workers)),
            ("grad_clip", format!("{}", self.grad_clip)),
            ("context", format!("{}", self.context)),
            ("checkpoint_every", format!("{}", self.checkpoint_every)),
            ("deterministic", format!("{}", self.deterministic)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("bad value `{v}` for `{key}`"));
        macro_rules! parse {
            ($f:expr) => {
                $f = v.parse().map_err(|_| bad())?
            };
        }
        match key {
            "workers" => parse!(self.workers),
            "t_max" => parse!(self.t_max),
            "gamma" => parse!(self.gamma),
            "tau" => parse!(self.tau),
            "lr" => parse!(self.lr),
            "weight_decay" => parse!(self.weight_decay),
            "episodes" => parse!(self.episodes),
            "sigma_min" => parse!(self.sigma_min),
            "value_coef" => parse!(self.value_coef),
            "entropy_coef" => parse!(self.entropy_coef),
            "window" => parse!(self.window),
            "initial_horizon" => parse!(self.initial_horizon),
            "horizon_increment" => parse!(self.horizon_increment),
            "imitation_only" => parse!(self.imitation_only),
            "rl_only" => parse!(self.rl_only),
            "curriculum_disabled" => parse!(self.curriculum_disabled),
            "seed" => parse!(self.seed),
            "testing_workers" => parse!(self.testing_workers),
            "grad_clip" => parse!(self.grad_clip),
            "context" => parse!(self.context),
            "checkpoint_every" => parse!(self.checkpoint_every),
            "deterministic" => parse!(self.deterministic),
            other => return Err(Error::Config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    /// Kinds of the training workers, interleaved so round-robin order alternates.
    pub fn worker_kinds(&self) -> Vec<WorkerKind> {
        (0..self.workers)
            .map(|i| {
                if self.imitation_only {
                    WorkerKind::Imitation
                } else if self.rl_only || i % 2 == 1 {
                    WorkerKind::Rl
                } else {
                    WorkerKind::Imitation
                }
            })
            .collect()
    }

    /// Weight decay that goes with an update of `kind`.
    pub fn weight_decay_for(&self, kind: WorkerKind) -> f64 {
        match kind {
            WorkerKind::Imitation => self.weight_decay,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkerKind {
    Imitation,
    Rl,
    Testing,
}

impl WorkerKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorkerKind::Imitation => "imitation",
            WorkerKind::Rl => "rl",
            WorkerKind::Testing => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imitation" => Ok(WorkerKind::Imitation),
            "rl" => Ok(WorkerKind::Rl),
            "test" => Ok(WorkerKind::Testing),
            other => Err(Error::Config(format!("unknown worker kind `{other}`"))),
        }
    }
}

/// A training sequence with its positive demonstration.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub sequence: SyntheticSequence,
    pub demo: Demonstration,
}

/// Pairs sequences with their positive demonstrations; other sequences are dropped.
pub fn build_pool(
    sequences: Vec<SyntheticSequence>,
    demos: &[Demonstration],
) -> Result<Vec<TrainingItem>> {
    let mut pool = Vec::new();
    for seq in sequences {
        if let Some(d) = demos.iter().find(|d| d.positive && d.matches(&seq)) {
            let demo = d.clone();
            pool.push(TrainingItem {
                sequence: seq,
                demo,
            });
        }
    }
    if pool.is_empty() {
        return Err(Error::Config(
            "no sequence has a positive demonstration".into(),
        ));
    }
    Ok(pool)
}

/// Longest episode in the pool, the curriculum ceiling.
pub fn max_horizon(pool: &[TrainingItem]) -> usize {
    pool.iter().map(|it| it.sequence.steps()).max().unwrap_or(1)
}

/// One transition of a rollout. Observations stay on the network tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// Action taken: `mu` for greedy workers, the clipped sample for RL.
    pub action: ActionDelta,
    pub mu: ActionDelta,
    pub sigma: Option<[f64; ACTION_DIM]>,
    pub reward: f64,
    pub demo_reward: Option<f64>,
    /// `phi(b^(d)_t, b_{t-1})` for imitation steps.
    pub target: Option<ActionDelta>,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub t_max: usize,
}

impl RolloutBuffer {
    pub fn new(t_max: usize) -> Self {
        Self {
            transitions: Vec::with_capacity(t_max),
            t_max,
        }
    }

    pub fn push(&mut self, tr: Transition) -> Result<()> {
        if self.transitions.len() >= self.t_max {
            return Err(Error::State("rollout buffer is full"));
        }
        self.transitions.push(tr);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `m_i = 1` iff the agent's reward is strictly below the demonstrator's.
    pub fn masks(&self) -> Vec<bool> {
        self.transitions
            .iter()
            .map(|t| t.demo_reward.is_some_and(|d| t.reward < d))
            .collect()
    }

    /// Masked L1 between targets and taken actions.
    pub fn imitation_loss(&self) -> Result<(f64, Vec<OutputGrad>)> {
        let targets = self
            .transitions
            .iter()
            .map(|t| {
                t.target
                    .ok_or(Error::State("imitation step without a target"))
            })
            .collect::<Result<Vec<_>>>()?;
        let acts: Vec<ActionDelta> = self.transitions.iter().map(|t| t.action).collect();
        Ok(masked_l1(&acts, &targets, &self.masks()))
    }

    /// Actor-critic loss with returns bootstrapped from `bootstrap`.
    pub fn actor_critic_loss(
        &self,
        gamma: f64,
        bootstrap: f64,
        value_coef: f64,
    ) -> Result<(f64, Vec<OutputGrad>)> {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let returns = discounted_returns(&rewards, gamma, bootstrap);
        let steps = self
            .transitions
            .iter()
            .zip(&returns)
            .map(|(t, r)| {
                Ok(ActorCriticStep {
                    mu: t.mu,
                    action: t.action,
                    sigma: t.sigma.ok_or(Error::State("rl step without sigma"))?,
                    value: t.value,
                    ret: *r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(actor_critic_loss(&steps, value_coef))
    }
}

/// Exploration scale `max(|mu - a_gt|, sigma_min)` per component.
pub fn exploration_sigma(
    mu: &ActionDelta,
    gt_action: &ActionDelta,
    sigma_min: f64,
) -> [f64; ACTION_DIM] {
    core::array::from_fn(|c| libm::fabs(mu.0[c] - gt_action.0[c]).max(sigma_min))
}

/// Entropy of a diagonal Gaussian; constant in the parameters here.
pub fn gaussian_entropy(sigma: &[f64; ACTION_DIM]) -> f64 {
    sigma
        .iter()
        .map(|s| 0.5 * (1.0 + 1.837_877_066_409_345_3) + libm::log(*s))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub item: usize,
    pub horizon: usize,
    pub steps: usize,
    pub sum_reward: f64,
    pub sum_demo_reward: f64,
    pub loss: f64,
}

/// Outcome of one rollout of at most `t_max` steps.
#[derive(Debug, Clone)]
pub struct RolloutReport {
    pub kind: WorkerKind,
    pub grads: Vec<f64>,
    pub loss: f64,
    pub steps: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub finished: Option<EpisodeSummary>,
}

struct Active<'a> {
    item: usize,
    episode: Episode<'a>,
    obs: Observation,
    rs: RecurrentState,
    horizon: usize,
    demo_reward: f64,
    loss: f64,
}

/// A training worker owning a local parameter copy `theta'`.
pub struct Worker<'a> {
    pub kind: WorkerKind,
    pub id: usize,
    net: PolicyValueNet,
    rng: PortableRng,
    pool: &'a [TrainingItem],
    cfg: TrainConfig,
    ep_cfg: EpisodeConfig,
    active: Option<Active<'a>>,
    tape: Tape,
}

impl<'a> Worker<'a> {
    pub fn new(
        kind: WorkerKind,
        id: usize,
        model: &ModelConfig,
        cfg: &TrainConfig,
        pool: &'a [TrainingItem],
    ) -> Result<Self> {
        if kind == WorkerKind::Testing {
            return Err(Error::Config("testing workers use TestingWorker".into()));
        }
        if pool.is_empty() {
            return Err(Error::Config("empty training pool".into()));
        }
        Ok(Self {
            kind,
            id,
            net: PolicyValueNet::zeroed(model)?,
            rng: PortableRng::derive(cfg.seed, 0x1000 + id as u64),
            pool,
            cfg: cfg.clone(),
            ep_cfg: EpisodeConfig {
                context: cfg.context,
                patch_size: model.patch_size,
                horizon: None,
            },
            active: None,
            tape: Tape::new(),
        })
    }

    /// Destination for a parameter snapshot.
    pub fn local_params_mut(&mut self) -> &mut [f64] {
        &mut self.net.params
    }

    pub fn net(&self) -> &PolicyValueNet {
        &self.net
    }

    pub fn in_episode(&self) -> bool {
        self.active.is_some()
    }

    /// Starts an episode on pool entry `item`, truncated at `horizon` steps.
    pub fn start_episode(&mut self, item: usize, horizon: usize) -> Result<()> {
        let it = self.pool.get(item).ok_or(Error::Length {
            what: "pool index",
            left: item,
            right: self.pool.len(),
        })?;
        if !it.demo.positive || !it.demo.matches(&it.sequence) {
            return Err(Error::Config(format!(
                "demonstration `{}` is not a positive demonstration of `{}`",
                it.demo.sequence_id, it.sequence.id
            )));
        }
        let (episode, obs) = reset(
            &it.sequence,
            &self.ep_cfg.with_horizon(Some(horizon.max(1))),
        )?;
        self.active = Some(Active {
            item,
            horizon: episode.last_index(),
            episode,
            obs,
            rs: self.net.initial_state(),
            demo_reward: 0.0,
            loss: 0.0,
        });
        Ok(())
    }

    /// Runs up to `t_max` steps and returns the gradient of the rollout loss
    /// at the local parameters. A new episode is drawn uniformly from the
    /// pool, truncated at `horizon`, when none is running.
    pub fn rollout(&mut self, horizon: usize) -> Result<RolloutReport> {
        if self.active.is_none() {
            let item = self.rng.below(self.pool.len());
            self.start_episode(item, horizon)?;
        }
        let mut act = self.active.take().expect("episode started above");
        self.tape.clear();
        let mut buf = RolloutBuffer::new(self.cfg.t_max);
        let demo = &self.pool[act.item].demo;
        let mut rs = act.rs.clone();
        let mut obs = act.obs.clone();
        let mut done = false;
        while buf.len() < self.cfg.t_max && !done {
            let (out, next_rs) = self.net.forward_recorded(&obs, &rs, &mut self.tape)?;
            let t = act.episode.t();
            let prev = act.episode.prev_box();
            let tr = match self.kind {
                WorkerKind::Imitation => {
                    let target = box_delta(&demo.boxes[t], &prev)?.action;
                    let outcome = act.episode.step(&out.mu)?;
                    done = outcome.done;
                    if let Some(o) = outcome.observation {
                        obs = o;
                    }
                    Transition {
                        action: out.mu,
                        mu: out.mu,
                        sigma: None,
                        reward: outcome.reward,
                        demo_reward: Some(demo.reward_at(t)),
                        target: Some(target),
                        value: out.value,
                        done,
                    }
                }
                _ => {
                    let gt_action = act.episode.oracle_action()?;
                    let sigma = exploration_sigma(&out.mu, &gt_action, self.cfg.sigma_min);
                    let a = ActionDelta(core::array::from_fn(|c| {
                        (out.mu.0[c] + sigma[c] * self.rng.normal()).clamp(-1.0, 1.0)
                    }));
                    let outcome = act.episode.step(&a)?;
                    done = outcome.done;
                    if let Some(o) = outcome.observation {
                        obs = o;
                    }
                    Transition {
                        action: a,
                        mu: out.mu,
                        sigma: Some(sigma),
                        reward: outcome.reward,
                        demo_reward: Some(demo.reward_at(t)),
                        target: None,
                        value: out.value,
                        done,
                    }
                }
            };
            act.demo_reward += demo.reward_at(t);
            buf.push(tr)?;
            rs = next_rs;
        }

        let (mut loss, d_out) = match self.kind {
            WorkerKind::Imitation => buf.imitation_loss()?,
            _ => {
                let bootstrap = if done {
                    0.0
                } else {
                    self.net.forward(&obs, &rs)?.0.value
                };
                buf.actor_critic_loss(self.cfg.gamma, bootstrap, self.cfg.value_coef)?
            }
        };
        if self.kind == WorkerKind::Rl && self.cfg.entropy_coef != 0.0 {
            let h: f64 = buf
                .transitions
                .iter()
                .filter_map(|t| t.sigma)
                .map(|s| gaussian_entropy(&s))
                .sum();
            loss -= self.cfg.entropy_coef * h;
        }
        let mut grads = vec![0.0; self.net.num_params()];
        if d_out.iter().any(|g| *g != OutputGrad::default()) {
            self.net.backward(&self.tape, &d_out, &mut grads)?;
        }
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        act.loss += loss;

        let steps = buf.len();
        let finished = if done {
            Some(EpisodeSummary {
                item: act.item,
                horizon: act.horizon,
                steps: act.episode.last_index(),
                sum_reward: act.episode.total_reward(),
                sum_demo_reward: act.demo_reward,
                loss: act.loss,
            })
        } else {
            act.rs = rs;
            act.obs = obs;
            self.active = Some(act);
            None
        };
        Ok(RolloutReport {
            kind: self.kind,
            grads,
            loss,
            steps,
            grad_norm,
            finished,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub item: usize,
    pub horizon: usize,
    pub success: bool,
    pub sum_reward: f64,
    pub sum_demo_reward: f64,
}

/// Greedy episode over `min(horizon, T)` steps; success iff the agent's
/// reward sum is at least the demonstrator's over the same frames.
pub fn testing_episode(
    net: &PolicyValueNet,
    seq: &SyntheticSequence,
    demo: &Demonstration,
    horizon: usize,
    context: f64,
) -> Result<TestOutcome> {
    if !demo.positive || !demo.matches(seq) {
        return Err(Error::Config(format!(
            "demonstration `{}` is not a positive demonstration of `{}`",
            demo.sequence_id, seq.id
        )));
    }
    let cfg = EpisodeConfig {
        context,
        patch_size: net.config().patch_size,
        horizon: Some(horizon.max(1)),
    };
    let (mut ep, mut obs) = reset(seq, &cfg)?;
    let mut rs = net.initial_state();
    let mut demo_sum = 0.0;
    loop {
        let t = ep.t();
        let (out, next) = net.forward(&obs, &rs)?;
        rs = next;
        let o = ep.step(&out.mu)?;
        demo_sum += demo.reward_at(t);
        match o.observation {
            Some(n) if !o.done => obs = n,
            _ => break,
        }
    }
    let sum = ep.total_reward();
    Ok(TestOutcome {
        item: 0,
        horizon: ep.last_index(),
        success: sum >= demo_sum,
        sum_reward: sum,
        sum_demo_reward: demo_sum,
    })
}

/// Picks pool entries for testing episodes and runs them.
pub struct TestingWorker<'a> {
    pub id: usize,
    rng: PortableRng,
    pool: &'a [TrainingItem],
    context: f64,
}

impl<'a> TestingWorker<'a> {
    pub fn new(id: usize, cfg: &TrainConfig, pool: &'a [TrainingItem]) -> Self {
        Self {
            id,
            rng: PortableRng::derive(cfg.seed, 0x2000 + id as u64),
            pool,
            context: cfg.context,
        }
    }

    pub fn run(&mut self, net: &PolicyValueNet, horizon: usize) -> Result<TestOutcome> {
        let item = self.rng.below(self.pool.len());
        let it = &self.pool[item];
        let mut out = testing_episode(net, &it.sequence, &it.demo, horizon, self.context)?;
        out.item = item;
        Ok(out)
    }
}

/// Episode horizon `T^` and the window of recent test outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub horizon: usize,
    pub max_horizon: usize,
    pub increment: usize,
    pub window: usize,
    outcomes: VecDeque<bool>,
    pub total_tests: usize,
    pub total_successes: usize,
    pub advances: usize,
    pub enabled: bool,
}

impl CurriculumState {
    pub fn new(initial: usize, increment: usize, window: usize, max_horizon: usize) -> Self {
        Self {
            horizon: initial.min(max_horizon).max(1),
            max_horizon,
            increment,
            window,
            outcomes: VecDeque::with_capacity(window),
            total_tests: 0,
            total_successes: 0,
            advances: 0,
            enabled: true,
        }
    }

    /// Horizon fixed at `max_horizon` from the start.
    pub fn disabled(window: usize, max_horizon: usize) -> Self {
        Self {
            enabled: false,
            ..Self::new(max_horizon, 0, window, max_horizon)
        }
    }

    pub fn from_config(cfg: &TrainConfig, max_horizon: usize) -> Self {
        if cfg.curriculum_disabled {
            Self::disabled(cfg.window, max_horizon)
        } else {
            Self::new(
                cfg.initial_horizon,
                cfg.horizon_increment,
                cfg.window,
                max_horizon,
            )
        }
    }

    /// Records a test outcome, keeping the last `window` of them.
    pub fn push(&mut self, success: bool) {
        if self.outcomes.len() == self.window {
            self.outcomes.pop_front();
        }
        self.outcomes.push_back(success);
        self.total_tests += 1;
        self.total_successes += success as usize;
    }

    pub fn filled(&self) -> usize {
        self.outcomes.len()
    }

    pub fn window_successes(&self) -> usize {
        self.outcomes.iter().filter(|s| **s).count()
    }

    pub fn success_ratio(&self) -> f64 {
        if self.outcomes.is_empty() {
            0.0
        } else {
            self.window_successes() as f64 / self.outcomes.len() as f64
        }
    }

    /// Grows `T^` by the increment (capped at the maximum) once a full window
    /// reaches a success ratio of at least `tau`; the window then restarts.
    pub fn advance(&mut self, tau: f64) -> bool {
        if !self.enabled || self.outcomes.len() < self.window {
            return false;
        }
        if (self.window_successes() as f64) < tau * self.window as f64 {
            return false;
        }
        self.outcomes.clear();
        let next = (self.horizon + self.increment).min(self.max_horizon);
        if next == self.horizon {
            return false;
        }
        self.horizon = next;
        self.advances += 1;
        true
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub episode: usize,
    pub kind: WorkerKind,
    pub loss: f64,
    pub sum_reward: f64,
    pub sum_demo_reward: f64,
    pub horizon: usize,
    pub version: u64,
}

impl LogRecord {
    pub const HEADER: &'static str =
        "episode,worker_kind,loss,sum_reward,sum_demo_reward,That,version";

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.kind.name(),
            self.loss,
            self.sum_reward,
            self.sum_demo_reward,
            self.horizon,
            self.version
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Config(format!("malformed log line `{line}`"));
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(Self {
            episode: f[0].parse().map_err(|_| bad())?,
            kind: WorkerKind::parse(f[1])?,
            loss: f[2].parse().map_err(|_| bad())?,
            sum_reward: f[3].parse().map_err(|_| bad())?,
            sum_demo_reward: f[4].parse().map_err(|_| bad())?,
            horizon: f[5].parse().map_err(|_| bad())?,
            version: f[6].parse().map_err(|_| bad())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{run_expert, ExpertKind};
    use crate::geometry::BBox;
    use crate::nn::loss::gaussian_log_density;
    use crate::optim::{AdamConfig, AdamState};
    use crate::synthworld::{generate_sequence, Frame, WorldConfig};

    fn static_sequence(len: usize) -> SyntheticSequence {
        let mut f = Frame::new(64, 64, 1);
        for (i, p) in f.pixels.iter_mut().enumerate() {
            *p = ((i * 37) % 251) as u8;
        }
        SyntheticSequence {
            id: "static".into(),
            frames: vec![f; len],
            groundtruth: vec![BBox::new(20.0, 20.0, 16.0, 16.0); len],
            seed: 0,
            config_digest: String::new(),
        }
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            patch_size: 16,
            fc: vec![8],
            recurrent: 6,
            ..ModelConfig::default()
        }
    }

    fn pool_with_demo_rewards(rewards: &[f64]) -> Vec<TrainingItem> {
        let seq = static_sequence(rewards.len() + 1);
        let mut demo = run_expert(&ExpertKind::oracle(0.0), &seq, 1).unwrap();
        demo.rewards = rewards.to_vec();
        vec![TrainingItem {
            sequence: seq,
            demo,
        }]
    }

    #[test]
    fn config_validation_and_text() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let mut back = TrainConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("momentum", "1").is_err());
        let odd = TrainConfig {
            workers: 3,
            ..TrainConfig::default()
        };
        assert!(odd.validate().is_err());
        let odd_ok = TrainConfig {
            workers: 3,
            imitation_only: true,
            ..TrainConfig::default()
        };
        odd_ok.validate().unwrap();
        assert!(TrainConfig {
            tau: 1.0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn worker_split() {
        let cfg = TrainConfig {
            workers: 4,
            ..TrainConfig::default()
        };
        let k = cfg.worker_kinds();
        assert_eq!(k.iter().filter(|k| **k == WorkerKind::Imitation).count(), 2);
        let only = TrainConfig {
            imitation_only: true,
            ..cfg
        };
        assert!(only
            .worker_kinds()
            .iter()
            .all(|k| *k == WorkerKind::Imitation));
        assert_eq!(only.weight_decay_for(WorkerKind::Rl), 0.0);
    }

    #[test]
    fn sigma_shrinks_to_minimum_on_exact_mu() {
        let a = ActionDelta::new(0.1, -0.2, 0.3, 0.0);
        assert_eq!(exploration_sigma(&a, &a, 1e-3), [1e-3; 4]);
        let s = exploration_sigma(&a, &ActionDelta::ZERO, 1e-3);
        assert_eq!(s, [0.1, 0.2, 0.3, 1e-3]);
    }

    #[test]
    fn mask_ties_are_off() {
        let mut buf = RolloutBuffer::new(3);
        for (r, d) in [(-1.0, 0.6), (0.6, 0.6), (1.0, 0.6)] {
            buf.push(Transition {
                action: ActionDelta::ZERO,
                mu: ActionDelta::ZERO,
                sigma: None,
                reward: r,
                demo_reward: Some(d),
                target: Some(ActionDelta::ZERO),
                value: 0.0,
                done: false,
            })
            .unwrap();
        }
        assert_eq!(buf.masks(), vec![true, false, false]);
        assert!(buf.push(buf.transitions[0]).is_err());
    }

    #[test]
    fn single_step_imitation_loss() {
        let mut buf = RolloutBuffer::new(1);
        buf.push(Transition {
            action: ActionDelta::new(0.1, 0.0, 0.0, 0.0),
            mu: ActionDelta::new(0.1, 0.0, 0.0, 0.0),
            sigma: None,
            reward: -1.0,
            demo_reward: Some(0.6),
            target: Some(ActionDelta::new(0.3, 0.0, 0.0, 0.0)),
            value: 0.0,
            done: true,
        })
        .unwrap();
        let (loss, _) = buf.imitation_loss().unwrap();
        assert!((loss - 0.2).abs() < 1e-15);
    }

    #[test]
    fn imitation_gradient_zero_when_agent_wins_everywhere() {
        // the static world keeps a near-zero policy at reward ~1; demo rewards -1
        let pool = pool_with_demo_rewards(&[-1.0; 4]);
        let model = small_model();
        let cfg = TrainConfig {
            workers: 1,
            imitation_only: true,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut w = Worker::new(WorkerKind::Imitation, 0, &model, &cfg, &pool).unwrap();
        w.local_params_mut()
            .copy_from_slice(&PolicyValueNet::init(&model, 3).unwrap().params);
        w.start_episode(0, 4).unwrap();
        let rep = w.rollout(4).unwrap();
        assert_eq!(rep.steps, 4);
        assert!(rep.grads.iter().all(|g| *g == 0.0));
        assert_eq!(rep.loss, 0.0);

        // demo beats the agent at one step
        let pool = pool_with_demo_rewards(&[-1.0, 1.5, -1.0, -1.0]);
        let mut w = Worker::new(WorkerKind::Imitation, 0, &model, &cfg, &pool).unwrap();
        w.local_params_mut()
            .copy_from_slice(&PolicyValueNet::init(&model, 3).unwrap().params);
        w.start_episode(0, 4).unwrap();
        let rep = w.rollout(4).unwrap();
        assert!(rep.grads.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn rl_rollout_bootstraps_only_mid_episode() {
        let pool = pool_with_demo_rewards(&[0.0; 7]);
        let model = small_model();
        let cfg = TrainConfig {
            workers: 1,
            rl_only: true,
            t_max: 3,
            ..TrainConfig::default()
        };
        let mut w = Worker::new(WorkerKind::Rl, 0, &model, &cfg, &pool).unwrap();
        w.local_params_mut()
            .copy_from_slice(&PolicyValueNet::init(&model, 5).unwrap().params);
        w.start_episode(0, 7).unwrap();
        let a = w.rollout(7).unwrap();
        assert_eq!(a.steps, 3);
        assert!(a.finished.is_none());
        let b = w.rollout(7).unwrap();
        assert_eq!(b.steps, 3);
        let c = w.rollout(7).unwrap();
        assert_eq!(c.steps, 1);
        let fin = c.finished.unwrap();
        assert_eq!(fin.steps, 7);
        assert!(!w.in_episode());
        assert!(a.grads.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bandit_policy_gradient_raises_good_action_density() {
        // one state, one step; reward is higher the closer a lands to `best`
        let model = small_model();
        let mut net = PolicyValueNet::init(&model, 21).unwrap();
        let mut rng = PortableRng::new(77);
        let n = model.patch_size * model.patch_size;
        let obs = Observation {
            channels: 1,
            size: model.patch_size,
            patch_prev: (0..n).map(|_| rng.range(-0.5, 0.5)).collect(),
            patch_cur: (0..n).map(|_| rng.range(-0.5, 0.5)).collect(),
            source_box: BBox::new(0.0, 0.0, 1.0, 1.0),
            frame_index: 1,
        };
        let best = ActionDelta::new(0.4, -0.3, 0.2, 0.1);
        let sigma = [0.3; 4];
        let density = |net: &PolicyValueNet| {
            let (out, _) = net.forward(&obs, &net.initial_state()).unwrap();
            gaussian_log_density(&best, &out.mu, &sigma)
        };
        let before = density(&net);
        let adam = AdamConfig::with_lr(1e-2);
        let mut st = AdamState::new(net.num_params());
        for _ in 0..200 {
            let mut tape = Tape::new();
            let (out, _) = net
                .forward_recorded(&obs, &net.initial_state(), &mut tape)
                .unwrap();
            let a = ActionDelta(core::array::from_fn(|c| {
                out.mu.0[c] + sigma[c] * rng.normal()
            }));
            let r = -(0..4).map(|c| (a.0[c] - best.0[c]).abs()).sum::<f64>();
            let step = ActorCriticStep {
                mu: out.mu,
                action: a,
                sigma,
                value: out.value,
                ret: r,
            };
            let (_, d) = actor_critic_loss(&[step], 0.5);
            let mut g = vec![0.0; net.num_params()];
            net.backward(&tape, &d, &mut g).unwrap();
            st.apply(&adam, &mut net.params, &g, 0.0).unwrap();
        }
        let after = density(&net);
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn testing_episode_uses_weak_inequality() {
        let seq = static_sequence(5);
        let demo = run_expert(&ExpertKind::oracle(0.0), &seq, 1).unwrap();
        // zero net keeps the box on the static target: reward 1 per step, same as the perfect demo
        let net = PolicyValueNet::zeroed(&small_model()).unwrap();
        let out = testing_episode(&net, &seq, &demo, 3, 1.5).unwrap();
        assert_eq!(out.horizon, 3);
        assert_eq!(out.sum_reward, out.sum_demo_reward);
        assert!(out.success);

        // a moving target leaves the static agent behind the perfect demo
        let seq = generate_sequence(4, &WorldConfig::default()).unwrap();
        let demo = run_expert(&ExpertKind::oracle(0.0), &seq, 1).unwrap();
        let out = testing_episode(&net, &seq, &demo, seq.steps(), 1.5).unwrap();
        assert!(out.sum_reward < out.sum_demo_reward);
        assert!(!out.success);
    }

    #[test]
    fn curriculum_threshold() {
        let run = |succ: usize| {
            let mut c = CurriculumState::new(8, 8, 100, 50);
            for i in 0..100 {
                c.push(i < succ);
            }
            let fired = c.advance(0.25);
            (fired, c.horizon)
        };
        assert_eq!(run(25), (true, 16));
        assert_eq!(run(24), (false, 8));
    }

    #[test]
    fn curriculum_needs_full_window_and_saturates() {
        let mut c = CurriculumState::new(8, 8, 10, 20);
        for _ in 0..9 {
            c.push(true);
        }
        assert!(!c.advance(0.25));
        c.push(true);
        assert!(c.advance(0.25));
        assert_eq!(c.filled(), 0);
        for _ in 0..10 {
            c.push(true);
        }
        assert!(c.advance(0.25));
        assert_eq!(c.horizon, 20);
        for _ in 0..10 {
            c.push(true);
        }
        assert!(!c.advance(0.25));
        assert_eq!(c.horizon, 20);
    }

    #[test]
    fn curriculum_monotone_under_random_outcomes() {
        let mut rng = PortableRng::new(9);
        let mut c = CurriculumState::new(8, 8, 20, 200);
        let mut last = c.horizon;
        for _ in 0..5000 {
            c.push(rng.bernoulli(0.3));
            c.advance(0.25);
            assert!(c.horizon >= last);
            last = c.horizon;
        }
        let d = CurriculumState::disabled(20, 77);
        assert_eq!(d.horizon, 77);
    }

    #[test]
    fn log_line_round_trip() {
        let r = LogRecord {
            episode: 3,
            kind: WorkerKind::Rl,
            loss: -0.125,
            sum_reward: 2.5,
            sum_demo_reward: 3.0,
            horizon: 16,
            version: 42,
        };
        assert_eq!(LogRecord::parse(&r.to_line()).unwrap(), r);
    }
}
