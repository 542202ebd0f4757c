//! Test-time runtimes: the autonomous greedy tracker and the value-arbitrated
//! tracker that runs a live expert alongside the agent.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expert::ExpertTracker;
use crate::geometry::{apply_action, BBox};
use crate::mdp::{crop_state, EpisodeConfig, Observation};
use crate::nn::{PolicyValueNet, RecurrentState, StepOutput};
use crate::synthworld::SyntheticSequence;

/// Anything that maps a state and recurrent state to `(mu, v)`.
pub trait PolicyValueModel {
    fn patch_size(&self) -> usize;
    fn initial_state(&self) -> RecurrentState;
    fn evaluate(
        &self,
        obs: &Observation,
        rs: &RecurrentState,
    ) -> Result<(StepOutput, RecurrentState)>;
}

impl PolicyValueModel for PolicyValueNet {
    fn patch_size(&self) -> usize {
        self.config().patch_size
    }
    fn initial_state(&self) -> RecurrentState {
        PolicyValueNet::initial_state(self)
    }
    fn evaluate(
        &self,
        obs: &Observation,
        rs: &RecurrentState,
    ) -> Result<(StepOutput, RecurrentState)> {
        self.forward(obs, rs)
    }
}

/// What a checkpoint records about the training that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub episodes: u64,
    pub imitation_updates: u64,
    pub rl_updates: u64,
    pub version: u64,
    pub horizon: u64,
}

impl TrainingMeta {
    /// The value head only learns from RL updates.
    pub fn value_trained(&self) -> bool {
        self.rl_updates > 0
    }
}

/// Trained parameters plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: PolicyValueNet,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSource {
    Agent,
    Expert,
}

impl FrameSource {
    pub fn name(&self) -> &'static str {
        match self {
            FrameSource::Agent => "agent",
            FrameSource::Expert => "expert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackMode {
    A3ct,
    A3ctd,
}

impl TrackMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrackMode::A3ct => "a3ct",
            TrackMode::A3ctd => "a3ctd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a3ct" => Ok(TrackMode::A3ct),
            "a3ctd" => Ok(TrackMode::A3ctd),
            other => Err(Error::Config(format!("unknown tracking mode `{other}`"))),
        }
    }
}

/// Per-frame arbitration record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arbitration {
    pub source: FrameSource,
    pub agent_value: f64,
    pub expert_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub sequence_id: String,
    pub mode: TrackMode,
    /// `b_0 ..= b_T`.
    pub boxes: Vec<BBox>,
    /// Entry `t - 1` describes frame `t`; empty for the autonomous tracker.
    pub arbitration: Vec<Arbitration>,
    /// Seconds spent per frame `t >= 1`, when a clock was supplied.
    pub frame_seconds: Vec<f64>,
}

/// Time source for per-frame timing; the core crate has no clock of its own.
pub trait Clock {
    fn now_seconds(&mut self) -> f64;
}

/// Reports zero for every frame.
pub struct NoClock;

impl Clock for NoClock {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }
}

fn episode_cfg(model: &impl PolicyValueModel, context: f64) -> EpisodeConfig {
    EpisodeConfig {
        context,
        patch_size: model.patch_size(),
        horizon: None,
    }
}

fn check_sequence(seq: &SyntheticSequence) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::Length {
            what: "tracking needs >= 2 frames",
            left: seq.len(),
            right: 2,
        });
    }
    Ok(())
}

/// Greedy rollout `b_t = psi(mu(s_t), b_{t-1})` with the recurrent state
/// carried across frames and no parameter updates.
pub fn track_a3ct_with<M: PolicyValueModel>(
    model: &M,
    seq: &SyntheticSequence,
    init: BBox,
    context: f64,
    clock: &mut dyn Clock,
) -> Result<TrajectoryRecord> {
    check_sequence(seq)?;
    init.check()?;
    let cfg = episode_cfg(model, context);
    let mut boxes = Vec::with_capacity(seq.len());
    let mut times = Vec::with_capacity(seq.len() - 1);
    boxes.push(init);
    let mut rs = model.initial_state();
    let mut prev = init;
    for t in 1..seq.len() {
        let t0 = clock.now_seconds();
        let obs = crop_state(&seq.frames[t - 1], &seq.frames[t], &prev, &cfg)?;
        let (out, next) = model.evaluate(&obs, &rs)?;
        rs = next;
        prev = apply_action(&out.mu, &prev)?.clamped();
        boxes.push(prev);
        times.push(clock.now_seconds() - t0);
    }
    Ok(TrajectoryRecord {
        sequence_id: seq.id.clone(),
        mode: TrackMode::A3ct,
        boxes,
        arbitration: Vec::new(),
        frame_seconds: times,
    })
}

pub fn track_a3ct(
    model: &TrainedModel,
    seq: &SyntheticSequence,
    init: BBox,
    context: f64,
) -> Result<TrajectoryRecord> {
    track_a3ct_with(&model.net, seq, init, context, &mut NoClock)
}

/// Per-frame arbitration between the agent's proposal and a live expert.
///
/// Both streams keep their own recurrent state. The agent's state is cropped
/// around the arbitrated previous output; the expert's around its own
/// previous box. The agent wins ties. Without an expert every frame goes to
/// the agent, which reproduces [`track_a3ct_with`].
pub fn track_a3ctd_with<M: PolicyValueModel>(
    model: &M,
    mut expert: Option<&mut dyn ExpertTracker>,
    seq: &SyntheticSequence,
    init: BBox,
    context: f64,
    clock: &mut dyn Clock,
) -> Result<TrajectoryRecord> {
    check_sequence(seq)?;
    init.check()?;
    let cfg = episode_cfg(model, context);
    let mut boxes = Vec::with_capacity(seq.len());
    let mut arb = Vec::with_capacity(seq.len() - 1);
    let mut times = Vec::with_capacity(seq.len() - 1);
    boxes.push(init);
    let (mut rs_agent, mut rs_expert) = (model.initial_state(), model.initial_state());
    let (mut prev, mut prev_expert) = (init, init);
    for t in 1..seq.len() {
        let t0 = clock.now_seconds();
        let (f0, f1) = (&seq.frames[t - 1], &seq.frames[t]);
        let obs = crop_state(f0, f1, &prev, &cfg)?;
        let (out, next) = model.evaluate(&obs, &rs_agent)?;
        rs_agent = next;
        let proposal = apply_action(&out.mu, &prev)?.clamped();

        let (expert_value, expert_box) = match expert.as_deref_mut() {
            Some(e) => {
                let obs_d = crop_state(f0, f1, &prev_expert, &cfg)?;
                let (out_d, next_d) = model.evaluate(&obs_d, &rs_expert)?;
                rs_expert = next_d;
                let mut b = e.track(t, f1);
                b.w = b.w.max(crate::geometry::EPS_SIZE);
                b.h = b.h.max(crate::geometry::EPS_SIZE);
                prev_expert = b;
                (out_d.value, Some(b))
            }
            None => (f64::NEG_INFINITY, None),
        };
        let (source, chosen) = match expert_box {
            Some(b) if out.value < expert_value => (FrameSource::Expert, b),
            _ => (FrameSource::Agent, proposal),
        };
        arb.push(Arbitration {
            source,
            agent_value: out.value,
            expert_value,
        });
        prev = chosen;
        boxes.push(chosen);
        times.push(clock.now_seconds() - t0);
    }
    Ok(TrajectoryRecord {
        sequence_id: seq.id.clone(),
        mode: TrackMode::A3ctd,
        boxes,
        arbitration: arb,
        frame_seconds: times,
    })
}

/// Refuses checkpoints whose value head never saw an RL update.
pub fn track_a3ctd(
    model: &TrainedModel,
    expert: &mut dyn ExpertTracker,
    seq: &SyntheticSequence,
    init: BBox,
    context: f64,
) -> Result<TrajectoryRecord> {
    ensure_value_trained(model)?;
    track_a3ctd_with(&model.net, Some(expert), seq, init, context, &mut NoClock)
}

pub fn ensure_value_trained(model: &TrainedModel) -> Result<()> {
    if !model.meta.value_trained() {
        return Err(Error::Refused(
            "checkpoint has no RL updates, so its value head is untrained and cannot arbitrate"
                .into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{start_expert, ExpertKind};
    use crate::geometry::ActionDelta;
    use crate::nn::ModelConfig;
    use crate::synthworld::{generate_sequence, WorldConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            patch_size: 16,
            fc: vec![8],
            recurrent: 4,
            ..ModelConfig::default()
        }
    }

    /// Scores the expert stream above the agent's. The runtime evaluates the
    /// agent first and the expert second on every frame.
    struct ExpertBiased {
        calls: core::cell::Cell<usize>,
    }

    impl PolicyValueModel for ExpertBiased {
        fn patch_size(&self) -> usize {
            16
        }
        fn initial_state(&self) -> RecurrentState {
            RecurrentState::zeros(1)
        }
        fn evaluate(
            &self,
            _: &Observation,
            rs: &RecurrentState,
        ) -> Result<(StepOutput, RecurrentState)> {
            let n = self.calls.get();
            self.calls.set(n + 1);
            let value = if n % 2 == 1 { 1.0 } else { 0.0 };
            Ok((
                StepOutput {
                    mu: ActionDelta::ZERO,
                    value,
                },
                rs.clone(),
            ))
        }
    }

    /// Constant outputs regardless of input.
    struct Constant(f64);

    impl PolicyValueModel for Constant {
        fn patch_size(&self) -> usize {
            16
        }
        fn initial_state(&self) -> RecurrentState {
            RecurrentState::zeros(1)
        }
        fn evaluate(
            &self,
            _: &Observation,
            rs: &RecurrentState,
        ) -> Result<(StepOutput, RecurrentState)> {
            Ok((
                StepOutput {
                    mu: ActionDelta::new(0.01, 0.0, 0.0, 0.0),
                    value: self.0,
                },
                rs.clone(),
            ))
        }
    }

    #[test]
    fn zero_parameters_hold_the_box() {
        let seq = generate_sequence(3, &WorldConfig::default()).unwrap();
        let net = PolicyValueNet::zeroed(&small()).unwrap();
        let rec = track_a3ct_with(&net, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        assert_eq!(rec.boxes.len(), seq.len());
        assert!(rec.boxes.iter().all(|b| *b == seq.groundtruth[0]));
    }

    #[test]
    fn autonomous_tracking_is_deterministic() {
        let seq = generate_sequence(5, &WorldConfig::default()).unwrap();
        let net = PolicyValueNet::init(&small(), 2).unwrap();
        let a = track_a3ct_with(&net, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        let b = track_a3ct_with(&net, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.boxes[0], seq.groundtruth[0]);
    }

    #[test]
    fn null_expert_reduces_to_autonomous() {
        let seq = generate_sequence(6, &WorldConfig::default()).unwrap();
        let net = PolicyValueNet::init(&small(), 4).unwrap();
        let a = track_a3ct_with(&net, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        let d = track_a3ctd_with(&net, None, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        assert_eq!(a.boxes, d.boxes);
        assert!(d.arbitration.iter().all(|x| x.source == FrameSource::Agent));
    }

    #[test]
    fn ties_go_to_the_agent() {
        let seq = generate_sequence(7, &WorldConfig::default()).unwrap();
        let mut e = start_expert(&ExpertKind::oracle(0.0), &seq, seq.groundtruth[0], 1).unwrap();
        let m = Constant(0.3);
        let rec = track_a3ctd_with(
            &m,
            Some(e.as_mut()),
            &seq,
            seq.groundtruth[0],
            1.5,
            &mut NoClock,
        )
        .unwrap();
        assert!(rec
            .arbitration
            .iter()
            .all(|x| x.source == FrameSource::Agent));
        let solo = track_a3ct_with(&m, &seq, seq.groundtruth[0], 1.5, &mut NoClock).unwrap();
        assert_eq!(rec.boxes, solo.boxes);
    }

    #[test]
    fn perfect_expert_dominates() {
        let seq = generate_sequence(8, &WorldConfig::default()).unwrap();
        let m = ExpertBiased {
            calls: core::cell::Cell::new(0),
        };
        let mut e = start_expert(&ExpertKind::oracle(0.0), &seq, seq.groundtruth[0], 1).unwrap();
        let rec = track_a3ctd_with(
            &m,
            Some(e.as_mut()),
            &seq,
            seq.groundtruth[0],
            1.5,
            &mut NoClock,
        )
        .unwrap();
        for t in 0..seq.len() {
            assert_eq!(rec.boxes[t], seq.groundtruth[t], "frame {t}");
        }
        assert!(rec
            .arbitration
            .iter()
            .all(|x| x.source == FrameSource::Expert));
    }

    #[test]
    fn outputs_are_one_of_the_two_proposals() {
        let seq = generate_sequence(9, &WorldConfig::default()).unwrap();
        let net = PolicyValueNet::init(&small(), 6).unwrap();
        let mut e = start_expert(&ExpertKind::oracle(0.05), &seq, seq.groundtruth[0], 2).unwrap();
        let rec = track_a3ctd_with(
            &net,
            Some(e.as_mut()),
            &seq,
            seq.groundtruth[0],
            1.5,
            &mut NoClock,
        )
        .unwrap();
        // replay the expert alone to recover its proposals
        let mut e2 = start_expert(&ExpertKind::oracle(0.05), &seq, seq.groundtruth[0], 2).unwrap();
        for t in 1..seq.len() {
            let eb = e2.track(t, &seq.frames[t]);
            let a = rec.arbitration[t - 1];
            match a.source {
                FrameSource::Expert => assert_eq!(rec.boxes[t], eb),
                FrameSource::Agent => assert!(a.agent_value >= a.expert_value),
            }
        }
    }

    #[test]
    fn imitation_only_checkpoint_refused() {
        let seq = generate_sequence(1, &WorldConfig::default()).unwrap();
        let model = TrainedModel {
            net: PolicyValueNet::zeroed(&small()).unwrap(),
            meta: TrainingMeta {
                imitation_updates: 10,
                ..TrainingMeta::default()
            },
        };
        let mut e = start_expert(&ExpertKind::oracle(0.0), &seq, seq.groundtruth[0], 1).unwrap();
        let r = track_a3ctd(&model, e.as_mut(), &seq, seq.groundtruth[0], 1.5);
        assert!(matches!(r, Err(Error::Refused(_))));
    }
}
