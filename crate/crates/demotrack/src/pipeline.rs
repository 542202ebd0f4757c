//! Dataset-level tracking, one-pass evaluation, reports and plots.

use std::path::{Path, PathBuf};
use std::thread;

use demotrack_core::evalkit::{render_svg, CurveKind, EvalReport, SequenceMetrics};
use demotrack_core::expert::{start_expert, ExpertKind};
use demotrack_core::geometry::BBox;
use demotrack_core::synthworld::SyntheticSequence;
use demotrack_core::tracker::{
    ensure_value_trained, track_a3ct, track_a3ctd, TrackMode, TrainedModel, TrajectoryRecord,
};

use crate::dataset::Dataset;
use crate::error::{read_text, write_bytes, Error, Result};
use crate::trajectory::{write_trajectory, TrajectoryHeader};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOptions {
    pub mode: TrackMode,
    /// Required for the arbitrating tracker.
    pub expert: Option<ExpertKind>,
    pub expert_seed: u64,
    pub context: f64,
}

impl TrackOptions {
    pub fn a3ct() -> Self {
        Self {
            mode: TrackMode::A3ct,
            expert: None,
            expert_seed: 0,
            context: 1.5,
        }
    }

    pub fn a3ctd(expert: ExpertKind) -> Self {
        Self {
            mode: TrackMode::A3ctd,
            expert: Some(expert),
            ..Self::a3ct()
        }
    }

    pub fn expert_label(&self) -> String {
        self.expert
            .as_ref()
            .map(|e| e.describe())
            .unwrap_or_default()
    }
}

/// One-pass run from the first ground-truth box, no resets.
pub fn track_sequence(
    model: &TrainedModel,
    seq: &SyntheticSequence,
    opts: &TrackOptions,
) -> Result<TrajectoryRecord> {
    let init = seq.groundtruth[0];
    Ok(match opts.mode {
        TrackMode::A3ct => track_a3ct(model, seq, init, opts.context)?,
        TrackMode::A3ctd => {
            let kind = opts
                .expert
                .as_ref()
                .ok_or_else(|| Error::Invalid("a3ctd needs an expert".into()))?;
            let mut e = start_expert(kind, seq, init, opts.expert_seed)?;
            track_a3ctd(model, e.as_mut(), seq, init, opts.context)?
        }
    })
}

/// Runs `f` over the sequences on all cores; results keep dataset order.
fn par_map<T: Send>(
    seqs: &[SyntheticSequence],
    f: impl Fn(&SyntheticSequence) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let threads = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seqs.len().max(1));
    let chunk = seqs.len().div_ceil(threads).max(1);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = seqs
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<T>>>()))
            .collect();
        let mut out = Vec::with_capacity(seqs.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Panicked)??);
        }
        Ok(out)
    })
}

pub fn track_dataset(
    model: &TrainedModel,
    ds: &Dataset,
    opts: &TrackOptions,
) -> Result<Vec<TrajectoryRecord>> {
    if opts.mode == TrackMode::A3ctd {
        ensure_value_trained(model)?;
    }
    par_map(&ds.sequences, |s| track_sequence(model, s, opts))
}

/// Scores per-sequence boxes against the dataset. Every dataset sequence
/// needs a trajectory of matching length.
pub fn score(
    label: &str,
    ds: &Dataset,
    checkpoint_digest: &str,
    boxes: &[(String, Vec<BBox>)],
) -> Result<EvalReport> {
    let mut per = Vec::with_capacity(ds.sequences.len());
    for seq in &ds.sequences {
        let (_, b) = boxes
            .iter()
            .find(|(id, _)| *id == seq.id)
            .ok_or_else(|| Error::Integrity(format!("no trajectory for sequence `{}`", seq.id)))?;
        if b.len() != seq.len() {
            return Err(Error::Integrity(format!(
                "trajectory for `{}` has {} boxes, sequence has {} frames",
                seq.id,
                b.len(),
                seq.len()
            )));
        }
        per.push((
            seq.id.clone(),
            SequenceMetrics::compute(b, &seq.groundtruth)?,
        ));
    }
    Ok(EvalReport::new(label, ds.digest(), checkpoint_digest, per)?)
}

pub fn ope_run(
    model: &TrainedModel,
    checkpoint_digest: &str,
    ds: &Dataset,
    opts: &TrackOptions,
) -> Result<(EvalReport, Vec<TrajectoryRecord>)> {
    let recs = track_dataset(model, ds, opts)?;
    let boxes: Vec<_> = recs
        .iter()
        .map(|r| (r.sequence_id.clone(), r.boxes.clone()))
        .collect();
    Ok((
        score(opts.mode.name(), ds, checkpoint_digest, &boxes)?,
        recs,
    ))
}

/// The tracker that never moves from the first box.
pub fn static_baseline(ds: &Dataset) -> Result<EvalReport> {
    let boxes: Vec<_> = ds
        .sequences
        .iter()
        .map(|s| (s.id.clone(), vec![s.groundtruth[0]; s.len()]))
        .collect();
    score("static", ds, "", &boxes)
}

/// Writes `<sequence id>.txt` per record.
pub fn write_trajectories(
    dir: &Path,
    recs: &[TrajectoryRecord],
    opts: &TrackOptions,
    checkpoint_digest: &str,
    dataset_digest: &str,
) -> Result<Vec<PathBuf>> {
    recs.iter()
        .map(|r| {
            let h = TrajectoryHeader {
                mode: r.mode.name().into(),
                checkpoint_digest: checkpoint_digest.into(),
                expert: opts.expert_label(),
                sequence_id: r.sequence_id.clone(),
                dataset_digest: dataset_digest.into(),
            };
            let p = dir.join(format!("{}.txt", r.sequence_id));
            write_trajectory(&p, &h, r)?;
            Ok(p)
        })
        .collect()
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_bytes(path, report.to_text().as_bytes())
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_text(&read_text(path)?)
        .map_err(|e| crate::error::format_err(path, e.to_string()))
}

/// `success.svg` and `precision.svg` with one curve per labelled report.
pub fn emit_plots(series: &[(String, EvalReport)], dir: &Path) -> Result<[PathBuf; 2]> {
    let refs: Vec<(&str, &EvalReport)> = series.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let sp = dir.join("success.svg");
    let pp = dir.join("precision.svg");
    write_bytes(&sp, render_svg(CurveKind::Success, &refs).as_bytes())?;
    write_bytes(&pp, render_svg(CurveKind::Precision, &refs).as_bytes())?;
    Ok([sp, pp])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate;
    use demotrack_core::nn::{ModelConfig, PolicyValueNet};
    use demotrack_core::synthworld::WorldConfig;
    use demotrack_core::tracker::TrainingMeta;

    fn small() -> Dataset {
        let wc = WorldConfig {
            width: 64,
            height: 64,
            min_len: 8,
            max_len: 12,
            min_box: 10.0,
            max_box: 16.0,
            ..WorldConfig::default()
        };
        generate(3, 11, &wc).unwrap()
    }

    fn model(rl_updates: u64) -> TrainedModel {
        TrainedModel {
            net: PolicyValueNet::init(&ModelConfig::tiny(), 1).unwrap(),
            meta: TrainingMeta {
                rl_updates,
                ..Default::default()
            },
        }
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let ds = small();
        let boxes: Vec<_> = ds
            .sequences
            .iter()
            .map(|s| (s.id.clone(), s.groundtruth.clone()))
            .collect();
        let r = score("gt", &ds, "", &boxes).unwrap();
        assert_eq!(r.aggregate.ao, 1.0);
        assert_eq!(r.aggregate.ps, 1.0);
    }

    #[test]
    fn single_sequence_aggregate_is_that_sequence() {
        let mut ds = small();
        ds.sequences.truncate(1);
        let r = static_baseline(&ds).unwrap();
        assert_eq!(r.aggregate, r.sequences[0].1);
    }

    #[test]
    fn reports_repeat_and_round_trip() {
        let ds = small();
        let (a, _) = ope_run(&model(0), "ck", &ds, &TrackOptions::a3ct()).unwrap();
        let (b, _) = ope_run(&model(0), "ck", &ds, &TrackOptions::a3ct()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(EvalReport::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn arbitration_refused_without_rl_updates() {
        let ds = small();
        let opts = TrackOptions::a3ctd(ExpertKind::oracle(0.0));
        assert!(matches!(
            track_dataset(&model(0), &ds, &opts),
            Err(Error::Core(demotrack_core::Error::Refused(_)))
        ));
        assert!(track_dataset(&model(1), &ds, &opts).is_ok());
    }

    #[test]
    fn missing_trajectory_is_integrity_error() {
        let ds = small();
        let boxes = vec![(
            ds.sequences[0].id.clone(),
            ds.sequences[0].groundtruth.clone(),
        )];
        assert!(matches!(
            score("x", &ds, "", &boxes),
            Err(Error::Integrity(_))
        ));
    }
}
