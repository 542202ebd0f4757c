//! The tracking MDP over one sequence.
//!
//! A state is a pair of patches cropped from frames `t-1` and `t` around the
//! previous box dilated by `k`, resampled to `m x m` and standardized. An
//! action moves the previous box, the reward is the quantized IoU with the
//! ground truth.
//!
//! Resampling rule (fixed so that other implementations reproduce it):
//! output pixel `(i, j)` of an `m x m` patch samples the continuous point
//! `(rx + (j + 0.5) * rw / m, ry + (i + 0.5) * rh / m)` of the crop region
//! `[rx, ry, rw, rh]`. A point outside `[0, W) x [0, H)` yields the pad value.
//! Otherwise it is bilinearly interpolated between pixel centers (pixel `p`
//! has its center at `p + 0.5`), clamping neighbor indices to the frame.
//! Pixels are standardized as `v / 255 - 0.5`, so padding (0) is mid-gray.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    apply_action, box_delta, dilate_box, iou, quantized_reward, ActionDelta, BBox,
};
use crate::synthworld::{Frame, SyntheticSequence};

/// Standardized value of out-of-frame samples.
pub const PAD_VALUE: f64 = 0.0;

#[inline]
pub fn standardize(v: f64) -> f64 {
    v / 255.0 - 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    /// Context dilation factor applied to the previous box before cropping.
    pub context: f64,
    pub patch_size: usize,
    /// Episode truncation `T^`; `None` runs to the end of the sequence.
    pub horizon: Option<usize>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            context: 1.5,
            patch_size: 32,
            horizon: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.context > 1.0) {
            return Err(Error::Config(alloc::format!(
                "context must exceed 1, got {}",
                self.context
            )));
        }
        if self.patch_size < 8 {
            return Err(Error::Config(alloc::format!(
                "patch size must be >= 8, got {}",
                self.patch_size
            )));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_horizon(mut self, horizon: Option<usize>) -> Self {
        self.horizon = horizon;
        self
    }
}

/// The MDP state: two standardized `channels x m x m` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub channels: usize,
    pub size: usize,
    pub patch_prev: Vec<f64>,
    pub patch_cur: Vec<f64>,
    /// Box the crops were taken around (before dilation).
    pub source_box: BBox,
    /// Index of the current frame.
    pub frame_index: usize,
}

impl Observation {
    pub fn patch_len(&self) -> usize {
        self.channels * self.size * self.size
    }
}

/// Sampling plan along one axis.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
    inside: Vec<bool>,
}

fn axis_taps(start: f64, extent: f64, m: usize, limit: usize) -> AxisTaps {
    let mut t = AxisTaps {
        lo: vec![0; m],
        hi: vec![0; m],
        frac: vec![0.0; m],
        inside: vec![false; m],
    };
    let step = extent / m as f64;
    for j in 0..m {
        let s = start + (j as f64 + 0.5) * step;
        if !(s >= 0.0 && s < limit as f64) {
            continue;
        }
        let u = s - 0.5;
        let f = libm::floor(u);
        let i0 = f as i64;
        t.frac[j] = u - f;
        t.lo[j] = i0.clamp(0, limit as i64 - 1) as usize;
        t.hi[j] = (i0 + 1).clamp(0, limit as i64 - 1) as usize;
        t.inside[j] = true;
    }
    t
}

fn resample(frame: &Frame, xs: &AxisTaps, ys: &AxisTaps, m: usize, out: &mut [f64]) {
    let ch = frame.channels;
    for i in 0..m {
        for j in 0..m {
            for c in 0..ch {
                let dst = (c * m + i) * m + j;
                if !(xs.inside[j] && ys.inside[i]) {
                    out[dst] = PAD_VALUE;
                    continue;
                }
                let (fx, fy) = (xs.frac[j], ys.frac[i]);
                let p00 = frame.get(xs.lo[j], ys.lo[i], c) as f64;
                let p10 = frame.get(xs.hi[j], ys.lo[i], c) as f64;
                let p01 = frame.get(xs.lo[j], ys.hi[i], c) as f64;
                let p11 = frame.get(xs.hi[j], ys.hi[i], c) as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                out[dst] = standardize(top + (bot - top) * fy);
            }
        }
    }
}

/// Builds the state from two frames and the previous box.
pub fn crop_state(prev: &Frame, cur: &Frame, b: &BBox, cfg: &EpisodeConfig) -> Result<Observation> {
    let region = dilate_box(b, cfg.context)?;
    if (prev.width, prev.height, prev.channels) != (cur.width, cur.height, cur.channels) {
        return Err(Error::Shape {
            expected: alloc::format!("{}x{}x{}", prev.width, prev.height, prev.channels),
            found: alloc::format!("{}x{}x{}", cur.width, cur.height, cur.channels),
        });
    }
    let m = cfg.patch_size;
    let xs = axis_taps(region.x, region.w, m, prev.width);
    let ys = axis_taps(region.y, region.h, m, prev.height);
    let n = prev.channels * m * m;
    let mut patch_prev = vec![0.0; n];
    let mut patch_cur = vec![0.0; n];
    resample(prev, &xs, &ys, m, &mut patch_prev);
    resample(cur, &xs, &ys, m, &mut patch_cur);
    Ok(Observation {
        channels: prev.channels,
        size: m,
        patch_prev,
        patch_cur,
        source_box: *b,
        frame_index: 0,
    })
}

/// What one environment step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Next state, absent when the episode ended.
    pub observation: Option<Observation>,
    pub reward: f64,
    pub done: bool,
    pub bbox: BBox,
    pub iou: f64,
}

/// Episode bookkeeping for one pass over a sequence.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    seq: &'a SyntheticSequence,
    cfg: EpisodeConfig,
    t: usize,
    last: usize,
    prev_box: BBox,
    done: bool,
    total_reward: f64,
}

/// Starts an episode at frame 1 with the reference box set to `g_0`.
pub fn reset<'a>(
    seq: &'a SyntheticSequence,
    cfg: &EpisodeConfig,
) -> Result<(Episode<'a>, Observation)> {
    cfg.validate()?;
    if seq.len() < 2 || seq.groundtruth.len() != seq.len() {
        return Err(Error::Length {
            what: "episode needs >= 2 aligned frames",
            left: seq.len(),
            right: seq.groundtruth.len(),
        });
    }
    let b0 = seq.groundtruth[0];
    let last = cfg.horizon.map_or(seq.steps(), |h| h.min(seq.steps()));
    let ep = Episode {
        seq,
        cfg: *cfg,
        t: 1,
        last,
        prev_box: b0,
        done: false,
        total_reward: 0.0,
    };
    let obs = ep.observe()?;
    Ok((ep, obs))
}

impl<'a> Episode<'a> {
    fn observe(&self) -> Result<Observation> {
        let mut o = crop_state(
            &self.seq.frames[self.t - 1],
            &self.seq.frames[self.t],
            &self.prev_box,
            &self.cfg,
        )?;
        o.frame_index = self.t;
        Ok(o)
    }

    /// Index of the frame the next action predicts.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Last frame index this episode reaches, `min(T^, T)`.
    pub fn last_index(&self) -> usize {
        self.last
    }

    pub fn prev_box(&self) -> BBox {
        self.prev_box
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn sequence(&self) -> &'a SyntheticSequence {
        self.seq
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    /// Ground truth of the frame being predicted.
    pub fn current_gt(&self) -> BBox {
        self.seq.groundtruth[self.t]
    }

    /// The action that would land exactly on the current ground truth (clipped).
    pub fn oracle_action(&self) -> Result<ActionDelta> {
        Ok(box_delta(&self.current_gt(), &self.prev_box)?.action)
    }

    pub fn step(&mut self, a: &ActionDelta) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step on a finished episode"));
        }
        let bbox = apply_action(a, &self.prev_box)?.clamped();
        let overlap = iou(&bbox, &self.current_gt())?;
        let reward = quantized_reward(overlap)?;
        self.total_reward += reward;
        self.prev_box = bbox;
        if self.t >= self.last {
            self.done = true;
            return Ok(StepOutcome {
                observation: None,
                reward,
                done: true,
                bbox,
                iou: overlap,
            });
        }
        self.t += 1;
        let obs = self.observe()?;
        Ok(StepOutcome {
            observation: Some(obs),
            reward,
            done: false,
            bbox,
            iou: overlap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_sequence, WorldConfig};

    fn gradient_frame(w: usize, h: usize) -> Frame {
        let mut f = Frame::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                f.pixels[y * w + x] = ((x * 7 + y * 3) % 256) as u8;
            }
        }
        f
    }

    #[test]
    fn whole_frame_region_has_no_padding() {
        let f = gradient_frame(48, 48);
        let cfg = EpisodeConfig {
            context: 1.5,
            patch_size: 16,
            horizon: None,
        };
        // Dilated by 1.5 this box is exactly the frame.
        let b = BBox::new(8.0, 8.0, 32.0, 32.0);
        let o = crop_state(&f, &f, &b, &cfg).unwrap();
        // every sample is interior, no pad values (frame has no mid-gray 127.5)
        assert!(o.patch_cur.iter().all(|v| *v != PAD_VALUE));
        // sample (0,0) sits at (1.5,1.5): exactly the center of pixel (1,1)
        let want = standardize((7 + 3) as f64);
        assert!((o.patch_cur[0] - want).abs() < 1e-12);
    }

    #[test]
    fn corner_box_is_padded() {
        let f = gradient_frame(40, 40);
        let cfg = EpisodeConfig::default();
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let o = crop_state(&f, &f, &b, &cfg).unwrap();
        // region starts at -2.5: the first column samples x = -2.5 + 0.5*15/32 < 0
        assert_eq!(o.patch_cur[0], PAD_VALUE);
        assert_eq!(o.patch_prev[5 * 32], PAD_VALUE);
        assert_ne!(o.patch_cur[31 * 32 + 31], PAD_VALUE);
    }

    #[test]
    fn identical_frames_give_identical_patches() {
        let f = gradient_frame(64, 64);
        let o = crop_state(
            &f,
            &f,
            &BBox::new(10.0, 12.0, 20.0, 18.0),
            &EpisodeConfig::default(),
        )
        .unwrap();
        assert_eq!(o.patch_prev, o.patch_cur);
    }

    #[test]
    fn crop_is_translation_consistent() {
        let f = gradient_frame(80, 80);
        let mut g = Frame::new(80, 80, 1);
        let (ox, oy) = (5usize, 3usize);
        for y in oy..80 {
            for x in ox..80 {
                g.pixels[y * 80 + x] = f.pixels[(y - oy) * 80 + (x - ox)];
            }
        }
        let cfg = EpisodeConfig::default();
        let b = BBox::new(20.3, 25.7, 17.0, 13.0);
        let bs = BBox::new(b.x + ox as f64, b.y + oy as f64, b.w, b.h);
        let a = crop_state(&f, &f, &b, &cfg).unwrap();
        let c = crop_state(&g, &g, &bs, &cfg).unwrap();
        for (u, v) in a.patch_cur.iter().zip(&c.patch_cur) {
            assert!((u - v).abs() <= 1e-6);
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let f = gradient_frame(16, 16);
        assert!(crop_state(
            &f,
            &f,
            &BBox::new(0., 0., 0., 4.),
            &EpisodeConfig::default()
        )
        .is_err());
    }

    #[test]
    fn reset_uses_first_ground_truth() {
        let seq = generate_sequence(4, &WorldConfig::default()).unwrap();
        let cfg = EpisodeConfig::default();
        let (ep, o1) = reset(&seq, &cfg).unwrap();
        assert_eq!(ep.prev_box(), seq.groundtruth[0]);
        assert_eq!(ep.t(), 1);
        let (_, o2) = reset(&seq, &cfg).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn reset_rejects_single_frame() {
        let mut seq = generate_sequence(4, &WorldConfig::default()).unwrap();
        seq.frames.truncate(1);
        seq.groundtruth.truncate(1);
        assert!(reset(&seq, &EpisodeConfig::default()).is_err());
    }

    #[test]
    fn oracle_actions_earn_full_reward() {
        let seq = generate_sequence(9, &WorldConfig::default()).unwrap();
        let cfg = EpisodeConfig::default().with_horizon(Some(12));
        let (mut ep, _) = reset(&seq, &cfg).unwrap();
        let mut n = 0;
        loop {
            let a = ep.oracle_action().unwrap();
            let out = ep.step(&a).unwrap();
            assert_eq!(out.reward, 1.0);
            n += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(n, 12.min(seq.steps()));
        assert_eq!(ep.total_reward(), n as f64);
        assert!(matches!(ep.step(&ActionDelta::ZERO), Err(Error::State(_))));
    }

    #[test]
    fn static_world_zero_action() {
        let seq = generate_sequence(2, &WorldConfig::frozen()).unwrap();
        let (mut ep, _) = reset(&seq, &EpisodeConfig::default()).unwrap();
        while !ep.is_done() {
            assert_eq!(ep.step(&ActionDelta::ZERO).unwrap().reward, 1.0);
        }
    }

    #[test]
    fn disjoint_action_is_punished() {
        let seq = generate_sequence(2, &WorldConfig::frozen()).unwrap();
        let (mut ep, _) = reset(&seq, &EpisodeConfig::default()).unwrap();
        let out = ep.step(&ActionDelta::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn rewards_stay_in_image() {
        let seq = generate_sequence(21, &WorldConfig::default()).unwrap();
        let (mut ep, _) = reset(&seq, &EpisodeConfig::default()).unwrap();
        let mut k = 0.0f64;
        while !ep.is_done() {
            k += 0.37;
            let a = ActionDelta::new(libm::sin(k) * 0.3, libm::cos(k) * 0.3, 0.05, -0.05);
            let r = ep.step(&a).unwrap().reward;
            assert!(r == -1.0 || ((r * 10.0).round() / 10.0 == r && (0.0..=1.0).contains(&r)));
        }
        let t = seq.steps() as f64;
        assert!(ep.total_reward() >= -t && ep.total_reward() <= t);
    }
}
