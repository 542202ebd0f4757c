//! Scripted expert trackers and the demonstrations they produce.
//!
//! Two families are available: a ground-truth oracle with controllable jitter
//! and drift, and a normalized cross-correlation template matcher that fails
//! the way real trackers do (drift, distractor capture, occlusion).

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{box_delta, dilate_box, iou, quantized_reward, BBox, Delta};
use crate::rng::PortableRng;
use crate::synthworld::{Frame, SyntheticSequence};

/// Which expert to run and with which knobs.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertKind {
    /// Ground truth perturbed by per-frame jitter of relative amplitude `eta`
    /// plus, with probability `drift_prob` per frame, an accumulating offset.
    OracleNoise { eta: f64, drift_prob: f64 },
    /// Exhaustive NCC template search around the previous box.
    Ncc {
        search_factor: f64,
        scales: Vec<f64>,
        template_rate: f64,
    },
}

impl ExpertKind {
    pub fn oracle(eta: f64) -> Self {
        ExpertKind::OracleNoise {
            eta,
            drift_prob: 0.0,
        }
    }

    pub fn ncc_default() -> Self {
        ExpertKind::Ncc {
            search_factor: 2.0,
            scales: vec![0.96, 1.0, 1.04],
            template_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExpertKind::OracleNoise { eta, drift_prob } => {
                if !(*eta >= 0.0 && eta.is_finite()) || !(0.0..=1.0).contains(drift_prob) {
                    return Err(Error::Config(
                        "oracle_noise needs eta >= 0 and drift in [0,1]".into(),
                    ));
                }
            }
            ExpertKind::Ncc {
                search_factor,
                scales,
                template_rate,
            } => {
                if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::Config(
                        "ncc scale set must be non-empty and positive".into(),
                    ));
                }
                if !(*search_factor >= 1.0) || !(0.0..=1.0).contains(template_rate) {
                    return Err(Error::Config(
                        "ncc needs search >= 1 and rate in [0,1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Compact textual form, e.g. `oracle_noise(eta=0.1,drift=0)` or
    /// `ncc(search=2,scales=0.96;1;1.04,rate=0)`. [`ExpertKind::parse`] reads it back.
    pub fn describe(&self) -> String {
        match self {
            ExpertKind::OracleNoise { eta, drift_prob } => {
                format!("oracle_noise(eta={eta},drift={drift_prob})")
            }
            ExpertKind::Ncc {
                search_factor,
                scales,
                template_rate,
            } => {
                let s: Vec<String> = scales.iter().map(|v| format!("{v}")).collect();
                format!(
                    "ncc(search={search_factor},scales={},rate={template_rate})",
                    s.join(";")
                )
            }
        }
    }

    /// Accepts the [`ExpertKind::describe`] form; arguments may be omitted
    /// (`ncc`, `oracle_noise(eta=0.2)`).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.find('(') {
            Some(i) if text.ends_with(')') => (&text[..i], &text[i + 1..text.len() - 1]),
            Some(_) => return Err(Error::Config(format!("malformed expert `{text}`"))),
            None => (text, ""),
        };
        let mut kind = match name {
            "oracle_noise" | "oracle" => ExpertKind::oracle(0.0),
            "ncc" => ExpertKind::ncc_default(),
            other => return Err(Error::Config(format!("unknown expert `{other}`"))),
        };
        let num = |k: &str, v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad expert value `{v}` for `{k}`")))
        };
        for kv in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("expected key=value in expert args, got `{kv}`"))
            })?;
            match (&mut kind, k.trim()) {
                (ExpertKind::OracleNoise { eta, .. }, "eta") => *eta = num(k, v)?,
                (ExpertKind::OracleNoise { drift_prob, .. }, "drift") => *drift_prob = num(k, v)?,
                (ExpertKind::Ncc { search_factor, .. }, "search") => *search_factor = num(k, v)?,
                (ExpertKind::Ncc { template_rate, .. }, "rate") => *template_rate = num(k, v)?,
                (ExpertKind::Ncc { scales, .. }, "scales") => {
                    *scales = v
                        .split(';')
                        .map(|s| num(k, s))
                        .collect::<Result<Vec<_>>>()?;
                }
                (_, other) => {
                    return Err(Error::Config(format!("unknown expert argument `{other}`")))
                }
            }
        }
        kind.validate()?;
        Ok(kind)
    }
}

/// An expert that has been initialized on frame 0 and emits one box per later frame.
pub trait ExpertTracker {
    /// Box for frame `t >= 1`. Experts always emit a box.
    fn track(&mut self, t: usize, frame: &Frame) -> BBox;
}

/// Initializes an expert of `kind` on `seq` with `init` as the frame-0 box.
pub fn start_expert<'a>(
    kind: &ExpertKind,
    seq: &'a SyntheticSequence,
    init: BBox,
    seed: u64,
) -> Result<Box<dyn ExpertTracker + 'a>> {
    kind.validate()?;
    init.check()?;
    Ok(match kind {
        ExpertKind::OracleNoise { eta, drift_prob } => Box::new(OracleNoise {
            gt: &seq.groundtruth,
            eta: *eta,
            drift_prob: *drift_prob,
            drift: [0.0; 2],
            rng: PortableRng::derive(seed, ORACLE_STREAM),
        }),
        ExpertKind::Ncc {
            search_factor,
            scales,
            template_rate,
        } => Box::new(NccTracker::new(
            &seq.frames[0],
            init,
            *search_factor,
            scales.clone(),
            *template_rate,
        )),
    })
}

const ORACLE_STREAM: u64 = 0x0AC1E;

struct OracleNoise<'a> {
    gt: &'a [BBox],
    eta: f64,
    drift_prob: f64,
    drift: [f64; 2],
    rng: PortableRng,
}

impl ExpertTracker for OracleNoise<'_> {
    fn track(&mut self, t: usize, _frame: &Frame) -> BBox {
        // Fixed draw count per frame keeps the noise pattern shared across eta values.
        let n: [f64; 6] = core::array::from_fn(|_| self.rng.normal());
        let drifting = self.rng.bernoulli(self.drift_prob);
        if drifting {
            self.drift[0] += self.eta * n[4];
            self.drift[1] += self.eta * n[5];
        }
        let g = self.gt[t.min(self.gt.len() - 1)];
        BBox::new(
            g.x + (self.eta * n[0] + self.drift[0]) * g.w,
            g.y + (self.eta * n[1] + self.drift[1]) * g.h,
            g.w * libm::exp(self.eta * n[2]),
            g.h * libm::exp(self.eta * n[3]),
        )
    }
}

/// Grayscale float plane of a frame (channel mean).
fn gray_plane(frame: &Frame) -> Vec<f64> {
    let ch = frame.channels;
    frame
        .pixels
        .chunks_exact(ch)
        .map(|px| px.iter().map(|v| *v as f64).sum::<f64>() / ch as f64)
        .collect()
}

/// Bilinear resample of `region` to `out_w x out_h`, clamping at frame edges.
fn sample_region(
    plane: &[f64],
    width: usize,
    height: usize,
    region: &BBox,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; out_w * out_h];
    let sx = region.w / out_w as f64;
    let sy = region.h / out_h as f64;
    let clampi = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    for i in 0..out_h {
        let v = region.y + (i as f64 + 0.5) * sy - 0.5;
        let fy = libm::floor(v);
        let (y0, y1, wy) = (
            clampi(fy as i64, height),
            clampi(fy as i64 + 1, height),
            v - fy,
        );
        for j in 0..out_w {
            let u = region.x + (j as f64 + 0.5) * sx - 0.5;
            let fx = libm::floor(u);
            let (x0, x1, wx) = (
                clampi(fx as i64, width),
                clampi(fx as i64 + 1, width),
                u - fx,
            );
            let top = plane[y0 * width + x0] * (1.0 - wx) + plane[y0 * width + x1] * wx;
            let bot = plane[y1 * width + x0] * (1.0 - wx) + plane[y1 * width + x1] * wx;
            out[i * out_w + j] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

fn round_side(v: f64) -> usize {
    (libm::round(v) as i64).max(3) as usize
}

/// Template matcher used as a stand-in for a learned tracker.
#[derive(Debug, Clone)]
pub struct NccTracker {
    template: Vec<f64>,
    tw: usize,
    th: usize,
    prev: BBox,
    search_factor: f64,
    scales: Vec<f64>,
    rate: f64,
}

/// Integral images of values and squared values with a zero first row/column.
struct Integral {
    sum: Vec<f64>,
    sq: Vec<f64>,
    stride: usize,
}

impl Integral {
    fn new(plane: &[f64], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sum = vec![0.0; stride * (height + 1)];
        let mut sq = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let (mut rs, mut rq) = (0.0, 0.0);
            for x in 0..width {
                let v = plane[y * width + x];
                rs += v;
                rq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rq;
            }
        }
        Self { sum, sq, stride }
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let s = self.stride;
        let at = |t: &[f64], xx: usize, yy: usize| t[yy * s + xx];
        let f = |t: &[f64]| at(t, x + w, y + h) - at(t, x, y + h) - at(t, x + w, y) + at(t, x, y);
        (f(&self.sum), f(&self.sq))
    }
}

impl NccTracker {
    pub fn new(
        frame0: &Frame,
        init: BBox,
        search_factor: f64,
        scales: Vec<f64>,
        rate: f64,
    ) -> Self {
        let plane = gray_plane(frame0);
        let tw = round_side(init.w);
        let th = round_side(init.h);
        let template = sample_region(&plane, frame0.width, frame0.height, &init, tw, th);
        Self {
            template,
            tw,
            th,
            prev: init,
            search_factor,
            scales,
            rate,
        }
    }

    /// One matching step against `frame`; returns (and remembers) the new box.
    pub fn step(&mut self, frame: &Frame) -> BBox {
        let plane = gray_plane(frame);
        let next = self
            .search(&plane, frame.width, frame.height)
            .unwrap_or(self.prev);
        if self.rate > 0.0 && next != self.prev {
            let fresh = sample_region(&plane, frame.width, frame.height, &next, self.tw, self.th);
            for (t, f) in self.template.iter_mut().zip(fresh) {
                *t = (1.0 - self.rate) * *t + self.rate * f;
            }
        }
        self.prev = next;
        next
    }

    fn search(&self, plane: &[f64], width: usize, height: usize) -> Option<BBox> {
        let prev = self.prev;
        let region = dilate_box(&prev, self.search_factor).ok()?;
        let x0 = libm::floor(region.x).max(0.0) as i64;
        let y0 = libm::floor(region.y).max(0.0) as i64;
        let x1 = (libm::ceil(region.x + region.w) as i64).min(width as i64);
        let y1 = (libm::ceil(region.y + region.h) as i64).min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let (x0, y0, x1, y1) = (x0 as usize, y0 as usize, x1 as usize, y1 as usize);
        let integral = Integral::new(plane, width, height);
        let template_plane = &self.template;
        let base = BBox::new(0.0, 0.0, self.tw as f64, self.th as f64);
        let (pcx, pcy) = prev.center();

        // (score, displacement^2, |scale - 1|, box)
        let mut best: Option<(f64, f64, f64, BBox)> = None;
        for &s in &self.scales {
            let cw = round_side(prev.w * s);
            let ch = round_side(prev.h * s);
            if cw > x1 - x0 || ch > y1 - y0 {
                continue;
            }
            let mut t = sample_region(template_plane, self.tw, self.th, &base, cw, ch);
            let n = (cw * ch) as f64;
            let mean = t.iter().sum::<f64>() / n;
            t.iter_mut().for_each(|v| *v -= mean);
            let tnorm2: f64 = t.iter().map(|v| v * v).sum();
            if tnorm2 <= 1e-12 {
                continue;
            }
            let (bw, bh) = (prev.w * s, prev.h * s);
            for py in y0..=(y1 - ch) {
                for px in x0..=(x1 - cw) {
                    let (ws, wq) = integral.window(px, py, cw, ch);
                    let var = wq - ws * ws / n;
                    if var <= 1e-9 * n {
                        continue;
                    }
                    let mut cross = 0.0;
                    for r in 0..ch {
                        let row = &plane[(py + r) * width + px..(py + r) * width + px + cw];
                        let trow = &t[r * cw..(r + 1) * cw];
                        cross += row.iter().zip(trow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let score = cross / libm::sqrt(tnorm2 * var);
                    let cx = px as f64 + 0.5 * cw as f64;
                    let cy = py as f64 + 0.5 * ch as f64;
                    let disp = (cx - pcx) * (cx - pcx) + (cy - pcy) * (cy - pcy);
                    let ds = libm::fabs(s - 1.0);
                    let better = match &best {
                        None => true,
                        Some((bs, bd, bsc, _)) => {
                            score > *bs
                                || (score == *bs && (disp < *bd || (disp == *bd && ds < *bsc)))
                        }
                    };
                    if better {
                        best = Some((
                            score,
                            disp,
                            ds,
                            BBox::new(cx - 0.5 * bw, cy - 0.5 * bh, bw, bh),
                        ));
                    }
                }
            }
        }
        best.map(|b| b.3)
    }
}

impl ExpertTracker for NccTracker {
    fn track(&mut self, _t: usize, frame: &Frame) -> BBox {
        self.step(frame)
    }
}

/// An expert trajectory with its derived actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub sequence_id: String,
    pub expert: String,
    pub seed: u64,
    /// `b^(d)_0 ..= b^(d)_T`.
    pub boxes: Vec<BBox>,
    /// IoU against ground truth per frame; index 0 is the initialization frame.
    pub ious: Vec<f64>,
    /// `a^(d)_1 ..= a^(d)_T` with clip flags.
    pub actions: Vec<Delta>,
    /// `r^(d)_1 ..= r^(d)_T`.
    pub rewards: Vec<f64>,
    pub positive: bool,
}

impl Demonstration {
    /// Derives actions, rewards and positivity from boxes and per-frame IoUs.
    pub fn from_boxes(
        sequence_id: String,
        expert: String,
        seed: u64,
        boxes: Vec<BBox>,
        ious: Vec<f64>,
    ) -> Result<Self> {
        if boxes.len() != ious.len() {
            return Err(Error::Length {
                what: "demonstration boxes vs ious",
                left: boxes.len(),
                right: ious.len(),
            });
        }
        if boxes.len() < 2 {
            return Err(Error::Length {
                what: "demonstration needs >= 2 frames",
                left: boxes.len(),
                right: 2,
            });
        }
        let mut actions = Vec::with_capacity(boxes.len() - 1);
        let mut rewards = Vec::with_capacity(boxes.len() - 1);
        for t in 1..boxes.len() {
            actions.push(box_delta(&boxes[t], &boxes[t - 1])?);
            rewards.push(quantized_reward(ious[t])?);
        }
        let positive = ious[1..].iter().all(|v| *v > 0.5);
        Ok(Self {
            sequence_id,
            expert,
            seed,
            boxes,
            ious,
            actions,
            rewards,
            positive,
        })
    }

    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.boxes.len() - 1
    }

    /// Demonstrator reward for frame `t >= 1`.
    pub fn reward_at(&self, t: usize) -> f64 {
        self.rewards[t - 1]
    }

    pub fn matches(&self, seq: &SyntheticSequence) -> bool {
        self.sequence_id == seq.id && self.boxes.len() == seq.len()
    }
}

/// Runs an expert from `g_0` through the whole sequence.
pub fn run_expert(kind: &ExpertKind, seq: &SyntheticSequence, seed: u64) -> Result<Demonstration> {
    seq.validate()?;
    let g0 = seq.groundtruth[0];
    let mut expert = start_expert(kind, seq, g0, seed)?;
    let mut boxes = Vec::with_capacity(seq.len());
    let mut ious = Vec::with_capacity(seq.len());
    boxes.push(g0);
    ious.push(1.0);
    for t in 1..seq.len() {
        let mut b = expert.track(t, &seq.frames[t]);
        b.w = b.w.max(crate::geometry::EPS_SIZE);
        b.h = b.h.max(crate::geometry::EPS_SIZE);
        ious.push(iou(&b, &seq.groundtruth[t])?);
        boxes.push(b);
    }
    Demonstration::from_boxes(seq.id.clone(), kind.describe(), seed, boxes, ious)
}

/// Keeps the demonstrations whose IoU exceeds 0.5 on every frame after the first.
pub fn filter_positive(demos: &[Demonstration]) -> Vec<Demonstration> {
    demos
        .iter()
        .filter(|d| d.ious.iter().skip(1).all(|v| *v > 0.5))
        .cloned()
        .collect()
}

impl core::fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.describe())
    }
}

impl core::str::FromStr for ExpertKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExpertKind::parse(s)
    }
}
