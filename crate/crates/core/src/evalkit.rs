//! One-pass evaluation metrics, report assembly and SVG curve rendering.
//!
//! Frame 0 is the initialization frame and is excluded everywhere.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Success-curve thresholds `0.00, 0.05, ..., 1.00`.
pub const SUCCESS_POINTS: usize = 21;
/// Precision-curve thresholds `0..=50` pixels.
pub const PRECISION_POINTS: usize = 51;
pub const PRECISION_AT: usize = 20;

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / 20.0
}

fn check(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Length {
            what: "trajectory vs ground truth",
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::Length {
            what: "evaluation needs >= 2 frames",
            left: pred.len(),
            right: 2,
        });
    }
    Ok(())
}

/// IoU of frames `1..T`.
pub fn overlaps(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    check(pred, gt)?;
    pred[1..]
        .iter()
        .zip(&gt[1..])
        .map(|(p, g)| iou(p, g))
        .collect()
}

/// Center distances of frames `1..T`.
pub fn center_errors(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    check(pred, gt)?;
    Ok(pred[1..]
        .iter()
        .zip(&gt[1..])
        .map(|(p, g)| {
            let (px, py) = p.center();
            let (gx, gy) = g.center();
            libm::hypot(px - gx, py - gy)
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rate_above(ious: &[f64], threshold: f64) -> f64 {
    ious.iter().filter(|v| **v > threshold).count() as f64 / ious.len() as f64
}

pub fn ao(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    Ok(mean(&overlaps(pred, gt)?))
}

/// Fraction of frames with IoU strictly above `threshold`.
pub fn sr(pred: &[BBox], gt: &[BBox], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain {
            what: "success threshold",
            value: threshold,
        });
    }
    Ok(rate_above(&overlaps(pred, gt)?, threshold))
}

pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    let o = overlaps(pred, gt)?;
    Ok((0..SUCCESS_POINTS)
        .map(|i| rate_above(&o, success_threshold(i)))
        .collect())
}

/// Area under the success curve, taken as the mean of its points.
pub fn ss(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    Ok(mean(&success_curve(pred, gt)?))
}

pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<Vec<f64>> {
    let e = center_errors(pred, gt)?;
    Ok((0..PRECISION_POINTS)
        .map(|d| e.iter().filter(|v| **v <= d as f64).count() as f64 / e.len() as f64)
        .collect())
}

pub fn ps(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    Ok(precision_curve(pred, gt)?[PRECISION_AT])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub ao: f64,
    pub sr50: f64,
    pub sr75: f64,
    pub success: Vec<f64>,
    pub ss: f64,
    pub precision: Vec<f64>,
    pub ps: f64,
    pub frames: usize,
}

impl SequenceMetrics {
    pub fn compute(pred: &[BBox], gt: &[BBox]) -> Result<Self> {
        let o = overlaps(pred, gt)?;
        let success: Vec<f64> = (0..SUCCESS_POINTS)
            .map(|i| rate_above(&o, success_threshold(i)))
            .collect();
        let precision = precision_curve(pred, gt)?;
        Ok(Self {
            ao: mean(&o),
            sr50: rate_above(&o, 0.5),
            sr75: rate_above(&o, 0.75),
            ss: mean(&success),
            ps: precision[PRECISION_AT],
            success,
            precision,
            frames: o.len(),
        })
    }
}

/// Unweighted mean over sequences; `frames` is the total.
pub fn aggregate(items: &[SequenceMetrics]) -> Result<SequenceMetrics> {
    if items.is_empty() {
        return Err(Error::Length {
            what: "aggregate over sequences",
            left: 0,
            right: 1,
        });
    }
    let n = items.len() as f64;
    let avg = |f: &dyn Fn(&SequenceMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    let curve = |len: usize, f: &dyn Fn(&SequenceMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..len)
            .map(|i| items.iter().map(|m| f(m)[i]).sum::<f64>() / n)
            .collect()
    };
    Ok(SequenceMetrics {
        ao: avg(&|m| m.ao),
        sr50: avg(&|m| m.sr50),
        sr75: avg(&|m| m.sr75),
        ss: avg(&|m| m.ss),
        ps: avg(&|m| m.ps),
        success: curve(SUCCESS_POINTS, &|m| &m.success),
        precision: curve(PRECISION_POINTS, &|m| &m.precision),
        frames: items.iter().map(|m| m.frames).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Tracker label, e.g. `a3ct`.
    pub mode: String,
    pub dataset_digest: String,
    pub checkpoint_digest: String,
    pub sequences: Vec<(String, SequenceMetrics)>,
    pub aggregate: SequenceMetrics,
}

fn join(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    parts.join(";")
}

fn write_metrics(out: &mut String, prefix: &str, m: &SequenceMetrics) {
    let _ = writeln!(out, "{prefix}ao={}", m.ao);
    let _ = writeln!(out, "{prefix}sr50={}", m.sr50);
    let _ = writeln!(out, "{prefix}sr75={}", m.sr75);
    let _ = writeln!(out, "{prefix}ss={}", m.ss);
    let _ = writeln!(out, "{prefix}ps={}", m.ps);
    let _ = writeln!(out, "{prefix}frames={}", m.frames);
    let _ = writeln!(out, "{prefix}curve.success={}", join(&m.success));
    let _ = writeln!(out, "{prefix}curve.precision={}", join(&m.precision));
}

fn parse_curve(v: &str) -> Option<Vec<f64>> {
    if v.is_empty() {
        return Some(Vec::new());
    }
    v.split(';').map(|x| x.parse().ok()).collect()
}

impl EvalReport {
    pub fn new(
        mode: &str,
        dataset_digest: &str,
        checkpoint_digest: &str,
        sequences: Vec<(String, SequenceMetrics)>,
    ) -> Result<Self> {
        let per: Vec<SequenceMetrics> = sequences.iter().map(|(_, m)| m.clone()).collect();
        Ok(Self {
            mode: mode.into(),
            dataset_digest: dataset_digest.into(),
            checkpoint_digest: checkpoint_digest.into(),
            aggregate: aggregate(&per)?,
            sequences,
        })
    }

    /// Aggregate scalars and curves first, then `seq.<id>.`-prefixed blocks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mode: {}", self.mode);
        let _ = writeln!(out, "# dataset digest: {}", self.dataset_digest);
        let _ = writeln!(out, "# checkpoint digest: {}", self.checkpoint_digest);
        let _ = writeln!(out, "mode={}", self.mode);
        let _ = writeln!(out, "sequences={}", self.sequences.len());
        write_metrics(&mut out, "", &self.aggregate);
        for (id, m) in &self.sequences {
            write_metrics(&mut out, &format!("seq.{id}."), m);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |l: &str| Error::Config(format!("malformed report line `{l}`"));
        let mut mode = String::new();
        let mut dd = String::new();
        let mut cd = String::new();
        let mut agg = empty_metrics();
        let mut seqs: Vec<(String, SequenceMetrics)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim();
                if let Some(v) = h.strip_prefix("dataset digest:") {
                    dd = v.trim().into();
                } else if let Some(v) = h.strip_prefix("checkpoint digest:") {
                    cd = v.trim().into();
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            if k == "mode" {
                mode = v.into();
                continue;
            }
            if k == "sequences" {
                continue;
            }
            let (target, field) = match k.strip_prefix("seq.") {
                Some(rest) => {
                    let field_start = FIELDS
                        .iter()
                        .filter_map(|f| {
                            rest.strip_suffix(f)
                                .filter(|id| id.ends_with('.'))
                                .map(|id| id.len())
                        })
                        .next()
                        .ok_or_else(|| bad(line))?;
                    let id = &rest[..field_start - 1];
                    if seqs.last().map(|(s, _)| s.as_str()) != Some(id) {
                        seqs.push((id.into(), empty_metrics()));
                    }
                    (&mut seqs.last_mut().unwrap().1, &rest[field_start..])
                }
                None => (&mut agg, k),
            };
            set_field(target, field, v).ok_or_else(|| bad(line))?;
        }
        Ok(Self {
            mode,
            dataset_digest: dd,
            checkpoint_digest: cd,
            sequences: seqs,
            aggregate: agg,
        })
    }
}

const FIELDS: [&str; 8] = [
    "ao",
    "sr50",
    "sr75",
    "ss",
    "ps",
    "frames",
    "curve.success",
    "curve.precision",
];

fn empty_metrics() -> SequenceMetrics {
    SequenceMetrics {
        ao: 0.0,
        sr50: 0.0,
        sr75: 0.0,
        success: Vec::new(),
        ss: 0.0,
        precision: Vec::new(),
        ps: 0.0,
        frames: 0,
    }
}

fn set_field(m: &mut SequenceMetrics, field: &str, v: &str) -> Option<()> {
    match field {
        "ao" => m.ao = v.parse().ok()?,
        "sr50" => m.sr50 = v.parse().ok()?,
        "sr75" => m.sr75 = v.parse().ok()?,
        "ss" => m.ss = v.parse().ok()?,
        "ps" => m.ps = v.parse().ok()?,
        "frames" => m.frames = v.parse().ok()?,
        "curve.success" => m.success = parse_curve(v)?,
        "curve.precision" => m.precision = parse_curve(v)?,
        _ => return None,
    }
    Some(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Success,
    Precision,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Standalone SVG plot of one curve per labelled report.
pub fn render_svg(kind: CurveKind, series: &[(&str, &EvalReport)]) -> String {
    let (w, h) = (480.0, 360.0);
    let (l, r, t, b) = (60.0, 20.0, 30.0, 50.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let (title, xlabel, xmax) = match kind {
        CurveKind::Success => ("Success plot", "Overlap threshold", 1.0),
        CurveKind::Precision => ("Precision plot", "Location error threshold (px)", 50.0),
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        w / 2.0
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#,
        y0 = t + ph,
        x1 = l + pw
    );
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = l + frac * pw;
        let y = t + ph - frac * ph;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            t + ph + 14.0,
            format_tick(frac * xmax)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{:.1}</text>"#,
            l - 5.0,
            y + 3.0,
            frac
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>"#,
        l + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.1})">Rate</text>"#,
        t + ph / 2.0,
        t + ph / 2.0
    );
    for (k, (label, rep)) in series.iter().enumerate() {
        let curve = match kind {
            CurveKind::Success => &rep.aggregate.success,
            CurveKind::Precision => &rep.aggregate.precision,
        };
        let n = curve.len().max(2) - 1;
        let pts: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", l + pw * i as f64 / n as f64, t + ph - v * ph))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let score = match kind {
            CurveKind::Success => rep.aggregate.ss,
            CurveKind::Precision => rep.aggregate.ps,
        };
        let ly = t + 16.0 + 16.0 * k as f64;
        let lx = l + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{} [{:.3}]</text>"#,
            lx + 25.0,
            ly + 4.0,
            escape(label),
            score
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v == libm::floor(v) {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}
