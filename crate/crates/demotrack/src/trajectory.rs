//! Trajectory files: a `#` header, then `t,x,y,w,h,source,Rhat,Rhat_d` per
//! frame. `source` and the two values are empty on frame 0 and for the
//! autonomous tracker.
//!
//! Files written by other trackers may instead carry bare `x,y,w,h` lines
//! (frame 0 first); [`read_trajectory`] accepts both.

use std::fmt::Write as _;
use std::path::Path;

use demotrack_core::geometry::BBox;
use demotrack_core::tracker::{Arbitration, FrameSource, TrajectoryRecord};

use crate::dataset::parse_box;
use crate::error::{format_err, read_text, write_bytes, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryHeader {
    pub mode: String,
    pub checkpoint_digest: String,
    /// Expert description for the arbitrating tracker.
    pub expert: String,
    pub sequence_id: String,
    pub dataset_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: TrajectoryHeader,
    pub boxes: Vec<BBox>,
    /// Per frame `t >= 1`, present only when the file records arbitration.
    pub arbitration: Vec<Option<Arbitration>>,
}

const HEADER_KEYS: [&str; 5] = [
    "mode",
    "checkpoint_digest",
    "expert",
    "sequence",
    "dataset_digest",
];

pub fn trajectory_text(h: &TrajectoryHeader, rec: &TrajectoryRecord) -> String {
    let mut s = String::new();
    let vals = [
        &h.mode,
        &h.checkpoint_digest,
        &h.expert,
        &h.sequence_id,
        &h.dataset_digest,
    ];
    for (k, v) in HEADER_KEYS.iter().zip(vals) {
        let _ = writeln!(s, "# {k}={v}");
    }
    let _ = writeln!(s, "# t,x,y,w,h,source,Rhat,Rhat_d");
    for (t, b) in rec.boxes.iter().enumerate() {
        let _ = write!(s, "{t},{},{},{},{},", b.x, b.y, b.w, b.h);
        match t.checked_sub(1).and_then(|i| rec.arbitration.get(i)) {
            Some(a) => {
                let _ = writeln!(
                    s,
                    "{},{},{}",
                    a.source.name(),
                    a.agent_value,
                    a.expert_value
                );
            }
            None => s.push_str(",,\n"),
        }
    }
    s
}

pub fn write_trajectory(path: &Path, h: &TrajectoryHeader, rec: &TrajectoryRecord) -> Result<()> {
    write_bytes(path, trajectory_text(h, rec).as_bytes())
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<TrajectoryFile> {
    let mut header = TrajectoryHeader::default();
    let mut boxes = Vec::new();
    let mut arbitration = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| format_err(path, format!("line {}: {m}", i + 1));
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.trim().split_once('=') {
                let v = v.to_string();
                match k {
                    "mode" => header.mode = v,
                    "checkpoint_digest" => header.checkpoint_digest = v,
                    "expert" => header.expert = v,
                    "sequence" => header.sequence_id = v,
                    "dataset_digest" => header.dataset_digest = v,
                    _ => {}
                }
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        match f.len() {
            4 => {
                boxes.push(parse_box(&f).ok_or_else(|| bad("bad box"))?);
                if boxes.len() > 1 {
                    arbitration.push(None);
                }
            }
            8 => {
                let t: usize = f[0].parse().map_err(|_| bad("bad frame index"))?;
                if t != boxes.len() {
                    return Err(bad("frame indices must run 0, 1, 2, ..."));
                }
                boxes.push(parse_box(&f[1..5]).ok_or_else(|| bad("bad box"))?);
                let a = match (f[5], f[6], f[7]) {
                    ("", _, _) => None,
                    (src, rv, dv) => {
                        let source = match src {
                            "agent" => FrameSource::Agent,
                            "expert" => FrameSource::Expert,
                            _ => return Err(bad("source must be agent or expert")),
                        };
                        Some(Arbitration {
                            source,
                            agent_value: rv.parse().map_err(|_| bad("bad Rhat"))?,
                            expert_value: dv.parse().map_err(|_| bad("bad Rhat_d"))?,
                        })
                    }
                };
                if t > 0 {
                    arbitration.push(a);
                }
            }
            _ => return Err(bad("expected x,y,w,h or t,x,y,w,h,source,Rhat,Rhat_d")),
        }
    }
    Ok(TrajectoryFile {
        header,
        boxes,
        arbitration,
    })
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile> {
    parse_trajectory(&read_text(path)?, path)
}
