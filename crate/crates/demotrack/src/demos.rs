//! Demonstration files.
//!
//! One `<sequence id>.demo` per sequence: `#`-prefixed header lines
//! (`expert=`, `seed=`, `positive=0/1`, `sequence=`), then `x,y,w,h,iou` per
//! frame with the IoU left empty on frame 0. Actions and rewards are not
//! stored; they are recomputed from the boxes on load. A directory of demos
//! also carries `positive.txt`, the ids that passed the positivity filter.

use std::fmt::Write as _;
use std::path::Path;

use demotrack_core::expert::{filter_positive, run_expert, Demonstration, ExpertKind};

use crate::dataset::{parse_box, Dataset};
use crate::error::{format_err, io_at, read_text, write_bytes, Error, Result};

const FORMAT_LINE: &str = "# demotrack demo v1";

pub fn demo_text(d: &Demonstration) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{FORMAT_LINE}");
    let _ = writeln!(s, "# expert={}", d.expert);
    let _ = writeln!(s, "# seed={}", d.seed);
    let _ = writeln!(s, "# positive={}", d.positive as u8);
    let _ = writeln!(s, "# sequence={}", d.sequence_id);
    for (t, (b, iou)) in d.boxes.iter().zip(&d.ious).enumerate() {
        if t == 0 {
            let _ = writeln!(s, "{},{},{},{},", b.x, b.y, b.w, b.h);
        } else {
            let _ = writeln!(s, "{},{},{},{},{}", b.x, b.y, b.w, b.h, iou);
        }
    }
    s
}

pub fn save_demo(d: &Demonstration, path: &Path) -> Result<()> {
    write_bytes(path, demo_text(d).as_bytes())
}

pub fn parse_demo(text: &str, path: &Path) -> Result<Demonstration> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(FORMAT_LINE) {
        return Err(format_err(path, "missing or unsupported demo format line"));
    }
    let (mut expert, mut seed, mut positive, mut sequence) = (None, None, None, None);
    let mut boxes = Vec::new();
    let mut ious = Vec::new();
    for line in lines {
        if let Some(h) = line.strip_prefix('#') {
            let (k, v) = h
                .trim()
                .split_once('=')
                .ok_or_else(|| format_err(path, format!("malformed header `{line}`")))?;
            match k {
                "expert" => expert = Some(v.to_string()),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| format_err(path, "bad seed"))?),
                "positive" => positive = Some(v == "1"),
                "sequence" => sequence = Some(v.to_string()),
                other => return Err(format_err(path, format!("unknown header key `{other}`"))),
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let frame = boxes.len();
        let bad = || format_err(path, format!("frame {frame}: expected x,y,w,h,iou"));
        if f.len() != 5 {
            return Err(bad());
        }
        boxes.push(parse_box(&f[..4]).ok_or_else(bad)?);
        let iou_field = f[4].trim();
        ious.push(match (frame, iou_field) {
            (0, "") => 1.0,
            (_, v) => v.parse().map_err(|_| bad())?,
        });
    }
    let missing = |k: &str| format_err(path, format!("header lacks `{k}`"));
    let d = Demonstration::from_boxes(
        sequence.ok_or_else(|| missing("sequence"))?,
        expert.ok_or_else(|| missing("expert"))?,
        seed.ok_or_else(|| missing("seed"))?,
        boxes,
        ious,
    )?;
    if Some(d.positive) != positive {
        return Err(format_err(
            path,
            "positive flag disagrees with the stored IoUs",
        ));
    }
    Ok(d)
}

pub fn load_demo(path: &Path) -> Result<Demonstration> {
    parse_demo(&read_text(path)?, path)
}

/// Demonstrations of one expert over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub dataset_digest: String,
    pub demos: Vec<Demonstration>,
}

impl DemoSet {
    /// Runs `kind` from each sequence's first ground-truth box.
    pub fn collect(dataset: &Dataset, kind: &ExpertKind, seed: u64) -> Result<Self> {
        let demos = dataset
            .sequences
            .iter()
            .map(|s| run_expert(kind, s, seed))
            .collect::<demotrack_core::Result<Vec<_>>>()?;
        Ok(Self {
            dataset_digest: dataset.digest().to_string(),
            demos,
        })
    }

    pub fn positive(&self) -> Vec<Demonstration> {
        filter_positive(&self.demos)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut index = format!("# dataset_digest={}\n", self.dataset_digest);
        for d in &self.demos {
            save_demo(d, &dir.join(format!("{}.demo", d.sequence_id)))?;
        }
        for d in self.positive() {
            let _ = writeln!(index, "{}", d.sequence_id);
        }
        write_bytes(&dir.join("positive.txt"), index.as_bytes())
    }

    /// Loads every `.demo` file in `dir` (sorted by name) and checks the
    /// positive index against the recomputed flags.
    pub fn load(dir: &Path) -> Result<Self> {
        let ipath = dir.join("positive.txt");
        let index = read_text(&ipath)?;
        let mut dataset_digest = None;
        let mut listed = Vec::new();
        for line in index.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line.strip_prefix("# dataset_digest=") {
                Some(v) => dataset_digest = Some(v.to_string()),
                None => listed.push(line.to_string()),
            }
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_at(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "demo"))
            .collect();
        paths.sort();
        let demos = paths
            .iter()
            .map(|p| load_demo(p))
            .collect::<Result<Vec<_>>>()?;
        let set = Self {
            dataset_digest: dataset_digest
                .ok_or_else(|| format_err(&ipath, "missing dataset_digest header"))?,
            demos,
        };
        let recomputed: Vec<String> = set.positive().into_iter().map(|d| d.sequence_id).collect();
        let mut listed_sorted = listed;
        listed_sorted.sort();
        let mut rec_sorted = recomputed;
        rec_sorted.sort();
        if listed_sorted != rec_sorted {
            return Err(Error::Integrity(format!(
                "{}: positive index disagrees with the demonstration files",
                ipath.display()
            )));
        }
        Ok(set)
    }
}
