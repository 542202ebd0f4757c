//! Checkpoint files.
//!
//! Layout: magic `SVTC`, u32 version, u32 length of a textual config blob
//! and the blob itself, u32 record count, then per record a u16 name length,
//! the name, a u8 rank, one u32 per dimension and the f64 values. Everything
//! is little-endian. The blob holds `model.*` lines (the architecture) and
//! `meta.*` lines (training counters).

use std::fmt::Write as _;
use std::path::Path;

use demotrack_core::nn::{ModelConfig, PolicyValueNet};
use demotrack_core::synthworld::hex_digest;
use demotrack_core::tracker::{TrainedModel, TrainingMeta};

use crate::error::{format_err, io_at, write_bytes, Result};

const MAGIC: &[u8; 4] = b"SVTC";
const VERSION: u32 = 1;

fn config_blob(model: &TrainedModel) -> String {
    let mut s = String::new();
    for line in model.net.config().to_text().lines() {
        let _ = writeln!(s, "model.{line}");
    }
    let m = &model.meta;
    let _ = writeln!(s, "meta.episodes={}", m.episodes);
    let _ = writeln!(s, "meta.imitation_updates={}", m.imitation_updates);
    let _ = writeln!(s, "meta.rl_updates={}", m.rl_updates);
    let _ = writeln!(s, "meta.version={}", m.version);
    let _ = writeln!(s, "meta.horizon={}", m.horizon);
    s
}

pub fn encode(model: &TrainedModel) -> Vec<u8> {
    let blob = config_blob(model);
    let layout = model.net.layout();
    let mut out =
        Vec::with_capacity(16 + blob.len() + model.net.num_params() * 8 + layout.specs.len() * 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob.as_bytes());
    out.extend_from_slice(&(layout.specs.len() as u32).to_le_bytes());
    for spec in &layout.specs {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for d in &spec.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &model.net.params[spec.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let err = |m: String| format_err(path, m);
    let truncated = || err("truncated checkpoint".into());
    let mut r = Reader { bytes, at: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(err("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let blob_len = r.u32().ok_or_else(truncated)? as usize;
    let blob = std::str::from_utf8(r.take(blob_len).ok_or_else(truncated)?)
        .map_err(|_| err("config blob is not UTF-8".into()))?;

    let mut model_text = String::new();
    let mut meta = TrainingMeta::default();
    for line in blob.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(m) = line.strip_prefix("model.") {
            model_text.push_str(m);
            model_text.push('\n');
            continue;
        }
        let (k, v) = line
            .strip_prefix("meta.")
            .and_then(|m| m.split_once('='))
            .ok_or_else(|| err(format!("unexpected config line `{line}`")))?;
        let n: u64 = v
            .parse()
            .map_err(|_| err(format!("bad value in `{line}`")))?;
        match k {
            "episodes" => meta.episodes = n,
            "imitation_updates" => meta.imitation_updates = n,
            "rl_updates" => meta.rl_updates = n,
            "version" => meta.version = n,
            "horizon" => meta.horizon = n,
            _ => return Err(err(format!("unknown metadata key `{k}`"))),
        }
    }
    let cfg = ModelConfig::from_text(&model_text)?;
    let mut net = PolicyValueNet::zeroed(&cfg)?;

    let count = r.u32().ok_or_else(truncated)? as usize;
    let specs = net.layout().specs.clone();
    if count != specs.len() {
        return Err(err(format!(
            "{count} records, architecture has {}",
            specs.len()
        )));
    }
    for spec in &specs {
        let name_len = r.u16().ok_or_else(truncated)? as usize;
        let name = r.take(name_len).ok_or_else(truncated)?;
        if name != spec.name.as_bytes() {
            return Err(err(format!(
                "record `{}` where `{}` was expected",
                String::from_utf8_lossy(name),
                spec.name
            )));
        }
        let rank = *r.take(1).ok_or_else(truncated)?.first().unwrap() as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(truncated)?;
        if shape != spec.shape {
            return Err(err(format!(
                "record `{}` has shape {shape:?}, expected {:?}",
                spec.name, spec.shape
            )));
        }
        for i in spec.range() {
            let v = r.f64().ok_or_else(truncated)?;
            if !v.is_finite() {
                return Err(err(format!(
                    "record `{}` holds a non-finite value",
                    spec.name
                )));
            }
            net.params[i] = v;
        }
    }
    if r.at != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(TrainedModel { net, meta })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<String> {
    let bytes = encode(model);
    write_bytes(path, &bytes)?;
    Ok(hex_digest(&bytes))
}

/// The model and the digest of the file bytes.
pub fn load_checkpoint(path: &Path) -> Result<(TrainedModel, String)> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    Ok((decode(&bytes, path)?, hex_digest(&bytes)))
}
