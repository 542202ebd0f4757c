//! On-disk synthetic datasets.
//!
//! A dataset directory holds `manifest.txt` and one sub-directory per
//! sequence with `frames.bin`, `groundtruth.txt` and `meta.txt`.
//!
//! `frames.bin` is the magic `SVTF`, then u32 version (1), frame count,
//! height, width and channels, then the raw pixel bytes frame after frame,
//! all integers little-endian.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use demotrack_core::geometry::BBox;
use demotrack_core::synthworld::{
    generate_sequence, hex_digest, sequence_digest, Frame, SyntheticSequence, WorldConfig,
};

use crate::error::{format_err, io_at, read_text, write_bytes, Error, Result};

const FRAMES_MAGIC: &[u8; 4] = b"SVTF";
const FRAMES_VERSION: u32 = 1;

pub fn save_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    let f0 = &seq.frames[0];
    let mut bytes = Vec::with_capacity(24 + seq.frames.len() * f0.pixels.len());
    bytes.extend_from_slice(FRAMES_MAGIC);
    for v in [
        FRAMES_VERSION,
        seq.len() as u32,
        f0.height as u32,
        f0.width as u32,
        f0.channels as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for f in &seq.frames {
        bytes.extend_from_slice(&f.pixels);
    }
    write_bytes(&dir.join("frames.bin"), &bytes)?;
    write_bytes(
        &dir.join("groundtruth.txt"),
        boxes_text(&seq.groundtruth).as_bytes(),
    )?;
    let meta = format!(
        "id={}\nseed={}\nconfig_digest={}\n",
        seq.id, seq.seed, seq.config_digest
    );
    write_bytes(&dir.join("meta.txt"), meta.as_bytes())
}

/// `x,y,w,h` per line with shortest round-trip decimals.
pub fn boxes_text(boxes: &[BBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{},{},{},{}", b.x, b.y, b.w, b.h);
    }
    s
}

pub fn parse_box(fields: &[&str]) -> Option<BBox> {
    if fields.len() != 4 {
        return None;
    }
    let v: Vec<f64> = fields
        .iter()
        .map(|f| f.trim().parse().ok())
        .collect::<Option<_>>()?;
    Some(BBox::new(v[0], v[1], v[2], v[3]))
}

pub fn load_sequence(dir: &Path) -> Result<SyntheticSequence> {
    let fpath = dir.join("frames.bin");
    let bytes = std::fs::read(&fpath).map_err(io_at(&fpath))?;
    if bytes.len() < 24 || &bytes[..4] != FRAMES_MAGIC {
        return Err(format_err(
            &fpath,
            "not a frames file (bad magic or short header)",
        ));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) as u32 != FRAMES_VERSION {
        return Err(format_err(
            &fpath,
            format!("unsupported frames version {}", word(0)),
        ));
    }
    let (count, height, width, channels) = (word(1), word(2), word(3), word(4));
    let frame_len = width * height * channels;
    if bytes.len() - 24 != count * frame_len {
        return Err(format_err(
            &fpath,
            format!(
                "corrupt: {} pixel bytes for {count} frames of {width}x{height}x{channels}",
                bytes.len() - 24
            ),
        ));
    }
    let frames = bytes[24..]
        .chunks_exact(frame_len.max(1))
        .take(count)
        .map(|px| Frame::from_pixels(width, height, channels, px.to_vec()))
        .collect::<demotrack_core::Result<Vec<_>>>()?;

    let gpath = dir.join("groundtruth.txt");
    let groundtruth = read_text(&gpath)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            parse_box(&f)
                .ok_or_else(|| format_err(&gpath, format!("line {}: expected x,y,w,h", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    if groundtruth.len() != frames.len() {
        return Err(format_err(
            &gpath,
            format!("{} boxes for {} frames", groundtruth.len(), frames.len()),
        ));
    }

    let mpath = dir.join("meta.txt");
    let meta = read_text(&mpath)?;
    let field = |k: &str| -> Result<String> {
        meta.lines()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .map(|v| v.trim().to_string())
            .ok_or_else(|| format_err(&mpath, format!("missing `{k}`")))
    };
    let seq = SyntheticSequence {
        id: field("id")?,
        seed: field("seed")?
            .parse()
            .map_err(|_| format_err(&mpath, "bad seed"))?,
        config_digest: field("config_digest")?,
        frames,
        groundtruth,
    };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub world: WorldConfig,
    pub entries: Vec<ManifestEntry>,
    /// Digest over the world config and every sequence digest.
    pub digest: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# seed={} config_digest={}",
            self.seed,
            self.world.digest()
        );
        let _ = writeln!(s, "# dataset_digest={}", self.digest);
        for (k, v) in self.world.entries() {
            let _ = writeln!(s, "# world.{k}={v}");
        }
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.id, e.length, e.width, e.height, e.channels
            );
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut seed = None;
        let mut digest = None;
        let mut config_digest = None;
        let mut world = WorldConfig::default();
        let mut entries = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad = |m: &str| format_err(path, format!("line {}: {m}", i + 1));
            if let Some(h) = line.strip_prefix('#') {
                for kv in h.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else {
                        continue;
                    };
                    match k {
                        "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("bad seed"))?),
                        "config_digest" => config_digest = Some(v.to_string()),
                        "dataset_digest" => digest = Some(v.to_string()),
                        _ => {
                            if let Some(wk) = k.strip_prefix("world.") {
                                world.set(wk, v)?;
                            }
                        }
                    }
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(bad("expected id,length,width,height,channels"));
            }
            let n = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                length: n(f[1])?,
                width: n(f[2])?,
                height: n(f[3])?,
                channels: n(f[4])?,
            });
        }
        let m = Manifest {
            seed: seed.ok_or_else(|| format_err(path, "header lacks seed"))?,
            digest: digest.ok_or_else(|| format_err(path, "header lacks dataset_digest"))?,
            world,
            entries,
        };
        if config_digest.as_deref() != Some(m.world.digest().as_str()) {
            return Err(Error::Integrity(format!(
                "{}: world config does not match its recorded digest",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn dataset_digest(world: &WorldConfig, sequences: &[SyntheticSequence]) -> String {
    let mut s = world.digest();
    s.push('\n');
    for seq in sequences {
        let _ = writeln!(s, "{}:{}", seq.id, sequence_digest(seq));
    }
    hex_digest(s.as_bytes())
}

fn manifest_for(seed: u64, world: &WorldConfig, sequences: &[SyntheticSequence]) -> Manifest {
    Manifest {
        seed,
        world: world.clone(),
        entries: sequences
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                length: s.len(),
                width: s.frames[0].width,
                height: s.frames[0].height,
                channels: s.frames[0].channels,
            })
            .collect(),
        digest: dataset_digest(world, sequences),
    }
}

/// Generates sequences with seeds `seed, seed + 1, ...` in memory.
pub fn generate(count: usize, seed: u64, world: &WorldConfig) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Invalid("count must be >= 1".into()));
    }
    let sequences = (0..count as u64)
        .map(|i| generate_sequence(seed.wrapping_add(i), world))
        .collect::<demotrack_core::Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: manifest_for(seed, world, &sequences),
        sequences,
    })
}

/// Generates and writes a dataset, returning its manifest.
pub fn generate_dataset(
    count: usize,
    seed: u64,
    world: &WorldConfig,
    dir: &Path,
) -> Result<Manifest> {
    let ds = generate(count, seed, world)?;
    ds.save(dir)?;
    Ok(ds.manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub sequences: Vec<SyntheticSequence>,
}

impl Dataset {
    pub fn digest(&self) -> &str {
        &self.manifest.digest
    }

    pub fn get(&self, id: &str) -> Option<&SyntheticSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for s in &self.sequences {
            save_sequence(s, &dir.join(&s.id))?;
        }
        write_bytes(
            &dir.join("manifest.txt"),
            self.manifest.to_text().as_bytes(),
        )
    }

    /// Loads every sequence listed in the manifest and checks the recorded
    /// dataset digest against the files.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath: PathBuf = dir.join("manifest.txt");
        let manifest = Manifest::parse(&read_text(&mpath)?, &mpath)?;
        let mut sequences = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let s = load_sequence(&dir.join(&e.id))?;
            let f = &s.frames[0];
            if s.id != e.id
                || s.len() != e.length
                || (f.width, f.height, f.channels) != (e.width, e.height, e.channels)
            {
                return Err(Error::Integrity(format!(
                    "sequence `{}` disagrees with the manifest",
                    e.id
                )));
            }
            sequences.push(s);
        }
        let actual = dataset_digest(&manifest.world, &sequences);
        if actual != manifest.digest {
            return Err(Error::Integrity(format!(
                "{}: files hash to {actual}, manifest records {}",
                dir.display(),
                manifest.digest
            )));
        }
        Ok(Self {
            manifest,
            sequences,
        })
    }
}
