//! Deterministic synthetic tracking sequences.
//!
//! A textured target (rectangle or ellipse) moves over a smooth textured
//! background with a velocity random walk reflected at the frame borders and
//! a multiplicative scale walk. Independently moving distractors and
//! single-frame occluding bars make the sequences hard enough for a template
//! matcher to fail now and then.
//!
//! Generation is a pure function of `(seed, WorldConfig)`; see [`crate::rng`]
//! for the random stream.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::PortableRng;

/// Smallest ground-truth side length the generator produces.
pub const MIN_GT_SIDE: f64 = 4.0;

/// One video frame, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![0; width * height * channels],
        }
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(Error::Length {
                what: "frame pixels",
                left: pixels.len(),
                right: width * height * channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let i = (y * self.width + x) * self.channels + c;
        self.pixels[i] = v;
    }
}

/// A generated (or loaded) sequence with one ground-truth box per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub id: String,
    pub frames: Vec<Frame>,
    pub groundtruth: Vec<BBox>,
    pub seed: u64,
    pub config_digest: String,
}

impl SyntheticSequence {
    /// Number of frames, `T + 1`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.groundtruth.len() {
            return Err(Error::Length {
                what: "frames vs groundtruth",
                left: self.frames.len(),
                right: self.groundtruth.len(),
            });
        }
        if self.frames.len() < 2 {
            return Err(Error::Length {
                what: "sequence needs at least two frames",
                left: self.frames.len(),
                right: 2,
            });
        }
        let f0 = &self.frames[0];
        for f in &self.frames {
            if (f.width, f.height, f.channels) != (f0.width, f0.height, f0.channels) {
                return Err(Error::Shape {
                    expected: format!("{}x{}x{}", f0.width, f0.height, f0.channels),
                    found: format!("{}x{}x{}", f.width, f.height, f.channels),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetShape {
    Rectangle,
    Ellipse,
    /// Rectangle or ellipse, drawn per sequence.
    Mixed,
}

impl TargetShape {
    pub fn name(&self) -> &'static str {
        match self {
            TargetShape::Rectangle => "rectangle",
            TargetShape::Ellipse => "ellipse",
            TargetShape::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(Self::Rectangle),
            "ellipse" => Ok(Self::Ellipse),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown target shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub shape: TargetShape,
    pub texture_seed: u64,
    /// Initial box side range in pixels.
    pub min_box: f64,
    pub max_box: f64,
    /// Speed cap per axis as a fraction of the box size per frame.
    pub max_speed: f64,
    /// Std of the per-frame velocity change, as a fraction of the box size.
    pub accel_std: f64,
    /// Std of the per-frame log-scale step.
    pub scale_std: f64,
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub occluder_prob: f64,
    /// Uniform per-pixel noise amplitude in intensity levels.
    pub noise_amp: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            channels: 1,
            min_len: 20,
            max_len: 80,
            shape: TargetShape::Rectangle,
            texture_seed: 0,
            min_box: 20.0,
            max_box: 40.0,
            max_speed: 0.15,
            accel_std: 0.04,
            scale_std: 0.02,
            min_distractors: 0,
            max_distractors: 3,
            occluder_prob: 0.02,
            noise_amp: 6.0,
        }
    }
}

impl WorldConfig {
    /// A world where nothing moves: useful for exact-tracking fixtures.
    pub fn frozen() -> Self {
        Self {
            max_speed: 0.0,
            accel_std: 0.0,
            scale_std: 0.0,
            min_distractors: 0,
            max_distractors: 0,
            occluder_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("frame must be at least 16x16");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return bad("sequence length range must satisfy 2 <= min_len <= max_len");
        }
        let mags = [
            self.min_box,
            self.max_box,
            self.max_speed,
            self.accel_std,
            self.scale_std,
            self.occluder_prob,
            self.noise_amp,
        ];
        if mags.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("magnitudes must be finite and non-negative");
        }
        if self.max_speed >= 1.0 {
            return bad("max_speed must be < 1");
        }
        if self.occluder_prob > 1.0 {
            return bad("occluder_prob must be <= 1");
        }
        if self.min_box < MIN_GT_SIDE || self.max_box < self.min_box {
            return bad("box range must satisfy 4 <= min_box <= max_box");
        }
        if self.max_box * 1.5 >= self.width.min(self.height) as f64 {
            return bad("max_box too large for the frame");
        }
        if self.max_distractors < self.min_distractors {
            return bad("distractor range inverted");
        }
        Ok(())
    }

    /// Canonical `key=value` rendering; the config digest hashes exactly this text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("channels", self.channels.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_len", self.max_len.to_string()),
            ("shape", self.shape.name().to_string()),
            ("texture_seed", self.texture_seed.to_string()),
            ("min_box", format!("{}", self.min_box)),
            ("max_box", format!("{}", self.max_box)),
            ("max_speed", format!("{}", self.max_speed)),
            ("accel_std", format!("{}", self.accel_std)),
            ("scale_std", format!("{}", self.scale_std)),
            ("min_distractors", self.min_distractors.to_string()),
            ("max_distractors", self.max_distractors.to_string()),
            ("occluder_prob", format!("{}", self.occluder_prob)),
            ("noise_amp", format!("{}", self.noise_amp)),
        ]
    }

    /// Sets one field from its textual form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: core::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "min_len" => self.min_len = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "shape" => self.shape = TargetShape::parse(value.trim())?,
            "texture_seed" => self.texture_seed = num(key, value)?,
            "min_box" => self.min_box = num(key, value)?,
            "max_box" => self.max_box = num(key, value)?,
            "max_speed" => self.max_speed = num(key, value)?,
            "accel_std" => self.accel_std = num(key, value)?,
            "scale_std" => self.scale_std = num(key, value)?,
            "min_distractors" => self.min_distractors = num(key, value)?,
            "max_distractors" => self.max_distractors = num(key, value)?,
            "occluder_prob" => self.occluder_prob = num(key, value)?,
            "noise_amp" => self.noise_amp = num(key, value)?,
            other => return Err(Error::Config(format!("unknown world key `{other}`"))),
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

const TEXTURE_CELLS: usize = 4;

/// Blocky object texture, `TEXTURE_CELLS^2` cells with one value per channel.
#[derive(Debug, Clone)]
struct Texture {
    cells: Vec<u8>,
    channels: usize,
}

impl Texture {
    fn random(rng: &mut PortableRng, channels: usize) -> Self {
        let n = TEXTURE_CELLS * TEXTURE_CELLS * channels;
        let cells = (0..n).map(|_| (rng.uniform() * 256.0) as u8).collect();
        Self { cells, channels }
    }

    #[inline]
    fn at(&self, u: f64, v: f64, c: usize) -> u8 {
        let cu = ((u * TEXTURE_CELLS as f64) as usize).min(TEXTURE_CELLS - 1);
        let cv = ((v * TEXTURE_CELLS as f64) as usize).min(TEXTURE_CELLS - 1);
        self.cells[(cv * TEXTURE_CELLS + cu) * self.channels + c]
    }
}

/// A moving object: position, size and velocity in pixels.
#[derive(Debug, Clone)]
struct Mover {
    b: BBox,
    vx: f64,
    vy: f64,
    ellipse: bool,
    texture: Texture,
}

impl Mover {
    fn spawn(rng: &mut PortableRng, cfg: &WorldConfig, ellipse: bool, texture: Texture) -> Self {
        let w = rng.range(cfg.min_box, cfg.max_box);
        let h = rng.range(cfg.min_box, cfg.max_box);
        let x = rng.range(0.0, cfg.width as f64 - w);
        let y = rng.range(0.0, cfg.height as f64 - h);
        let vx = rng.range(-0.5, 0.5) * cfg.max_speed * w;
        let vy = rng.range(-0.5, 0.5) * cfg.max_speed * h;
        Self {
            b: BBox::new(x, y, w, h),
            vx,
            vy,
            ellipse,
            texture,
        }
    }

    fn advance(&mut self, rng: &mut PortableRng, cfg: &WorldConfig) {
        let ax = rng.normal();
        let ay = rng.normal();
        let ls = rng.normal();
        self.vx += cfg.accel_std * self.b.w * ax;
        self.vy += cfg.accel_std * self.b.h * ay;
        let cap_x = cfg.max_speed * self.b.w;
        let cap_y = cfg.max_speed * self.b.h;
        self.vx = self.vx.clamp(-cap_x, cap_x);
        self.vy = self.vy.clamp(-cap_y, cap_y);

        // Scale about the center, clamped to a band around the initial size range.
        if cfg.scale_std > 0.0 {
            let s = libm::exp(cfg.scale_std * ls);
            let lo = (cfg.min_box * 0.6).max(MIN_GT_SIDE);
            let hi = cfg.max_box * 1.5;
            let (cx, cy) = self.b.center();
            let w = (self.b.w * s).clamp(lo, hi);
            let h = (self.b.h * s).clamp(lo, hi);
            self.b = BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h);
        }

        self.b.x += self.vx;
        self.b.y += self.vy;
        reflect(&mut self.b.x, &mut self.vx, self.b.w, cfg.width as f64);
        reflect(&mut self.b.y, &mut self.vy, self.b.h, cfg.height as f64);
    }

    fn draw(&self, frame: &mut Frame) {
        draw_textured(frame, &self.b, self.ellipse, |u, v, c| {
            self.texture.at(u, v, c)
        });
    }
}

/// Keeps `[pos, pos + size]` inside `[0, limit]` by mirroring at the walls.
fn reflect(pos: &mut f64, vel: &mut f64, size: f64, limit: f64) {
    let hi = limit - size;
    if *pos < 0.0 {
        *pos = -*pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(0.0, hi.max(0.0));
}

/// Paints every pixel whose center lies inside `b` (and inside the ellipse when asked).
fn draw_textured(frame: &mut Frame, b: &BBox, ellipse: bool, tex: impl Fn(f64, f64, usize) -> u8) {
    let x0 = libm::floor(b.x).max(0.0) as usize;
    let y0 = libm::floor(b.y).max(0.0) as usize;
    let x1 = (libm::ceil(b.x + b.w).max(0.0) as usize).min(frame.width);
    let y1 = (libm::ceil(b.y + b.h).max(0.0) as usize).min(frame.height);
    for py in y0..y1 {
        let cy = py as f64 + 0.5;
        let v = (cy - b.y) / b.h;
        if !(0.0..1.0).contains(&v) {
            continue;
        }
        for px in x0..x1 {
            let cx = px as f64 + 0.5;
            let u = (cx - b.x) / b.w;
            if !(0.0..1.0).contains(&u) {
                continue;
            }
            if ellipse {
                let (du, dv) = (u - 0.5, v - 0.5);
                if du * du + dv * dv > 0.25 {
                    continue;
                }
            }
            for c in 0..frame.channels {
                frame.set(px, py, c, tex(u, v, c));
            }
        }
    }
}

/// Smooth background: a coarse random lattice, bilinearly interpolated.
fn background(rng: &mut PortableRng, cfg: &WorldConfig) -> Frame {
    const CELL: usize = 20;
    let gw = cfg.width / CELL + 2;
    let gh = cfg.height / CELL + 2;
    let lattice: Vec<f64> = (0..gw * gh * cfg.channels)
        .map(|_| rng.range(70.0, 180.0))
        .collect();
    let mut f = Frame::new(cfg.width, cfg.height, cfg.channels);
    for y in 0..cfg.height {
        let gy = y as f64 / CELL as f64;
        let iy = gy as usize;
        let fy = gy - iy as f64;
        for x in 0..cfg.width {
            let gx = x as f64 / CELL as f64;
            let ix = gx as usize;
            let fx = gx - ix as f64;
            for c in 0..cfg.channels {
                let at = |i: usize, j: usize| lattice[(j * gw + i) * cfg.channels + c];
                let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
                let bot = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                f.set(x, y, c, v as u8);
            }
        }
    }
    f
}

/// Builds one sequence. Identical `(seed, cfg)` give bit-identical output.
pub fn generate_sequence(seed: u64, cfg: &WorldConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut rng = PortableRng::derive(seed, 1);
    let mut tex_rng = PortableRng::derive(seed ^ cfg.texture_seed.rotate_left(17), 2);

    let len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
    let ellipse = match cfg.shape {
        TargetShape::Rectangle => false,
        TargetShape::Ellipse => true,
        TargetShape::Mixed => rng.bernoulli(0.5),
    };
    let bg = background(&mut tex_rng, cfg);
    let mut target = Mover::spawn(
        &mut rng,
        cfg,
        ellipse,
        Texture::random(&mut tex_rng, cfg.channels),
    );
    let n_distractors =
        cfg.min_distractors + rng.below(cfg.max_distractors - cfg.min_distractors + 1);
    let mut distractors: Vec<Mover> = (0..n_distractors)
        .map(|_| {
            let e = rng.bernoulli(0.5);
            let t = Texture::random(&mut tex_rng, cfg.channels);
            Mover::spawn(&mut rng, cfg, e, t)
        })
        .collect();

    let mut frames = Vec::with_capacity(len);
    let mut groundtruth = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            target.advance(&mut rng, cfg);
            for d in distractors.iter_mut() {
                d.advance(&mut rng, cfg);
            }
        }
        let mut frame = bg.clone();
        for d in &distractors {
            d.draw(&mut frame);
        }
        target.draw(&mut frame);
        if t > 0 && rng.bernoulli(cfg.occluder_prob) {
            let w = rng.range(0.3, 0.8) * target.b.w;
            let h = rng.range(0.3, 0.8) * target.b.h;
            let x = target.b.x + rng.range(0.0, target.b.w - w);
            let y = target.b.y + rng.range(0.0, target.b.h - h);
            let shade = rng.range(40.0, 220.0) as u8;
            draw_textured(&mut frame, &BBox::new(x, y, w, h), false, |_, _, _| shade);
        }
        if cfg.noise_amp > 0.0 {
            for p in frame.pixels.iter_mut() {
                let n = rng.range(-cfg.noise_amp, cfg.noise_amp);
                *p = (*p as f64 + n).round_ties_even_clamped();
            }
        }
        frames.push(frame);
        groundtruth.push(target.b);
    }

    Ok(SyntheticSequence {
        id: format!("seq_{seed:08}"),
        frames,
        groundtruth,
        seed,
        config_digest: cfg.digest(),
    })
}

trait ClampByte {
    fn round_ties_even_clamped(self) -> u8;
}

impl ClampByte for f64 {
    fn round_ties_even_clamped(self) -> u8 {
        libm::rint(self).clamp(0.0, 255.0) as u8
    }
}

/// Deterministic digest of everything a sequence carries.
pub fn sequence_digest(seq: &SyntheticSequence) -> String {
    let mut h = Sha256::new();
    h.update(seq.id.as_bytes());
    for f in &seq.frames {
        h.update(&f.pixels);
    }
    for b in &seq.groundtruth {
        for v in b.to_array() {
            h.update(v.to_le_bytes());
        }
    }
    let mut s = String::with_capacity(64);
    for b in h.finalize().iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}
