//! Box arithmetic shared by the environment, the experts and the metrics.
//!
//! Boxes are `[x, y, w, h]` in pixels with `(x, y)` the top-left corner.
//! Actions are relative motions: translations in units of the reference
//! box size and relative scale changes.

use crate::error::{Error, Result};

/// Smallest width/height a box is allowed to shrink to mid-episode.
pub const EPS_SIZE: f64 = 1e-3;

/// Axis-aligned box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_proper(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.is_proper() && self.w.is_finite() && self.h.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateBox {
                w: self.w,
                h: self.h,
            })
        }
    }
}

/// Relative box motion `[dx, dy, dw, dh]`, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionDelta(pub [f64; 4]);

impl ActionDelta {
    pub const ZERO: ActionDelta = ActionDelta([0.0; 4]);

    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self([dx, dy, dw, dh])
    }

    pub fn dx(&self) -> f64 {
        self.0[0]
    }
    pub fn dy(&self) -> f64 {
        self.0[1]
    }
    pub fn dw(&self) -> f64 {
        self.0[2]
    }
    pub fn dh(&self) -> f64 {
        self.0[3]
    }

    /// Clips every component into `[-1, 1]`; reports whether anything moved.
    pub fn clipped(self) -> (ActionDelta, bool) {
        let mut out = self.0;
        let mut hit = false;
        for v in out.iter_mut() {
            let c = v.clamp(-1.0, 1.0);
            if c != *v {
                hit = true;
            }
            *v = c;
        }
        (ActionDelta(out), hit)
    }
}

/// Result of moving a box by an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moved {
    /// The raw result, possibly with non-positive size.
    pub bbox: BBox,
    /// True when `w <= 0` or `h <= 0`.
    pub degenerate: bool,
}

impl Moved {
    /// The box with its size clamped to [`EPS_SIZE`].
    pub fn clamped(self) -> BBox {
        let mut b = self.bbox;
        b.w = b.w.max(EPS_SIZE);
        b.h = b.h.max(EPS_SIZE);
        b
    }
}

/// The inverse delta together with its clipping flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delta {
    pub action: ActionDelta,
    pub clipped: bool,
}

/// Intersection over union of two proper boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return Ok(0.0);
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Moves `prev` by `a`: translations scale with the previous size, sizes scale by `1 + d`.
/// No clamping to frame bounds is applied.
pub fn apply_action(a: &ActionDelta, prev: &BBox) -> Result<Moved> {
    prev.check()?;
    let bbox = BBox {
        x: prev.x + a.dx() * prev.w,
        y: prev.y + a.dy() * prev.h,
        w: prev.w * (1.0 + a.dw()),
        h: prev.h * (1.0 + a.dh()),
    };
    Ok(Moved {
        bbox,
        degenerate: !(bbox.w > 0.0 && bbox.h > 0.0),
    })
}

/// The action that moves `prev` onto `cur`, clipped to the action space.
pub fn box_delta(cur: &BBox, prev: &BBox) -> Result<Delta> {
    prev.check()?;
    let raw = ActionDelta([
        (cur.x - prev.x) / prev.w,
        (cur.y - prev.y) / prev.h,
        (cur.w - prev.w) / prev.w,
        (cur.h - prev.h) / prev.h,
    ]);
    let (action, clipped) = raw.clipped();
    Ok(Delta { action, clipped })
}

/// Grid index of the 0.05 floor, with a small guard so exact grid points
/// such as 0.75 are not misfloored by binary rounding.
fn floor_twentieths(z: f64) -> i64 {
    libm::floor(z * 20.0 + 1e-9) as i64
}

/// Step reward from an IoU value: `2 * floor_0.05(iou) - 1` when `iou >= 0.5`, else `-1`.
pub fn quantized_reward(iou_value: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&iou_value) {
        return Err(Error::Domain {
            what: "quantized_reward",
            value: iou_value,
        });
    }
    if iou_value < 0.5 {
        return Ok(-1.0);
    }
    // 2 * k/20 - 1 == (k - 10)/10; the latter lands on the nearest double of each decimal.
    let k = floor_twentieths(iou_value).clamp(10, 20);
    Ok((k - 10) as f64 / 10.0)
}

/// Same center, width and height scaled by `k`.
pub fn dilate_box(b: &BBox, k: f64) -> Result<BBox> {
    b.check()?;
    if !(k > 0.0) {
        return Err(Error::Domain {
            what: "dilate_box factor",
            value: k,
        });
    }
    let (cx, cy) = b.center();
    let w = b.w * k;
    let h = b.h * k;
    Ok(BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h))
}
