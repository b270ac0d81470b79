//! Synthetic occlusion masks: polyline strokes rasterized as capsule
//! unions, and axis-aligned boxes. Convention everywhere: 1 = known pixel,
//! 0 = missing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    /// Row-major, one byte per pixel, values 0 or 1.
    pub data: Vec<u8>,
}

impl Mask {
    pub fn full_known(h: usize, w: usize) -> Mask {
        Mask {
            h,
            w,
            data: vec![1; h * w],
        }
    }

    pub fn from_bytes(h: usize, w: usize, data: Vec<u8>) -> Result<Mask> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "mask: {h}x{w} needs {} bytes, got {}",
                h * w,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Config("mask bytes must be 0 or 1".into()));
        }
        Ok(Mask { h, w, data })
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = self.data.iter().filter(|&&v| v == 0).count();
        missing as f64 / (self.h * self.w) as f64
    }

    /// [1, 1, h, w] tensor, f64 0/1.
    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        Tensor::constant(&[1, 1, self.h, self.w], data).expect("mask shape is valid")
    }

    /// Stack per-item masks into [B, 1, h, w].
    pub fn batch_tensor(masks: &[Mask]) -> Result<Tensor> {
        let (h, w) = (masks[0].h, masks[0].w);
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if (m.h, m.w) != (h, w) {
                return Err(Error::ShapeMismatch("mask batch sizes differ".into()));
            }
            data.extend(m.data.iter().map(|&v| v as f64));
        }
        Tensor::constant(&[masks.len(), 1, h, w], data)
    }
}

/// Polyline-stroke mask parameters. Fractions are relative to min(h, w).
#[derive(Debug, Clone, Copy)]
pub struct WideMaskParams {
    pub min_strokes: usize,
    pub max_strokes: usize,
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub min_step_frac: f64,
    pub max_step_frac: f64,
    /// Per-vertex turn limit, radians either way.
    pub max_turn: f64,
    pub min_width_frac: f64,
    pub max_width_frac: f64,
}

impl WideMaskParams {
    pub fn wide() -> WideMaskParams {
        WideMaskParams {
            min_strokes: 1,
            max_strokes: 3,
            min_vertices: 4,
            max_vertices: 12,
            min_step_frac: 0.10,
            max_step_frac: 0.25,
            max_turn: 60f64.to_radians(),
            min_width_frac: 0.05,
            max_width_frac: 0.15,
        }
    }

    /// Same stroke geometry, thin lines.
    pub fn narrow() -> WideMaskParams {
        WideMaskParams {
            min_width_frac: 0.01,
            max_width_frac: 0.03,
            ..WideMaskParams::wide()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ord = self.min_strokes >= 1
            && self.min_strokes <= self.max_strokes
            && self.min_vertices >= 2
            && self.min_vertices <= self.max_vertices
            && self.min_step_frac > 0.0
            && self.min_step_frac <= self.max_step_frac
            && self.min_width_frac > 0.0
            && self.min_width_frac <= self.max_width_frac
            && self.max_turn >= 0.0;
        if ord {
            Ok(())
        } else {
            Err(Error::Config(format!("bad stroke mask params: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoxMaskParams {
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_size_frac: f64,
    pub max_size_frac: f64,
}

impl Default for BoxMaskParams {
    fn default() -> Self {
        BoxMaskParams {
            min_boxes: 1,
            max_boxes: 3,
            min_size_frac: 0.15,
            max_size_frac: 0.45,
        }
    }
}

impl BoxMaskParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_boxes >= 1
            && self.min_boxes <= self.max_boxes
            && self.min_size_frac > 0.0
            && self.min_size_frac <= self.max_size_frac
            && self.max_size_frac <= 1.0
        {
            Ok(())
        } else {
            Err(Error::Config(format!("bad box mask params: {self:?}")))
        }
    }
}

/// Squared distance from point p to segment a-b.
pub fn dist2_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx) * (px - cx) + (py - cy) * (py - cy)
}

/// Carve a capsule (segment a-b dilated by radius r) out of the mask by
/// the exact per-pixel distance test. Pixel centers sit at +0.5.
pub(crate) fn carve_capsule(mask: &mut Mask, a: (f64, f64), b: (f64, f64), r: f64) {
    let r2 = r * r;
    // bounding box to avoid scanning the full frame per segment
    let x0 = ((a.0.min(b.0) - r).floor().max(0.0)) as usize;
    let x1 = ((a.0.max(b.0) + r).ceil().min(mask.w as f64 - 1.0)).max(0.0) as usize;
    let y0 = ((a.1.min(b.1) - r).floor().max(0.0)) as usize;
    let y1 = ((a.1.max(b.1) + r).ceil().min(mask.h as f64 - 1.0)).max(0.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            if dist2_to_segment(p, a, b) <= r2 {
                mask.data[y * mask.w + x] = 0;
            }
        }
    }
}

/// A sampled polyline stroke: vertex chain plus capsule radius.
#[derive(Debug, Clone)]
pub struct Stroke {
    pub vertices: Vec<(f64, f64)>,
    pub radius: f64,
}

/// Draw the stroke geometry without rasterizing.
pub fn sample_strokes(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    params: &WideMaskParams,
) -> Result<Vec<Stroke>> {
    params.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("mask size {h}x{w}")));
    }
    let side = h.min(w) as f64;
    let n_strokes = rng.random_range(params.min_strokes..=params.max_strokes);
    let mut strokes = Vec::with_capacity(n_strokes);
    for _ in 0..n_strokes {
        let n_vertices = rng.random_range(params.min_vertices..=params.max_vertices);
        let radius = side * rng.random_range(params.min_width_frac..=params.max_width_frac) / 2.0;
        let mut vertices = vec![(
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        )];
        let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
        for _ in 0..n_vertices - 1 {
            let step = side * rng.random_range(params.min_step_frac..=params.max_step_frac);
            angle += rng.random_range(-params.max_turn..=params.max_turn);
            let prev = *vertices.last().unwrap();
            vertices.push((prev.0 + step * angle.cos(), prev.1 + step * angle.sin()));
        }
        strokes.push(Stroke { vertices, radius });
    }
    Ok(strokes)
}

pub fn rasterize_strokes(strokes: &[Stroke], h: usize, w: usize) -> Mask {
    let mut mask = Mask::full_known(h, w);
    for s in strokes {
        for pair in s.vertices.windows(2) {
            carve_capsule(&mut mask, pair[0], pair[1], s.radius);
        }
    }
    mask
}

/// Random polyline strokes with capsule thickness.
pub fn sample_stroke_mask(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    params: &WideMaskParams,
) -> Result<Mask> {
    Ok(rasterize_strokes(&sample_strokes(rng, h, w, params)?, h, w))
}

pub fn sample_wide_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Mask> {
    sample_stroke_mask(rng, h, w, &WideMaskParams::wide())
}

pub fn sample_narrow_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Mask> {
    sample_stroke_mask(rng, h, w, &WideMaskParams::narrow())
}

/// Random axis-aligned boxes.
pub fn sample_box_mask(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    params: &BoxMaskParams,
) -> Result<Mask> {
    params.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("mask size {h}x{w}")));
    }
    let mut mask = Mask::full_known(h, w);
    let n = rng.random_range(params.min_boxes..=params.max_boxes);
    for _ in 0..n {
        let bh = ((h as f64 * rng.random_range(params.min_size_frac..=params.max_size_frac))
            .round() as usize)
            .clamp(1, h);
        let bw = ((w as f64 * rng.random_range(params.min_size_frac..=params.max_size_frac))
            .round() as usize)
            .clamp(1, w);
        let top = rng.random_range(0..=h - bh);
        let left = rng.random_range(0..=w - bw);
        for y in top..top + bh {
            for x in left..left + bw {
                mask.data[y * mask.w + x] = 0;
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    /// The training mixture: a fair coin between wide strokes and boxes.
    Large,
    Narrow,
    WideOnly,
    BoxOnly,
}

impl std::str::FromStr for MaskPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<MaskPolicy> {
        match s {
            "large" => Ok(MaskPolicy::Large),
            "narrow" => Ok(MaskPolicy::Narrow),
            "wide-only" => Ok(MaskPolicy::WideOnly),
            "box-only" => Ok(MaskPolicy::BoxOnly),
            other => Err(Error::Config(format!("unknown mask policy '{other}'"))),
        }
    }
}

impl std::fmt::Display for MaskPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskPolicy::Large => "large",
            MaskPolicy::Narrow => "narrow",
            MaskPolicy::WideOnly => "wide-only",
            MaskPolicy::BoxOnly => "box-only",
        })
    }
}

/// Concrete generator family a sampled mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Wide,
    Narrow,
    Box,
}

pub fn sample_training_mask_labeled(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    policy: MaskPolicy,
) -> Result<(Mask, MaskKind)> {
    match policy {
        MaskPolicy::WideOnly => Ok((sample_wide_mask(rng, h, w)?, MaskKind::Wide)),
        MaskPolicy::Narrow => Ok((sample_narrow_mask(rng, h, w)?, MaskKind::Narrow)),
        MaskPolicy::BoxOnly => Ok((
            sample_box_mask(rng, h, w, &BoxMaskParams::default())?,
            MaskKind::Box,
        )),
        MaskPolicy::Large => {
            if rng.random_range(0..2) == 0 {
                Ok((sample_wide_mask(rng, h, w)?, MaskKind::Wide))
            } else {
                Ok((
                    sample_box_mask(rng, h, w, &BoxMaskParams::default())?,
                    MaskKind::Box,
                ))
            }
        }
    }
}

pub fn sample_training_mask(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    policy: MaskPolicy,
) -> Result<Mask> {
    Ok(sample_training_mask_labeled(rng, h, w, policy)?.0)
}

/// Test-time gate: a mask qualifies iff it hides something but no more
/// than half the frame.
pub fn test_mask_gate(mask: &Mask) -> bool {
    let f = mask.missing_fraction();
    f > 0.0 && f <= 0.5
}

/// Sample until the gate passes; error after `max_tries` rejections.
pub fn sample_test_mask(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    policy: MaskPolicy,
    max_tries: usize,
) -> Result<Mask> {
    for _ in 0..max_tries {
        let m = sample_training_mask(rng, h, w, policy)?;
        if test_mask_gate(&m) {
            return Ok(m);
        }
    }
    Err(Error::Config(format!(
        "no admissible test mask after {max_tries} tries"
    )))
}
