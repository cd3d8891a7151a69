//! Synthetic scene generator. Renders moving sprites over a flat background
//! and emits, for every predicted frame, the true per-pixel displacement of
//! the topmost sprite plus the exact residual, so codec reconstruction
//! reproduces stored frames bit-for-bit.
//!
//! Values are quantized to the 1/256 grid and displacements to f32, which
//! keeps both the reconstruction identity and the container round trip exact.

use rand::Rng;

use super::{DataError, Frame, FrameKind, GopSequence, LabelMap, Result};
use crate::rng::stream;
use crate::warp::{warp_image, ImageBuf, MotionMap, ResidualMap, WarpMode};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpriteShape {
    /// Axis-aligned rectangle of the given full width/height.
    Rect { w: f64, h: f64 },
    /// Ellipse with half-axes rx, ry.
    Ellipse { rx: f64, ry: f64 },
    /// Closed polygon, vertices relative to the sprite centre.
    Polygon { points: Vec<[f64; 2]> },
}

impl SpriteShape {
    fn extent(&self) -> (f64, f64) {
        match self {
            SpriteShape::Rect { w, h } => (w / 2.0, h / 2.0),
            SpriteShape::Ellipse { rx, ry } => (*rx, *ry),
            SpriteShape::Polygon { points } => {
                let ex = points.iter().map(|p| p[0].abs()).fold(0.0, f64::max);
                let ey = points.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
                (ex, ey)
            }
        }
    }

    /// Point-in-shape test; `ax` scales the ellipse half-axes (jitter).
    fn covers(&self, dx: f64, dy: f64, ax: (f64, f64)) -> bool {
        match self {
            SpriteShape::Rect { w, h } => dx.abs() <= w / 2.0 && dy.abs() <= h / 2.0,
            SpriteShape::Ellipse { rx, ry } => {
                let nx = dx / (rx * ax.0);
                let ny = dy / (ry * ax.1);
                nx * nx + ny * ny <= 1.0
            }
            SpriteShape::Polygon { points } => {
                // even-odd ray cast
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let a = points[i];
                    let b = points[(i + 1) % n];
                    if (a[1] > dy) != (b[1] > dy) {
                        let t = (dy - a[1]) / (b[1] - a[1]);
                        if dx < a[0] + t * (b[0] - a[0]) {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpriteSpec {
    pub class: u8,
    pub color: [f64; 3],
    pub shape: SpriteShape,
    /// Start centre; sampled inside the canvas when absent.
    #[serde(default)]
    pub start: Option<(f64, f64)>,
    /// Per-frame velocity (px/frame), reflected at the canvas edges;
    /// sampled when absent.
    #[serde(default)]
    pub velocity: Option<(f64, f64)>,
    /// Relative half-axis jitter per frame; makes an ellipse non-rigid.
    #[serde(default)]
    pub axis_jitter: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub background_class: u8,
    pub background_color: [f64; 3],
    #[serde(default = "default_gop_length")]
    pub gop_length: usize,
    #[serde(default)]
    pub noise_amplitude: f64,
    /// When set, motion maps are averaged over square macroblocks of this
    /// size (codec-style block-constant motion) instead of staying dense.
    #[serde(default)]
    pub block_motion: Option<usize>,
    pub seed: u64,
    /// Later sprites draw on top.
    pub sprites: Vec<SpriteSpec>,
}

fn default_gop_length() -> usize {
    12
}

/// The stock benchmark scene: background plus a rigid box, a rigid ball,
/// and a non-rigid jittering blob. All three sprites share one color, so
/// appearance alone cannot separate the classes; shape and temporal context
/// have to.
pub fn default_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        height: 96,
        width: 128,
        class_count: 4,
        background_class: 0,
        background_color: [0.140625, 0.16015625, 0.1796875],
        gop_length: 12,
        noise_amplitude: 0.02,
        block_motion: None,
        seed,
        sprites: vec![
            SpriteSpec {
                class: 1,
                color: [0.6171875, 0.3203125, 0.30078125],
                shape: SpriteShape::Rect { w: 27.0, h: 27.0 },
                start: None,
                velocity: None,
                axis_jitter: 0.0,
            },
            SpriteSpec {
                class: 2,
                color: [0.6171875, 0.3203125, 0.30078125],
                shape: SpriteShape::Ellipse { rx: 15.0, ry: 15.0 },
                start: None,
                velocity: None,
                axis_jitter: 0.0,
            },
            SpriteSpec {
                class: 3,
                color: [0.6171875, 0.3203125, 0.30078125],
                shape: SpriteShape::Ellipse { rx: 16.0, ry: 11.0 },
                start: None,
                velocity: None,
                axis_jitter: 0.09,
            },
        ],
    }
}

fn validate_spec(spec: &SceneSpec) -> Result<()> {
    if spec.class_count == 0 || spec.class_count > 250 {
        return Err(DataError::InvalidScene(format!(
            "class_count {} out of range",
            spec.class_count
        )));
    }
    if spec.background_class as usize >= spec.class_count {
        return Err(DataError::InvalidScene(format!(
            "background_class {} >= class_count {}",
            spec.background_class, spec.class_count
        )));
    }
    if spec.gop_length == 0 {
        return Err(DataError::InvalidScene("gop_length must be >= 1".into()));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(DataError::InvalidScene(format!(
            "canvas {}x{} too small",
            spec.height, spec.width
        )));
    }
    if !(0.0..=1.0).contains(&spec.noise_amplitude) {
        return Err(DataError::InvalidScene(format!(
            "noise_amplitude {} outside [0, 1]",
            spec.noise_amplitude
        )));
    }
    if spec.block_motion == Some(0) {
        return Err(DataError::InvalidScene(
            "block_motion must be at least 1".into(),
        ));
    }
    for (i, s) in spec.sprites.iter().enumerate() {
        if s.class as usize >= spec.class_count {
            return Err(DataError::InvalidScene(format!(
                "sprite {i} class {} >= class_count {}",
                s.class, spec.class_count
            )));
        }
        if s.axis_jitter < 0.0 || s.axis_jitter >= 1.0 {
            return Err(DataError::InvalidScene(format!(
                "sprite {i} axis_jitter {} outside [0, 1)",
                s.axis_jitter
            )));
        }
        if s.axis_jitter > 0.0 && !matches!(s.shape, SpriteShape::Ellipse { .. }) {
            return Err(DataError::InvalidScene(format!(
                "sprite {i}: axis_jitter requires an ellipse shape"
            )));
        }
        if let SpriteShape::Polygon { points } = &s.shape {
            if points.len() < 3 {
                return Err(DataError::InvalidScene(format!(
                    "sprite {i}: polygon needs at least 3 points"
                )));
            }
        }
        let (ex, ey) = s.shape.extent();
        let max_ex = s.axis_jitter.mul_add(ex, ex);
        let max_ey = s.axis_jitter.mul_add(ey, ey);
        if 2.0 * max_ex >= spec.width as f64 || 2.0 * max_ey >= spec.height as f64 {
            return Err(DataError::InvalidScene(format!(
                "sprite {i} does not fit the canvas"
            )));
        }
    }
    Ok(())
}

struct SpriteTrack {
    /// Centre per frame.
    centers: Vec<(f64, f64)>,
    /// Half-axis scale per frame (1.0 when rigid).
    axis_scale: Vec<(f64, f64)>,
}

/// 1/256-grid quantization; keeps values exactly representable in f32 and
/// differences exactly representable too.
#[inline]
fn quantize_unit(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 256.0).floor().min(255.0) / 256.0
}

/// Replace each value with the mean over its (possibly clipped) macroblock.
fn block_average(values: &mut [f64], h: usize, w: usize, bs: usize) {
    for by in (0..h).step_by(bs) {
        let bh = bs.min(h - by);
        for bx in (0..w).step_by(bs) {
            let bw = bs.min(w - bx);
            let mut sum = 0.0;
            for y in by..by + bh {
                for x in bx..bx + bw {
                    sum += values[y * w + x];
                }
            }
            let mean = sum / (bh * bw) as f64;
            for y in by..by + bh {
                for x in bx..bx + bw {
                    values[y * w + x] = mean;
                }
            }
        }
    }
}

/// Render every frame of `num_gops` GOPs with exact motion/residual side
/// data and a label for each frame.
pub fn generate_sequence(spec: &SceneSpec, num_gops: usize) -> Result<GopSequence> {
    validate_spec(spec)?;
    if num_gops == 0 {
        return Err(DataError::InvalidScene("num_gops must be >= 1".into()));
    }
    let num_frames = num_gops * spec.gop_length;
    let (h, w) = (spec.height, spec.width);

    // trajectories
    let mut scene_rng = stream(spec.seed, "scene");
    let mut jitter_rng = stream(spec.seed, "jitter");
    let mut tracks: Vec<SpriteTrack> = Vec::with_capacity(spec.sprites.len());
    for s in &spec.sprites {
        let (ex, ey) = s.shape.extent();
        let max_ex = s.axis_jitter.mul_add(ex, ex);
        let max_ey = s.axis_jitter.mul_add(ey, ey);
        let (lo_x, hi_x) = (max_ex, w as f64 - 1.0 - max_ex);
        let (lo_y, hi_y) = (max_ey, h as f64 - 1.0 - max_ey);
        let start = match s.start {
            Some(p) => p,
            None => (
                scene_rng.gen_range(lo_x..=hi_x),
                scene_rng.gen_range(lo_y..=hi_y),
            ),
        };
        let velocity = match s.velocity {
            Some(v) => v,
            None => {
                let speed = scene_rng.gen_range(0.8..2.2);
                let angle = scene_rng.gen_range(0.0..std::f64::consts::TAU);
                (speed * angle.cos(), speed * angle.sin())
            }
        };
        let mut centers = Vec::with_capacity(num_frames);
        let mut axis_scale = Vec::with_capacity(num_frames);
        let (mut cx, mut cy) = (start.0.clamp(lo_x, hi_x), start.1.clamp(lo_y, hi_y));
        let (mut vx, mut vy) = velocity;
        for t in 0..num_frames {
            if t > 0 {
                cx += vx;
                cy += vy;
                if cx < lo_x {
                    cx = lo_x + (lo_x - cx);
                    vx = -vx;
                } else if cx > hi_x {
                    cx = hi_x - (cx - hi_x);
                    vx = -vx;
                }
                if cy < lo_y {
                    cy = lo_y + (lo_y - cy);
                    vy = -vy;
                } else if cy > hi_y {
                    cy = hi_y - (cy - hi_y);
                    vy = -vy;
                }
            }
            centers.push((cx, cy));
            if s.axis_jitter > 0.0 {
                let ux: f64 = jitter_rng.gen_range(-1.0..1.0);
                let uy: f64 = jitter_rng.gen_range(-1.0..1.0);
                axis_scale.push((1.0 + s.axis_jitter * ux, 1.0 + s.axis_jitter * uy));
            } else {
                axis_scale.push((1.0, 1.0));
            }
        }
        tracks.push(SpriteTrack {
            centers,
            axis_scale,
        });
    }

    // topmost sprite index per pixel, for one frame
    let topmost = |t: usize, px: f64, py: f64| -> Option<usize> {
        for (si, s) in spec.sprites.iter().enumerate().rev() {
            let (cx, cy) = tracks[si].centers[t];
            if s.shape.covers(px - cx, py - cy, tracks[si].axis_scale[t]) {
                return Some(si);
            }
        }
        None
    };

    let mut noise_rng = stream(spec.seed, "noise");
    let mut frames: Vec<Frame> = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let mut image = ImageBuf::new(h, w, 3);
        let mut label = LabelMap::filled(h, w, spec.background_class);
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for y in 0..h {
            for x in 0..w {
                let hit = topmost(t, x as f64 + 0.5, y as f64 + 0.5);
                owner[y * w + x] = hit;
                let (color, class) = match hit {
                    Some(si) => (&spec.sprites[si].color, spec.sprites[si].class),
                    None => (&spec.background_color, spec.background_class),
                };
                label.ids[y * w + x] = class;
                for c in 0..3 {
                    let mut v = color[c];
                    if spec.noise_amplitude > 0.0 {
                        v += noise_rng.gen_range(-spec.noise_amplitude..=spec.noise_amplitude);
                    }
                    image.set(c, y, x, quantize_unit(v));
                }
            }
        }

        let kind = if t % spec.gop_length == 0 {
            FrameKind::Intra
        } else {
            FrameKind::Predicted
        };
        let (motion, residual) = if kind == FrameKind::Predicted {
            let mut dx = vec![0.0; h * w];
            let mut dy = vec![0.0; h * w];
            for (i, own) in owner.iter().enumerate() {
                if let Some(si) = own {
                    let (cx1, cy1) = tracks[*si].centers[t];
                    let (cx0, cy0) = tracks[*si].centers[t - 1];
                    dx[i] = cx1 - cx0;
                    dy[i] = cy1 - cy0;
                }
            }
            if let Some(bs) = spec.block_motion {
                block_average(&mut dx, h, w, bs);
                block_average(&mut dy, h, w, bs);
            }
            // store at codec (f32) precision
            for v in dx.iter_mut().chain(dy.iter_mut()) {
                *v = *v as f32 as f64;
            }
            let mv = MotionMap::new(h, w, dx, dy).map_err(|e| {
                DataError::Invalid(format!("generated motion invalid: {e}"))
            })?;
            let prev = &frames[t - 1].image;
            let warped = warp_image(prev, &mv, WarpMode::Nearest)
                .map_err(|e| DataError::Invalid(format!("warp failed: {e}")))?;
            let res_data: Vec<f64> = image
                .data
                .iter()
                .zip(&warped.data)
                .map(|(c, p)| c - p)
                .collect();
            let res = ResidualMap::from_data(h, w, res_data)
                .map_err(|e| DataError::Invalid(format!("residual invalid: {e}")))?;
            (Some(mv), Some(res))
        } else {
            (None, None)
        };

        frames.push(Frame {
            kind,
            image,
            motion,
            residual,
            label: Some(label),
        });
    }

    let seq = GopSequence {
        gop_length: spec.gop_length,
        class_count: spec.class_count,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::reconstruct_frame;

    fn flat_spec() -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 40,
            class_count: 3,
            background_class: 0,
            background_color: [0.25, 0.25, 0.25],
            gop_length: 6,
            noise_amplitude: 0.0,
            block_motion: None,
            seed: 11,
            sprites: vec![],
        }
    }

    #[test]
    fn static_scene_has_zero_motion_and_residual() {
        let mut spec = flat_spec();
        spec.sprites.push(SpriteSpec {
            class: 1,
            color: [0.8, 0.2, 0.2],
            shape: SpriteShape::Rect { w: 10.0, h: 8.0 },
            start: Some((20.0, 16.0)),
            velocity: Some((0.0, 0.0)),
            axis_jitter: 0.0,
        });
        let seq = generate_sequence(&spec, 1).unwrap();
        for frame in &seq.frames[1..] {
            let mv = frame.motion.as_ref().unwrap();
            assert!(mv.dx.iter().chain(&mv.dy).all(|&v| v == 0.0));
            let res = frame.residual.as_ref().unwrap();
            assert!(res.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn moving_square_motion_and_residual_geometry() {
        let mut spec = flat_spec();
        spec.height = 40;
        spec.width = 64;
        spec.sprites.push(SpriteSpec {
            class: 1,
            color: [0.7, 0.4, 0.1],
            shape: SpriteShape::Rect { w: 12.0, h: 12.0 },
            start: Some((20.0, 20.0)),
            velocity: Some((2.0, 0.0)),
            axis_jitter: 0.0,
        });
        let seq = generate_sequence(&spec, 1).unwrap();
        for t in 1..seq.frames.len() {
            let frame = &seq.frames[t];
            let prev = &seq.frames[t - 1];
            let mv = frame.motion.as_ref().unwrap();
            let label = frame.label.as_ref().unwrap();
            let prev_label = prev.label.as_ref().unwrap();
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let i = y * spec.width + x;
                    if label.ids[i] == 1 {
                        assert_eq!((mv.dx[i], mv.dy[i]), (2.0, 0.0), "t={t} x={x} y={y}");
                    } else {
                        assert_eq!((mv.dx[i], mv.dy[i]), (0.0, 0.0));
                    }
                }
            }
            // nonzero residual only where the label changed between frames
            // (trailing band behind the square, plus its leading edge)
            let res = frame.residual.as_ref().unwrap();
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let i = y * spec.width + x;
                    let nonzero = (0..3).any(|c| res.plane(c)[i] != 0.0);
                    if nonzero {
                        assert_ne!(
                            label.ids[i], prev_label.ids[i],
                            "residual outside changed region at t={t} ({x},{y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nonrigid_residual_concentrates_at_boundary() {
        let mut spec = flat_spec();
        spec.height = 48;
        spec.width = 48;
        spec.sprites.push(SpriteSpec {
            class: 2,
            color: [0.2, 0.6, 0.8],
            shape: SpriteShape::Ellipse { rx: 13.0, ry: 9.0 },
            start: Some((24.0, 24.0)),
            velocity: Some((1.0, 0.5)),
            axis_jitter: 0.08,
        });
        let seq = generate_sequence(&spec, 1).unwrap();
        for t in 1..seq.frames.len() {
            let frame = &seq.frames[t];
            let prev = &seq.frames[t - 1];
            let res = frame.residual.as_ref().unwrap();
            // boundary = pixels whose 4-neighbourhood crosses a label edge,
            // in either frame
            let mut boundary = vec![false; 48 * 48];
            for lbl in [frame.label.as_ref().unwrap(), prev.label.as_ref().unwrap()] {
                for y in 0..48usize {
                    for x in 0..48usize {
                        let v = lbl.ids[y * 48 + x];
                        let mut edge = false;
                        if x + 1 < 48 && lbl.ids[y * 48 + x + 1] != v {
                            edge = true;
                        }
                        if y + 1 < 48 && lbl.ids[(y + 1) * 48 + x] != v {
                            edge = true;
                        }
                        if edge {
                            boundary[y * 48 + x] = true;
                        }
                    }
                }
            }
            let near_boundary = |y: usize, x: usize| -> bool {
                for by in y.saturating_sub(3)..=(y + 3).min(47) {
                    for bx in x.saturating_sub(3)..=(x + 3).min(47) {
                        if boundary[by * 48 + bx] {
                            return true;
                        }
                    }
                }
                false
            };
            let mut total = 0.0;
            let mut near = 0.0;
            for y in 0..48usize {
                for x in 0..48usize {
                    let e: f64 = (0..3).map(|c| res.plane(c)[y * 48 + x].abs()).sum();
                    total += e;
                    if near_boundary(y, x) {
                        near += e;
                    }
                }
            }
            if total > 0.0 {
                assert!(
                    near / total > 0.8,
                    "t={t}: only {:.1}% of residual near boundary",
                    100.0 * near / total
                );
            }
        }
    }

    #[test]
    fn codec_closure_holds_on_generated_chains() {
        let spec = default_scene(3);
        let seq = generate_sequence(&spec, 1).unwrap();
        for t in 1..seq.frames.len() {
            let rec = reconstruct_frame(
                &seq.frames[t - 1].image,
                seq.frames[t].motion.as_ref().unwrap(),
                seq.frames[t].residual.as_ref().unwrap(),
            )
            .unwrap();
            assert_eq!(rec, seq.frames[t].image, "frame {t} not exactly rebuilt");
        }
    }

    #[test]
    fn block_constant_motion_mode() {
        let mut spec = default_scene(13);
        spec.block_motion = Some(16);
        let seq = generate_sequence(&spec, 1).unwrap();
        let mut saw_motion = false;
        for t in 1..seq.frames.len() {
            let mv = seq.frames[t].motion.as_ref().unwrap();
            // constant within every (clipped) 16x16 macroblock
            for by in (0..spec.height).step_by(16) {
                for bx in (0..spec.width).step_by(16) {
                    let i0 = by * spec.width + bx;
                    for y in by..(by + 16).min(spec.height) {
                        for x in bx..(bx + 16).min(spec.width) {
                            let i = y * spec.width + x;
                            assert_eq!(mv.dx[i], mv.dx[i0]);
                            assert_eq!(mv.dy[i], mv.dy[i0]);
                        }
                    }
                }
            }
            saw_motion |= mv.dx.iter().any(|&v| v != 0.0);
            // the codec identity still holds exactly
            let rec = reconstruct_frame(
                &seq.frames[t - 1].image,
                mv,
                seq.frames[t].residual.as_ref().unwrap(),
            )
            .unwrap();
            assert_eq!(rec, seq.frames[t].image);
        }
        assert!(saw_motion, "expected some nonzero block motion");
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = default_scene(9);
        let a = generate_sequence(&spec, 1).unwrap();
        let b = generate_sequence(&spec, 1).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.image.data, fb.image.data);
            assert_eq!(fa.label.as_ref().unwrap().ids, fb.label.as_ref().unwrap().ids);
            assert_eq!(fa.motion.is_some(), fb.motion.is_some());
            if let (Some(ma), Some(mb)) = (&fa.motion, &fb.motion) {
                assert_eq!(ma, mb);
            }
        }
    }

    #[test]
    fn sprite_class_out_of_range_rejected() {
        let mut spec = flat_spec();
        spec.sprites.push(SpriteSpec {
            class: 7,
            color: [0.5; 3],
            shape: SpriteShape::Rect { w: 4.0, h: 4.0 },
            start: None,
            velocity: None,
            axis_jitter: 0.0,
        });
        assert!(matches!(
            generate_sequence(&spec, 1),
            Err(DataError::InvalidScene(_))
        ));
    }

    #[test]
    fn label_changes_stay_near_sprite_boundaries() {
        let spec = default_scene(21);
        let seq = generate_sequence(&spec, 1).unwrap();
        // max sprite speed in the default scene is < 2.2 px/frame
        let radius = 4usize; // speed + 1, rounded up
        let (h, w) = (spec.height, spec.width);
        for t in 1..seq.frames.len() {
            let cur = seq.frames[t].label.as_ref().unwrap();
            let prev = seq.frames[t - 1].label.as_ref().unwrap();
            for y in 0..h {
                for x in 0..w {
                    if cur.ids[y * w + x] == prev.ids[y * w + x] {
                        continue;
                    }
                    // a boundary (label edge in the current frame) must lie nearby
                    let mut found = false;
                    'scan: for by in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                        for bx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                            let v = cur.ids[by * w + bx];
                            if bx + 1 < w && cur.ids[by * w + bx + 1] != v {
                                found = true;
                                break 'scan;
                            }
                            if by + 1 < h && cur.ids[(by + 1) * w + bx] != v {
                                found = true;
                                break 'scan;
                            }
                        }
                    }
                    assert!(found, "isolated label change at t={t} ({x},{y})");
                }
            }
        }
    }
}
