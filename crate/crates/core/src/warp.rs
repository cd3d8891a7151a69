//! Backward warping of images and feature maps along per-pixel motion, and
//! the codec-style reconstruction step (warp, then add the residual).
//!
//! Convention: motion maps are destination-anchored, `out[p] = in[p - mv[p]]`,
//! with source coordinates clamped to the image rectangle.

use crate::tensor::{bilinear_gather, SampleGrid, Tensor};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, WarpError>;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("stride {stride} does not divide motion map dims {h}x{w} into {fh}x{fw}")]
    BadStride {
        stride: usize,
        h: usize,
        w: usize,
        fh: usize,
        fw: usize,
    },
    #[error("non-finite displacement at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Multi-plane raster, stored as channel planes of row-major f64.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize) -> ImageBuf {
        ImageBuf {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<ImageBuf> {
        if data.len() != height * width * channels {
            return Err(WarpError::DimMismatch(format!(
                "image payload {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(ImageBuf {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Per-pixel 2-d displacement field (full-resolution pixel units).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMap {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl MotionMap {
    pub fn zeros(height: usize, width: usize) -> MotionMap {
        MotionMap {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<MotionMap> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(WarpError::DimMismatch(format!(
                "motion payload {}/{} != {height}x{width}",
                dx.len(),
                dy.len()
            )));
        }
        for (i, (a, b)) in dx.iter().zip(&dy).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(WarpError::NonFinite {
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(MotionMap {
            height,
            width,
            dx,
            dy,
        })
    }
}

/// Signed per-pixel color correction, three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMap {
    pub height: usize,
    pub width: usize,
    /// 3 channel planes, row-major.
    pub data: Vec<f64>,
}

impl ResidualMap {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> ResidualMap {
        ResidualMap {
            height,
            width,
            data: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<ResidualMap> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(WarpError::DimMismatch(format!(
                "residual payload {} != 3x{height}x{width}",
                data.len()
            )));
        }
        Ok(ResidualMap {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    /// Mean absolute value over all planes.
    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpMode {
    Nearest,
    Bilinear,
}

/// Backward-warp an image: `out[p] = prev[p - mv[p]]`, sources clamped to
/// the rectangle, fractional sources interpolated in bilinear mode.
pub fn warp_image(prev: &ImageBuf, mv: &MotionMap, mode: WarpMode) -> Result<ImageBuf> {
    if prev.height != mv.height || prev.width != mv.width {
        return Err(WarpError::DimMismatch(format!(
            "image {}x{} vs motion {}x{}",
            prev.height, prev.width, mv.height, mv.width
        )));
    }
    let (h, w) = (prev.height, prev.width);
    let mut out = ImageBuf::new(h, w, prev.channels);
    match mode {
        WarpMode::Nearest => {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let sx = (x as f64 - mv.dx[i]).round().clamp(0.0, (w - 1) as f64) as usize;
                    let sy = (y as f64 - mv.dy[i]).round().clamp(0.0, (h - 1) as f64) as usize;
                    for c in 0..prev.channels {
                        out.set(c, y, x, prev.get(c, sy, sx));
                    }
                }
            }
        }
        WarpMode::Bilinear => {
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let sx = (x as f64 - mv.dx[i]).clamp(0.0, (w - 1) as f64);
                    let sy = (y as f64 - mv.dy[i]).clamp(0.0, (h - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let y0 = sy.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let fx = sx - x0 as f64;
                    let fy = sy - y0 as f64;
                    for c in 0..prev.channels {
                        let v00 = prev.get(c, y0, x0);
                        let v01 = prev.get(c, y0, x1);
                        let v10 = prev.get(c, y1, x0);
                        let v11 = prev.get(c, y1, x1);
                        let top = v00 + fx * (v01 - v00);
                        let bot = v10 + fx * (v11 - v10);
                        out.set(c, y, x, top + fy * (bot - top));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Codec reconstruction: nearest warp plus pixel-wise residual addition.
pub fn reconstruct_frame(prev: &ImageBuf, mv: &MotionMap, res: &ResidualMap) -> Result<ImageBuf> {
    if prev.channels != ResidualMap::CHANNELS {
        return Err(WarpError::DimMismatch(format!(
            "reconstruction expects 3-channel images, got {}",
            prev.channels
        )));
    }
    if res.height != prev.height || res.width != prev.width {
        return Err(WarpError::DimMismatch(format!(
            "residual {}x{} vs image {}x{}",
            res.height, res.width, prev.height, prev.width
        )));
    }
    let mut out = warp_image(prev, mv, WarpMode::Nearest)?;
    for (o, r) in out.data.iter_mut().zip(&res.data) {
        *o += r;
    }
    Ok(out)
}

/// Average-pool a full-resolution motion map to feature-grid displacements:
/// block mean over stride x stride, then divide by stride so the result is
/// in feature-cell units.
pub fn pool_motion(mv: &MotionMap, stride: usize, fh: usize, fw: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if stride == 0 || fh * stride != mv.height || fw * stride != mv.width {
        return Err(WarpError::BadStride {
            stride,
            h: mv.height,
            w: mv.width,
            fh,
            fw,
        });
    }
    let mut dx = vec![0.0; fh * fw];
    let mut dy = vec![0.0; fh * fw];
    let norm = 1.0 / (stride * stride * stride) as f64; // block mean and /stride
    for fy in 0..fh {
        for fx_i in 0..fw {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for by in 0..stride {
                let row = (fy * stride + by) * mv.width + fx_i * stride;
                for bx in 0..stride {
                    sx += mv.dx[row + bx];
                    sy += mv.dy[row + bx];
                }
            }
            dx[fy * fw + fx_i] = sx * norm;
            dy[fy * fw + fx_i] = sy * norm;
        }
    }
    Ok((dx, dy))
}

/// Warp interior features (1 x C x h x w) by a full-resolution motion map.
/// The motion is pooled to the feature stride and applied channelwise with
/// bilinear sampling; differentiable w.r.t. the features.
pub fn warp_features(prev_feat: &Tensor, mv: &MotionMap, stride: usize) -> Result<Tensor> {
    let dims = prev_feat.expect_4d("warp_features input")?;
    let (n, _c, h, w) = dims;
    if n != 1 {
        return Err(WarpError::DimMismatch(format!(
            "warp_features expects a single-item batch, got N={n}"
        )));
    }
    let (dx, dy) = pool_motion(mv, stride, h, w)?;
    let grid = SampleGrid::warp(h, w, &dx, &dy)?;
    Ok(bilinear_gather(prev_feat, &grid)?)
}
