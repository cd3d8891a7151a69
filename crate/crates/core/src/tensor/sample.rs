//! Differentiable bilinear sampling on a precomputed source grid. Both the
//! resize op and interior feature warping reduce to a gather through one of
//! these grids; gradients scatter back through the same four corner weights.

use super::{ClosureBackward, Result, Tensor, TensorError};

/// Per-output-cell source coordinates, already clamped into the input
/// rectangle. Coordinates are in input-pixel units.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
}

impl SampleGrid {
    /// Bilinear resize grid with the align-corners-false convention:
    /// src = (dst + 0.5) * in/out - 0.5, clamped to the edges.
    pub fn resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<SampleGrid> {
        if out_h == 0 || out_w == 0 || in_h == 0 || in_w == 0 {
            return Err(TensorError::Invalid(
                "resize requires non-zero source and target sizes".into(),
            ));
        }
        let scale_y = in_h as f64 / out_h as f64;
        let scale_x = in_w as f64 / out_w as f64;
        let mut sx = vec![0.0; out_h * out_w];
        let mut sy = vec![0.0; out_h * out_w];
        for oy in 0..out_h {
            let y = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (in_h - 1) as f64);
            for ox in 0..out_w {
                let x = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (in_w - 1) as f64);
                sx[oy * out_w + ox] = x;
                sy[oy * out_w + ox] = y;
            }
        }
        Ok(SampleGrid {
            in_h,
            in_w,
            out_h,
            out_w,
            sx,
            sy,
        })
    }

    /// Destination-anchored backward warp: source = p - displacement(p),
    /// clamped to the edges. Displacements are in grid-cell units.
    pub fn warp(h: usize, w: usize, dx: &[f64], dy: &[f64]) -> Result<SampleGrid> {
        if dx.len() != h * w || dy.len() != h * w {
            return Err(TensorError::ShapeMismatch(format!(
                "displacement field length {} does not match {h}x{w}",
                dx.len()
            )));
        }
        let mut sx = vec![0.0; h * w];
        let mut sy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                sx[i] = (x as f64 - dx[i]).clamp(0.0, (w - 1) as f64);
                sy[i] = (y as f64 - dy[i]).clamp(0.0, (h - 1) as f64);
            }
        }
        Ok(SampleGrid {
            in_h: h,
            in_w: w,
            out_h: h,
            out_w: w,
            sx,
            sy,
        })
    }

    #[inline]
    fn corners(&self, i: usize) -> (usize, usize, usize, usize, f64, f64) {
        let x = self.sx[i];
        let y = self.sy[i];
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.in_w - 1);
        let y1 = (y0 + 1).min(self.in_h - 1);
        (x0, x1, y0, y1, x - x0 as f64, y - y0 as f64)
    }
}

/// Gather `input` (N x C x in_h x in_w) through `grid`, channelwise.
pub fn bilinear_gather(input: &Tensor, grid: &SampleGrid) -> Result<Tensor> {
    let (n, c, h, w) = input.expect_4d("gather input")?;
    if h != grid.in_h || w != grid.in_w {
        return Err(TensorError::ShapeMismatch(format!(
            "grid expects {}x{} input, got {h}x{w}",
            grid.in_h, grid.in_w
        )));
    }
    let (oh, ow) = (grid.out_h, grid.out_w);
    let out_plane = oh * ow;
    let in_plane = h * w;
    let mut values = vec![0.0; n * c * out_plane];
    for i in 0..out_plane {
        let (x0, x1, y0, y1, fx, fy) = grid.corners(i);
        for nc in 0..n * c {
            let src = &input.values()[nc * in_plane..(nc + 1) * in_plane];
            // lerp form: exact at integer coordinates and on constant data
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            let top = v00 + fx * (v01 - v00);
            let bot = v10 + fx * (v11 - v10);
            values[nc * out_plane + i] = top + fy * (bot - top);
        }
    }
    let grid_b = grid.clone();
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        values,
        vec![input.clone()],
        ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
            let mut dx = vec![0.0; parents[0].numel()];
            let w = grid_b.in_w;
            for i in 0..out_plane {
                let (x0, x1, y0, y1, fx, fy) = grid_b.corners(i);
                let w00 = (1.0 - fx) * (1.0 - fy);
                let w01 = fx * (1.0 - fy);
                let w10 = (1.0 - fx) * fy;
                let w11 = fx * fy;
                for nc in 0..n * c {
                    let gv = g[nc * out_plane + i];
                    let dst = &mut dx[nc * in_plane..(nc + 1) * in_plane];
                    dst[y0 * w + x0] += gv * w00;
                    dst[y0 * w + x1] += gv * w01;
                    dst[y1 * w + x0] += gv * w10;
                    dst[y1 * w + x1] += gv * w11;
                }
            }
            vec![Some(dx)]
        }),
    ))
}

impl Tensor {
    /// Bilinear resize (align-corners-false), differentiable.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (_, _, h, w) = self.expect_4d("resize input")?;
        let grid = SampleGrid::resize(h, w, out_h, out_w)?;
        bilinear_gather(self, &grid)
    }
}
