//! 2-d convolution with exact forward/backward adjoints, via im2col and the
//! matmul kernels. Stride and zero padding follow the usual
//! `out = (in + 2*pad - k) / stride + 1` geometry.

use super::matmul::{matmul_abt_acc, matmul_acc, matmul_atb_acc};
use super::{ClosureBackward, Result, Tensor, TensorError};

#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    let p_total = oh * ow;
    col.fill(0.0);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut col[(ci * kh * kw + ky * kw + kx) * p_total..][..p_total];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = iy as usize * w;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = plane[row + ix as usize];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dst: &mut [f64],
) {
    let p_total = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &col[(ci * kh * kw + ky * kw + kx) * p_total..][..p_total];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = iy as usize * w;
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[row + ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// `input` N x C x H x W, `weight` O x C x K x K, `bias` O.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (n, c, h, w) = self.expect_4d("conv input")?;
        let (o, wc, kh, kw) = weight.expect_4d("conv weight")?;
        if wc != c {
            return Err(TensorError::ShapeMismatch(format!(
                "conv input has {c} channels but weights expect {wc} (weight {:?}, input {:?})",
                weight.shape(),
                self.shape()
            )));
        }
        if bias.shape() != [o] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv bias must be [{o}], got {:?}",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(TensorError::Invalid("conv stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::ShapeMismatch(format!(
                "kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let p_total = oh * ow;
        let ckk = c * kh * kw;

        let mut values = vec![0.0; n * o * p_total];
        let mut col = vec![0.0; ckk * p_total];
        for ni in 0..n {
            im2col(
                &self.values()[ni * c * h * w..(ni + 1) * c * h * w],
                c,
                h,
                w,
                kh,
                kw,
                stride,
                padding,
                oh,
                ow,
                &mut col,
            );
            let out = &mut values[ni * o * p_total..(ni + 1) * o * p_total];
            for oi in 0..o {
                out[oi * p_total..(oi + 1) * p_total].fill(bias.values()[oi]);
            }
            matmul_acc(out, weight.values(), &col, o, ckk, p_total);
        }

        let in_dims = (n, c, h, w);
        Ok(Tensor::from_op(
            vec![n, o, oh, ow],
            values,
            vec![self.clone(), weight.clone(), bias.clone()],
            ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
                let (n, c, h, w) = in_dims;
                let input = parents[0].values();
                let wvals = parents[1].values();
                let need_dx = parents[0].requires_grad();
                let need_dw = parents[1].requires_grad();
                let need_db = parents[2].requires_grad();
                let mut dx = need_dx.then(|| vec![0.0; input.len()]);
                let mut dw = need_dw.then(|| vec![0.0; wvals.len()]);
                let mut db = need_db.then(|| vec![0.0; o]);
                let mut col = vec![0.0; ckk * p_total];
                let mut dcol = vec![0.0; ckk * p_total];
                for ni in 0..n {
                    let gn = &g[ni * o * p_total..(ni + 1) * o * p_total];
                    if let Some(db) = db.as_mut() {
                        for oi in 0..o {
                            db[oi] += gn[oi * p_total..(oi + 1) * p_total].iter().sum::<f64>();
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        im2col(
                            &input[ni * c * h * w..(ni + 1) * c * h * w],
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            padding,
                            oh,
                            ow,
                            &mut col,
                        );
                        matmul_abt_acc(dw, gn, &col, o, p_total, ckk);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcol.fill(0.0);
                        matmul_atb_acc(&mut dcol, wvals, gn, o, ckk, p_total);
                        col2im_add(
                            &dcol,
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            padding,
                            oh,
                            ow,
                            &mut dx[ni * c * h * w..(ni + 1) * c * h * w],
                        );
                    }
                }
                vec![dx, dw, db]
            }),
        ))
    }
}
