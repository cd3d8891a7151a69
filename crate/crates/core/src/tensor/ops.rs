//! Elementwise and structural ops.

use super::{check_same_shape, ClosureBackward, Result, Tensor, TensorError};

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "add")?;
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            ClosureBackward(|g: &[f64], parents: &[Tensor]| {
                vec![
                    parents[0].requires_grad().then(|| g.to_vec()),
                    parents[1].requires_grad().then(|| g.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "sub")?;
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            ClosureBackward(|g: &[f64], parents: &[Tensor]| {
                vec![
                    parents[0].requires_grad().then(|| g.to_vec()),
                    parents[1]
                        .requires_grad()
                        .then(|| g.iter().map(|v| -v).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "mul")?;
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            ClosureBackward(|g: &[f64], parents: &[Tensor]| {
                let a = parents[0].values();
                let b = parents[1].values();
                vec![
                    parents[0]
                        .requires_grad()
                        .then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    parents[1]
                        .requires_grad()
                        .then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let values = self.values().iter().map(|v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            ClosureBackward(move |g: &[f64], _: &[Tensor]| {
                vec![Some(g.iter().map(|v| v * c).collect())]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let values = self
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            ClosureBackward(|g: &[f64], parents: &[Tensor]| {
                let x = parents[0].values();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| stable_sigmoid(x)).collect();
        let cached = values.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            ClosureBackward(move |g: &[f64], _: &[Tensor]| {
                vec![Some(
                    g.iter()
                        .zip(&cached)
                        .map(|(g, &y)| g * y * (1.0 - y))
                        .collect(),
                )]
            }),
        )
    }

    /// Sum of squared entries as a scalar; the weight-decay building block.
    pub fn sum_squares(&self) -> Tensor {
        let s: f64 = self.values().iter().map(|v| v * v).sum();
        Tensor::from_op(
            vec![],
            vec![s],
            vec![self.clone()],
            ClosureBackward(|g: &[f64], parents: &[Tensor]| {
                let go = g[0];
                vec![Some(
                    parents[0].values().iter().map(|x| 2.0 * x * go).collect(),
                )]
            }),
        )
    }

    /// Concatenate along the channel axis; inputs share N, H, W.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        let (n, _, h, w) = parts[0].expect_4d("concat input")?;
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, ph, pw) = p.expect_4d("concat input")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat inputs disagree: {:?} vs {:?}",
                    parts[0].shape(),
                    p.shape()
                )));
            }
            channels.push(pc);
        }
        let c_total: usize = channels.iter().sum();
        let plane = h * w;
        let mut values = vec![0.0; n * c_total * plane];
        for ni in 0..n {
            let mut c_off = 0;
            for (p, &pc) in parts.iter().zip(&channels) {
                let src = &p.values()[ni * pc * plane..(ni + 1) * pc * plane];
                let dst_start = (ni * c_total + c_off) * plane;
                values[dst_start..dst_start + pc * plane].copy_from_slice(src);
                c_off += pc;
            }
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(
            vec![n, c_total, h, w],
            values,
            parents,
            ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
                let mut out = Vec::with_capacity(parents.len());
                for (pi, p) in parents.iter().enumerate() {
                    if !p.requires_grad() {
                        out.push(None);
                        continue;
                    }
                    let pc = channels[pi];
                    let c_off: usize = channels[..pi].iter().sum();
                    let mut pg = vec![0.0; n * pc * plane];
                    for ni in 0..n {
                        let src_start = (ni * c_total + c_off) * plane;
                        pg[ni * pc * plane..(ni + 1) * pc * plane]
                            .copy_from_slice(&g[src_start..src_start + pc * plane]);
                    }
                    out.push(Some(pg));
                }
                out
            }),
        ))
    }

    /// Non-overlapping k-by-k average pooling; dims must divide by k.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.expect_4d("avg_pool2d input")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "pool size {k} does not divide spatial dims {h}x{w}"
            )));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let x = self.values();
        let mut values = vec![0.0; n * c * oh * ow];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut values[nc * oh * ow..(nc + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ky in 0..k {
                        let row = (oy * k + ky) * w + ox * k;
                        for kx in 0..k {
                            s += src[row + kx];
                        }
                    }
                    dst[oy * ow + ox] = s * inv;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            values,
            vec![self.clone()],
            ClosureBackward(move |g: &[f64], _: &[Tensor]| {
                let mut pg = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    let gsrc = &g[nc * oh * ow..(nc + 1) * oh * ow];
                    let dst = &mut pg[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = gsrc[oy * ow + ox] * inv;
                            for ky in 0..k {
                                let row = (oy * k + ky) * w + ox * k;
                                for kx in 0..k {
                                    dst[row + kx] += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(pg)]
            }),
        ))
    }

    /// 2x nearest-neighbour upsampling.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.expect_4d("upsample input")?;
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.values();
        let mut values = vec![0.0; n * c * oh * ow];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut values[nc * oh * ow..(nc + 1) * oh * ow];
            for oy in 0..oh {
                let sy = oy / 2;
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[sy * w + ox / 2];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            values,
            vec![self.clone()],
            ClosureBackward(move |g: &[f64], _: &[Tensor]| {
                let mut pg = vec![0.0; n * c * h * w];
                for nc in 0..n * c {
                    let gsrc = &g[nc * oh * ow..(nc + 1) * oh * ow];
                    let dst = &mut pg[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..oh {
                        let sy = oy / 2;
                        for ox in 0..ow {
                            dst[sy * w + ox / 2] += gsrc[oy * ow + ox];
                        }
                    }
                }
                vec![Some(pg)]
            }),
        ))
    }

    /// Multiply a C-channel map by a single-channel gate, broadcast over
    /// channels. `gate` is N x 1 x H x W.
    pub fn mul_gate(&self, gate: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = self.expect_4d("mul_gate input")?;
        let (gn, gc, gh, gw) = gate.expect_4d("gate")?;
        if (gn, gc, gh, gw) != (n, 1, h, w) {
            return Err(TensorError::ShapeMismatch(format!(
                "gate must be {:?}, got {:?}",
                [n, 1, h, w],
                gate.shape()
            )));
        }
        let plane = h * w;
        let x = self.values();
        let gv = gate.values();
        let mut values = vec![0.0; x.len()];
        for ni in 0..n {
            let gplane = &gv[ni * plane..(ni + 1) * plane];
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                for p in 0..plane {
                    values[off + p] = x[off + p] * gplane[p];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, h, w],
            values,
            vec![self.clone(), gate.clone()],
            ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
                let x = parents[0].values();
                let gv = parents[1].values();
                let dx = parents[0].requires_grad().then(|| {
                    let mut dx = vec![0.0; x.len()];
                    for ni in 0..n {
                        let gplane = &gv[ni * plane..(ni + 1) * plane];
                        for ci in 0..c {
                            let off = (ni * c + ci) * plane;
                            for p in 0..plane {
                                dx[off + p] = g[off + p] * gplane[p];
                            }
                        }
                    }
                    dx
                });
                let dg = parents[1].requires_grad().then(|| {
                    let mut dg = vec![0.0; gv.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let off = (ni * c + ci) * plane;
                            for p in 0..plane {
                                dg[ni * plane + p] += g[off + p] * x[off + p];
                            }
                        }
                    }
                    dg
                });
                vec![dx, dg]
            }),
        ))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;

    #[test]
    fn add_distributes_gradients() {
        let a = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::param(&[3], vec![0.5, 0.5, 0.5]).unwrap();
        let s = a.add(&b).unwrap();
        // reduce via sum of squares to get a scalar
        let loss = s.sum_squares();
        loss.backward().unwrap();
        let expect: Vec<f64> = s.values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(a.grad().unwrap(), expect);
        assert_eq!(b.grad().unwrap(), expect);
    }

    #[test]
    fn concat_backward_splits_exactly() {
        let a = Tensor::param(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::param(&[1, 1, 2, 2], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        let loss = c.sum_squares();
        loss.backward().unwrap();
        let ga = a.grad().unwrap();
        let gb = b.grad().unwrap();
        let manual: Vec<f64> = c.values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(ga.as_slice(), &manual[..8]);
        assert_eq!(gb.as_slice(), &manual[8..]);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let a = Tensor::from_values(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        assert_eq!(a.relu().values(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gate_broadcasts_over_channels() {
        let x = Tensor::param(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gate = Tensor::from_values(&[1, 1, 1, 2], vec![0.5, 2.0]).unwrap();
        let y = x.mul_gate(&gate).unwrap();
        assert_eq!(y.values(), &[0.5, 4.0, 1.5, 8.0]);
    }

    #[test]
    fn avg_pool_means_blocks() {
        let x = Tensor::from_values(&[1, 1, 2, 4], vec![1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0])
            .unwrap();
        let y = x.avg_pool2d(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.values(), &[2.5, 6.5]);
    }
}
