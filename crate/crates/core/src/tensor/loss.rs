//! Scalar training losses.

use super::{check_same_shape, ClosureBackward, Result, Tensor, TensorError};

/// Mean negative log-softmax probability of the true class over non-ignored
/// pixels. `labels` is row-major N x H x W with `ignore` marking pixels that
/// do not contribute. With every pixel ignored the loss is zero with zero
/// gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8], ignore: u8) -> Result<Tensor> {
    let (n, k, h, w) = logits.expect_4d("logits")?;
    if labels.len() != n * h * w {
        return Err(TensorError::ShapeMismatch(format!(
            "labels length {} does not match N*H*W = {}",
            labels.len(),
            n * h * w
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l != ignore && l as usize >= k) {
        return Err(TensorError::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let plane = h * w;
    let x = logits.values();
    let mut sum = 0.0;
    let mut count = 0usize;
    for ni in 0..n {
        for p in 0..plane {
            let label = labels[ni * plane + p];
            if label == ignore {
                continue;
            }
            let base = ni * k * plane + p;
            let mut m = f64::NEG_INFINITY;
            for ki in 0..k {
                m = m.max(x[base + ki * plane]);
            }
            let mut z = 0.0;
            for ki in 0..k {
                z += (x[base + ki * plane] - m).exp();
            }
            sum += m + z.ln() - x[base + label as usize * plane];
            count += 1;
        }
    }
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    let labels_owned = labels.to_vec();
    Ok(Tensor::from_op(
        vec![],
        vec![value],
        vec![logits.clone()],
        ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
            let x = parents[0].values();
            let mut dx = vec![0.0; x.len()];
            if count > 0 {
                let scale = g[0] / count as f64;
                for ni in 0..n {
                    for p in 0..plane {
                        let label = labels_owned[ni * plane + p];
                        if label == ignore {
                            continue;
                        }
                        let base = ni * k * plane + p;
                        let mut m = f64::NEG_INFINITY;
                        for ki in 0..k {
                            m = m.max(x[base + ki * plane]);
                        }
                        let mut z = 0.0;
                        for ki in 0..k {
                            z += (x[base + ki * plane] - m).exp();
                        }
                        for ki in 0..k {
                            let soft = (x[base + ki * plane] - m).exp() / z;
                            let hot = if ki == label as usize { 1.0 } else { 0.0 };
                            dx[base + ki * plane] += (soft - hot) * scale;
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Mean squared elementwise difference; `target` is treated as a constant,
/// so no gradient flows into it.
pub fn l2_consistency(a: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape(a, target, "l2_consistency")?;
    let numel = a.numel();
    let value = a
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / numel as f64;
    let target_vals = target.values().to_vec();
    Ok(Tensor::from_op(
        vec![],
        vec![value],
        vec![a.clone()],
        ClosureBackward(move |g: &[f64], parents: &[Tensor]| {
            let scale = 2.0 * g[0] / numel as f64;
            vec![Some(
                parents[0]
                    .values()
                    .iter()
                    .zip(&target_vals)
                    .map(|(a, b)| scale * (a - b))
                    .collect(),
            )]
        }),
    ))
}
