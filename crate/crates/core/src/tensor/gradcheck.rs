//! Central finite-difference gradient checking. The numeric side only ever
//! evaluates forward passes, so it stays independent of the backward rules
//! it is checking.

use super::{Result, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_leaf: usize,
    pub worst_index: usize,
}

/// |a - n| relative to the larger magnitude, floored so that sub-1e-8
/// absolute noise on near-zero gradients does not dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

/// Central differences of `f` (a scalar-valued forward pass over fresh leaf
/// tensors) with respect to every element of every leaf.
pub fn numeric_grad<F>(leaves: &[Tensor], f: F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut out = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let base = leaves[li].values().to_vec();
        let shape = leaves[li].shape().to_vec();
        let mut g = vec![0.0; base.len()];
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut bumped = base.clone();
                bumped[i] += delta;
                let mut probe: Vec<Tensor> = leaves.to_vec();
                probe[li] = Tensor::param(&shape, bumped)?;
                let y = f(&probe)?;
                if y.numel() != 1 {
                    return Err(TensorError::NotScalar(y.shape().to_vec()));
                }
                Ok(y.item())
            };
            let plus = eval(step)?;
            let minus = eval(-step)?;
            g[i] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Run `f` once with autograd and once with central differences; report the
/// worst relative disagreement across all leaf elements.
pub fn check_gradients<F>(leaves: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for (i, leaf) in leaves.iter().enumerate() {
        if !leaf.requires_grad() {
            return Err(TensorError::Invalid(format!(
                "gradcheck leaf {i} does not require grad"
            )));
        }
        leaf.zero_grad();
    }
    let y = f(leaves)?;
    if y.numel() != 1 {
        return Err(TensorError::NotScalar(y.shape().to_vec()));
    }
    y.backward()?;
    let numeric = numeric_grad(leaves, &f, step)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_leaf: 0,
        worst_index: 0,
    };
    for (li, (leaf, num)) in leaves.iter().zip(&numeric).enumerate() {
        let analytic = leaf
            .grad()
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (i, (&a, &n)) in analytic.iter().zip(num).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-2);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_leaf = li;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Reduce an arbitrary tensor to a scalar with fixed weights; handy for
/// checking ops whose outputs are not scalar.
pub fn weighted_sum(t: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if weights.len() != t.numel() {
        return Err(TensorError::ShapeMismatch(format!(
            "weighted_sum needs {} weights, got {}",
            t.numel(),
            weights.len()
        )));
    }
    let w = Tensor::from_values(&[t.numel()], weights.to_vec())?;
    let flat = Tensor::from_op(
        vec![t.numel()],
        t.values().to_vec(),
        vec![t.clone()],
        super::ClosureBackward(|g: &[f64], _: &[Tensor]| vec![Some(g.to_vec())]),
    );
    let prod = flat.mul(&w)?;
    let s: f64 = prod.values().iter().sum();
    Ok(Tensor::from_op(
        vec![],
        vec![s],
        vec![prod],
        super::ClosureBackward(|g: &[f64], parents: &[Tensor]| {
            vec![Some(vec![g[0]; parents[0].numel()])]
        }),
    ))
}
