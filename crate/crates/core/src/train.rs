//! Two-step training: the per-frame model first, then the non-key-frame
//! modules against the frozen per-frame model.
//!
//! Step two trains on consecutive frame pairs (t-1, t): the frozen per-frame
//! CNN supplies the previous context (and, when the consistency loss is on,
//! the target context at t), the non-key-frame CNN predicts frame t, and
//! only its own parameters move.

use rand::Rng;
use thiserror::Error;

use crate::data::{FrameKind, GopSequence, IGNORE_LABEL};
use crate::model::{
    images_to_tensor, init_keyframe_params, init_nkfc_params, keyframe_forward_all, nkfc_forward,
    BackboneConfig, FeatureMap, ModelError, NetworkParams, WarpLayer,
};
use crate::rng::stream;
use crate::tensor::{adam_step, l2_consistency, softmax_cross_entropy, AdamState, Tensor};

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no labeled frames in the training set")]
    NoLabeledFrames,
    #[error("no consecutive labeled frame pairs in the training set")]
    NoPairs,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight-decay coefficient.
    pub lambda0: f64,
    /// Consistency-loss weight.
    pub lambda1: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warp_layer: WarpLayer,
    pub use_cfr: bool,
    pub use_rga: bool,
    pub fine_tune_heads: bool,
}

impl TrainConfig {
    pub fn new(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            lambda0: 1e-7,
            lambda1: 10.0,
            iterations,
            batch_size: 2,
            seed,
            warp_layer: WarpLayer::Layer1,
            use_cfr: true,
            use_rga: true,
            fine_tune_heads: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda0 < 0.0 || self.lambda1 < 0.0 {
            return Err(TrainError::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(TrainError::InvalidConfig("iterations must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be > 0".into()));
        }
        if self.use_rga && !self.use_cfr {
            return Err(TrainError::InvalidConfig(
                "residual-guided attention requires the rectification module".into(),
            ));
        }
        if self.use_cfr && self.warp_layer == WarpLayer::Layer3 {
            return Err(TrainError::InvalidConfig(
                "Layer3 has no spatial features; rectification unavailable".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration loss report. `reg` and `consist` are the weighted
/// contributions, so `total == cls + reg + consist` exactly.
#[derive(Clone, Copy, Debug)]
pub struct LossRecord {
    pub iteration: usize,
    pub cls: f64,
    pub reg: f64,
    pub consist: f64,
    pub total: f64,
}

fn backbone_for(data: &[GopSequence], config: &TrainConfig) -> Result<BackboneConfig> {
    let first = data.first().ok_or(TrainError::NoLabeledFrames)?;
    let mut bb = BackboneConfig::new(first.class_count);
    bb.warp_layer = config.warp_layer;
    Ok(bb)
}

fn weight_decay_term(params: &NetworkParams) -> Result<Option<Tensor>> {
    let mut acc: Option<Tensor> = None;
    for (name, t) in params.iter() {
        if !name.ends_with(".w") || !t.requires_grad() {
            continue;
        }
        let sq = t.sum_squares();
        acc = Some(match acc {
            Some(a) => a.add(&sq)?,
            None => sq,
        });
    }
    Ok(acc)
}

/// Step one: minimize classification loss plus weight decay on labeled
/// frames. Returns the trained per-frame parameters and the loss curve.
pub fn train_keyframe(
    data: &[GopSequence],
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<LossRecord>)> {
    config.validate()?;
    let bb = backbone_for(data, config)?;
    let mut labeled: Vec<(usize, usize)> = Vec::new();
    for (si, seq) in data.iter().enumerate() {
        for (fi, frame) in seq.frames.iter().enumerate() {
            if frame.label.is_some() {
                labeled.push((si, fi));
            }
        }
    }
    if labeled.is_empty() {
        return Err(TrainError::NoLabeledFrames);
    }

    let mut params = init_keyframe_params(&bb, config.seed);
    let names = params.names();
    let mut adam = AdamState::new(config.lr);
    let mut rng = stream(config.seed, "phase1-batch");
    let mut curve = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let picks: Vec<(usize, usize)> = (0..config.batch_size)
            .map(|_| labeled[rng.gen_range(0..labeled.len())])
            .collect();
        let images: Vec<&crate::warp::ImageBuf> = picks
            .iter()
            .map(|&(s, f)| &data[s].frames[f].image)
            .collect();
        let mut labels: Vec<u8> = Vec::new();
        for &(s, f) in &picks {
            labels.extend_from_slice(&data[s].frames[f].label.as_ref().unwrap().ids);
        }
        let input = images_to_tensor(&images)?;
        let out = keyframe_forward_all(&input, &params, &bb)?;
        let cls = softmax_cross_entropy(&out.logits, &labels, IGNORE_LABEL)?;
        let reg = weight_decay_term(&params)?.expect("keyframe params have weights");
        let total = cls.add(&reg.scale(config.lambda0))?;
        total.backward()?;
        adam_step(params.map_mut(), &names, &mut adam)?;
        curve.push(LossRecord {
            iteration,
            cls: cls.item(),
            reg: config.lambda0 * reg.item(),
            consist: 0.0,
            total: total.item(),
        });
    }
    Ok((params, curve))
}

/// Frozen per-frame contexts at the configured warp layer, one per frame.
fn frozen_contexts(
    data: &[GopSequence],
    key_params: &NetworkParams,
    bb: &BackboneConfig,
) -> Result<Vec<Vec<FeatureMap>>> {
    let mut all = Vec::with_capacity(data.len());
    for seq in data {
        let mut per_seq = Vec::with_capacity(seq.frames.len());
        for frame in &seq.frames {
            let input = images_to_tensor(&[&frame.image])?;
            let out = keyframe_forward_all(&input, key_params, bb)?;
            per_seq.push(out.context(bb.warp_layer).detach());
        }
        all.push(per_seq);
    }
    Ok(all)
}

/// Step two: train the non-key-frame modules with the per-frame model
/// frozen. Gradients reach the correction modules, the retained decoder
/// copies, and (only with `fine_tune_heads`) the head copies.
pub fn train_nkfc(
    data: &[GopSequence],
    key_params: &NetworkParams,
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<LossRecord>)> {
    config.validate()?;
    let bb = backbone_for(data, config)?;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (si, seq) in data.iter().enumerate() {
        for (fi, frame) in seq.frames.iter().enumerate() {
            if frame.kind == FrameKind::Predicted && frame.label.is_some() {
                pairs.push((si, fi));
            }
        }
    }
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }

    let frozen_key = key_params.reconstructed(|_| false);
    let init = init_nkfc_params(&frozen_key, &bb, config.seed)?;
    let use_cfr = config.use_cfr;
    let use_rga = config.use_rga;
    let fine_tune = config.fine_tune_heads;
    let mut params = init.reconstructed(|name| {
        if name.starts_with("enc2") {
            // at Layer1 the second head stage only feeds the spatial
            // features, which reach the loss solely through rectification
            fine_tune && use_cfr
        } else if name.starts_with("enc") {
            fine_tune
        } else if name.starts_with("cfr") || name.starts_with("spa") {
            use_cfr
        } else if name.starts_with("rga") {
            use_rga
        } else {
            // retained decoder and classifier copies
            true
        }
    });
    let trainable = params.trainable_names();
    if trainable.is_empty() {
        return Err(TrainError::InvalidConfig(
            "no trainable parameters for this layer/flag combination".into(),
        ));
    }

    let contexts = frozen_contexts(data, &frozen_key, &bb)?;
    let mut adam = AdamState::new(config.lr);
    let mut rng = stream(config.seed, "phase2-batch");
    let mut curve = Vec::with_capacity(config.iterations);
    let inv_batch = 1.0 / config.batch_size as f64;

    for iteration in 0..config.iterations {
        let mut cls_acc: Option<Tensor> = None;
        let mut consist_acc: Option<Tensor> = None;
        for _ in 0..config.batch_size {
            let (si, fi) = pairs[rng.gen_range(0..pairs.len())];
            let frame = &data[si].frames[fi];
            let prev_ctx = &contexts[si][fi - 1];
            let (logits, ctx) = nkfc_forward(
                &frame.image,
                prev_ctx,
                frame.motion.as_ref().unwrap(),
                frame.residual.as_ref().unwrap(),
                &params,
                &bb,
                use_cfr,
                use_rga,
                None,
            )?;
            let cls =
                softmax_cross_entropy(&logits, &frame.label.as_ref().unwrap().ids, IGNORE_LABEL)?;
            cls_acc = Some(match cls_acc {
                Some(a) => a.add(&cls)?,
                None => cls,
            });
            if config.lambda1 > 0.0 {
                let consist = l2_consistency(&ctx.tensor, &contexts[si][fi].tensor)?;
                consist_acc = Some(match consist_acc {
                    Some(a) => a.add(&consist)?,
                    None => consist,
                });
            }
        }
        let cls = cls_acc.expect("batch_size >= 1").scale(inv_batch);
        let reg = weight_decay_term(&params)?
            .ok_or_else(|| TrainError::InvalidConfig("no weight tensors among trainables".into()))?;
        let mut total = cls.add(&reg.scale(config.lambda0))?;
        let mut consist_value = 0.0;
        if let Some(c) = consist_acc {
            let consist = c.scale(inv_batch);
            consist_value = config.lambda1 * consist.item();
            total = total.add(&consist.scale(config.lambda1))?;
        }
        total.backward()?;
        adam_step(params.map_mut(), &trainable, &mut adam)?;
        curve.push(LossRecord {
            iteration,
            cls: cls.item(),
            reg: config.lambda0 * reg.item(),
            consist: consist_value,
            total: total.item(),
        });
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_scene, generate_sequence, SceneSpec};

    fn small_scene(seed: u64) -> SceneSpec {
        let mut spec = default_scene(seed);
        spec.height = 48;
        spec.width = 64;
        spec.gop_length = 6;
        spec
    }

    fn small_data(seed: u64) -> Vec<GopSequence> {
        vec![generate_sequence(&small_scene(seed), 1).unwrap()]
    }

    #[test]
    fn keyframe_loss_descends() {
        let data = small_data(1);
        let mut cfg = TrainConfig::new(60, 1);
        cfg.batch_size = 1;
        let (_, curve) = train_keyframe(&data, &cfg).unwrap();
        let first = curve.first().unwrap().total;
        let last = curve.last().unwrap().total;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn lambda0_zero_means_pure_classification_loss() {
        let data = small_data(2);
        let mut cfg = TrainConfig::new(1, 2);
        cfg.lambda0 = 0.0;
        cfg.batch_size = 1;
        let (_, curve) = train_keyframe(&data, &cfg).unwrap();
        assert_eq!(curve[0].reg, 0.0);
        assert_eq!(curve[0].total, curve[0].cls);
    }

    #[test]
    fn keyframe_training_is_bit_reproducible() {
        let data = small_data(3);
        let mut cfg = TrainConfig::new(5, 3);
        cfg.batch_size = 1;
        let (a, _) = train_keyframe(&data, &cfg).unwrap();
        let (b, _) = train_keyframe(&data, &cfg).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t.values(), b.get(name).unwrap().values(), "{name}");
        }
    }

    #[test]
    fn no_labeled_frames_rejected() {
        let mut data = small_data(4);
        for f in data[0].frames.iter_mut() {
            f.label = None;
        }
        let cfg = TrainConfig::new(1, 4);
        assert!(matches!(
            train_keyframe(&data, &cfg),
            Err(TrainError::NoLabeledFrames)
        ));
    }

    #[test]
    fn nkfc_training_freezes_key_params_and_decomposes_loss() {
        let data = small_data(5);
        let mut cfg = TrainConfig::new(8, 5);
        cfg.batch_size = 1;
        let (key, _) = train_keyframe(&data, &cfg).unwrap();
        let before: Vec<(String, Vec<f64>)> = key
            .iter()
            .map(|(n, t)| (n.clone(), t.values().to_vec()))
            .collect();
        let (_, curve) = train_nkfc(&data, &key, &cfg).unwrap();
        for (name, vals) in &before {
            assert_eq!(key.get(name).unwrap().values(), vals.as_slice(), "{name}");
        }
        for rec in &curve {
            let sum = rec.cls + rec.reg + rec.consist;
            assert!(
                (rec.total - sum).abs() <= 1e-12,
                "iter {}: total {} vs sum {}",
                rec.iteration,
                rec.total,
                sum
            );
        }
    }

    #[test]
    fn lambda1_zero_drops_consistency_term() {
        let data = small_data(6);
        let mut cfg = TrainConfig::new(4, 6);
        cfg.batch_size = 1;
        let (key, _) = train_keyframe(&data, &cfg).unwrap();
        cfg.lambda1 = 0.0;
        let (_, curve) = train_nkfc(&data, &key, &cfg).unwrap();
        for rec in &curve {
            assert_eq!(rec.consist, 0.0);
            assert!((rec.total - (rec.cls + rec.reg)).abs() <= 1e-12);
        }
    }

    #[test]
    fn consistency_loss_improves_under_training() {
        let data = small_data(7);
        let mut cfg = TrainConfig::new(10, 7);
        cfg.batch_size = 1;
        let (key, _) = train_keyframe(&data, &cfg).unwrap();
        cfg.iterations = 60;
        cfg.lr = 3e-3;
        let (_, curve) = train_nkfc(&data, &key, &cfg).unwrap();
        let head: f64 = curve[..5].iter().map(|r| r.consist).sum::<f64>() / 5.0;
        let tail: f64 = curve[curve.len() - 5..].iter().map(|r| r.consist).sum::<f64>() / 5.0;
        assert!(tail < head, "consistency did not improve: {head} -> {tail}");
    }

    #[test]
    fn rga_without_cfr_rejected() {
        let data = small_data(8);
        let mut cfg = TrainConfig::new(1, 8);
        cfg.use_cfr = false;
        cfg.use_rga = true;
        let key = init_keyframe_params(&BackboneConfig::new(4), 8);
        assert!(matches!(
            train_nkfc(&data, &key, &cfg),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn missing_key_tensors_rejected() {
        let data = small_data(9);
        let cfg = TrainConfig::new(1, 9);
        let empty = NetworkParams::new();
        assert!(matches!(
            train_nkfc(&data, &empty, &cfg),
            Err(TrainError::Model(ModelError::MissingParam(_)))
        ));
    }
}
