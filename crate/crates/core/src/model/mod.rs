//! The key-frame CNN (encoder-decoder with lateral connections), the
//! non-key-frame CNN, and the correction stage (context feature
//! rectification gated by residual-guided attention).

mod ckpt;
mod net;

pub use ckpt::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{
    cfr, images_to_tensor, keyframe_forward, keyframe_forward_all, nkfc_forward, rga_apply,
    rga_attention, warp_forward, KeyframeOutput, StageTimings,
};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::tensor::Tensor;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image dims {h}x{w} must be divisible by {stride}")]
    BadDims { h: usize, w: usize, stride: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("feature stride mismatch: {0}")]
    StrideMismatch(String),
    #[error("invalid module flags: {0}")]
    InvalidFlags(String),
    #[error("checkpoint error: {0}")]
    Ckpt(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Warp(#[from] crate::warp::WarpError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoder level whose features are warped across frames. Higher layers sit
/// closer to the classifier: fewer retained head stages, faster inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarpLayer {
    Layer1,
    Layer2,
    Layer3,
}

impl WarpLayer {
    pub fn from_index(i: usize) -> Option<WarpLayer> {
        match i {
            1 => Some(WarpLayer::Layer1),
            2 => Some(WarpLayer::Layer2),
            3 => Some(WarpLayer::Layer3),
            _ => None,
        }
    }

    pub fn index(&self) -> usize {
        match self {
            WarpLayer::Layer1 => 1,
            WarpLayer::Layer2 => 2,
            WarpLayer::Layer3 => 3,
        }
    }
}

/// A feature tensor (1 x C x h x w) plus the full-resolution stride of its
/// grid cells.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn detach(&self) -> FeatureMap {
        FeatureMap {
            tensor: self.tensor.detach(),
            stride: self.stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Encoder stage widths at strides 2 / 4 / 8.
    pub head_channels: [usize; 3],
    /// Decoder widths, deepest first: [P8, P4, P2].
    pub decoder_channels: [usize; 3],
    pub class_count: usize,
    pub warp_layer: WarpLayer,
}

impl BackboneConfig {
    pub fn new(class_count: usize) -> BackboneConfig {
        BackboneConfig {
            head_channels: [16, 32, 64],
            decoder_channels: [24, 12, 12],
            class_count,
            warp_layer: WarpLayer::Layer1,
        }
    }

    pub fn max_stride(&self) -> usize {
        8
    }

    /// Stride of the context features propagated across frames.
    pub fn context_stride(&self) -> usize {
        match self.warp_layer {
            WarpLayer::Layer1 => 4,
            WarpLayer::Layer2 => 8,
            WarpLayer::Layer3 => 2,
        }
    }

    pub fn context_channels(&self) -> usize {
        match self.warp_layer {
            WarpLayer::Layer1 => self.decoder_channels[1],
            WarpLayer::Layer2 => self.decoder_channels[0],
            WarpLayer::Layer3 => self.decoder_channels[2],
        }
    }

    /// Encoder stages the non-key-frame CNN keeps running per frame.
    pub fn retained_heads(&self) -> usize {
        match self.warp_layer {
            WarpLayer::Layer1 => 2,
            WarpLayer::Layer2 => 1,
            WarpLayer::Layer3 => 0,
        }
    }
}

/// Named parameter tensors. Names are unique by construction; iteration is
/// ordered, so optimizer updates and serialization are deterministic.
#[derive(Clone, Debug, Default)]
pub struct NetworkParams {
    tensors: BTreeMap<String, Tensor>,
}

impl NetworkParams {
    pub fn new() -> NetworkParams {
        NetworkParams {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub(crate) fn map_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    /// Same values with `requires_grad` chosen per name.
    pub fn reconstructed(&self, trainable: impl Fn(&str) -> bool) -> NetworkParams {
        let mut out = NetworkParams::new();
        for (name, t) in &self.tensors {
            let rebuilt = if trainable(name) {
                Tensor::param(t.shape(), t.values().to_vec()).expect("shape/values consistent")
            } else {
                t.detach()
            };
            out.tensors.insert(name.clone(), rebuilt);
        }
        out
    }

    /// Names of weight tensors (the ones weight decay applies to).
    pub fn weight_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| n.ends_with(".w"))
            .cloned()
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, _)| n.clone())
            .collect()
    }
}

fn kaiming_conv(rng: &mut impl Rng, out_c: usize, in_c: usize, k: usize) -> Tensor {
    let fan_in = (in_c * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let values: Vec<f64> = (0..out_c * in_c * k * k)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::param(&[out_c, in_c, k, k], values).unwrap()
}

fn conv_pair(
    params: &mut NetworkParams,
    rng: &mut impl Rng,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
) {
    params.insert(&format!("{name}.w"), kaiming_conv(rng, out_c, in_c, k));
    params.insert(
        &format!("{name}.b"),
        Tensor::param(&[out_c], vec![0.0; out_c]).unwrap(),
    );
}

fn zero_conv_pair(params: &mut NetworkParams, name: &str, out_c: usize, in_c: usize, k: usize) {
    params.insert(
        &format!("{name}.w"),
        Tensor::param(&[out_c, in_c, k, k], vec![0.0; out_c * in_c * k * k]).unwrap(),
    );
    params.insert(
        &format!("{name}.b"),
        Tensor::param(&[out_c], vec![0.0; out_c]).unwrap(),
    );
}

/// Fresh per-frame (key-frame CNN) parameters: Kaiming-uniform conv weights,
/// zero biases.
pub fn init_keyframe_params(config: &BackboneConfig, seed: u64) -> NetworkParams {
    let mut rng = stream(seed, "init-keyframe");
    let [h1, h2, h3] = config.head_channels;
    let [d3, d2, d1] = config.decoder_channels;
    let mut p = NetworkParams::new();
    conv_pair(&mut p, &mut rng, "enc1.conv1", h1, 3, 3);
    conv_pair(&mut p, &mut rng, "enc1.conv2", h1, h1, 3);
    conv_pair(&mut p, &mut rng, "enc2.conv1", h2, h1, 3);
    conv_pair(&mut p, &mut rng, "enc2.conv2", h2, h2, 3);
    conv_pair(&mut p, &mut rng, "enc3.conv1", h3, h2, 3);
    conv_pair(&mut p, &mut rng, "enc3.conv2", h3, h3, 3);
    conv_pair(&mut p, &mut rng, "dec.proj3", d3, h3, 1);
    conv_pair(&mut p, &mut rng, "dec.proj2", d3, h2, 1);
    conv_pair(&mut p, &mut rng, "dec.conv4", d2, d3, 3);
    conv_pair(&mut p, &mut rng, "dec.proj1", d2, h1, 1);
    conv_pair(&mut p, &mut rng, "dec.conv2", d1, d2, 3);
    conv_pair(&mut p, &mut rng, "cls", config.class_count, d1, 1);
    p
}

/// Parameter names of the per-frame model that the non-key-frame CNN reuses
/// for the given warp layer (heads first, then decoder tail).
pub fn nkfc_shared_names(config: &BackboneConfig) -> Vec<&'static str> {
    match config.warp_layer {
        WarpLayer::Layer1 => vec![
            "enc1.conv1",
            "enc1.conv2",
            "enc2.conv1",
            "enc2.conv2",
            "dec.proj1",
            "dec.conv2",
            "cls",
        ],
        WarpLayer::Layer2 => vec![
            "enc1.conv1",
            "enc1.conv2",
            "dec.conv4",
            "dec.proj1",
            "dec.conv2",
            "cls",
        ],
        WarpLayer::Layer3 => vec!["cls"],
    }
}

/// Non-key-frame parameters: encoder/decoder tensors copied from the frozen
/// per-frame model, a fresh spatial projection, and zero-initialized
/// correction modules (so the corrected path starts exactly at the plain
/// warping baseline).
pub fn init_nkfc_params(
    key_params: &NetworkParams,
    config: &BackboneConfig,
    seed: u64,
) -> Result<NetworkParams> {
    let mut rng = stream(seed, "init-nkfc");
    let mut p = NetworkParams::new();
    for name in nkfc_shared_names(config) {
        for suffix in [".w", ".b"] {
            let full = format!("{name}{suffix}");
            let t = key_params.get(&full)?;
            p.insert(&full, Tensor::param(t.shape(), t.values().to_vec())?);
        }
    }
    let ctx_c = config.context_channels();
    match config.warp_layer {
        WarpLayer::Layer1 => {
            conv_pair(&mut p, &mut rng, "spa", ctx_c, config.head_channels[1], 1);
            zero_conv_pair(&mut p, "cfr", ctx_c, 2 * ctx_c, 3);
            zero_conv_pair(&mut p, "rga", 1, 3, 1);
        }
        WarpLayer::Layer2 => {
            conv_pair(&mut p, &mut rng, "spa", ctx_c, config.head_channels[0], 1);
            zero_conv_pair(&mut p, "cfr", ctx_c, 2 * ctx_c, 3);
            zero_conv_pair(&mut p, "rga", 1, 3, 1);
        }
        WarpLayer::Layer3 => {}
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_geometry_per_layer() {
        let mut c = BackboneConfig::new(4);
        assert_eq!(c.context_stride(), 4);
        assert_eq!(c.retained_heads(), 2);
        assert_eq!(c.context_channels(), 12);
        c.warp_layer = WarpLayer::Layer2;
        assert_eq!(c.context_stride(), 8);
        assert_eq!(c.retained_heads(), 1);
        assert_eq!(c.context_channels(), 24);
        c.warp_layer = WarpLayer::Layer3;
        assert_eq!(c.context_stride(), 2);
        assert_eq!(c.retained_heads(), 0);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let config = BackboneConfig::new(4);
        let a = init_keyframe_params(&config, 3);
        let b = init_keyframe_params(&config, 3);
        let c = init_keyframe_params(&config, 4);
        for (name, t) in a.iter() {
            assert_eq!(t.values(), b.get(name).unwrap().values());
        }
        assert_ne!(
            a.get("enc1.conv1.w").unwrap().values(),
            c.get("enc1.conv1.w").unwrap().values()
        );
    }

    #[test]
    fn correction_params_start_at_zero() {
        let config = BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 1);
        let nk = init_nkfc_params(&key, &config, 1).unwrap();
        assert!(nk.get("cfr.w").unwrap().values().iter().all(|&v| v == 0.0));
        assert!(nk.get("rga.w").unwrap().values().iter().all(|&v| v == 0.0));
        // shared tensors really are copies of the per-frame model
        assert_eq!(
            nk.get("cls.w").unwrap().values(),
            key.get("cls.w").unwrap().values()
        );
    }

    #[test]
    fn reconstructed_controls_trainability() {
        let config = BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 2);
        let frozen = key.reconstructed(|_| false);
        assert!(frozen.trainable_names().is_empty());
        let partial = key.reconstructed(|n| n.starts_with("cls"));
        assert_eq!(partial.trainable_names(), vec!["cls.b", "cls.w"]);
    }
}
