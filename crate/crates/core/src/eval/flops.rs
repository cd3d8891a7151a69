//! Analytic multiply-accumulate counts.
//!
//! Convention: one multiply-add = 1 MAC. Counted work is conv layers plus
//! interior feature-warping arithmetic (motion pooling and the four-tap
//! gathers); plain resampling (decoder upsamples, logits upsample, residual
//! resize) is not counted. Under this convention the correction stage adds
//! exactly one 3x3 conv plus one 1x1 conv at context resolution.

use super::{EvalError, Result};
use crate::model::{BackboneConfig, WarpLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountPath {
    Keyframe,
    Nkfc,
}

#[derive(Clone, Debug)]
pub struct MacCount {
    pub items: Vec<(String, u64)>,
}

impl MacCount {
    pub fn total(&self) -> u64 {
        self.items.iter().map(|(_, m)| m).sum()
    }

    pub fn get(&self, name: &str) -> u64 {
        self.items
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| *m)
            .unwrap_or(0)
    }

    /// Sum over conv layers only.
    pub fn conv_total(&self) -> u64 {
        self.items
            .iter()
            .filter(|(n, _)| !n.starts_with("warp"))
            .map(|(_, m)| m)
            .sum()
    }

    /// Correction-stage convs (rectification + attention).
    pub fn correction_total(&self) -> u64 {
        self.get("cfr") + self.get("rga")
    }
}

fn conv_macs(out_h: usize, out_w: usize, out_c: usize, in_c: usize, k: usize) -> u64 {
    (out_h * out_w * out_c * in_c * k * k) as u64
}

/// Feature-warp arithmetic: per-cell motion pooling (two planes averaged
/// over stride x stride blocks) plus a four-tap gather per channel.
fn warp_macs(h: usize, w: usize, c: usize, stride: usize) -> u64 {
    let cells = (h / stride) * (w / stride);
    (2 * cells * stride * stride + 4 * c * cells) as u64
}

/// Analytic MAC count for one inference path at the given input size.
pub fn count_flops(
    config: &BackboneConfig,
    height: usize,
    width: usize,
    path: CountPath,
    use_cfr: bool,
    use_rga: bool,
) -> Result<MacCount> {
    if height % config.max_stride() != 0 || width % config.max_stride() != 0 {
        return Err(EvalError::Invalid(format!(
            "dims {height}x{width} not divisible by {}",
            config.max_stride()
        )));
    }
    let [h1, h2, h3] = config.head_channels;
    let [d3, d2, d1] = config.decoder_channels;
    let k = config.class_count;
    let (h, w) = (height, width);
    let mut items: Vec<(String, u64)> = Vec::new();

    let enc1 = |items: &mut Vec<(String, u64)>| {
        items.push(("enc1.conv1".into(), conv_macs(h / 2, w / 2, h1, 3, 3)));
        items.push(("enc1.conv2".into(), conv_macs(h / 2, w / 2, h1, h1, 3)));
    };
    let enc2 = |items: &mut Vec<(String, u64)>| {
        items.push(("enc2.conv1".into(), conv_macs(h / 4, w / 4, h2, h1, 3)));
        items.push(("enc2.conv2".into(), conv_macs(h / 4, w / 4, h2, h2, 3)));
    };

    match path {
        CountPath::Keyframe => {
            enc1(&mut items);
            enc2(&mut items);
            items.push(("enc3.conv1".into(), conv_macs(h / 8, w / 8, h3, h2, 3)));
            items.push(("enc3.conv2".into(), conv_macs(h / 8, w / 8, h3, h3, 3)));
            items.push(("dec.proj3".into(), conv_macs(h / 8, w / 8, d3, h3, 1)));
            items.push(("dec.proj2".into(), conv_macs(h / 4, w / 4, d3, h2, 1)));
            items.push(("dec.conv4".into(), conv_macs(h / 4, w / 4, d2, d3, 3)));
            items.push(("dec.proj1".into(), conv_macs(h / 2, w / 2, d2, h1, 1)));
            items.push(("dec.conv2".into(), conv_macs(h / 2, w / 2, d1, d2, 3)));
            items.push(("cls".into(), conv_macs(h / 2, w / 2, k, d1, 1)));
        }
        CountPath::Nkfc => {
            let ctx_c = config.context_channels();
            let stride = config.context_stride();
            match config.warp_layer {
                WarpLayer::Layer1 => {
                    enc1(&mut items);
                    enc2(&mut items);
                    items.push(("spa".into(), conv_macs(h / 4, w / 4, ctx_c, h2, 1)));
                    items.push(("warp".into(), warp_macs(h, w, ctx_c, stride)));
                    items.push(("dec.proj1".into(), conv_macs(h / 2, w / 2, d2, h1, 1)));
                    items.push(("dec.conv2".into(), conv_macs(h / 2, w / 2, d1, d2, 3)));
                    items.push(("cls".into(), conv_macs(h / 2, w / 2, k, d1, 1)));
                }
                WarpLayer::Layer2 => {
                    enc1(&mut items);
                    // e1 average-pooled to stride 8 before the projection
                    items.push((
                        "spa.pool".into(),
                        ((h / 8) * (w / 8) * h1 * 16) as u64,
                    ));
                    items.push(("spa".into(), conv_macs(h / 8, w / 8, ctx_c, h1, 1)));
                    items.push(("warp".into(), warp_macs(h, w, ctx_c, stride)));
                    items.push(("dec.conv4".into(), conv_macs(h / 4, w / 4, d2, d3, 3)));
                    items.push(("dec.proj1".into(), conv_macs(h / 2, w / 2, d2, h1, 1)));
                    items.push(("dec.conv2".into(), conv_macs(h / 2, w / 2, d1, d2, 3)));
                    items.push(("cls".into(), conv_macs(h / 2, w / 2, k, d1, 1)));
                }
                WarpLayer::Layer3 => {
                    items.push(("warp".into(), warp_macs(h, w, ctx_c, stride)));
                    items.push(("cls".into(), conv_macs(h / 2, w / 2, k, d1, 1)));
                }
            }
            if use_cfr {
                let (ch, cw) = (h / stride, w / stride);
                items.push(("cfr".into(), conv_macs(ch, cw, ctx_c, 2 * ctx_c, 3)));
                if use_rga {
                    items.push(("rga".into(), conv_macs(ch, cw, 1, 3, 1)));
                }
            }
        }
    }
    Ok(MacCount { items })
}
