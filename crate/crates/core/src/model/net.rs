//! Forward passes.
//!
//! Key-frame CNN: three stride-2 encoder stages, then a decoder with three
//! cascaded lateral connections (1x1 projection, 2x bilinear upsample,
//! conv-add fusion) and a 1x1 classifier.
//!
//! Non-key-frame CNN: retains only the head stages below the warped decoder
//! level, predicts the current context by warping the previous one, applies
//! the correction stage, and decodes through the remaining levels.

use std::time::Instant;

use super::{BackboneConfig, FeatureMap, ModelError, NetworkParams, Result, WarpLayer};
use crate::tensor::Tensor;
use crate::warp::{warp_features, ImageBuf, MotionMap, ResidualMap};

/// Stack images into an N x 3 x H x W input tensor.
pub fn images_to_tensor(images: &[&ImageBuf]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| ModelError::ConfigMismatch("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w || img.channels != 3 {
            return Err(ModelError::ConfigMismatch(format!(
                "batch images disagree: {}x{}x{} vs {h}x{w}x3",
                img.height, img.width, img.channels
            )));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_values(&[images.len(), 3, h, w], data)?)
}

fn conv(params: &NetworkParams, name: &str, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let w = params.get(&format!("{name}.w"))?;
    let b = params.get(&format!("{name}.b"))?;
    Ok(x.conv2d(w, b, stride, pad)?)
}

/// One encoder stage: stride-2 3x3 conv, then a 3x3 conv, ReLU after each.
fn head_stage(params: &NetworkParams, name: &str, x: &Tensor) -> Result<Tensor> {
    let a = conv(params, &format!("{name}.conv1"), x, 2, 1)?.relu();
    Ok(conv(params, &format!("{name}.conv2"), &a, 1, 1)?.relu())
}

#[derive(Clone, Debug)]
pub struct KeyframeOutput {
    /// N x K x H x W class logits at full resolution.
    pub logits: Tensor,
    pub p8: FeatureMap,
    pub p4: FeatureMap,
    pub p2: FeatureMap,
}

impl KeyframeOutput {
    pub fn context(&self, layer: WarpLayer) -> &FeatureMap {
        match layer {
            WarpLayer::Layer1 => &self.p4,
            WarpLayer::Layer2 => &self.p8,
            WarpLayer::Layer3 => &self.p2,
        }
    }
}

/// Full per-frame forward on a batched input tensor, returning every decoder
/// level so callers can pick any context.
pub fn keyframe_forward_all(
    input: &Tensor,
    params: &NetworkParams,
    config: &BackboneConfig,
) -> Result<KeyframeOutput> {
    let (_, _, h, w) = input.expect_4d("keyframe input")?;
    let stride = config.max_stride();
    if h % stride != 0 || w % stride != 0 {
        return Err(ModelError::BadDims { h, w, stride });
    }
    let e1 = head_stage(params, "enc1", input)?;
    let e2 = head_stage(params, "enc2", &e1)?;
    let e3 = head_stage(params, "enc3", &e2)?;
    let p8 = conv(params, "dec.proj3", &e3, 1, 0)?.relu();
    let m4 = conv(params, "dec.proj2", &e2, 1, 0)?.add(&p8.bilinear_resize(h / 4, w / 4)?)?;
    let p4 = conv(params, "dec.conv4", &m4, 1, 1)?.relu();
    let m2 = conv(params, "dec.proj1", &e1, 1, 0)?.add(&p4.bilinear_resize(h / 2, w / 2)?)?;
    let p2 = conv(params, "dec.conv2", &m2, 1, 1)?.relu();
    let logits = conv(params, "cls", &p2, 1, 0)?.bilinear_resize(h, w)?;
    Ok(KeyframeOutput {
        logits,
        p8: FeatureMap {
            tensor: p8,
            stride: 8,
        },
        p4: FeatureMap {
            tensor: p4,
            stride: 4,
        },
        p2: FeatureMap {
            tensor: p2,
            stride: 2,
        },
    })
}

/// Per-frame forward for a single image; returns logits plus the context
/// features at the configured warp layer.
pub fn keyframe_forward(
    image: &ImageBuf,
    params: &NetworkParams,
    config: &BackboneConfig,
) -> Result<(Tensor, FeatureMap)> {
    let input = images_to_tensor(&[image])?;
    let out = keyframe_forward_all(&input, params, config)?;
    let ctx = out.context(config.warp_layer).clone();
    Ok((out.logits, ctx))
}

/// Context feature rectification: a single 3x3 conv over the concatenation
/// of warped context and current spatial features, producing the
/// feature-space residual. No output activation (residuals are signed).
pub fn cfr(warped: &FeatureMap, spatial: &FeatureMap, params: &NetworkParams) -> Result<Tensor> {
    if warped.stride != spatial.stride {
        return Err(ModelError::StrideMismatch(format!(
            "warped stride {} vs spatial stride {}",
            warped.stride, spatial.stride
        )));
    }
    if warped.tensor.shape()[2..] != spatial.tensor.shape()[2..] {
        return Err(ModelError::StrideMismatch(format!(
            "warped dims {:?} vs spatial dims {:?}",
            warped.tensor.shape(),
            spatial.tensor.shape()
        )));
    }
    let joint = Tensor::concat_channels(&[&warped.tensor, &spatial.tensor])?;
    conv(params, "cfr", &joint, 1, 1)
}

/// Residual-guided attention: resize the image-space residual map to the
/// context grid and squash a 1x1 conv of it into a single-channel gate.
pub fn rga_attention(
    residual: &ResidualMap,
    target: &FeatureMap,
    params: &NetworkParams,
) -> Result<Tensor> {
    let shape = target.tensor.shape();
    let (th, tw) = (shape[2], shape[3]);
    let res = Tensor::from_values(
        &[1, ResidualMap::CHANNELS, residual.height, residual.width],
        residual.data.clone(),
    )?;
    let resized = res.bilinear_resize(th, tw)?;
    Ok(conv(params, "rga", &resized, 1, 0)?.sigmoid())
}

/// Gate the feature residual and add it onto the warped context:
/// corrected = warped + attention (.) residual.
pub fn rga_apply(
    warped: &FeatureMap,
    res_feat: &Tensor,
    attention: &Tensor,
) -> Result<FeatureMap> {
    let gated = res_feat.mul_gate(attention)?;
    Ok(FeatureMap {
        tensor: warped.tensor.add(&gated)?,
        stride: warped.stride,
    })
}

/// Wall-clock split of one non-key-frame forward.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub warp_s: f64,
    pub correction_s: f64,
    pub fusion_s: f64,
}

/// Non-key-frame forward: warp the previous context, correct it (per flags),
/// fuse with current spatial features through the remaining decoder levels.
/// Returns full-resolution logits and the corrected context to propagate.
#[allow(clippy::too_many_arguments)]
pub fn nkfc_forward(
    image: &ImageBuf,
    prev_context: &FeatureMap,
    mv: &MotionMap,
    residual: &ResidualMap,
    params: &NetworkParams,
    config: &BackboneConfig,
    use_cfr: bool,
    use_rga: bool,
    mut timings: Option<&mut StageTimings>,
) -> Result<(Tensor, FeatureMap)> {
    if use_rga && !use_cfr {
        return Err(ModelError::InvalidFlags(
            "residual-guided attention gates the rectification residual; enable CFR".into(),
        ));
    }
    if use_cfr && config.warp_layer == WarpLayer::Layer3 {
        return Err(ModelError::InvalidFlags(
            "Layer3 retains no head stages, so no spatial features exist for CFR".into(),
        ));
    }
    let stride = config.context_stride();
    if prev_context.stride != stride {
        return Err(ModelError::StrideMismatch(format!(
            "context stride {} but {:?} expects {stride}",
            prev_context.stride, config.warp_layer
        )));
    }
    let (h, w) = (image.height, image.width);
    if h % config.max_stride() != 0 || w % config.max_stride() != 0 {
        return Err(ModelError::BadDims {
            h,
            w,
            stride: config.max_stride(),
        });
    }
    let ctx_shape = prev_context.tensor.shape();
    if ctx_shape != [1, config.context_channels(), h / stride, w / stride] {
        return Err(ModelError::StrideMismatch(format!(
            "context shape {ctx_shape:?} does not match image {h}x{w} at stride {stride}"
        )));
    }
    if residual.height != h || residual.width != w {
        return Err(ModelError::ConfigMismatch(format!(
            "residual {}x{} vs image {h}x{w}",
            residual.height, residual.width
        )));
    }

    // heads and spatial features for the current frame
    let t0 = Instant::now();
    let input = images_to_tensor(&[image])?;
    let (e1, spatial) = match config.warp_layer {
        WarpLayer::Layer1 => {
            let e1 = head_stage(params, "enc1", &input)?;
            let e2 = head_stage(params, "enc2", &e1)?;
            let f = conv(params, "spa", &e2, 1, 0)?.relu();
            (Some(e1), Some(f))
        }
        WarpLayer::Layer2 => {
            let e1 = head_stage(params, "enc1", &input)?;
            let pooled = e1.avg_pool2d(4)?;
            let f = conv(params, "spa", &pooled, 1, 0)?.relu();
            (Some(e1), Some(f))
        }
        WarpLayer::Layer3 => (None, None),
    };
    let heads_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let warped = FeatureMap {
        tensor: warp_features(&prev_context.tensor, mv, stride)?,
        stride,
    };
    let warp_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let corrected = if use_cfr {
        let spatial_fm = FeatureMap {
            tensor: spatial.clone().expect("spatial features exist below Layer3"),
            stride,
        };
        let res_feat = cfr(&warped, &spatial_fm, params)?;
        if use_rga {
            let attention = rga_attention(residual, &warped, params)?;
            rga_apply(&warped, &res_feat, &attention)?
        } else {
            FeatureMap {
                tensor: warped.tensor.add(&res_feat)?,
                stride,
            }
        }
    } else {
        warped
    };
    let correction_s = t2.elapsed().as_secs_f64();

    // fusion through the remaining decoder levels
    let t3 = Instant::now();
    let logits = match config.warp_layer {
        WarpLayer::Layer1 => {
            let e1 = e1.as_ref().unwrap();
            let m2 = conv(params, "dec.proj1", e1, 1, 0)?
                .add(&corrected.tensor.bilinear_resize(h / 2, w / 2)?)?;
            let p2 = conv(params, "dec.conv2", &m2, 1, 1)?.relu();
            conv(params, "cls", &p2, 1, 0)?.bilinear_resize(h, w)?
        }
        WarpLayer::Layer2 => {
            // the e2 lateral was folded into the warped context; skip it
            let p4 = conv(
                params,
                "dec.conv4",
                &corrected.tensor.bilinear_resize(h / 4, w / 4)?,
                1,
                1,
            )?
            .relu();
            let e1 = e1.as_ref().unwrap();
            let m2 = conv(params, "dec.proj1", e1, 1, 0)?.add(&p4.bilinear_resize(h / 2, w / 2)?)?;
            let p2 = conv(params, "dec.conv2", &m2, 1, 1)?.relu();
            conv(params, "cls", &p2, 1, 0)?.bilinear_resize(h, w)?
        }
        WarpLayer::Layer3 => conv(params, "cls", &corrected.tensor, 1, 0)?.bilinear_resize(h, w)?,
    };
    let fusion_s = t3.elapsed().as_secs_f64() + heads_s;
    if let Some(t) = timings.as_mut() {
        t.warp_s = warp_s;
        t.correction_s = correction_s;
        t.fusion_s = fusion_s;
    }
    Ok((logits, corrected))
}

/// Plain warping baseline: propagate the final pre-classifier features by
/// warping alone and classify them. Uses only per-frame model parameters.
pub fn warp_forward(
    prev_final: &FeatureMap,
    mv: &MotionMap,
    key_params: &NetworkParams,
    config: &BackboneConfig,
) -> Result<(Tensor, FeatureMap)> {
    if prev_final.stride != 2 {
        return Err(ModelError::StrideMismatch(format!(
            "warp baseline propagates the stride-2 features, got stride {}",
            prev_final.stride
        )));
    }
    let shape = prev_final.tensor.shape().to_vec();
    let warped = FeatureMap {
        tensor: warp_features(&prev_final.tensor, mv, 2)?,
        stride: 2,
    };
    let logits = conv(key_params, "cls", &warped.tensor, 1, 0)?
        .bilinear_resize(shape[2] * 2, shape[3] * 2)?;
    let _ = config;
    Ok((logits, warped))
}
