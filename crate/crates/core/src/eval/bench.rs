//! Wall-clock benchmarks of the inference paths, with per-stage sub-timers
//! for the non-key path.

use std::time::Instant;

use super::{EvalError, Result};
use crate::data::{FrameKind, GopSequence};
use crate::model::{
    images_to_tensor, keyframe_forward_all, nkfc_forward, warp_forward, BackboneConfig,
    NetworkParams, StageTimings,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchVariant {
    /// Per-frame model on every frame.
    Keyframe,
    /// Chain-warp of final features across predicted frames.
    RawWarp,
    /// Non-key-frame CNN with the given correction flags.
    Nkfc { cfr: bool, rga: bool },
}

impl BenchVariant {
    pub fn label(&self) -> &'static str {
        match self {
            BenchVariant::Keyframe => "keyframe",
            BenchVariant::RawWarp => "warp",
            BenchVariant::Nkfc { cfr: false, .. } => "nkfc",
            BenchVariant::Nkfc {
                cfr: true,
                rga: false,
            } => "cfr",
            BenchVariant::Nkfc {
                cfr: true,
                rga: true,
            } => "rga",
        }
    }

    pub fn path(&self) -> &'static str {
        match self {
            BenchVariant::Keyframe => "key",
            _ => "nkfc",
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StageMedians {
    pub warp_ms: f64,
    pub correction_ms: f64,
    pub fusion_ms: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub variant: String,
    pub path: String,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Sub-timers for the non-key path (absent for the per-frame path).
    pub stages: Option<StageMedians>,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn percentile95(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Time one inference variant over the sequence. One untimed warm-up pass
/// runs first; then `repeats` timed passes pool per-frame samples.
pub fn bench_path(
    seq: &GopSequence,
    key_params: &NetworkParams,
    nkfc_params: Option<&NetworkParams>,
    config: &BackboneConfig,
    variant: BenchVariant,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(EvalError::Invalid("repeats must be >= 1".into()));
    }
    if seq.frames.is_empty() {
        return Err(EvalError::EmptyEvaluation("empty sequence".into()));
    }
    if matches!(variant, BenchVariant::Nkfc { .. }) && nkfc_params.is_none() {
        return Err(EvalError::Invalid(format!(
            "variant `{}` needs non-key-frame parameters",
            variant.label()
        )));
    }

    let mut samples: Vec<f64> = Vec::new();
    let mut stage_samples: Vec<StageTimings> = Vec::new();
    for pass in 0..repeats + 1 {
        let timed = pass > 0; // first pass warms up caches and allocators
        match variant {
            BenchVariant::Keyframe => {
                for frame in &seq.frames {
                    let t0 = Instant::now();
                    let input = images_to_tensor(&[&frame.image])?;
                    let out = keyframe_forward_all(&input, key_params, config)?;
                    std::hint::black_box(out.logits.values());
                    if timed {
                        samples.push(t0.elapsed().as_secs_f64() * 1e3);
                    }
                }
            }
            BenchVariant::RawWarp | BenchVariant::Nkfc { .. } => {
                let mut state = None;
                for frame in &seq.frames {
                    if frame.kind == FrameKind::Intra {
                        let input = images_to_tensor(&[&frame.image])?;
                        let out = keyframe_forward_all(&input, key_params, config)?;
                        state = Some(match variant {
                            BenchVariant::RawWarp => out.p2.detach(),
                            _ => out.context(config.warp_layer).detach(),
                        });
                        continue;
                    }
                    let prev = state.as_ref().expect("sequence starts with a key frame");
                    let mv = frame.motion.as_ref().unwrap();
                    let res = frame.residual.as_ref().unwrap();
                    let mut timings = StageTimings::default();
                    let t0 = Instant::now();
                    let (logits, next) = match variant {
                        BenchVariant::RawWarp => {
                            let tw = Instant::now();
                            let out = warp_forward(prev, mv, key_params, config)?;
                            timings.warp_s = tw.elapsed().as_secs_f64();
                            out
                        }
                        BenchVariant::Nkfc { cfr, rga } => nkfc_forward(
                            &frame.image,
                            prev,
                            mv,
                            res,
                            nkfc_params.unwrap(),
                            config,
                            cfr,
                            rga,
                            Some(&mut timings),
                        )?,
                        BenchVariant::Keyframe => unreachable!(),
                    };
                    std::hint::black_box(logits.values());
                    let elapsed = t0.elapsed().as_secs_f64() * 1e3;
                    state = Some(next.detach());
                    if timed {
                        samples.push(elapsed);
                        stage_samples.push(timings);
                    }
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(EvalError::EmptyEvaluation(format!(
            "no frames timed for `{}`",
            variant.label()
        )));
    }

    let mut sorted = samples.clone();
    let med = median(&mut sorted);
    let p95 = percentile95(&sorted);
    let stages = if stage_samples.is_empty() {
        None
    } else {
        let mut warp: Vec<f64> = stage_samples.iter().map(|s| s.warp_s * 1e3).collect();
        let mut corr: Vec<f64> = stage_samples.iter().map(|s| s.correction_s * 1e3).collect();
        let mut fus: Vec<f64> = stage_samples.iter().map(|s| s.fusion_s * 1e3).collect();
        Some(StageMedians {
            warp_ms: median(&mut warp),
            correction_ms: median(&mut corr),
            fusion_ms: median(&mut fus),
        })
    };
    Ok(BenchReport {
        variant: variant.label().to_string(),
        path: variant.path().to_string(),
        samples_ms: samples,
        median_ms: med,
        p95_ms: p95,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_scene, generate_sequence};
    use crate::model::{init_keyframe_params, init_nkfc_params};

    #[test]
    fn single_repeat_single_sample_stats() {
        let mut spec = default_scene(1);
        spec.height = 32;
        spec.width = 32;
        spec.sprites.truncate(1);
        spec.sprites[0].shape = crate::data::SpriteShape::Rect { w: 8.0, h: 8.0 };
        spec.gop_length = 1; // one key frame only
        let seq = generate_sequence(&spec, 1).unwrap();
        let config = crate::model::BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 1);
        let report =
            bench_path(&seq, &key, None, &config, BenchVariant::Keyframe, 1).unwrap();
        assert_eq!(report.samples_ms.len(), 1);
        assert_eq!(report.median_ms, report.p95_ms);
        assert_eq!(report.median_ms, report.samples_ms[0]);
    }

    #[test]
    fn stage_timers_sum_below_total() {
        let mut spec = default_scene(2);
        spec.height = 48;
        spec.width = 64;
        spec.gop_length = 4;
        let seq = generate_sequence(&spec, 1).unwrap();
        let config = crate::model::BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 2);
        let nk = init_nkfc_params(&key, &config, 2).unwrap();
        let report = bench_path(
            &seq,
            &key,
            Some(&nk),
            &config,
            BenchVariant::Nkfc {
                cfr: true,
                rga: true,
            },
            2,
        )
        .unwrap();
        let stages = report.stages.unwrap();
        let sub_sum = stages.warp_ms + stages.correction_ms + stages.fusion_ms;
        assert!(
            sub_sum <= report.median_ms * 1.05,
            "stages {sub_sum:.3} vs median {:.3}",
            report.median_ms
        );
        assert!(report.samples_ms.len() >= 6);
    }

    #[test]
    fn repeats_multiply_samples() {
        let mut spec = default_scene(3);
        spec.height = 32;
        spec.width = 32;
        spec.sprites.truncate(1);
        spec.sprites[0].shape = crate::data::SpriteShape::Rect { w: 8.0, h: 8.0 };
        spec.gop_length = 1;
        let seq = generate_sequence(&spec, 2).unwrap();
        let config = crate::model::BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 3);
        let report =
            bench_path(&seq, &key, None, &config, BenchVariant::Keyframe, 5).unwrap();
        assert_eq!(report.samples_ms.len(), 10); // 2 frames x 5 passes
    }

    #[test]
    fn nkfc_variant_requires_params() {
        let spec = default_scene(4);
        let seq = generate_sequence(&spec, 1).unwrap();
        let config = crate::model::BackboneConfig::new(4);
        let key = init_keyframe_params(&config, 4);
        assert!(bench_path(
            &seq,
            &key,
            None,
            &config,
            BenchVariant::Nkfc {
                cfr: false,
                rga: false
            },
            1
        )
        .is_err());
    }
}
