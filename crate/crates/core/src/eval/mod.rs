//! Metrics and experiment harnesses: mIoU over confusion matrices, the
//! key-frame-distance sweep across inference variants, analytic MAC counts,
//! and wall-clock benchmarks.

mod bench;
mod flops;

pub use bench::{bench_path, BenchReport, BenchVariant, StageMedians};
pub use flops::{count_flops, CountPath, MacCount};

use thiserror::Error;

use crate::data::{GopSequence, LabelMap, IGNORE_LABEL};
use crate::model::{
    images_to_tensor, keyframe_forward_all, nkfc_forward, warp_forward, BackboneConfig,
    ModelError, NetworkParams,
};
use crate::tensor::Tensor;

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
    #[error("label dims mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

/// K x K counts, rows = ground truth, cols = prediction. Merging is
/// associative, so partial matrices from parallel workers can be combined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn class_count(&self) -> usize {
        self.k
    }

    /// Accumulate one prediction map against ground truth; 255 is skipped.
    pub fn add_maps(&mut self, gt: &LabelMap, pred: &[u8]) -> Result<()> {
        if pred.len() != gt.ids.len() {
            return Err(EvalError::ShapeMismatch(format!(
                "prediction has {} entries, ground truth {}",
                pred.len(),
                gt.ids.len()
            )));
        }
        for (&g, &p) in gt.ids.iter().zip(pred) {
            if g == IGNORE_LABEL {
                continue;
            }
            debug_assert!((g as usize) < self.k && (p as usize) < self.k);
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Total scored pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// IoU per class; `None` where the union is empty (class absent from
    /// both ground truth and prediction).
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.counts[c * self.k + c];
                let fn_: u64 = (0..self.k)
                    .filter(|&j| j != c)
                    .map(|j| self.counts[c * self.k + j])
                    .sum();
                let fp: u64 = (0..self.k)
                    .filter(|&i| i != c)
                    .map(|i| self.counts[i * self.k + c])
                    .sum();
                let union = tp + fp + fn_;
                if union == 0 {
                    None
                } else {
                    Some(tp as f64 / union as f64)
                }
            })
            .collect()
    }

    /// Mean IoU over classes with nonzero union.
    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            None
        } else {
            Some(ious.iter().sum::<f64>() / ious.len() as f64)
        }
    }

    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let correct: u64 = (0..self.k).map(|c| self.counts[c * self.k + c]).sum();
        Some(correct as f64 / total as f64)
    }
}

#[derive(Clone, Debug)]
pub struct EvalFragment {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub scored_pixels: u64,
}

/// Score prediction maps against ground truth. Ignored pixels are excluded;
/// an evaluation with nothing scored is rejected.
pub fn miou(preds: &[LabelMap], gts: &[LabelMap], k: usize) -> Result<EvalFragment> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(EvalError::EmptyEvaluation(format!(
            "{} predictions vs {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (p, g) in preds.iter().zip(gts) {
        if p.height != g.height || p.width != g.width {
            return Err(EvalError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                p.height, p.width, g.height, g.width
            )));
        }
        cm.add_maps(g, &p.ids)?;
    }
    match cm.miou() {
        Some(m) => Ok(EvalFragment {
            per_class_iou: cm.per_class_iou(),
            miou: m,
            pixel_accuracy: cm.pixel_accuracy().unwrap_or(0.0),
            scored_pixels: cm.total(),
        }),
        None => Err(EvalError::EmptyEvaluation(
            "all pixels ignored; no classes scored".into(),
        )),
    }
}

/// Argmax over the class axis of 1 x K x H x W logits.
pub fn logits_to_labels(logits: &Tensor) -> Vec<u8> {
    let shape = logits.shape();
    let (k, h, w) = (shape[1], shape[2], shape[3]);
    let plane = h * w;
    let vals = logits.values();
    let mut out = vec![0u8; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = vals[p];
        for c in 1..k {
            let v = vals[c * plane + p];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out[p] = best as u8;
    }
    out
}

/// An inference variant evaluated by the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantKind {
    /// Chain-warp the final pre-classifier features; no current-frame input.
    RawWarp,
    /// Non-key-frame CNN with optional correction modules.
    Nkfc { cfr: bool, rga: bool },
}

impl VariantKind {
    pub fn label(&self) -> &'static str {
        match self {
            VariantKind::RawWarp => "warp",
            VariantKind::Nkfc { cfr: false, .. } => "nkfc",
            VariantKind::Nkfc {
                cfr: true,
                rga: false,
            } => "cfr",
            VariantKind::Nkfc {
                cfr: true,
                rga: true,
            } => "rga",
        }
    }

    pub fn from_label(s: &str) -> Option<VariantKind> {
        match s {
            "warp" => Some(VariantKind::RawWarp),
            "nkfc" => Some(VariantKind::Nkfc {
                cfr: false,
                rga: false,
            }),
            "cfr" => Some(VariantKind::Nkfc {
                cfr: true,
                rga: false,
            }),
            "rga" => Some(VariantKind::Nkfc {
                cfr: true,
                rga: true,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepVariant<'a> {
    pub kind: VariantKind,
    /// Trained non-key-frame parameters; unused by the raw-warp baseline.
    pub nkfc_params: Option<&'a NetworkParams>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub t: usize,
    pub variant: String,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

/// Sweep output plus per-variant class IoUs pooled over all distances >= 1.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<SweepRow>,
    pub per_class: Vec<(String, Vec<Option<f64>>)>,
    pub pooled_miou: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn miou_at(&self, variant: &str, t: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.t == t)
            .map(|r| r.miou)
    }

    pub fn pooled(&self, variant: &str) -> Option<f64> {
        self.pooled_miou
            .iter()
            .find(|(v, _)| v == variant)
            .map(|(_, m)| *m)
    }

    pub fn class_iou(&self, variant: &str, class: usize) -> Option<f64> {
        self.per_class
            .iter()
            .find(|(v, _)| v == variant)
            .and_then(|(_, ious)| ious.get(class).copied().flatten())
    }
}

fn sweep_one_sequence(
    seq: &GopSequence,
    key_params: &NetworkParams,
    config: &BackboneConfig,
    variants: &[SweepVariant],
    t_max: usize,
) -> Result<Vec<Vec<ConfusionMatrix>>> {
    // matrices[variant][t]
    let k = seq.class_count;
    let mut matrices = vec![vec![ConfusionMatrix::new(k); t_max + 1]; variants.len()];
    for key_idx in seq.key_indices() {
        let input = images_to_tensor(&[&seq.frames[key_idx].image])?;
        let key_out = keyframe_forward_all(&input, key_params, config)?;
        let key_pred = logits_to_labels(&key_out.logits);
        if let Some(label) = &seq.frames[key_idx].label {
            for m in matrices.iter_mut() {
                m[0].add_maps(label, &key_pred)?;
            }
        }
        // per-variant chained state
        let mut states: Vec<crate::model::FeatureMap> = variants
            .iter()
            .map(|v| match v.kind {
                VariantKind::RawWarp => key_out.p2.detach(),
                VariantKind::Nkfc { .. } => key_out.context(config.warp_layer).detach(),
            })
            .collect();
        for t in 1..=t_max {
            let fi = key_idx + t;
            if fi >= seq.frames.len() || seq.frames[fi].is_key() {
                break;
            }
            let frame = &seq.frames[fi];
            let mv = frame.motion.as_ref().ok_or_else(|| {
                EvalError::Invalid(format!("predicted frame {fi} lacks motion"))
            })?;
            let res = frame.residual.as_ref().ok_or_else(|| {
                EvalError::Invalid(format!("predicted frame {fi} lacks residual"))
            })?;
            for (vi, variant) in variants.iter().enumerate() {
                let (logits, next) = match variant.kind {
                    VariantKind::RawWarp => {
                        warp_forward(&states[vi], mv, key_params, config)?
                    }
                    VariantKind::Nkfc { cfr, rga } => {
                        let params = variant.nkfc_params.ok_or_else(|| {
                            EvalError::Invalid(format!(
                                "variant `{}` needs non-key-frame parameters",
                                variant.kind.label()
                            ))
                        })?;
                        nkfc_forward(
                            &frame.image,
                            &states[vi],
                            mv,
                            res,
                            params,
                            config,
                            cfr,
                            rga,
                            None,
                        )?
                    }
                };
                states[vi] = next.detach();
                if let Some(label) = &frame.label {
                    matrices[vi][t].add_maps(label, &logits_to_labels(&logits))?;
                }
            }
        }
    }
    Ok(matrices)
}

/// Evaluate each variant at every key-frame distance 0..=t_max, averaging
/// over all frames at exactly that distance. `jobs` bounds sequence-level
/// parallelism.
pub fn sweep_t(
    seqs: &[GopSequence],
    key_params: &NetworkParams,
    config: &BackboneConfig,
    variants: &[SweepVariant],
    t_max: usize,
    jobs: usize,
) -> Result<EvalReport> {
    let first = seqs
        .first()
        .ok_or_else(|| EvalError::EmptyEvaluation("no sequences".into()))?;
    if t_max >= first.gop_length {
        return Err(EvalError::BadSweep(format!(
            "t_max {} must be below gop_length {}",
            t_max, first.gop_length
        )));
    }
    if variants.is_empty() {
        return Err(EvalError::EmptyEvaluation("no variants requested".into()));
    }
    let k = first.class_count;
    let jobs = jobs.max(1).min(seqs.len().max(1));

    let mut matrices = vec![vec![ConfusionMatrix::new(k); t_max + 1]; variants.len()];
    if jobs == 1 {
        for seq in seqs {
            let partial = sweep_one_sequence(seq, key_params, config, variants, t_max)?;
            for (acc, part) in matrices.iter_mut().zip(&partial) {
                for (a, b) in acc.iter_mut().zip(part) {
                    a.merge(b);
                }
            }
        }
    } else {
        let chunks: Vec<&[GopSequence]> = seqs.chunks(seqs.len().div_ceil(jobs)).collect();
        let partials: Vec<Result<Vec<Vec<ConfusionMatrix>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut acc = vec![vec![ConfusionMatrix::new(k); t_max + 1]; variants.len()];
                        for seq in chunk {
                            let partial =
                                sweep_one_sequence(seq, key_params, config, variants, t_max)?;
                            for (a, p) in acc.iter_mut().zip(&partial) {
                                for (x, y) in a.iter_mut().zip(p) {
                                    x.merge(y);
                                }
                            }
                        }
                        Ok(acc)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for partial in partials {
            let partial = partial?;
            for (acc, part) in matrices.iter_mut().zip(&partial) {
                for (a, b) in acc.iter_mut().zip(part) {
                    a.merge(b);
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut per_class = Vec::new();
    let mut pooled_miou = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        let label = variant.kind.label().to_string();
        for (t, cm) in matrices[vi].iter().enumerate() {
            if let Some(m) = cm.miou() {
                rows.push(SweepRow {
                    t,
                    variant: label.clone(),
                    miou: m,
                    pixel_accuracy: cm.pixel_accuracy().unwrap_or(0.0),
                });
            }
        }
        let mut pooled = ConfusionMatrix::new(k);
        for cm in &matrices[vi][1..] {
            pooled.merge(cm);
        }
        if let Some(m) = pooled.miou() {
            pooled_miou.push((label.clone(), m));
        }
        per_class.push((label, pooled.per_class_iou()));
    }
    if rows.is_empty() {
        return Err(EvalError::EmptyEvaluation(
            "no labeled frames were scored".into(),
        ));
    }
    Ok(EvalReport {
        rows,
        per_class,
        pooled_miou,
    })
}
