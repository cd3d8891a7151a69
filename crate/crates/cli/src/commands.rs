//! Subcommand argument parsing, resolution into replayable command specs,
//! and execution.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use warpseg_core::data::{
    default_scene, generate_sequence, load_sequence, save_sequence, GopSequence, SceneSpec,
};
use warpseg_core::eval::{
    bench_path, count_flops, sweep_t, BenchVariant, CountPath, SweepVariant, VariantKind,
};
use warpseg_core::model::{
    load_checkpoint, save_checkpoint, BackboneConfig, Checkpoint, WarpLayer,
};
use warpseg_core::train::{train_keyframe, train_nkfc, LossRecord, TrainConfig};

use crate::manifest::{artifact, file_crc32, manifest_path_for, ArtifactRef, RunManifest};
use crate::{CliError, Result};

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic compressed-domain sequence file.
    Generate(GenerateArgs),
    /// Train the per-frame model or the non-key-frame modules.
    Train(TrainArgs),
    /// Evaluate checkpoints: per-class IoU and the key-distance sweep.
    Eval(EvalArgs),
    /// Measure per-path latency and analytic MAC counts.
    Bench(BenchArgs),
    /// Re-execute a recorded run and verify artifact checksums.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Scene description (TOML). Omit for the built-in default scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output sequence file.
    #[arg(long)]
    pub out: PathBuf,
    /// Generation seed; overrides the seed in the scene file.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of GOPs to render.
    #[arg(long, default_value_t = 1)]
    pub gops: usize,
    /// Override the scene's noise amplitude.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Override the scene's GOP length.
    #[arg(long)]
    pub gop_length: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Keyframe,
    Nkfc,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training step: the per-frame model, or the non-key-frame modules.
    #[arg(long, value_enum)]
    pub phase: Phase,
    /// Training sequence file(s).
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Frozen per-frame checkpoint (required for the nkfc phase).
    #[arg(long)]
    pub key_ckpt: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Decoder level whose features are warped across frames.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub warp_layer: u8,
    /// Consistency-loss weight.
    #[arg(long, default_value_t = 10.0)]
    pub lambda1: f64,
    /// Weight-decay coefficient.
    #[arg(long, default_value_t = 1e-7)]
    pub lambda0: f64,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable the context feature rectification module.
    #[arg(long)]
    pub no_cfr: bool,
    /// Disable residual-guided attention.
    #[arg(long)]
    pub no_rga: bool,
    /// Freeze the copied head stages during the nkfc phase.
    #[arg(long)]
    pub freeze_heads: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Evaluation sequence file(s).
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub key_ckpt: PathBuf,
    #[arg(long)]
    pub nkfc_ckpt: Option<PathBuf>,
    /// Maximum key-frame distance to evaluate.
    #[arg(long = "sweep-T", default_value_t = 8)]
    pub sweep_t: usize,
    /// Comma-separated inference variants: warp,nkfc,cfr,rga.
    #[arg(long, value_delimiter = ',', default_value = "warp,nkfc,cfr,rga")]
    pub variants: Vec<String>,
    /// Report directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sequence-level parallelism bound.
    #[arg(long, default_value_t = 2)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sequence file to run.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub key_ckpt: PathBuf,
    #[arg(long)]
    pub nkfc_ckpt: Option<PathBuf>,
    /// Timed passes over the sequence.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Comma-separated paths to time: keyframe,warp,nkfc,cfr,rga.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Output CSV (path,variant,macs,median_ms,p95_ms).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest of the run to reproduce.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Fully resolved, serializable form of a run; what manifests record and
/// replay re-executes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum CommandSpec {
    Generate {
        scene: SceneSpec,
        gops: usize,
        out: String,
    },
    Train {
        phase: Phase,
        data: Vec<String>,
        key_ckpt: Option<String>,
        out: String,
        warp_layer: u8,
        lambda1: f64,
        lambda0: f64,
        lr: f64,
        iters: usize,
        batch: usize,
        seed: u64,
        use_cfr: bool,
        use_rga: bool,
        fine_tune_heads: bool,
    },
    Eval {
        data: Vec<String>,
        key_ckpt: String,
        nkfc_ckpt: Option<String>,
        sweep_t: usize,
        variants: Vec<String>,
        out_dir: String,
        jobs: usize,
    },
    Bench {
        data: String,
        key_ckpt: String,
        nkfc_ckpt: Option<String>,
        repeats: usize,
        variants: Vec<String>,
        out: String,
    },
}

impl CommandSpec {
    pub fn seed(&self) -> u64 {
        match self {
            CommandSpec::Generate { scene, .. } => scene.seed,
            CommandSpec::Train { seed, .. } => *seed,
            CommandSpec::Eval { .. } | CommandSpec::Bench { .. } => 0,
        }
    }
}

fn read_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read scene {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Data(format!("invalid scene spec: {e}")))
}

pub fn resolve_generate(args: &GenerateArgs) -> Result<CommandSpec> {
    if args.gops == 0 {
        return Err(CliError::Usage("--gops must be at least 1".into()));
    }
    let mut scene = match &args.spec {
        Some(path) => read_scene(path)?,
        None => default_scene(args.seed),
    };
    scene.seed = args.seed;
    if let Some(noise) = args.noise {
        scene.noise_amplitude = noise;
    }
    if let Some(g) = args.gop_length {
        scene.gop_length = g;
    }
    Ok(CommandSpec::Generate {
        scene,
        gops: args.gops,
        out: args.out.display().to_string(),
    })
}

pub fn resolve_train(args: &TrainArgs) -> Result<CommandSpec> {
    if args.phase == Phase::Nkfc && args.key_ckpt.is_none() {
        return Err(CliError::Usage(
            "--phase nkfc requires --key-ckpt".into(),
        ));
    }
    if args.no_cfr && !args.no_rga {
        return Err(CliError::Usage(
            "--no-cfr requires --no-rga: attention gates the rectification residual".into(),
        ));
    }
    Ok(CommandSpec::Train {
        phase: args.phase,
        data: args.data.iter().map(|p| p.display().to_string()).collect(),
        key_ckpt: args.key_ckpt.as_ref().map(|p| p.display().to_string()),
        out: args.out.display().to_string(),
        warp_layer: args.warp_layer,
        lambda1: args.lambda1,
        lambda0: args.lambda0,
        lr: args.lr,
        iters: args.iters,
        batch: args.batch,
        seed: args.seed,
        use_cfr: !args.no_cfr,
        use_rga: !args.no_rga,
        fine_tune_heads: !args.freeze_heads,
    })
}

pub fn resolve_eval(args: &EvalArgs) -> Result<CommandSpec> {
    for v in &args.variants {
        if VariantKind::from_label(v).is_none() {
            return Err(CliError::Usage(format!(
                "unknown variant `{v}` (expected warp,nkfc,cfr,rga)"
            )));
        }
    }
    let needs_nkfc = args.variants.iter().any(|v| v != "warp");
    if needs_nkfc && args.nkfc_ckpt.is_none() {
        return Err(CliError::Usage(
            "variants other than `warp` require --nkfc-ckpt".into(),
        ));
    }
    Ok(CommandSpec::Eval {
        data: args.data.iter().map(|p| p.display().to_string()).collect(),
        key_ckpt: args.key_ckpt.display().to_string(),
        nkfc_ckpt: args.nkfc_ckpt.as_ref().map(|p| p.display().to_string()),
        sweep_t: args.sweep_t,
        variants: args.variants.clone(),
        out_dir: args.out_dir.display().to_string(),
        jobs: args.jobs.max(1),
    })
}

pub fn resolve_bench(args: &BenchArgs) -> Result<CommandSpec> {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let variants = match &args.variants {
        Some(v) => v.clone(),
        None => {
            let mut v = vec!["keyframe".to_string(), "warp".to_string()];
            if args.nkfc_ckpt.is_some() {
                v.extend(["nkfc".into(), "cfr".into(), "rga".into()]);
            }
            v
        }
    };
    for v in &variants {
        if parse_bench_variant(v).is_none() {
            return Err(CliError::Usage(format!(
                "unknown bench variant `{v}` (expected keyframe,warp,nkfc,cfr,rga)"
            )));
        }
        if v != "keyframe" && v != "warp" && args.nkfc_ckpt.is_none() {
            return Err(CliError::Usage(format!(
                "bench variant `{v}` requires --nkfc-ckpt"
            )));
        }
    }
    Ok(CommandSpec::Bench {
        data: args.data.display().to_string(),
        key_ckpt: args.key_ckpt.display().to_string(),
        nkfc_ckpt: args.nkfc_ckpt.as_ref().map(|p| p.display().to_string()),
        repeats: args.repeats,
        variants,
        out: args.out.display().to_string(),
    })
}

fn parse_bench_variant(label: &str) -> Option<BenchVariant> {
    match label {
        "keyframe" => Some(BenchVariant::Keyframe),
        "warp" => Some(BenchVariant::RawWarp),
        "nkfc" => Some(BenchVariant::Nkfc {
            cfr: false,
            rga: false,
        }),
        "cfr" => Some(BenchVariant::Nkfc {
            cfr: true,
            rga: false,
        }),
        "rga" => Some(BenchVariant::Nkfc {
            cfr: true,
            rga: true,
        }),
        _ => None,
    }
}

fn load_data(paths: &[String]) -> Result<(Vec<GopSequence>, Vec<ArtifactRef>)> {
    let mut seqs = Vec::with_capacity(paths.len());
    let mut inputs = Vec::with_capacity(paths.len());
    for p in paths {
        let path = Path::new(p);
        seqs.push(load_sequence(path)?);
        inputs.push(artifact(path, true)?);
    }
    Ok((seqs, inputs))
}

fn load_ckpt(path: &str) -> Result<(Checkpoint, ArtifactRef)> {
    let p = Path::new(path);
    let ck = load_checkpoint(p)?;
    let a = artifact(p, true)?;
    Ok((ck, a))
}

fn check_ckpt_against_data(ck: &BackboneConfig, seqs: &[GopSequence]) -> Result<()> {
    for seq in seqs {
        if seq.class_count != ck.class_count {
            return Err(CliError::Data(format!(
                "class-count mismatch: checkpoint has {}, data has {}",
                ck.class_count, seq.class_count
            )));
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents.as_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn losses_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("iteration,cls,reg,consist,total\n");
    for r in curve {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12},{:.12}\n",
            r.iteration, r.cls, r.reg, r.consist, r.total
        ));
    }
    out
}

/// Execution result: manifest pieces plus human-readable summary lines.
pub struct RunOutcome {
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub summary: Vec<String>,
}

pub fn execute(spec: &CommandSpec) -> Result<RunOutcome> {
    match spec {
        CommandSpec::Generate { scene, gops, out } => run_generate(scene, *gops, out),
        CommandSpec::Train { .. } => run_train(spec),
        CommandSpec::Eval { .. } => run_eval(spec),
        CommandSpec::Bench { .. } => run_bench(spec),
    }
}

fn run_generate(scene: &SceneSpec, gops: usize, out: &str) -> Result<RunOutcome> {
    let seq = generate_sequence(scene, gops)?;
    let out_path = Path::new(out);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_sequence(&seq, out_path)?;
    let mut res_sum = 0.0;
    let mut res_max: f64 = 0.0;
    let mut res_count = 0usize;
    for f in &seq.frames {
        if let Some(r) = &f.residual {
            res_sum += r.data.iter().map(|v| v.abs()).sum::<f64>();
            res_max = r.data.iter().fold(res_max, |m, v| m.max(v.abs()));
            res_count += r.data.len();
        }
    }
    let mean_res = if res_count > 0 {
        res_sum / res_count as f64
    } else {
        0.0
    };
    Ok(RunOutcome {
        inputs: vec![],
        outputs: vec![artifact(out_path, true)?],
        summary: vec![
            format!(
                "wrote {} frames ({} GOPs x {}), {} classes, {}x{}",
                seq.frames.len(),
                gops,
                scene.gop_length,
                scene.class_count,
                scene.height,
                scene.width
            ),
            format!(
                "residual energy: mean |res| = {mean_res:.6}, max |res| = {res_max:.6}"
            ),
        ],
    })
}

fn run_train(spec: &CommandSpec) -> Result<RunOutcome> {
    let CommandSpec::Train {
        phase,
        data,
        key_ckpt,
        out,
        warp_layer,
        lambda1,
        lambda0,
        lr,
        iters,
        batch,
        seed,
        use_cfr,
        use_rga,
        fine_tune_heads,
    } = spec
    else {
        unreachable!()
    };
    let (seqs, mut inputs) = load_data(data)?;
    let layer = WarpLayer::from_index(*warp_layer as usize)
        .ok_or_else(|| CliError::Usage(format!("warp layer {warp_layer} out of range")))?;
    let mut cfg = TrainConfig::new(*iters, *seed);
    cfg.lr = *lr;
    cfg.lambda0 = *lambda0;
    cfg.lambda1 = *lambda1;
    cfg.batch_size = *batch;
    cfg.warp_layer = layer;
    // correction flags only apply to the non-key-frame step
    cfg.use_cfr = *use_cfr && *phase == Phase::Nkfc;
    cfg.use_rga = *use_rga && *phase == Phase::Nkfc;
    cfg.fine_tune_heads = *fine_tune_heads;

    let class_count = seqs
        .first()
        .map(|s| s.class_count)
        .ok_or_else(|| CliError::Usage("no training data given".into()))?;
    let mut bb = BackboneConfig::new(class_count);
    bb.warp_layer = layer;

    let (params, curve) = match phase {
        Phase::Keyframe => train_keyframe(&seqs, &cfg)?,
        Phase::Nkfc => {
            let key_path = key_ckpt.as_ref().expect("validated at resolution");
            let (key, key_art) = load_ckpt(key_path)?;
            check_ckpt_against_data(&key.config, &seqs)?;
            if key.config.head_channels != bb.head_channels
                || key.config.decoder_channels != bb.decoder_channels
            {
                return Err(CliError::Data(format!(
                    "checkpoint architecture {:?}/{:?} differs from expected {:?}/{:?}",
                    key.config.head_channels,
                    key.config.decoder_channels,
                    bb.head_channels,
                    bb.decoder_channels
                )));
            }
            inputs.push(key_art);
            train_nkfc(&seqs, &key.params, &cfg)?
        }
    };

    let out_path = Path::new(out);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(out_path, &bb, &params)?;
    let losses_path = out_path.with_extension("losses.csv");
    write_atomic(&losses_path, &losses_csv(&curve))?;

    let first = curve.first().map(|r| r.total).unwrap_or(0.0);
    let last = curve.last().map(|r| r.total).unwrap_or(0.0);
    Ok(RunOutcome {
        inputs,
        outputs: vec![artifact(out_path, true)?, artifact(&losses_path, true)?],
        summary: vec![format!(
            "trained {} iterations; loss {:.4} -> {:.4}; checkpoint {}",
            iters, first, last, out
        )],
    })
}

fn run_eval(spec: &CommandSpec) -> Result<RunOutcome> {
    let CommandSpec::Eval {
        data,
        key_ckpt,
        nkfc_ckpt,
        sweep_t: t_max,
        variants,
        out_dir,
        jobs,
    } = spec
    else {
        unreachable!()
    };
    let (seqs, mut inputs) = load_data(data)?;
    let (key, key_art) = load_ckpt(key_ckpt)?;
    inputs.push(key_art);
    check_ckpt_against_data(&key.config, &seqs)?;
    let nkfc = match nkfc_ckpt {
        Some(p) => {
            let (ck, art) = load_ckpt(p)?;
            inputs.push(art);
            if ck.config != key.config {
                return Err(CliError::Data(format!(
                    "non-key checkpoint config {:?} differs from per-frame config {:?}",
                    ck.config, key.config
                )));
            }
            Some(ck)
        }
        None => None,
    };

    let kinds: Vec<VariantKind> = variants
        .iter()
        .map(|v| VariantKind::from_label(v).expect("validated at resolution"))
        .collect();
    let sweep_variants: Vec<SweepVariant> = kinds
        .iter()
        .map(|k| SweepVariant {
            kind: *k,
            nkfc_params: nkfc.as_ref().map(|c| &c.params),
        })
        .collect();
    let report = sweep_t(&seqs, &key.params, &key.config, &sweep_variants, *t_max, *jobs)?;

    let mut sweep_csv = String::from("T,variant,miou\n");
    for row in &report.rows {
        sweep_csv.push_str(&format!("{},{},{:.6}\n", row.t, row.variant, row.miou));
    }
    let mut class_csv = String::from("class,variant,iou\n");
    for (variant, ious) in &report.per_class {
        for (class, iou) in ious.iter().enumerate() {
            if let Some(v) = iou {
                class_csv.push_str(&format!("{class},{variant},{v:.6}\n"));
            }
        }
    }
    let dir = Path::new(out_dir);
    std::fs::create_dir_all(dir)?;
    let sweep_path = dir.join("sweep_t.csv");
    let class_path = dir.join("per_class_iou.csv");
    write_atomic(&sweep_path, &sweep_csv)?;
    write_atomic(&class_path, &class_csv)?;

    let mut summary = Vec::new();
    for (v, m) in &report.pooled_miou {
        let at0 = report.miou_at(v, 0).unwrap_or(f64::NAN);
        summary.push(format!(
            "{v}: mIoU {:.4} pooled over T=1..{t_max} (per-frame T=0: {:.4})",
            m, at0
        ));
    }
    Ok(RunOutcome {
        inputs,
        outputs: vec![artifact(&sweep_path, true)?, artifact(&class_path, true)?],
        summary,
    })
}

fn run_bench(spec: &CommandSpec) -> Result<RunOutcome> {
    let CommandSpec::Bench {
        data,
        key_ckpt,
        nkfc_ckpt,
        repeats,
        variants,
        out,
    } = spec
    else {
        unreachable!()
    };
    let (seqs, mut inputs) = load_data(std::slice::from_ref(data))?;
    let seq = &seqs[0];
    let (key, key_art) = load_ckpt(key_ckpt)?;
    inputs.push(key_art);
    check_ckpt_against_data(&key.config, std::slice::from_ref(seq))?;
    let nkfc = match nkfc_ckpt {
        Some(p) => {
            let (ck, art) = load_ckpt(p)?;
            inputs.push(art);
            Some(ck)
        }
        None => None,
    };

    let (h, w) = (seq.height(), seq.width());
    let mut csv = String::from("path,variant,macs,median_ms,p95_ms\n");
    let mut summary = Vec::new();
    for label in variants {
        let variant = parse_bench_variant(label).expect("validated at resolution");
        let macs = match variant {
            BenchVariant::Keyframe => {
                count_flops(&key.config, h, w, CountPath::Keyframe, false, false)?
            }
            BenchVariant::RawWarp => {
                // structurally the Layer3 path: warp the final features, classify
                let mut cfg = key.config.clone();
                cfg.warp_layer = WarpLayer::Layer3;
                count_flops(&cfg, h, w, CountPath::Nkfc, false, false)?
            }
            BenchVariant::Nkfc { cfr, rga } => {
                count_flops(&key.config, h, w, CountPath::Nkfc, cfr, rga)?
            }
        };
        let report = bench_path(
            seq,
            &key.params,
            nkfc.as_ref().map(|c| &c.params),
            &key.config,
            variant,
            *repeats,
        )?;
        csv.push_str(&format!(
            "{},{},{},{:.4},{:.4}\n",
            report.path,
            report.variant,
            macs.total(),
            report.median_ms,
            report.p95_ms
        ));
        let stage_note = report
            .stages
            .map(|s| {
                format!(
                    " (warp {:.3} ms, correction {:.3} ms, fusion {:.3} ms)",
                    s.warp_ms, s.correction_ms, s.fusion_ms
                )
            })
            .unwrap_or_default();
        summary.push(format!(
            "{}/{}: {} MACs, median {:.3} ms, p95 {:.3} ms over {} samples{}",
            report.path,
            report.variant,
            macs.total(),
            report.median_ms,
            report.p95_ms,
            report.samples_ms.len(),
            stage_note
        ));
    }
    let out_path = Path::new(out);
    write_atomic(out_path, &csv)?;
    Ok(RunOutcome {
        inputs,
        // wall-clock columns are measurements; bytes are not reproducible
        outputs: vec![artifact(out_path, false)?],
        summary,
    })
}

/// Run a resolved command, write its manifest, and print the summary.
pub fn run_and_record(spec: CommandSpec, manifest_out: Option<PathBuf>) -> Result<()> {
    let started = Instant::now();
    let outcome = execute(&spec)?;
    let duration = started.elapsed().as_secs_f64();
    let manifest_path = manifest_out.unwrap_or_else(|| default_manifest_path(&spec));
    let manifest = RunManifest::new(
        spec,
        0,
        outcome.inputs.clone(),
        outcome.outputs.clone(),
        duration,
    );
    let manifest = RunManifest {
        seed: manifest.command.seed(),
        ..manifest
    };
    manifest.save(&manifest_path)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn default_manifest_path(spec: &CommandSpec) -> PathBuf {
    match spec {
        CommandSpec::Generate { out, .. }
        | CommandSpec::Train { out, .. }
        | CommandSpec::Bench { out, .. } => manifest_path_for(Path::new(out)),
        CommandSpec::Eval { out_dir, .. } => Path::new(out_dir).join("eval.manifest.json"),
    }
}

/// Re-execute a recorded run; verify inputs beforehand and deterministic
/// outputs afterwards.
pub fn replay(manifest_path: &Path) -> Result<()> {
    let recorded = RunManifest::load(manifest_path)?;
    for input in &recorded.inputs {
        let path = Path::new(&input.path);
        let crc = file_crc32(path)?;
        if crc != input.crc32 {
            return Err(CliError::Data(format!(
                "input {} changed since the recorded run (crc {:08x} != {:08x})",
                input.path, crc, input.crc32
            )));
        }
    }
    let outcome = execute(&recorded.command)?;
    let mut failures = Vec::new();
    for expected in &recorded.outputs {
        let produced = outcome
            .outputs
            .iter()
            .find(|a| a.path == expected.path);
        match produced {
            None => failures.push(format!("{} was not produced", expected.path)),
            Some(a) if expected.deterministic && a.crc32 != expected.crc32 => {
                failures.push(format!(
                    "{}: crc {:08x} != recorded {:08x}",
                    expected.path, a.crc32, expected.crc32
                ));
            }
            Some(a) => {
                let kind = if expected.deterministic {
                    "byte-identical"
                } else {
                    "re-measured"
                };
                println!("replayed {} ({kind})", a.path);
            }
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(format!(
            "replay diverged: {}",
            failures.join("; ")
        )));
    }
    println!("replay ok: {} artifact(s) verified", recorded.outputs.len());
    Ok(())
}
