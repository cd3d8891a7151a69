//! End-to-end tests of the `warpseg` binary: flag validation, exit codes,
//! CSV schemas, manifests, and replay.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warpseg"))
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Workdir {
        let mut p = std::env::temp_dir();
        p.push(format!(
            "warpseg-cli-{tag}-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&p).unwrap();
        Workdir(p)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn str(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn small_scene_toml() -> &'static str {
    r#"
height = 48
width = 64
class_count = 4
background_class = 0
background_color = [0.14, 0.16, 0.18]
gop_length = 6
noise_amplitude = 0.02
seed = 0

[[sprites]]
class = 1
color = [0.62, 0.32, 0.30]
shape = { kind = "rect", w = 13.0, h = 13.0 }

[[sprites]]
class = 2
color = [0.62, 0.32, 0.30]
shape = { kind = "ellipse", rx = 7.0, ry = 7.0 }

[[sprites]]
class = 3
color = [0.62, 0.32, 0.30]
shape = { kind = "ellipse", rx = 8.0, ry = 5.0 }
axis_jitter = 0.08
"#
}

fn write_scene(dir: &Workdir) -> PathBuf {
    let p = dir.path("scene.toml");
    std::fs::write(&p, small_scene_toml()).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn expect_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate(dir: &Workdir, scene: &Path, name: &str, seed: u64, gops: usize) -> PathBuf {
    let out = dir.path(name);
    let res = bin()
        .args([
            "generate",
            "--spec",
            scene.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--gops",
            &gops.to_string(),
        ])
        .output()
        .unwrap();
    ok(&res);
    out
}

#[test]
fn generate_is_seed_deterministic_and_reports_frames() {
    let dir = Workdir::new("gen");
    let scene = write_scene(&dir);
    let a = generate(&dir, &scene, "a.wsgs", 5, 2);
    let b = generate(&dir, &scene, "b.wsgs", 5, 2);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // default spec reports 12 frames per GOP
    let out = dir.path("default.wsgs");
    let res = bin()
        .args(["generate", "--out", out.to_str().unwrap(), "--gops", "2"])
        .output()
        .unwrap();
    ok(&res);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("wrote 24 frames"), "stdout: {stdout}");
}

#[test]
fn generate_zero_gops_is_usage_error() {
    let dir = Workdir::new("gen0");
    let res = bin()
        .args([
            "generate",
            "--out",
            dir.str("x.wsgs").as_str(),
            "--gops",
            "0",
        ])
        .output()
        .unwrap();
    expect_exit(&res, 1);
}

#[test]
fn generate_invalid_spec_names_offending_key() {
    let dir = Workdir::new("genbad");
    let p = dir.path("bad.toml");
    std::fs::write(&p, small_scene_toml().replace("height", "heigth")).unwrap();
    let res = bin()
        .args([
            "generate",
            "--spec",
            p.to_str().unwrap(),
            "--out",
            dir.str("x.wsgs").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 2);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("heigth"), "stderr: {stderr}");
}

#[test]
fn train_flag_validation() {
    let dir = Workdir::new("trainflags");
    let scene = write_scene(&dir);
    let data = generate(&dir, &scene, "d.wsgs", 1, 1);

    // nkfc without --key-ckpt
    let res = bin()
        .args([
            "train",
            "--phase",
            "nkfc",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.str("n.ckpt").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 1);

    // --no-cfr while RGA stays enabled
    let res = bin()
        .args([
            "train",
            "--phase",
            "nkfc",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            dir.str("missing.ckpt").as_str(),
            "--out",
            dir.str("n.ckpt").as_str(),
            "--no-cfr",
        ])
        .output()
        .unwrap();
    expect_exit(&res, 1);

    // --warp-layer accepts exactly 1..3
    for (layer, code) in [("1", 0), ("2", 0), ("3", 0), ("4", 1), ("0", 1)] {
        let res = bin()
            .args([
                "train",
                "--phase",
                "keyframe",
                "--data",
                data.to_str().unwrap(),
                "--out",
                dir.str("k.ckpt").as_str(),
                "--iters",
                "1",
                "--warp-layer",
                layer,
            ])
            .output()
            .unwrap();
        if code == 0 {
            ok(&res);
        } else {
            expect_exit(&res, code);
        }
    }
}

#[test]
fn full_pipeline_with_manifests_and_replay() {
    let dir = Workdir::new("pipeline");
    let scene = write_scene(&dir);
    let data = generate(&dir, &scene, "train.wsgs", 3, 2);

    // keyframe training: manifest records lambda1 default 10
    let key = dir.path("key.ckpt");
    let res = bin()
        .args([
            "train",
            "--phase",
            "keyframe",
            "--data",
            data.to_str().unwrap(),
            "--out",
            key.to_str().unwrap(),
            "--iters",
            "8",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    ok(&res);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path("key.ckpt.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"]["lambda1"], 10.0);
    assert_eq!(manifest["command"]["cmd"], "train");
    // atomic write leaves no temp file
    assert!(!dir.path("key.ckpt.tmp").exists());
    assert!(dir.path("key.losses.csv").exists());
    let losses = std::fs::read_to_string(dir.path("key.losses.csv")).unwrap();
    assert!(losses.starts_with("iteration,cls,reg,consist,total\n"));

    // nkfc training
    let nk = dir.path("nk.ckpt");
    let res = bin()
        .args([
            "train",
            "--phase",
            "nkfc",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--out",
            nk.to_str().unwrap(),
            "--iters",
            "8",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    ok(&res);

    // eval: 4 variants emit 4 rows per T
    let reports = dir.path("reports");
    let res = bin()
        .args([
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--nkfc-ckpt",
            nk.to_str().unwrap(),
            "--sweep-T",
            "4",
            "--out-dir",
            reports.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&res);
    let sweep = std::fs::read_to_string(reports.join("sweep_t.csv")).unwrap();
    assert_eq!(sweep.lines().next().unwrap(), "T,variant,miou");
    for t in 0..=4 {
        let rows = sweep
            .lines()
            .filter(|l| l.starts_with(&format!("{t},")))
            .count();
        assert_eq!(rows, 4, "expected 4 variant rows at T={t}\n{sweep}");
    }
    // at T=0 every variant reports the same per-frame mIoU
    let t0: Vec<&str> = sweep.lines().filter(|l| l.starts_with("0,")).collect();
    let values: Vec<&str> = t0.iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] == w[1]), "{t0:?}");

    // replay all three manifests byte-identically
    for m in [
        dir.path("train.wsgs.manifest.json"),
        dir.path("key.ckpt.manifest.json"),
        dir.path("nk.ckpt.manifest.json"),
        reports.join("eval.manifest.json"),
    ] {
        let res = bin()
            .args(["replay", "--manifest", m.to_str().unwrap()])
            .output()
            .unwrap();
        ok(&res);
        let stdout = String::from_utf8_lossy(&res.stdout);
        assert!(stdout.contains("replay ok"), "{m:?}: {stdout}");
    }
}

#[test]
fn eval_sweep_bound_and_missing_ckpt_errors() {
    let dir = Workdir::new("evalerr");
    let scene = write_scene(&dir);
    let data = generate(&dir, &scene, "d.wsgs", 1, 1); // gop_length 6
    let key = dir.path("key.ckpt");
    let res = bin()
        .args([
            "train",
            "--phase",
            "keyframe",
            "--data",
            data.to_str().unwrap(),
            "--out",
            key.to_str().unwrap(),
            "--iters",
            "2",
        ])
        .output()
        .unwrap();
    ok(&res);

    // sweep-T below gop_length succeeds (warp needs no nkfc ckpt)
    let res = bin()
        .args([
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--variants",
            "warp",
            "--sweep-T",
            "5",
            "--out-dir",
            dir.str("r1").as_str(),
        ])
        .output()
        .unwrap();
    ok(&res);
    // sweep-T == gop_length rejected as usage
    let res = bin()
        .args([
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--variants",
            "warp",
            "--sweep-T",
            "6",
            "--out-dir",
            dir.str("r2").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 1);
    // non-warp variants need an nkfc checkpoint
    let res = bin()
        .args([
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--variants",
            "warp,cfr",
            "--sweep-T",
            "2",
            "--out-dir",
            dir.str("r3").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = Workdir::new("dataerr");
    // missing file
    let res = bin()
        .args([
            "train",
            "--phase",
            "keyframe",
            "--data",
            dir.str("absent.wsgs").as_str(),
            "--out",
            dir.str("k.ckpt").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 2);

    // corrupted container
    let scene = write_scene(&dir);
    let data = generate(&dir, &scene, "d.wsgs", 1, 1);
    let mut bytes = std::fs::read(&data).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&data, bytes).unwrap();
    let res = bin()
        .args([
            "train",
            "--phase",
            "keyframe",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.str("k.ckpt").as_str(),
        ])
        .output()
        .unwrap();
    expect_exit(&res, 2);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("checksum"), "stderr: {stderr}");
}

#[test]
fn bench_csv_schema_and_mac_ratio() {
    let dir = Workdir::new("bench");
    let scene = write_scene(&dir);
    let data = generate(&dir, &scene, "d.wsgs", 1, 1);
    let key = dir.path("key.ckpt");
    let res = bin()
        .args([
            "train",
            "--phase",
            "keyframe",
            "--data",
            data.to_str().unwrap(),
            "--out",
            key.to_str().unwrap(),
            "--iters",
            "2",
        ])
        .output()
        .unwrap();
    ok(&res);
    let out = dir.path("bench.csv");
    let res = bin()
        .args([
            "bench",
            "--data",
            data.to_str().unwrap(),
            "--key-ckpt",
            key.to_str().unwrap(),
            "--repeats",
            "2",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&res);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "path,variant,macs,median_ms,p95_ms");
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    let key_macs: u64 = rows
        .iter()
        .find(|r| r[0] == "key")
        .expect("key row")
        .get(2)
        .unwrap()
        .parse()
        .unwrap();
    let nonkey_macs: u64 = rows
        .iter()
        .find(|r| r[0] == "nkfc")
        .expect("non-key row")
        .get(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(nonkey_macs < key_macs);
}
