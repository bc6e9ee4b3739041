use std::path::Path;
use std::process::{Command, Output};

use masklet4d::io;
use masklet4d::pipeline::load_sequence;
use serde_json::Value;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masklet4d")).args(args).current_dir(cwd).output().unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth(dir: &Path) {
    let out = bin(&["synth", "--out", "seq"], dir);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "seq/manifest.json");
}

#[test]
fn stages_resume_from_cache_and_fuse_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let m = ["--manifest", "seq/manifest.json", "--work", "w"];
    let r = ok_json(bin(&[&["reconstruct"][..], &m].concat(), dir.path()));
    assert_eq!(r["cached"], false);
    let t = ok_json(bin(&[&["raycast"][..], &m].concat(), dir.path()));
    assert_eq!(t["cached"], false);
    let f = ok_json(bin(&[&["fuse"][..], &m, &["--out", "fused"]].concat(), dir.path()));
    assert_eq!(f["cached"], false);
    let again = ok_json(bin(&[&["raycast"][..], &m].concat(), dir.path()));
    assert_eq!(again["cached"], true);
    assert_eq!(again["key"], t["key"]);

    let scores = io::read_scores(&dir.path().join("fused/scores.json")).unwrap();
    assert_eq!(scores.scores.len(), 4);
    assert!(scores.scores.values().all(|s| s.value() == Some(1.0)));

    // a fusion override reuses the cached geometry stages
    let f2 = ok_json(bin(&[&["--set", "fusion.min_pts=4", "fuse"][..], &m].concat(), dir.path()));
    assert_eq!(f2["cached"], false);
    assert_ne!(f2["key"], f["key"]);
    let r2 = ok_json(bin(&[&["--set", "fusion.min_pts=4", "reconstruct"][..], &m].concat(), dir.path()));
    assert_eq!(r2["cached"], true);
}

#[test]
fn stats_recounts_masks() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let s = ok_json(bin(&["stats", "--manifest", "seq/manifest.json", "--work", "w"], dir.path()));
    let seq = load_sequence(&dir.path().join("seq/manifest.json")).unwrap();
    let masks: usize = seq.masklets.iter().map(|m| m.frames.values().filter(|r| r.area() > 0).count()).sum();
    let images = seq.manifest.frame_count * seq.manifest.cameras.len();
    assert_eq!(s["stats"]["images"], images);
    assert_eq!(s["stats"]["masks_per_image"].as_f64().unwrap(), masks as f64 / images as f64);
    assert_eq!(s["stats"]["mean_score"], 1.0);
}

#[test]
fn eval_echoes_threshold_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = ["eval", "--manifest", "seq/manifest.json", "--work", "w", "--protocol", "online", "--iou-threshold", "0.75", "--seed", "3"];
    let a = ok_json(bin(&args, dir.path()));
    assert_eq!(a["metadata"]["iou_threshold"], 0.75);
    assert_eq!(a["metadata"]["protocol"], "online");
    assert_eq!(a["result"]["params"]["iou_threshold"], 0.75);
    let b = ok_json(bin(&args, dir.path()));
    assert_eq!(a, b);

    let p = ok_json(bin(
        &["eval", "--manifest", "seq/manifest.json", "--work", "w", "--protocol", "semi", "--prompt", "mask", "--oracle", "perfect"],
        dir.path(),
    ));
    assert_eq!(p["metadata"]["prompt"]["kind"], "mask");
    assert_eq!(p["result"]["report"]["image"]["miou"], 1.0);
    assert_eq!(p["result"]["report"]["lidar"]["nmp"], 0);
}

#[test]
fn bad_input_exits_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["fuse", "--manifest", "missing.json", "--frobnicate"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));

    let out = bin(&["fuse", "--manifest", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let out = bin(&["--set", "fusion.eps=0", "reconstruct", "--manifest", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 100]"));

    let out = bin(&["frobnicate"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn shipped_config_lists_every_default() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let shipped = std::fs::read_to_string(root.join("masklet4d.toml")).unwrap();
    let out = bin(&["config"], &root);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), shipped);
    let out = bin(&["--config", "masklet4d.toml", "--set", "fusion.eps=0.25", "config"], &root);
    assert!(String::from_utf8_lossy(&out.stdout).contains("eps = 0.25"));
}
