use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundkit::data::read_dataset;
use groundkit::rulekit::SplitSpec;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundkit"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth_into(dir: &Path, n: usize, seed: u64) {
    let out = bin()
        .args(["synth", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out"])
        .arg(dir)
        .output()
        .unwrap();
    json_out(&out);
}

#[test]
fn help_and_bad_arguments() {
    assert!(bin().arg("--help").output().unwrap().status.success());
    let out = bin().args(["synth", "--n", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_baseline_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 20, 0);
    let out = bin()
        .args(["baseline", "--name", "oracle", "--data"])
        .arg(dir.path().join("train.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(out.stderr.trim_ascii_end()).unwrap();
    assert_eq!(line["error"], "usage");
}

#[test]
fn synth_split_and_stats_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 200, 3);
    let train = read_dataset(dir.path().join("train.jsonl")).unwrap();
    let test = read_dataset(dir.path().join("test.jsonl")).unwrap();
    assert_eq!(train.samples.len() + test.samples.len(), 200);
    // membership is a per-id hash, so the held-out share is only near 0.2
    let spec = SplitSpec {
        train: 0.8,
        validation: 0.0,
        test: 0.2,
        seed: 3,
    };
    assert!(test.samples.iter().all(|s| spec.unit_hash(&s.sample_id) >= 0.8));
    assert!(train.samples.iter().all(|s| spec.unit_hash(&s.sample_id) < 0.8));
    assert!((20..60).contains(&test.samples.len()), "{}", test.samples.len());
    let n = train.samples.len();
    let stats = json_out(&bin().arg("stats").arg("--data").arg(dir.path().join("train.jsonl")).output().unwrap());
    assert_eq!(stats["samples"], n);
    let persons: usize = train.samples.iter().map(|s| s.image.persons.len()).sum();
    let mean = stats["mean_persons_per_image"].as_f64().unwrap();
    assert!((mean - persons as f64 / n as f64).abs() < 1e-12);
    let types = stats["commonsense_types"].as_object().unwrap();
    assert_eq!(types.values().map(|v| v.as_u64().unwrap()).sum::<u64>(), n as u64);
}

#[test]
fn heuristic_baseline_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 2000, 7);
    let data = dir.path().join("dataset.jsonl");
    let samples = read_dataset(&data).unwrap().samples;
    let chance = samples.iter().map(|s| 1.0 / s.image.persons.len() as f64).sum::<f64>() / samples.len() as f64;
    for name in ["left_to_right", "big_to_small", "random"] {
        let r = json_out(&bin().args(["baseline", "--name", name, "--data"]).arg(&data).output().unwrap());
        let acc = r["overall"]["accuracy"].as_f64().unwrap();
        assert!((acc - chance).abs() < 0.05, "{name}: {acc} vs {chance}");
    }
}

#[test]
fn gradcheck_config_passes() {
    let out = bin()
        .arg("gradcheck")
        .arg("--config")
        .arg(configs().join("gradcheck.cfg"))
        .output()
        .unwrap();
    let r = json_out(&out);
    assert_eq!(r["passed"], true);
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(r["losses"].as_array().unwrap().len(), 3);
}

#[test]
fn train_then_eval_on_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 40, 1);
    let cfg = dir.path().join("m.cfg");
    std::fs::write(
        &cfg,
        "d_model = 8\nn_heads = 2\nn_layers = 1\nd_ff = 16\nd_vis = 32\nmax_text_len = 16\ncontrastive_layer = 1\nsteps = 3\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.cgw");
    let summary = json_out(
        &bin()
            .args(["train", "--data"])
            .arg(dir.path().join("train.jsonl"))
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&ckpt)
            .output()
            .unwrap(),
    );
    assert_eq!(summary["steps"], 3);
    let r = json_out(
        &bin()
            .args(["eval", "--data"])
            .arg(dir.path().join("test.jsonl"))
            .arg("--checkpoint")
            .arg(&ckpt)
            .output()
            .unwrap(),
    );
    let overall = if r.get("overall").is_some() { &r["overall"] } else { &r["report"]["overall"] };
    let held_out = read_dataset(dir.path().join("test.jsonl")).unwrap().samples.len();
    assert_eq!(overall["total"], held_out);
}
