mod common;

use std::path::Path;
use std::process::Command;

use common::{model_for, synth, tiny_config};
use groundkit::data::{companion_feature_path, read_dataset, write_dataset, Dataset, FEATURE_MAGIC};
use groundkit::grounder::{load_model, save_model};
use groundkit::numcore::CHECKPOINT_MAGIC;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundkit"))
}

fn write_read_write(d: &Dataset, dir: &Path) -> (Dataset, Vec<u8>, Vec<u8>) {
    let a = dir.join("a.jsonl");
    let b = dir.join("b.jsonl");
    write_dataset(d, &a).unwrap();
    let back = read_dataset(&a).unwrap();
    write_dataset(&back, &b).unwrap();
    for (x, y) in [(a.clone(), b.clone()), (companion_feature_path(&a), companion_feature_path(&b))] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    (back, std::fs::read(&a).unwrap(), std::fs::read(companion_feature_path(&a)).unwrap())
}

#[test]
fn dataset_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth(200, 5, 3);
    let (back, _, cgf) = write_read_write(&d, dir.path());
    assert_eq!(back, d);
    assert_eq!(&cgf[..4], &FEATURE_MAGIC);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_features_survive(values in prop::collection::vec(-1e30f32..1e30f32, 18), scale in -1e-30f32..1e-30f32) {
        let dir = tempfile::tempdir().unwrap();
        let mut d = synth(3, 3, 1);
        for s in &mut d.samples {
            for p in &mut s.image.persons {
                p.feature = values.clone();
                p.feature[0] = scale;
            }
        }
        let (back, _, _) = write_read_write(&d, dir.path());
        for (a, b) in back.samples.iter().zip(&d.samples) {
            for (pa, pb) in a.image.persons.iter().zip(&b.image.persons) {
                let bits = |f: &[f32]| f.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&pa.feature), bits(&pb.feature));
            }
        }
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(4, 3, 0);
    let cfg = tiny_config(16, 2, 5);
    let model = model_for(cfg.clone(), &data.samples);
    let a = dir.path().join("a.cgw");
    let b = dir.path().join("b.cgw");
    save_model(&model, &a).unwrap();
    let loaded = load_model(cfg, &a).unwrap();
    save_model(&loaded, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(&bytes[..4], &CHECKPOINT_MAGIC);
    assert_eq!(loaded.vocab, model.vocab);
    for ((_, name, t), (_, _, u)) in model.params.iter().zip(loaded.params.iter()) {
        for (x, y) in t.data().iter().zip(u.data()) {
            assert_eq!((*x as f32) as f64, *y, "{name}");
        }
    }
}

#[test]
fn checkpoint_for_another_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(4, 3, 0);
    let model = model_for(tiny_config(16, 2, 5), &data.samples);
    let path = dir.path().join("m.cgw");
    save_model(&model, &path).unwrap();
    assert!(load_model(tiny_config(16, 1, 5), &path).is_err());
    assert!(load_model(tiny_config(8, 2, 5), &path).is_err());
}

fn assert_data_error(out: std::process::Output) {
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["error"], "data");
    assert!(line["detail"].as_str().unwrap().contains("magic"), "{line}");
}

#[test]
fn corrupt_feature_magic_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&synth(10, 3, 0), &path).unwrap();
    let cgf = companion_feature_path(&path);
    let mut bytes = std::fs::read(&cgf).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&cgf, bytes).unwrap();
    let out = bin().args(["stats", "--data"]).arg(&path).output().unwrap();
    assert_data_error(out);
}

#[test]
fn corrupt_checkpoint_magic_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--n", "20", "--max-persons", "3", "--d-vis", "18", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = dir.path().join("m.cfg");
    std::fs::write(
        &cfg,
        "d_model = 8\nn_heads = 2\nn_layers = 1\nd_ff = 16\nd_vis = 18\nmax_text_len = 16\ncontrastive_layer = 1\nsteps = 2\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.cgw");
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.path().join("train.jsonl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&ckpt, bytes).unwrap();
    let out = bin()
        .args(["eval", "--data"])
        .arg(dir.path().join("test.jsonl"))
        .arg("--checkpoint")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_data_error(out);
}
