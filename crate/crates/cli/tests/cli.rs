use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn clm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clm")).args(args).env("CLM_JPEG_THREADS", "2").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = clm(args);
    assert_eq!(code(&o), 0, "{args:?}\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn corpus(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("corpus{seed}"));
    ok(&[
        "build-corpus", "--dataset", "synthetic", "--classes", "0,1", "--train-per-class", "2", "--val-per-class", "1",
        "--qualities", "30,92", "--seed", seed, "--out", s(&out),
    ]);
    out
}

const TINY: [&str; 8] = ["--layers", "1", "--dim", "16", "--heads", "2", "--batch-size", "4"];

fn train(corpus: &Path, out: &Path, epochs: &str, extra: &[&str]) {
    let mut args = vec!["train", "--manifest", s(corpus), "--out", s(out), "--epochs", epochs, "--seed", "3"];
    args.extend(TINY);
    args.extend(extra);
    ok(&args);
}

#[test]
fn build_corpus_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    std::fs::rename(corpus(dir.path(), "7"), &a).unwrap();
    let b = corpus(dir.path(), "7");
    let skip = ["run.json"];
    assert_eq!(clm_core::hash::hash_tree(&a, &skip).unwrap(), clm_core::hash::hash_tree(&b, &skip).unwrap());
    let m = json(a.join("manifest.json"));
    assert_eq!(m["quality_set"], serde_json::json!([30, 92]));
    assert_eq!(m["entries"].as_array().unwrap().len(), (4 + 2) * 2);
    let run = json(a.join("run.json"));
    assert_eq!(run["command"], "build-corpus");
    assert!(!a.join(".clm.lock").exists());

    assert_eq!(code(&clm(&["build-corpus", "--dataset", "synthetic"])), 2);
    let bad = clm(&["build-corpus", "--dataset", "synthetic", "--qualities", "33", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&bad), 2);
    assert_eq!(code(&clm(&["build-corpus", "--dataset", "mnist", "--out", s(&dir.path().join("y"))])), 2);
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".clm.lock"), b"").unwrap();
    let o = clm(&["build-corpus", "--dataset", "synthetic", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}

#[test]
fn train_resume_finetune_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "1");
    let first = dir.path().join("t1");
    train(&c, &first, "2", &[]);
    let ckpt = first.join("model.ckpt");
    let log = std::fs::read_to_string(first.join("loss.jsonl")).unwrap();
    // 8 training files, batch 4
    assert_eq!(log.lines().count(), 4);
    let run = json(first.join("run.json"));
    assert_eq!(run["resolved"]["model"]["model_dim"], 16);
    assert_eq!(run["resolved"]["hyperparams"]["epochs"], 2);
    assert!(run["inputs"]["manifest"]["sha256"].is_string());

    let resumed = dir.path().join("t2");
    let o = clm(&["train", "--manifest", s(&c), "--out", s(&resumed), "--epochs", "3", "--resume", s(&ckpt), "--batch-size", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let steps: Vec<u64> = std::fs::read_to_string(resumed.join("loss.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, [5, 6]);
    let shape = clm(&["train", "--manifest", s(&c), "--out", s(&dir.path().join("t3")), "--resume", s(&ckpt), "--dim", "32"]);
    assert_eq!(code(&shape), 2);

    let ft = dir.path().join("ft");
    ok(&["finetune", "--checkpoint", s(&ckpt), "--manifest", s(&c), "--target", "class", "--out", s(&ft), "--epochs", "1"]);
    assert!(ft.join("model.ckpt").exists());
    assert_eq!(code(&clm(&["finetune", "--checkpoint", s(&ckpt), "--manifest", s(&c), "--out", s(&ft)])), 2);

    let rec = dir.path().join("rec");
    ok(&["eval", "recognize", "--checkpoint", s(&ckpt), "--manifest", s(&c), "--split", "val", "--out", s(&rec)]);
    let r = json(rec.join("recognition.json"));
    assert_eq!(r["n_samples"], 4);
    assert_eq!(r["phase"], "pretrained");
    assert_eq!(r["schema_version"], 1);

    let missing = clm(&[
        "eval", "recognize", "--checkpoint", s(&dir.path().join("nope.ckpt")), "--manifest", s(&c), "--out",
        s(&dir.path().join("r2")),
    ]);
    assert_eq!(code(&missing), 2);

    let an = dir.path().join("an");
    ok(&[
        "eval", "anomaly", "--checkpoint", s(&ckpt), "--manifest", s(&c), "--mode", "sampled:40", "--seed", "2", "--out",
        s(&an),
    ]);
    for name in ["detection.json", "correction.json", "tagging.json", "tagging_histogram.csv"] {
        assert!(an.join(name).exists(), "{name}");
    }
    let det = json(an.join("detection.json"));
    assert_eq!(det["counts"]["overall"], 80);
    assert_eq!(det["ks"], serde_json::json!([1, 3, 5]));
    let tag = json(an.join("tagging.json"));
    assert_eq!(tag["alpha"], 0.05);
    assert_eq!(tag["histogram_csv_path"], "tagging_histogram.csv");
    assert_eq!(code(&clm(&["eval", "anomaly", "--checkpoint", s(&ckpt), "--manifest", s(&c), "--mode", "some", "--out", s(&dir.path().join("a2"))])), 2);

    let gen = dir.path().join("gen");
    ok(&["eval", "generate", "--checkpoint", s(&ckpt), "--decode", "greedy", "--max-len", "10", "--out", s(&gen)]);
    let g = json(gen.join("generation.json"));
    assert_eq!(g["records"].as_array().unwrap().len(), 90);
    assert!(gen.join("92").join("9.jpeg").exists());
    let beam = dir.path().join("beam");
    ok(&[
        "eval", "generate", "--checkpoint", s(&ckpt), "--decode", "beam", "--beams", "2", "--qualities", "75", "--classes",
        "1", "--max-len", "10", "--out", s(&beam),
    ]);
    assert!(beam.join("75").join("1_b0.jpeg").exists());
}

#[test]
fn empty_split_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    ok(&[
        "build-corpus", "--dataset", "synthetic", "--classes", "0", "--train-per-class", "1", "--val-per-class", "0",
        "--qualities", "75", "--out", s(&c),
    ]);
    let t = dir.path().join("t");
    train(&c, &t, "1", &[]);
    let o = clm(&[
        "eval", "recognize", "--checkpoint", s(&t.join("model.ckpt")), "--manifest", s(&c), "--split", "val", "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn codec_round_trip_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let raster = clm_codec::Raster {
        width: 24,
        height: 16,
        channels: 1,
        samples: (0..24 * 16).map(|i| (i * 7 % 251) as u8).collect(),
    };
    let pgm = dir.path().join("in.pgm");
    std::fs::write(&pgm, raster.to_pnm()).unwrap();
    let jpg = dir.path().join("out.jpeg");
    ok(&["codec", "encode", s(&pgm), "--q", "75", "--out", s(&jpg)]);
    assert_eq!(ok(&["codec", "quality", s(&jpg)]).trim(), "75");
    assert!(ok(&["codec", "validate", s(&jpg)]).contains("\"valid\""));
    let back = dir.path().join("back.pgm");
    ok(&["codec", "decode", s(&jpg), "--out", s(&back)]);
    let decoded = clm_codec::Raster::from_pnm(&std::fs::read(&back).unwrap()).unwrap();
    assert!(decoded.psnr(&raster) > 20.0);

    let mut broken = std::fs::read(&jpg).unwrap();
    broken.truncate(broken.len() / 2);
    let bad = dir.path().join("broken.jpeg");
    std::fs::write(&bad, broken).unwrap();
    let o = clm(&["codec", "validate", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("broken"));
    assert_eq!(code(&clm(&["codec", "quality", s(&dir.path().join("none.jpeg"))])), 2);
    assert_eq!(code(&clm(&["codec", "frobnicate"])), 2);
}

#[test]
fn bad_thread_count_is_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_clm"))
        .args(["codec", "quality", "x"])
        .env("CLM_JPEG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
