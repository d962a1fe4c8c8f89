use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "k = 5\nn_queries = 4\ndim = 8\nn_layers = 1\nn_heads = 2\nn_sample_points = 2\nffn_dim = 16\n\
n_bins = 16\nsigma = 1.0\nepochs = 1\neval_every = 0\n";

fn paxkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paxkit")).args(args).env_remove("PAXKIT_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", p(dir), "--n-images", "2", "--height", "32", "--width", "32"];
    args.extend_from_slice(extra);
    paxkit(&args)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn usage_errors_exit_two() {
    let o = paxkit(&["synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1, "{}", stderr(&o));
    assert_eq!(paxkit(&["axis-demo", "--theta", "10", "--n-bins", "10"]).status.code(), Some(2));
    assert_eq!(paxkit(&["verify", "--suite", "nonsense"]).status.code(), Some(2));
    assert_eq!(paxkit(&["--threads", "0", "verify", "--suite", "codec", "--quick"]).status.code(), Some(2));
    assert_eq!(paxkit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(paxkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(synth(a.path(), &["--seed", "3"]).status.success());
    assert!(synth(b.path(), &["--seed", "3"]).status.success());
    let tree = read_tree(a.path());
    assert_eq!(tree.len(), 5, "manifest plus an image and label per scene");
    assert_eq!(tree, read_tree(b.path()));

    let v = tempfile::tempdir().unwrap();
    assert!(synth(v.path(), &["--seed", "3", "--split", "val"]).status.success());
    assert_ne!(read_tree(v.path())[1], tree[1]);
}

#[test]
fn unknown_config_key_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "lamda1 = 2.0\n").unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &[]).status.success());
    let o = paxkit(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("lamda1"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    assert!(synth(&data, &[]).status.success());

    let o = paxkit(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(!metrics.contains("wall"));
    let timing = std::fs::read_to_string(run.join("timing.jsonl")).unwrap();
    assert_eq!(timing.lines().count(), 2);
    assert!(timing.lines().all(|l| l.contains("\"wall_ms\"")));
    let ckpt = run.join("model.ckpt");
    assert!(ckpt.exists() && run.join("config.toml").exists());

    let out = dir.path().join("eval75");
    let o = paxkit(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--iou", "0.75", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ap.json")).unwrap()).unwrap();
    let m = json["mAP75"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&m));
    assert!(out.join("detections.txt").exists() && out.join("ap.txt").exists());

    // the saved config agrees with the checkpoint; a different one does not
    let o = paxkit(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--config",
        p(&run.join("config.toml")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other = dir.path().join("other.toml");
    std::fs::write(&other, TINY.replace("k = 5", "k = 9")).unwrap();
    let o = paxkit(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out), "--config", p(&other)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k 5 vs 9"), "{}", stderr(&o));

    let missing =
        paxkit(&["eval", "--checkpoint", p(&dir.path().join("nope.ckpt")), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn axis_demo_prints_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("enc.csv");
    let o = paxkit(&["axis-demo", "--theta", "30", "--n-bins", "72", "--sigma", "1.5", "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin,angle_deg,value"));
    assert_eq!(lines.count(), 72);
    assert!(String::from_utf8_lossy(&o.stdout).contains("30"));
}

#[test]
fn quick_verify_passes() {
    for suite in ["geom", "codec", "match"] {
        let o = paxkit(&["verify", "--suite", suite, "--quick"]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains(suite));
    }
}
