use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
formats = ["kinectv2", "smplx"]
eval_formats = ["kinectv2"]

[pretrain]
epochs = 2
batch_size = 4
bank_size = 16
frames = 16

[pretrain.network]
block_channel_widths = [8]
strides = []
temporal_kernel = 3
embedding_dim = 16
projection_dim = 8

[linear]
epochs = 10
batch_size = 8
"#;

fn msclr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msclr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MSCLR_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_dataset(dir: &Path, per_class: &str) -> PathBuf {
    let ds = dir.join("ds");
    let o = msclr(&["make-synthetic", "--out", s(&ds), "--classes", "3", "--per-class", per_class, "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    ds
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn make_synthetic_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = make_dataset(a.path(), "20");
    let db = make_dataset(b.path(), "20");
    let ma = fs::read(da.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(db.join("manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(manifest["records"].as_array().unwrap().len(), 60);
    for entry in fs::read_dir(da.join("data")).unwrap() {
        let entry = entry.unwrap();
        assert_eq!(fs::read(entry.path()).unwrap(), fs::read(db.join("data").join(entry.file_name())).unwrap());
    }
}

#[test]
fn one_class_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = msclr(&["make-synthetic", "--out", s(&d.path().join("x")), "--classes", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_problems_by_record_and_file() {
    let d = tempfile::tempdir().unwrap();
    let ds = make_dataset(d.path(), "2");
    let o = msclr(&["validate", "--dataset", s(&ds)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 findings"));

    // drop smplx from one record
    let manifest_path = ds.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    let victim = manifest["records"][1]["sample_id"].as_str().unwrap().to_string();
    manifest["records"][1]["formats"].as_object_mut().unwrap().remove("smplx");
    fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let o = msclr(&["validate", "--dataset", s(&ds)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains(&victim), "{}", stdout(&o));
    assert!(stdout(&o).contains("smplx"));

    // restricting to kinectv2 makes it clean again; then corrupt a file
    let o = msclr(&["validate", "--dataset", s(&ds), "--formats", "kinectv2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let file = ds.join(manifest["records"][0]["formats"]["kinectv2"].as_str().unwrap());
    let mut bytes = fs::read(&file).unwrap();
    bytes[..4].copy_from_slice(b"JUNK");
    fs::write(&file, bytes).unwrap();
    let o = msclr(&["validate", "--dataset", s(&ds), "--formats", "kinectv2"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(file.file_name().unwrap().to_str().unwrap()), "{}", stdout(&o));
}

#[test]
fn paper_dry_run_dumps_schedule() {
    let o = msclr(&["pretrain", "--preset", "paper", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(d["pretrain"]["epochs"], 300);
    assert_eq!(d["pretrain"]["lr_milestones"], serde_json::json!([250]));
    assert_eq!(d["linear"]["lr"]["base"], 3.0);
    assert_eq!(d["fusion_weights"], serde_json::json!([0.6, 0.6, 0.4]));
}

#[test]
fn bad_config_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = msclr(&["pretrain", "--formats", "openpose", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let o = msclr(&["pretrain", "--dataset", s(&d.path().join("nope")), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let o = msclr(&["pretrain", "--set", "pretrain.temperature=-1", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[pretrain]\nepochz = 3\n").unwrap();
    let o = msclr(&["pretrain", "--config", s(&bad), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
}

fn start_line(run: &Path) -> serde_json::Value {
    let log = fs::read_to_string(run.join("train-joint.jsonl")).unwrap();
    serde_json::from_str(log.lines().next().unwrap()).unwrap()
}

#[test]
fn second_format_doubles_iterations() {
    let d = tempfile::tempdir().unwrap();
    let ds = make_dataset(d.path(), "6");
    let cfg = tiny_config(d.path());
    let one = d.path().join("one");
    let two = d.path().join("two");
    let o = msclr(&["pretrain", "-c", s(&cfg), "--dataset", s(&ds), "--out", s(&one), "--formats", "kinectv2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = msclr(&["pretrain", "-c", s(&cfg), "--dataset", s(&ds), "--out", s(&two)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (start_line(&one), start_line(&two));
    assert_eq!(b["iterations_per_epoch"].as_u64().unwrap(), 2 * a["iterations_per_epoch"].as_u64().unwrap());
    let steps = fs::read_to_string(two.join("train-joint.jsonl")).unwrap().lines().count() - 1;
    assert_eq!(steps as u64, 2 * b["iterations_per_epoch"].as_u64().unwrap());
}

#[test]
fn pretrain_eval_report_roundtrip() {
    let d = tempfile::tempdir().unwrap();
    let ds = make_dataset(d.path(), "4");
    let cfg = tiny_config(d.path());
    let run = d.path().join("run");
    let base = ["-c", s(&cfg), "--dataset", s(&ds), "--out", s(&run)];
    let o = msclr(&[&["pretrain"][..], &base].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(run.join("train-joint.jsonl")).unwrap();
    for line in log.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }

    let r1 = d.path().join("r1.json");
    let r2 = d.path().join("r2.json");
    let o = msclr(&[&["eval", "--report", s(&r1)][..], &base].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = msclr(&[&["eval", "--ensemble", "--report", s(&r2)][..], &base].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let a: serde_json::Value = serde_json::from_slice(&fs::read(&r1).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(&r2).unwrap()).unwrap();
    let cell = &a["report"]["cells"][0]["result"]["accuracy"];
    assert_eq!(&b["report"]["ensemble"]["streams"]["joint"]["accuracy"], cell);
    assert_eq!(a["report"]["checkpoint_ids"]["joint"].as_str().unwrap().len(), 16);
    assert_eq!(a["pretrain_seed"], 0);

    // same seeds, same bytes
    let run2 = d.path().join("run2");
    let o = msclr(&["pretrain", "-c", s(&cfg), "--dataset", s(&ds), "--out", s(&run2)]);
    assert!(o.status.success());
    assert_eq!(fs::read(run.join("train-joint.jsonl")).unwrap(), fs::read(run2.join("train-joint.jsonl")).unwrap());
    assert_eq!(fs::read(run.join("checkpoint-joint.msck")).unwrap(), fs::read(run2.join("checkpoint-joint.msck")).unwrap());
    let r3 = d.path().join("r3.json");
    let o = msclr(&["eval", "-c", s(&cfg), "--dataset", s(&ds), "--out", s(&run2), "--report", s(&r3)]);
    assert!(o.status.success());
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r3).unwrap());

    // plotting against itself gives flat bars
    let svg = d.path().join("diff.svg");
    let o = msclr(&[&["eval", "--report", s(&r3), "--plot", s(&svg), "--baseline", s(&r1)][..], &base].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let chart = fs::read_to_string(&svg).unwrap();
    assert_eq!(chart.matches("<rect").count(), 3);
    assert_eq!(chart.matches(r#"height="0.0""#).count(), 3);
    let o = msclr(&[&["eval", "--plot", s(&svg)][..], &base].concat());
    assert_eq!(o.status.code(), Some(2));

    let o = msclr(&["report", s(&r2), "--baseline", s(&r1)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("+0.0000"));

    // missing and corrupt checkpoints are I/O failures
    let o = msclr(&[&["eval", "--checkpoint", s(&d.path().join("none.msck"))][..], &base].concat());
    assert_eq!(o.status.code(), Some(4));
    let ck = run.join("checkpoint-joint.msck");
    let mut bytes = fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&ck, bytes).unwrap();
    let o = msclr(&[&["eval"][..], &base].concat());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn diverging_run_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let ds = make_dataset(d.path(), "3");
    let cfg = tiny_config(d.path());
    let o = msclr(&[
        "pretrain",
        "-c",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--out",
        s(&d.path().join("run")),
        "--set",
        "pretrain.lr.base=1e300",
        "--epochs",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn corrupt_dataset_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let ds = make_dataset(d.path(), "2");
    let file = fs::read_dir(ds.join("data")).unwrap().next().unwrap().unwrap().path();
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 8]).unwrap();
    let cfg = tiny_config(d.path());
    let o = msclr(&["pretrain", "-c", s(&cfg), "--dataset", s(&ds), "--out", s(&d.path().join("run"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn data_root_resolves_relative_dataset() {
    let d = tempfile::tempdir().unwrap();
    make_dataset(d.path(), "2");
    let o = Command::new(env!("CARGO_BIN_EXE_msclr"))
        .args(["validate", "--dataset", "ds"])
        .env("MSCLR_DATA_ROOT", d.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
