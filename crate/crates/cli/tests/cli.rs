use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn umc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umc"))
        .args(args)
        .env("UMC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.display().to_string();
    let mut args = vec![
        "synth",
        "--out",
        &out,
        "--classes",
        "4",
        "--per-class",
        "10",
        "--seed",
        "0",
        "--text-dim",
        "6",
        "--audio-dim",
        "4",
        "--video-dim",
        "4",
        "--audio-len",
        "3",
        "--video-len",
        "3",
    ];
    args.extend_from_slice(extra);
    umc(&args)
}

const SMALL: &str =
    "model.hidden_dim=8\nmodel.ff_dim=16\ntrain.proj_dim=4\ntrain.pretrain_epochs=1\n\
                     train.batch_size=16\ntrain.t0=0.6\ntrain.delta=0.2\ntrain.kmeans_restarts=2\n";

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(&a, &["--ambiguous", "0:1,2:3"]).status.success());
    assert!(synth(&b, &["--ambiguous", "0:1,2:3"]).status.success());
    for f in [
        "manifest.txt",
        "text.umcf",
        "audio.umcf",
        "video.umcf",
        "labels.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::read_to_string(a.join("labels.txt"))
            .unwrap()
            .lines()
            .count(),
        40
    );
}

#[test]
fn run_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &[]).status.success());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let manifest = data.join("manifest.txt");
    let args = [
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--seeds",
        "0-1",
        "--variant",
        "text_only",
    ];
    let o = umc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([0, 1]));
    assert!(report["config"]
        .as_str()
        .unwrap()
        .contains("train.variant=text_only"));

    let first = fs::read(out_dir.join("report.json")).unwrap();
    assert!(umc(&args).status.success());
    assert_eq!(fs::read(out_dir.join("report.json")).unwrap(), first);

    let assignments = out_dir.join("assignments_seed0.txt");
    let labels = data.join("labels.txt");
    let o = umc(&[
        "eval",
        "--assignments",
        assignments.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m, report["rows"][0]["metrics"]);
}

#[test]
fn sweep_writes_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &[]).status.success());
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "{SMALL}run.seeds=0\ndata.manifest={}\n",
            data.join("manifest.txt").display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let o = umc(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
        "--grid",
        "train.tau1=0.1,0.2,0.3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..3 {
        assert!(out_dir.join(format!("point_{i:03}/report.json")).exists());
    }
    assert_eq!(
        fs::read_to_string(out_dir.join("sweep_summary.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn eval_crossed_case() {
    let dir = tempfile::tempdir().unwrap();
    let (a, l) = (dir.path().join("pred.txt"), dir.path().join("gt.txt"));
    fs::write(&a, "0\n1\n0\n1\n").unwrap();
    fs::write(&l, "0\n0\n1\n1\n").unwrap();
    let o = umc(&[
        "eval",
        "--assignments",
        a.to_str().unwrap(),
        "--labels",
        l.to_str().unwrap(),
    ]);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["nmi"], 0.0);
    assert_eq!(m["ari"], -0.5);
    assert_eq!(m["acc"], 0.5);
    assert_eq!(m["fmi"], 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(umc(&["bogus"]).status.code(), Some(1));
    assert_eq!(
        umc(&["run", "--set", "train.nope=1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        umc(&["sweep", "--set", "data.manifest=Cargo.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        umc(&["run", "--manifest", "/nonexistent/manifest.txt"])
            .status
            .code(),
        Some(2)
    );

    let (a, l) = (dir.path().join("a.txt"), dir.path().join("l.txt"));
    fs::write(&a, "0\n1\n").unwrap();
    fs::write(&l, "0\n1\n1\n").unwrap();
    assert_eq!(
        umc(&[
            "eval",
            "--assignments",
            a.to_str().unwrap(),
            "--labels",
            l.to_str().unwrap()
        ])
        .status
        .code(),
        Some(2)
    );

    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(
        bad.join("manifest.txt"),
        "text=t.umcf\naudio=a.umcf\nvideo=v.umcf\nnum_classes=2\n",
    )
    .unwrap();
    fs::write(bad.join("t.umcf"), b"junk").unwrap();
    let m = bad.join("manifest.txt");
    assert_eq!(
        umc(&["run", "--manifest", m.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn grad_check_passes() {
    let o = umc(&["grad-check"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("12 components"));
    assert!(!text.contains("FAIL"));
}
