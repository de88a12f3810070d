use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn progvid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progvid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = progvid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = progvid(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: stdout {} stderr {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let target = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &target);
        } else {
            std::fs::copy(&p, &target).unwrap();
        }
    }
}

#[test]
fn gen_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--env", "phyworld-uniform", "--videos", "10", "--seed", "42", "--out", s(&a)]);
    ok(&["--jobs", "2", "gen", "--env", "phyworld-uniform", "--videos", "10", "--seed", "42", "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    for k in 0..10 {
        let frames = ta
            .keys()
            .filter(|p| p.starts_with(format!("video_{k}")) && p.extension().is_some_and(|e| e == "ppm"))
            .count();
        assert_eq!(frames, 20, "video_{k}");
        assert!(ta.contains_key(&PathBuf::from(format!("video_{k}/truth.json"))));
    }
    assert!(!a.join("video_10").exists());
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["videos"][3]["seed"], 45);
}

#[test]
fn gen_png_export() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    ok(&["gen", "--env", "phyworld-collision", "--videos", "1", "--png", "--out", s(&out)]);
    assert!(out.join("video_0/frame_0.png").is_file());
    assert!(out.join("video_0/frame_19.png").is_file());
}

#[test]
fn bad_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{\n  \"env\": {\"kind\": \"phyworld-uniform\"},\n  \"speed\": 3\n}\n");
    let err = fails(&["gen", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))], 2);
    assert!(err.contains("speed") && err.contains("line 3"), "{err}");
    let cfg = write_config(tmp.path(), "m.json", "{\"env\": {");
    fails(&["gen", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))], 2);
    fails(&["gen", "--config", s(&tmp.path().join("absent.json")), "--out", s(&tmp.path().join("d"))], 2);
}

#[test]
fn train_on_empty_dir_is_dataset_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails(&["train", "--data", s(tmp.path()), "--out", s(&tmp.path().join("r.json"))], 3);
    assert!(err.contains("dataset not found"), "{err}");
}

#[test]
fn train_predict_eval_uniform() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["gen", "--env", "phyworld-uniform", "--videos", "10", "--seed", "1000", "--out", s(&t.join("train"))]);
    ok(&["gen", "--env", "phyworld-uniform", "--videos", "3", "--seed", "5000", "--out", s(&t.join("test"))]);
    let msg = ok(&["train", "--data", s(&t.join("train")), "--out", s(&t.join("r.json"))]);
    assert!(msg.contains("uniform-inertia"), "{msg}");
    let report = json(&t.join("r.json"));
    assert_eq!(report["program_id"], "uniform-inertia");
    assert!(report["program_source"].as_str().unwrap().contains("default"));

    let inspect = ok(&["inspect", s(&t.join("r.json"))]);
    assert!(inspect.contains("program: uniform-inertia"), "{inspect}");

    ok(&["predict", "--report", s(&t.join("r.json")), "--input", s(&t.join("test")), "--out", s(&t.join("pred"))]);
    for k in 0..3 {
        let dir = t.join(format!("pred/video_{k}"));
        let written: Vec<usize> = (0..=19).filter(|i| dir.join(format!("frame_{i}.ppm")).is_file()).collect();
        assert_eq!(written, (3..=19).collect::<Vec<_>>());
        let states = json(&dir.join("states.json"));
        assert_eq!(states["states"].as_array().unwrap().len(), 20);
        assert_eq!(states["last_seen"], 2);
    }

    let rows: Value = serde_json::from_str(&ok(&[
        "eval",
        "--predictions",
        s(&t.join("pred")),
        "--truth",
        s(&t.join("test")),
    ]))
    .unwrap();
    let rows = rows.as_array().unwrap();
    let get = |m: &str| rows.iter().find(|r| r["metric"] == m).map(|r| r["value"].as_f64().unwrap());
    assert!(get("velocity_error").unwrap() <= 0.02);
    assert!(get("velocity_error_state").is_some());
    assert!(get("psnr").unwrap() > 20.0);
    assert_eq!(rows[0]["n_videos"], 3);

    let only: Value = serde_json::from_str(&ok(&[
        "eval",
        "--predictions",
        s(&t.join("pred")),
        "--truth",
        s(&t.join("test")),
        "--metrics",
        "velocity_error",
    ]))
    .unwrap();
    assert_eq!(only.as_array().unwrap().len(), 1);

    let strict = write_config(
        t,
        "strict.json",
        r#"{"env": {"kind": "phyworld-uniform"}, "thresholds": {"velocity_error": {"max": 1e-15}}}"#,
    );
    fails(
        &["eval", "--predictions", s(&t.join("pred")), "--truth", s(&t.join("test")), "--config", s(&strict)],
        5,
    );
    let loose = write_config(
        t,
        "loose.json",
        r#"{"env": {"kind": "phyworld-uniform"}, "thresholds": {"velocity_error": {"max": 0.02}, "psnr": {"min": 10}}}"#,
    );
    ok(&["eval", "--predictions", s(&t.join("pred")), "--truth", s(&t.join("test")), "--config", s(&loose)]);
    fails(
        &["eval", "--predictions", s(&t.join("pred")), "--truth", s(&t.join("test")), "--metrics", "fvd"],
        2,
    );
}

#[test]
fn single_video_training_gives_a_valid_report() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["gen", "--env", "phyworld-collision", "--videos", "1", "--out", s(&t.join("d"))]);
    ok(&["train", "--data", s(&t.join("d")), "--out", s(&t.join("out/r.json"))]);
    let report = json(&t.join("out/r.json"));
    assert!(report["fit"]["loss"].as_f64().unwrap().is_finite());
    assert_eq!(report["proposer"]["mode"], "registry");
    ok(&["inspect", s(&t.join("out/r.json"))]);
}

#[test]
fn eval_of_a_perfect_copy_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["gen", "--env", "phyworld-collision", "--videos", "2", "--out", s(&t.join("d"))]);
    copy_dir(&t.join("d"), &t.join("copy"));
    let rows: Value =
        serde_json::from_str(&ok(&["eval", "--predictions", s(&t.join("copy")), "--truth", s(&t.join("d"))])).unwrap();
    for r in rows.as_array().unwrap() {
        let v = r["value"].as_f64().unwrap();
        match r["metric"].as_str().unwrap() {
            "psnr" => assert_eq!(v, 99.0),
            _ => assert_eq!(v, 0.0, "{r}"),
        }
    }
    fails(&["eval", "--predictions", s(&t.join("nowhere")), "--truth", s(&t.join("d"))], 3);
    fails(&["eval", "--predictions", s(&t.join("copy")), "--truth", s(&t.join("nowhere"))], 3);
}

/// Trains a cart-pole report quickly on two clips.
fn cartpole_report(t: &Path) -> PathBuf {
    let cfg = write_config(
        t,
        "cp.json",
        r#"{"env": {"kind": "cartpole", "seed": 300}, "videos": 2, "fit": {"restarts": 1, "max_iterations": 20}}"#,
    );
    ok(&["gen", "--config", s(&cfg), "--out", s(&t.join("cp"))]);
    ok(&["train", "--data", s(&t.join("cp")), "--config", s(&cfg), "--out", s(&t.join("cp.report.json"))]);
    t.join("cp.report.json")
}

#[test]
fn cartpole_predict_and_edit() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let report = cartpole_report(t);
    let video = t.join("cp/video_0");
    let out = t.join("pred");
    let msg = ok(&["predict", "--report", s(&report), "--input", s(&video), "--out", s(&out)]);
    assert!(msg.contains("predicted 10 frames"), "{msg}");
    let written: Vec<usize> = (0..=19).filter(|i| out.join(format!("frame_{i}.ppm")).is_file()).collect();
    assert_eq!(written, (10..=19).collect::<Vec<_>>());

    // too few conditioning frames
    let short = t.join("short");
    std::fs::create_dir_all(&short).unwrap();
    for i in 0..9 {
        std::fs::copy(video.join(format!("frame_{i}.ppm")), short.join(format!("frame_{i}.ppm"))).unwrap();
    }
    let err = fails(&["predict", "--report", s(&report), "--input", s(&short), "--out", s(&t.join("p2"))], 3);
    assert!(err.contains("conditioning"), "{err}");

    let states = out.join("states.json");
    let edited = t.join("edited");
    ok(&[
        "edit",
        "--states",
        s(&states),
        "--report",
        s(&report),
        "--edit",
        "pole_length:scale:2",
        "--edit",
        "cart_velocity:negate",
        "--out",
        s(&edited),
    ]);
    let written: Vec<usize> = (0..=19).filter(|i| edited.join(format!("frame_{i}.ppm")).is_file()).collect();
    assert_eq!(written, (9..=19).collect::<Vec<_>>());
    let before = json(&states);
    let after = json(&edited.join("states.json"));
    let (b, a) = (&before["states"][9], &after["states"][9]);
    assert_eq!(a[4].as_f64().unwrap(), 2.0 * b[4].as_f64().unwrap());
    assert_eq!(a[1].as_f64().unwrap(), -b[1].as_f64().unwrap());

    let truth = video.join("truth.json");
    let err = fails(
        &["edit", "--states", s(&truth), "--report", s(&report), "--edit", "pole_lenght:scale:2", "--out", s(&t.join("e2"))],
        2,
    );
    assert!(err.contains("unknown attribute `pole_lenght`"), "{err}");
    let err = fails(
        &["edit", "--states", s(&truth), "--report", s(&report), "--edit", "pole_length:set:7", "--out", s(&t.join("e3"))],
        2,
    );
    assert!(err.contains("outside"), "{err}");
    fails(
        &["edit", "--states", s(&truth), "--report", s(&report), "--edit", "pole_length:double", "--out", s(&t.join("e4"))],
        2,
    );
    ok(&["edit", "--states", s(&truth), "--report", s(&report), "--edit", "gravity:set:3", "--out", s(&t.join("e5"))]);
    ok(&["inspect", s(&t.join("e5"))]);
}

#[test]
fn predict_follows_the_inference_order() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["gen", "--env", "phyworld-uniform", "--videos", "1", "--out", s(&t.join("d"))]);
    ok(&["train", "--data", s(&t.join("d")), "--out", s(&t.join("r.json"))]);
    ok(&[
        "predict",
        "--report",
        s(&t.join("r.json")),
        "--input",
        s(&t.join("d/video_0")),
        "--out",
        s(&t.join("p")),
        "--trace",
    ]);
    let trace = json(&t.join("p/trace.json"));
    let mut expected: Vec<Value> = (0..3).map(|f| serde_json::json!({"op": "perceive", "frame": f})).collect();
    for step in 1..=17 {
        expected.push(serde_json::json!({"op": "transition", "step": step}));
        expected.push(serde_json::json!({"op": "render", "step": step}));
    }
    assert_eq!(trace, Value::Array(expected));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let run = |root: &Path| {
        ok(&["gen", "--env", "phyworld-collision", "--videos", "3", "--seed", "7", "--out", s(&root.join("train"))]);
        ok(&["gen", "--env", "phyworld-collision", "--videos", "2", "--seed", "70", "--ood", "--out", s(&root.join("test"))]);
        ok(&["train", "--data", s(&root.join("train")), "--out", s(&root.join("r.json"))]);
        ok(&["predict", "--report", s(&root.join("r.json")), "--input", s(&root.join("test")), "--out", s(&root.join("pred"))]);
        ok(&[
            "eval",
            "--predictions",
            s(&root.join("pred")),
            "--truth",
            s(&root.join("test")),
            "--out",
            s(&root.join("metrics.json")),
        ]);
        tree(root)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn inspect_dataset_and_missing_path() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["gen", "--env", "phyworld-uniform", "--videos", "2", "--out", s(&t.join("d"))]);
    let text = ok(&["inspect", s(&t.join("d"))]);
    assert!(text.contains("dataset: 2 videos"), "{text}");
    let text = ok(&["inspect", s(&t.join("d/video_1"))]);
    assert!(text.contains("last seen frame 2"), "{text}");
    fails(&["inspect", s(&t.join("nothing"))], 3);
}
