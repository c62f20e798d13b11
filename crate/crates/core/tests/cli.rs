use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn avalign(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avalign"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AVALIGN_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&avalign(&[], dir.path())), 1);
    assert_eq!(code(&avalign(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&avalign(&["window", "--duration"], dir.path())), 1);
    assert_eq!(code(&avalign(&["--help"], dir.path())), 0);
}

#[test]
fn window_writes_manifest_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = avalign(&["window", "--duration", "2.0", "--out", "w.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = json(&dir.path().join("w.json"));
    let windows = manifest["windows"].as_array().unwrap();
    assert_eq!(windows.len(), 5);
    assert_eq!(windows[1]["start_s"], 0.25);
    assert!(dir.path().join("w.config.json").exists());
}

#[test]
fn default_output_lands_under_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = avalign(&["window", "--duration", "1.5"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written: Vec<_> = walk(&dir.path().join("runs"));
    assert!(written.iter().any(|p| p.ends_with(".json")), "{written:?}");
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.to_string_lossy().into_owned());
        }
    }
    out
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"spec": {"window_len_s": 0.5, "overlap": 0.0}}"#).unwrap();
    let o = avalign(&["window", "--duration", "2.0", "--config", "c.json", "--out", "a.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("a.json"))["windows"].as_array().unwrap().len(), 4);

    let o = avalign(
        &["window", "--duration", "2.0", "--config", "c.json", "--set", "spec.window_len_s=1.0", "--out", "b.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("b.json"))["windows"].as_array().unwrap().len(), 2);
    let resolved = json(&dir.path().join("b.config.json"));
    assert_eq!(resolved["spec"]["window_len_s"], 1.0);
    assert_eq!(resolved["spec"]["overlap"], 0.0);
}

#[test]
fn unknown_config_key_suggests_the_right_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"learning_rte": 0.01}"#).unwrap();
    let o = avalign(&["synth", "--n-pairs", "20", "--out-dir", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = avalign(
        &[
            "train-clip", "--pairs", "d/pairs.json", "--audio", "d/audio.emb", "--video", "d/video.emb",
            "--config", "c.json", "--out", "m.ckpt",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("learning_rte") && err.contains("\"lr\""), "{err}");
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = avalign(&["map", "--clip", "missing.ckpt", "--prior", "p.ckpt", "--in", "a.emb"], dir.path());
    assert_eq!(code(&o), 2);
    fs::write(dir.path().join("bad.emb"), b"EMB0garbage").unwrap();
    let o = avalign(
        &["train-prior", "--cond", "bad.emb", "--target", "bad.emb", "--pairs", "p.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn ingest_trims_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("media.json"),
        r#"{"source_id": "clip", "duration_s": 10.0, "fps": 32.0, "sample_rate": 16000}"#,
    )
    .unwrap();
    // 10 s at 1 s windows with hop 0.25 s gives 37 windows
    let rows = |d: usize| -> String {
        (0..37)
            .map(|i| (0..d).map(|j| format!("{}", (i * d + j) as f32 * 0.1)).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
    };
    fs::write(dir.path().join("a.csv"), rows(4)).unwrap();
    fs::write(dir.path().join("v.csv"), rows(3)).unwrap();
    let o = avalign(
        &[
            "ingest", "--media", "media.json", "--audio", "a.csv", "--video", "v.csv", "--leading-trim", "2.0",
            "--test-fraction", "0.2", "--set", "audio_dim=4", "--set", "video_dim=3", "--out-dir", "out",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pairs = json(&dir.path().join("out/pairs.json"));
    let pairs = pairs.as_array().unwrap();
    // windows starting at or after 2 s: k >= 8
    assert_eq!(pairs.len(), 29);
    assert_eq!(pairs[0]["window_index"], 8);
    assert_eq!(pairs.iter().filter(|p| p["split"] == "test").count(), 5);

    // row count must match the untrimmed window count
    fs::write(dir.path().join("short.csv"), "1,2,3,4\n5,6,7,8").unwrap();
    let o = avalign(
        &[
            "ingest", "--media", "media.json", "--audio", "short.csv", "--video", "v.csv",
            "--set", "audio_dim=4", "--set", "video_dim=3", "--out-dir", "out2",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn full_pipeline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = avalign(args, dir.path());
        assert_eq!(code(&o), 0, "{:?}: {}", args, stderr(&o));
    };
    let small = [
        "--set", "n_layers=2", "--set", "hidden_dim=32", "--set", "shared_dim=16", "--audio-dim", "24", "--video-dim", "20",
    ];
    run(&["synth", "--n-pairs", "300", "--set", "audio_dim=24", "--set", "video_dim=20", "--out-dir", "data"]);
    let mut args = vec![
        "train-clip", "--pairs", "data/pairs.json", "--audio", "data/audio.emb", "--video", "data/video.emb",
        "--preset", "desk", "--batch-size", "32", "--epochs", "5", "--lr", "0.001", "--out", "clip.ckpt",
    ];
    args.extend(small);
    run(&args);
    let csv = fs::read_to_string(dir.path().join("clip.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * (270 / 32));
    assert_eq!(json(&dir.path().join("clip.config.json"))["batch_size"], 32);

    run(&[
        "train-prior", "--clip", "clip.ckpt", "--cond", "data/audio.emb", "--target", "data/video.emb",
        "--pairs", "data/pairs.json", "--epochs", "3", "--batch-size", "32", "--latent-dim", "4", "--out", "prior.ckpt",
    ]);
    assert!(fs::read_to_string(dir.path().join("prior.loss.csv")).unwrap().starts_with("epoch,batch,loss,recon,kl"));
    run(&["map", "--clip", "clip.ckpt", "--prior", "prior.ckpt", "--in", "data/audio.emb", "--out", "goals.emb"]);
    assert!(dir.path().join("goals.emb").exists());

    run(&[
        "eval", "--clip", "clip.ckpt", "--pairs", "data/pairs.json", "--audio", "data/audio.emb",
        "--video", "data/video.emb", "--ks", "1,5", "--out", "report.json",
    ]);
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["n_queries"], 30);
    let r1 = report["recall_at"]["1"].as_f64().unwrap();
    let r5 = report["recall_at"]["5"].as_f64().unwrap();
    assert!(r1 <= r5);
    let ranks = fs::read_to_string(dir.path().join("report.ranks.csv")).unwrap();
    assert_eq!(ranks.lines().next(), Some("query,rank"));
    assert_eq!(ranks.lines().count(), 31);
}
