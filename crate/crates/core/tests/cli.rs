use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropsuit::synth::SynthManifest;

fn cropsuit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropsuit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let json = r#"{
        "synth": {"width": 24, "height": 24, "years": 4, "future_years": 4},
        "train": {"mlp_hidden": [8], "lstm_hidden": 4, "optimizer": {"epochs": 2}},
        "attribute": {"repeats": 1, "steps": 4, "max_pixels": 2, "max_samples": 50}
    }"#;
    fs::write(&path, json).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seeed": 3}"#).unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    for args in [
        vec!["synth", "--config", bad.to_str().unwrap(), "--out", out],
        vec!["synth", "--config", "/nonexistent/config.json", "--out", out],
    ] {
        let o = cropsuit(&args);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
    fs::write(&bad, r#"{"external_data": true, "data_dir": "/nonexistent/data"}"#).unwrap();
    let o = cropsuit(&["features", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_upstream_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (stage, upstream) in [("features", "synth"), ("train", "features"), ("eval", "train"), ("report", "eval")] {
        let o = cropsuit(&[stage, "--out", out]);
        assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
        assert!(stderr(&o).contains(&format!("`{upstream}`")), "{stage}: {}", stderr(&o));
    }
}

#[test]
fn changed_seed_makes_upstream_stale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (cfg, out) = (cfg.to_str().unwrap(), dir.path().join("run"));
    let out = out.to_str().unwrap();
    let o = cropsuit(&["synth", "--config", cfg, "--out", out, "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cropsuit(&["features", "--config", cfg, "--out", out, "--seed", "2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stale"), "{}", stderr(&o));
    let o = cropsuit(&["features", "--config", cfg, "--out", out, "--seed", "1", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = cropsuit(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        tree(&out)
    };
    let a = run("a", "9");
    assert_eq!(a, run("b", "9"));
    assert_ne!(a, run("c", "10"));
}

#[test]
fn default_synth_world() {
    let dir = tempfile::tempdir().unwrap();
    let o = cropsuit(&["synth", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("data/MANIFEST.json")).unwrap();
    let m: SynthManifest = serde_json::from_str(&text).unwrap();
    assert_eq!((m.config.width, m.config.height, m.config.years), (128, 128, 10));
    assert_eq!(m.drivers, ["t2m", "tp", "monTstep6", "DEM_1km"]);
    assert!(m.rule.w1 < m.rule.w2);
    let total: usize = m.class_counts.iter().sum();
    assert_eq!(total, 128 * 128);
    for (c, &n) in m.class_counts.iter().enumerate() {
        assert!(n > 0);
        let got = n as f64 / total as f64;
        let want = m.config.class_fractions[c];
        assert!((got - want).abs() <= 0.02 * want, "class {c}: {got} vs {want}");
    }
    let futures = fs::read_dir(dir.path().join("data/climate")).unwrap().count() - 1;
    assert_eq!(futures, 8, "2 pseudo-models x 2 SSPs x 2 periods");
}

#[test]
fn full_small_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    for stage in ["synth", "features", "train", "eval", "attribute", "project", "report"] {
        let o = cropsuit(&[stage, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        if stage == "eval" {
            let text = String::from_utf8_lossy(&o.stdout);
            assert!(text.contains("macro") && text.contains("accuracy"), "{text}");
        }
    }
    for f in ["eval/metrics_lstm.json", "attribute/importance_mlp.csv", "project/logreg/trajectory.csv", "report/summary.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let pngs = fs::read_dir(out.join("report")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert!(pngs.count() > 0);
}
