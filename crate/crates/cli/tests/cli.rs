use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_PIPELINE: &str = r#"
[[structures]]
name = "straight"
footprint = [[0.0, 0.0], [2.0, 0.0]]
height = 1.0
spacing = 0.02

[[structures]]
name = "loop"
footprint = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.5], [0.0, 1.5]]
closed = true
height = 0.8
spacing = 0.02

[eval]
n_windows = 50
"#;

fn mcop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcop"))
        .args(args)
        .env_remove("MCOP_WORKERS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_pipeline(dir: &Path, cfg: &Path, out: &str, workers: &str) -> PathBuf {
    let out = dir.join(out);
    let res = mcop(&[
        "--seed", "7", "--workers", workers, "--config", path(cfg), "pipeline", "--out", path(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn pipeline_is_reproducible_across_runs_and_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "pipeline.toml", SMALL_PIPELINE);
    let a = run_pipeline(tmp.path(), &cfg, "a", "1");
    let b = run_pipeline(tmp.path(), &cfg, "b", "1");
    let c = run_pipeline(tmp.path(), &cfg, "c", "8");
    for name in ["metrics.json", "metrics.txt", "manifest.json", "loop/completed.mcop", "straight/completed.ply"] {
        let first = std::fs::read(a.join(name)).unwrap();
        assert_eq!(first, std::fs::read(b.join(name)).unwrap(), "{name} differs between runs");
        assert_eq!(first, std::fs::read(c.join(name)).unwrap(), "{name} differs across worker counts");
    }
}

#[test]
fn missing_input_exits_with_io_code() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.ply");
    let ann = write_config(tmp.path(), "a.txt", "0 0\n1 0\n");
    let res = mcop(&[
        "project", "--cloud", path(&missing), "--annotation", path(&ann), "--out", path(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("absent.ply"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "name = \"w\"\nheigth = 1.0\n");
    let res = mcop(&["--config", path(&cfg), "synth", "--out", path(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("heigth"));
}

#[test]
fn invalid_flag_value_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let res = mcop(&["synth", "--spacing=-1", "--out", path(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("spacing"));
}

#[test]
fn stage_by_stage_run_and_self_eval() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let spec = write_config(
        d,
        "wall.toml",
        "name = \"w\"\nfootprint = [[0.0, 0.0], [2.0, 0.0]]\nheight = 0.8\nspacing = 0.02\n",
    );
    let ok = |args: &[&str]| {
        let res = mcop(args);
        assert!(res.status.success(), "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    };
    let syn = d.join("syn");
    ok(&["--config", path(&spec), "synth", "--out", path(&syn)]);
    let ann = syn.join("annotation.txt");
    let sweep = syn.join("sweep.toml");
    let proj = d.join("proj");
    ok(&[
        "project", "--cloud", path(&syn.join("cloud.ply")), "--annotation", path(&ann),
        "--sweep", path(&sweep), "--out", path(&proj),
    ]);
    let image = proj.join("image.mcop");
    let er = d.join("er");
    ok(&["--seed", "5", "erode", "--image", path(&image), "--out", path(&er)]);
    let bank = d.join("bank");
    ok(&["patch-bank", "--images", path(&image), "--w", "24", "--out", path(&bank)]);
    let inp = d.join("inp");
    ok(&[
        "inpaint", "--image", path(&er.join("eroded.mcop")), "--bank", path(&bank.join("bank.mpbk")),
        "--iterations", "1", "--out", path(&inp),
    ]);
    let manifest = std::fs::read_to_string(inp.join("manifest.json")).unwrap();
    assert!(manifest.contains("score_history"));

    let ev = d.join("ev");
    ok(&[
        "eval", "--pred", path(&image), "--truth", path(&image), "--annotation", path(&ann),
        "--sweep", path(&sweep), "--windows", "20", "--w", "24", "--out", path(&ev),
    ]);
    let text = std::fs::read_to_string(ev.join("metrics.txt")).unwrap();
    for key in ["mae_texture", "mae_geometry", "chamfer_cd"] {
        let line = text.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap();
        let value: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
        assert_eq!(value, 0.0, "{key}");
    }

    let rp = d.join("rp");
    ok(&[
        "reproject", "--image", path(&inp.join("completed.mcop")), "--annotation", path(&ann),
        "--sweep", path(&sweep), "--out", path(&rp),
    ]);
    assert!(rp.join("cloud.ply").exists());
}
