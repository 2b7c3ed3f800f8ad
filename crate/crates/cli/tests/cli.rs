use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blendsonic"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_demo() {
    let o = bin().args(["validate", "--config"]).arg(configs().join("demo.toml")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "ok: 48000 Hz, block 256, control 100 Hz, 5 channels, 7 nodes, 8 routes");
}

#[test]
fn validate_reports_every_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "block_size = 0\n[blend]\nmix = 2.0\n").unwrap();
    let o = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("block_size"), "{err}");
    assert!(err.contains("blend.mix"), "{err}");
}

#[test]
fn render_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let render = |name: &str| {
        let out = dir.path().join(name);
        let o = bin()
            .args(["render", "--duration", "1"])
            .arg("--config")
            .arg(configs().join("demo.toml"))
            .arg("--script")
            .arg(configs().join("approach.toml"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = render("a.wav");
    assert_eq!(a, render("b.wav"));
    let spec = hound::WavReader::new(std::io::Cursor::new(&a)).unwrap().spec();
    assert_eq!((spec.channels, spec.sample_rate, spec.bits_per_sample), (5, 48_000, 32));
}

#[test]
fn render_requires_output() {
    let o = bin().args(["render", "--duration", "1"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn probe_lists_devices() {
    let o = bin().arg("probe").output().unwrap();
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["null", "memory", "wav"] {
        assert!(out.lines().any(|l| l.starts_with(name)), "{out}");
    }
}

#[test]
fn run_for_fixed_duration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.wav");
    let o = bin()
        .args(["run", "--duration", "0.3", "--no-api", "--osc-in", "0", "--osc-out", "127.0.0.1:9"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    // threads run on their own wall-clock schedules; only the block count is fixed
    assert!(stderr(&o).contains(" ticks, 57 blocks"), "{}", stderr(&o));
    assert!(std::fs::metadata(out).unwrap().len() > 44);
}

#[test]
fn offline_run_is_lockstep() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("offline.toml");
    std::fs::write(&config, "mode = \"offline\"\n").unwrap();
    let out = dir.path().join("run.wav");
    let o = bin()
        .args(["run", "--duration", "0.3", "--no-api", "--osc-in", "0", "--osc-out", "127.0.0.1:9"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("30 ticks, 57 blocks"), "{}", stderr(&o));
    let rendered = dir.path().join("render.wav");
    let r = bin().args(["render", "--duration", "0.3", "--out"]).arg(&rendered).output().unwrap();
    assert!(r.status.success());
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(rendered).unwrap());
}
