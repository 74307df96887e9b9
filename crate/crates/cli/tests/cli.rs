use std::path::Path;
use std::process::{Command, Output};

fn bpvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpvec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_smoke(out: &Path) {
    let o = bpvec(&[
        "run",
        "smoke",
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn smoke_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_smoke(&a);
    run_smoke(&b);
    for f in ["smoke.csv", "manifest.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between runs");
    }
    let csv = std::fs::read_to_string(a.join("smoke.csv")).unwrap();
    assert!(csv.starts_with(
        "experiment,scheme,sweep_variable,sweep_value,repetition,metric,value,status"
    ));
}

#[test]
fn lists_shipped_experiments() {
    let o = bpvec(&["list-experiments"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["fig3a", "fig4", "fig7", "smoke"] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn validate_rejects_unknown_spec() {
    let o = bpvec(&["validate", "no-such-experiment"]);
    assert!(!o.status.success());
    assert!(bpvec(&["validate", "fig6b"]).status.success());
}

#[test]
fn scenario_prints_json() {
    let o = bpvec(&["scenario"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rng_seed"], 7);
}
