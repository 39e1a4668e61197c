use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const KINDS: [&str; 6] = ["env-sample", "solve", "fk", "lyapunov-sweep", "diagnostics", "percolation"];

fn config(kind: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{}.toml", kind.replace('-', "_")))
}

fn pamlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamlab")).args(args).output().unwrap()
}

/// CSV bodies keyed by file name.
fn run(kind: &str, out: &Path, threads: &str) -> BTreeMap<String, Vec<u8>> {
    let o = pamlab(&[
        kind,
        "--config",
        config(kind).to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        threads,
    ]);
    assert!(o.status.success(), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn every_subcommand_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let a = run(kind, &dir.path().join(format!("{kind}-a")), "1");
        let b = run(kind, &dir.path().join(format!("{kind}-b")), "1");
        let c = run(kind, &dir.path().join(format!("{kind}-c")), "8");
        assert!(!a.is_empty(), "{kind} wrote no CSV");
        assert_eq!(a, b, "{kind}: repeated run differs");
        assert_eq!(a, c, "{kind}: thread count changes output");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let base = run("env-sample", &dir.path().join("a"), "2");
    let o = pamlab(&[
        "env-sample",
        "--config",
        config("env-sample").to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(dir.path().join("b/events.csv")).unwrap(), base["events.csv"]);
    let manifest = std::fs::read_to_string(dir.path().join("b/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"));
}

#[test]
fn invalid_config_exits_nonzero_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[lattice]\ndim = 1\nside = 2\n", "lattice.side"),
        ("[lattice]\ndim = 1\nside = 8\n[env]\nmodel = \"zero_range\"\nrho = 1.0\nbeta = 1.5\n", "env.beta"),
    ];
    for (i, (body, field)) in cases.iter().enumerate() {
        let mut text = String::from("horizon = 1.0\nt_grid = [0.5]\n");
        if !body.contains("[env]") {
            text.push_str("[env]\nmodel = \"constant\"\nvalue = 0.0\n");
        }
        text.push_str(body);
        let path = dir.path().join(format!("bad{i}.toml"));
        std::fs::write(&path, text).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let o = pamlab(&["solve", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{err}");
        assert!(!out.exists());
    }
}

#[test]
fn time_past_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(
        &path,
        "horizon = 1.0\nt_grid = [0.5, 2.0]\n[lattice]\ndim = 1\nside = 8\n[env]\nmodel = \"constant\"\nvalue = 0.0\n",
    )
    .unwrap();
    let o = pamlab(&["solve", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_grid"));
}
