//! End-to-end runs of the `backstep` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use backstep_core::transforms::io::{read_kernel, write_kernel};
use tempfile::TempDir;

fn backstep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backstep"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// `(t, l2_norm)` rows of norms.csv.
fn norms(dir: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(dir.join("norms.csv"))
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect()
}

const UNSTABLE: &[&str] = &["--catalog", "unstable_2x2", "--c", "4", "--nx", "32", "--N", "200"];

/// `command` on the unstable example followed by `extra`.
fn unstable<'a>(command: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    std::iter::once(command).chain(UNSTABLE.iter().copied()).chain(extra.iter().copied()).collect()
}

#[test]
fn synthesize_example_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = backstep(dir.path(), &["synthesize", "--catalog", "example_1_5", "--nx", "16", "--nt", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["gain.csv", "gain.bin", "kernels.bin", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{}", f);
    }
    let s = summary(dir.path());
    assert!((s["topt"].as_f64().unwrap() - 2.0).abs() <= 1e-3);
    let hash = s["config_hash"].as_str().unwrap().to_string();
    assert!(!hash.is_empty());
    let csv = fs::read_to_string(dir.path().join("gain.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash={}", hash));
    let (_, embedded) = read_kernel(fs::File::open(dir.path().join("kernels.bin")).unwrap()).unwrap();
    assert_eq!(embedded, hash);
}

#[test]
fn every_output_embeds_the_same_hash() {
    let dir = TempDir::new().unwrap();
    let gain = dir.path().join("gain.bin");
    let gain = gain.to_str().unwrap();
    // the hash covers the resolved config, so every command gets the same flags
    let shared = ["--T", "0.5"];
    assert_eq!(code(&backstep(dir.path(), &unstable("synthesize", &shared))), 0);
    assert_eq!(code(&backstep(dir.path(), &unstable("simulate", &[&shared[..], &["--gain", gain]].concat()))), 0);
    assert_eq!(code(&backstep(dir.path(), &unstable("topt", &shared))), 0);
    assert_eq!(code(&backstep(dir.path(), &unstable("verify", &[&shared[..], &["--checks", "trace,triangular"]].concat()))), 0);
    let hash = summary(dir.path())["config_hash"].as_str().unwrap().to_string();
    for f in ["gain.csv", "trace.csv", "norms.csv"] {
        let first = fs::read_to_string(dir.path().join(f)).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, format!("# config_hash={}", hash), "{}", f);
    }
    for f in ["topt.json", "report.json"] {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(f)).unwrap()).unwrap();
        assert_eq!(v["config_hash"].as_str().unwrap(), hash, "{}", f);
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        assert_eq!(code(&backstep(dir.path(), &unstable("synthesize", &[]))), 0);
        let gain = dir.path().join("gain.bin");
        assert_eq!(code(&backstep(dir.path(), &unstable("simulate", &["--gain", gain.to_str().unwrap(), "--T", "1"]))), 0);
    }
    for f in ["gain.csv", "gain.bin", "kernels.bin", "trace.csv", "norms.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f);
    }
}

#[test]
fn zero_horizon_gives_the_initial_state() {
    let dir = TempDir::new().unwrap();
    let out = backstep(dir.path(), &unstable("simulate", &["--open-loop", "--T", "0", "--y0", "x*(1-x)", "--y0", "0.5"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(2).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201);
    for r in rows {
        assert_eq!(r[0], 0.0);
        assert_eq!(r[2], r[1] * (1.0 - r[1]));
        assert_eq!(r[3], 0.5);
    }
}

#[test]
fn open_loop_unstable_system_grows() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&backstep(dir.path(), &unstable("simulate", &["--open-loop", "--T", "10"]))), 0);
    let rows = norms(dir.path());
    assert!(rows.last().unwrap().1 > 10.0 * rows[0].1, "{:?}", rows.last());
}

#[test]
fn closed_loop_settles_after_the_optimal_time() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&backstep(dir.path(), &unstable("synthesize", &[]))), 0);
    let gain = dir.path().join("gain.bin");
    assert_eq!(code(&backstep(dir.path(), &unstable("simulate", &["--gain", gain.to_str().unwrap(), "--T", "2.2"]))), 0);
    let rows = norms(dir.path());
    assert!((rows.last().unwrap().0 - 2.2).abs() < 1e-9);
    let ratio = rows.last().unwrap().1 / rows[0].1;
    assert!(ratio <= 0.05, "{}", ratio);
}

#[test]
fn zero_coupling_gives_zero_gain() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&backstep(dir.path(), &["synthesize", "--catalog", "const_2x2", "--M", "zero", "--nx", "16"])), 0);
    assert_eq!(summary(dir.path())["gain_max_abs"].as_f64().unwrap(), 0.0);
    let csv = fs::read_to_string(dir.path().join("gain.csv")).unwrap();
    assert!(csv.lines().skip(2).all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn corrupted_kernel_fails_the_trace_check() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&backstep(dir.path(), &unstable("synthesize", &[]))), 0);
    assert_eq!(code(&backstep(dir.path(), &unstable("verify", &["--checks", "trace"]))), 0);
    let path = dir.path().join("kernels.bin");
    let (mut kernel, hash) = read_kernel(fs::File::open(&path).unwrap()).unwrap();
    for v in kernel.entries[1].lower.iter_mut() {
        *v += 0.25;
    }
    write_kernel(&kernel, &hash, fs::File::create(&path).unwrap()).unwrap();
    let out = backstep(dir.path(), &unstable("verify", &["--checks", "trace"]));
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn settling_time_check_runs_alone() {
    let dir = TempDir::new().unwrap();
    let example = ["--catalog", "example_1_5", "--nx", "16", "--nt", "9"];
    assert_eq!(code(&backstep(dir.path(), &[&["synthesize"][..], &example].concat())), 0);
    fs::remove_file(dir.path().join("kernels.bin")).unwrap();
    fs::remove_file(dir.path().join("gain.bin")).unwrap();
    let out = backstep(dir.path(), &[&["verify", "--checks", "topt"][..], &example].concat());
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scenario.json");
    fs::write(&cfg, r#"{"system": {"catalog": "const_2x2", "params": {"q": "0.5"}}, "grids": {"nx": 8, "n_sim": 50}}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&backstep(dir.path(), &["synthesize", "--config", cfg])), 0);
    assert_eq!(summary(dir.path())["kernel"]["nx"], 8);
    assert_eq!(code(&backstep(dir.path(), &["synthesize", "--config", cfg, "--nx", "16"])), 0);
    let s = summary(dir.path());
    assert_eq!(s["kernel"]["nx"], 16);
    assert_eq!(s["config"]["grids"]["n_sim"], 50);
    assert_eq!(s["config"]["system"]["params"]["q"], "0.5");
}

#[test]
fn usage_and_io_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.json");
    let out = backstep(dir.path(), &["synthesize", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    assert_eq!(code(&backstep(dir.path(), &["synthesize", "--catalog", "no_such_system"])), 2);
    assert_eq!(code(&backstep(dir.path(), &["simulate", "--catalog", "const_2x2"])), 2);
    assert_eq!(code(&backstep(dir.path(), &["verify", "--catalog", "const_2x2", "--checks", "trace"])), 2);
    assert_eq!(code(&backstep(dir.path(), &["synthesize", "--catalog", "const_2x2", "--nx", "1"])), 2);
}

#[test]
fn invalid_system_is_refused() {
    let dir = TempDir::new().unwrap();
    let out = backstep(dir.path(), &["synthesize", "--catalog", "remark_1_7_3x3", "--nx", "16"]);
    assert_ne!(code(&out), 0);
    assert!(!out.stderr.is_empty());
}
