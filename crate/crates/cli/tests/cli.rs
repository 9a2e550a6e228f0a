//! End-to-end tests of the `vtiprop` binary: every subcommand, the exit-code
//! contract, and determinism of runs given a fixed config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vtiprop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vtiprop"))
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn parse_json(out: &Output) -> Value {
    let text = stdout_str(out);
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("bad JSON ({e}):\n{text}"))
}

/// A small, fast scenario; `extra` appends further TOML sections.
fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let body = format!(
        r#"
precision = "single"

[grid]
nx = 16
ny = 14
nz = 15
h = 10.0
dz = 10.0

[stencil]
radius_xy = 2
radius_z = 2

[model]
vz = 2000.0
eps = 0.1
delta = 0.05

[time]
dt = "auto"
steps = 15

[source]
position = [8, 7, 7]
frequency = 25.0
t0 = 0.02

[damping]
width = 3
alpha = 0.02

[run]
threads = 2
{extra}
"#
    );
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_summary(cfg: &Path, args: &[&str]) -> Value {
    let out = vtiprop().arg("run").arg("-c").arg(cfg).args(args).output().unwrap();
    assert!(out.status.success(), "run failed: {}", stderr_str(&out));
    parse_json(&out)
}

#[test]
fn run_produces_a_deterministic_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "[output]\nsummary = \"out/summary.json\"\n",
    );

    let first = run_summary(&cfg, &[]);
    assert_eq!(first["steps"], 15);
    assert_eq!(first["t_index"], 15);
    assert_eq!(first["grid"], serde_json::json!([16, 14, 15]));
    assert_eq!(first["interior_points"], 16 * 14 * 15);
    assert_eq!(first["kernel"], "blocked(z=28,y=20)");
    assert_eq!(first["threads"], 2);
    let margin = first["stability_margin"].as_f64().unwrap();
    assert!((margin - 0.9).abs() < 1e-12, "auto dt margin {margin}");
    let max_abs = first["max_abs_p"].as_f64().unwrap();
    let l2 = first["final_l2_p"].as_f64().unwrap();
    assert!(max_abs.is_finite() && max_abs > 0.0);
    assert!(l2.is_finite() && l2 > 0.0);

    // The summary file mirrors stdout.
    let saved: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(saved["max_abs_p"], first["max_abs_p"]);

    // Same config, same binary, same wavefield — exactly.
    let second = run_summary(&cfg, &[]);
    assert_eq!(second["max_abs_p"], first["max_abs_p"]);
    assert_eq!(second["final_l2_p"], first["final_l2_p"]);
}

#[test]
fn kernel_variants_agree_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let reference = run_summary(&cfg, &["--kernel", "reference"]);
    let blocked = run_summary(&cfg, &["--kernel", "blocked"]);
    let column = run_summary(&cfg, &["--kernel", "column"]);
    assert_eq!(reference["kernel"], "reference");
    assert_eq!(blocked["kernel"], "blocked(z=28,y=20)");
    for other in [&blocked, &column] {
        assert_eq!(other["max_abs_p"], reference["max_abs_p"]);
        assert_eq!(other["final_l2_p"], reference["final_l2_p"]);
    }
}

#[test]
fn zero_steps_is_a_summary_only_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let summary = run_summary(&cfg, &["--steps", "0"]);
    assert_eq!(summary["steps"], 0);
    assert_eq!(summary["t_index"], 0);
    assert_eq!(summary["snapshots_emitted"], 0);
    assert_eq!(summary["max_abs_p"].as_f64().unwrap(), 0.0);
    assert_eq!(summary["final_l2_p"].as_f64().unwrap(), 0.0);
}

#[test]
fn unknown_keys_are_rejected_with_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", "[output]\ntypo_cadence = 3\n");
    let out = vtiprop().arg("run").arg("-c").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_str(&out);
    assert!(err.contains("typo_cadence"), "stderr does not name the bad key: {err}");
}

#[test]
fn missing_model_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let body = r#"
[grid]
nx = 16
ny = 14
nz = 15
h = 10.0
dz = 10.0

[stencil]
radius_xy = 2
radius_z = 2

[model]
file = "absent.bin"

[time]
dt = "auto"
steps = 5

[source]
position = [8, 7, 7]
"#;
    let cfg = dir.path().join("missing.toml");
    std::fs::write(&cfg, body).unwrap();
    let out = vtiprop().arg("run").arg("-c").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_str(&out).contains("absent.bin"), "stderr: {}", stderr_str(&out));
}

#[test]
fn unstable_override_row_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    // Passes the row-sum and parabola checks but is indefinite (positive
    // eigenvalues at high wavenumbers), so the field blows up at any dt.
    std::fs::write(dir.path().join("bad_row.txt"), "20 -7 2\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "unstable.toml",
        "[output]\n",
    );
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("radius_xy = 2", "radius_xy = 2\nxy_weights_file = \"bad_row.txt\"")
        .replace("steps = 15", "steps = 300")
        .replace("threads = 2", "threads = 2\ncheck_finite_every = 25");
    std::fs::write(&cfg, text).unwrap();
    let out = vtiprop().arg("run").arg("-c").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_str(&out));
    let err = stderr_str(&out);
    assert!(err.contains("non-finite"), "stderr: {err}");
}

#[test]
fn weights_radius_one_prints_the_classic_rows() {
    let out = vtiprop()
        .args(["weights", "--rxy", "1", "--dz", "10", "--rz", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("combined_xy: -4 1"), "stdout: {text}");
    assert!(text.contains("one_dimensional: -2 1"), "stdout: {text}");
    let z_line = text
        .lines()
        .find(|l| l.starts_with("z_row_uniform:"))
        .expect("z row line");
    let row: Vec<f64> = z_line
        .trim_start_matches("z_row_uniform:")
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row.len(), 3);
    for (got, want) in row.iter().zip([0.01, -0.02, 0.01]) {
        assert!((got - want).abs() < 1e-12, "z row {row:?}");
    }
}

#[test]
fn perfmodel_reports_the_analytic_model() {
    let out = vtiprop().args(["perfmodel", "--rxy", "12", "--rz", "8"]).output().unwrap();
    assert!(out.status.success());
    let j = parse_json(&out);
    assert_eq!(j["flops_per_point"].as_f64().unwrap(), 92.0);
    assert_eq!(j["intensity"]["ci_pessimistic"].as_f64().unwrap(), 0.359375);
    assert_eq!(j["intensity"]["ci_optimistic"].as_f64().unwrap(), 92.0 / 28.0);
    assert!(j.get("roofline").is_none());

    let out = vtiprop()
        .args([
            "perfmodel",
            "--rxy",
            "12",
            "--rz",
            "8",
            "--peak-flops",
            "666e9",
            "--peak-bandwidth",
            "102.4e9",
            "--modes",
            "100",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let j = parse_json(&out);
    let fraction = j["roofline"]["attainable_fraction"].as_f64().unwrap();
    assert!((fraction - 0.505).abs() < 1e-3, "attainable fraction {fraction}");
    assert!(j["resolution"]["points_per_dim"].as_f64().unwrap() > 100.0);

    // A roofline needs both peaks.
    let out = vtiprop()
        .args(["perfmodel", "--rxy", "2", "--rz", "2", "--peak-flops", "1e9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_reproducible_and_loadable() {
    let dir = TempDir::new().unwrap();
    let cfg_body = r#"
[grid]
nx = 16
ny = 14
nz = 15
h = 10.0
dz = 10.0

[stencil]
radius_xy = 2
radius_z = 2

[model.synthetic]
seed = 9
vz_min = 1500.0
vz_max = 4000.0
eps_max = 0.25

[time]
dt = "auto"
steps = 10

[source]
position = [8, 7, 7]

[damping]
width = 3
alpha = 0.02
"#;
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, cfg_body).unwrap();

    for name in ["a.bin", "b.bin"] {
        let out = vtiprop()
            .arg("synth")
            .arg("-c")
            .arg(&cfg)
            .arg("-o")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "synth failed: {}", stderr_str(&out));
    }
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    let b = std::fs::read(dir.path().join("b.bin")).unwrap();
    assert_eq!(a.len(), 3 * 4 * 16 * 14 * 15);
    assert_eq!(a, b, "same seed must give identical model bytes");

    let sidecar: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a.bin.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["nx"], 16);
    assert_eq!(sidecar["dz"].as_f64().unwrap(), 10.0);
    assert_eq!(sidecar["fields"], serde_json::json!(["vz", "eps", "delta"]));

    // The written model drives a run.
    let run_body = cfg_body.replace(
        "[model.synthetic]\nseed = 9\nvz_min = 1500.0\nvz_max = 4000.0\neps_max = 0.25",
        "[model]\nfile = \"a.bin\"",
    );
    let run_cfg = dir.path().join("from_file.toml");
    std::fs::write(&run_cfg, run_body).unwrap();
    let summary = run_summary(&run_cfg, &[]);
    assert_eq!(summary["steps"], 10);
    assert!(summary["max_abs_p"].as_f64().unwrap() > 0.0);
}

#[test]
fn snapshots_and_sidecars_are_written() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "snaps.toml",
        r#"[output]
directory = "snaps"

[[snapshots]]
field = "p"
every = 5

[[snapshots]]
field = "q"
every = 10
plane = { axis = "z", index = 7 }
"#,
    );
    let summary = run_summary(&cfg, &["--steps", "10"]);
    assert_eq!(summary["snapshots_emitted"], 3);

    let snaps = dir.path().join("snaps");
    let volume_bytes = 16 * 14 * 15 * 4;
    for (name, bytes) in [
        ("p_step0000005.bin", volume_bytes),
        ("p_step0000010.bin", volume_bytes),
        ("q_step0000010_z7.bin", 16 * 14 * 4),
    ] {
        let bin = snaps.join(name);
        assert_eq!(
            std::fs::metadata(&bin).unwrap_or_else(|_| panic!("{name} missing")).len(),
            bytes as u64,
            "{name}"
        );
        let sidecar: Value = serde_json::from_str(
            &std::fs::read_to_string(bin.with_extension("json")).unwrap(),
        )
        .unwrap();
        assert_eq!(sidecar["dtype"], "f32");
        assert_eq!(sidecar["byte_order"], "little");
    }
    let plane: Value = serde_json::from_str(
        &std::fs::read_to_string(snaps.join("q_step0000010_z7.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(plane["dims"], serde_json::json!([16, 14]));
    assert_eq!(plane["field"], "q");
}

#[test]
fn bench_reports_consistent_throughput() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bench.toml", "");
    let out = vtiprop()
        .arg("bench")
        .arg("-c")
        .arg(&cfg)
        .args(["--steps", "2", "--warmup", "1", "--reps", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "bench failed: {}", stderr_str(&out));
    let j = parse_json(&out);
    assert_eq!(j["steps_timed"], 2);
    assert_eq!(j["precision"], "single");
    assert_eq!(j["radii"], serde_json::json!([2, 2]));
    assert_eq!(j["modeled_flops_per_point"], 18); // 5·2 + 4·2
    let reps: Vec<f64> =
        j["rep_seconds"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(reps.len(), 2);

    // The derived rates are exactly the documented expressions.
    let elapsed = j["elapsed_sec"].as_f64().unwrap();
    let mut sorted = reps.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    assert_eq!(elapsed, 0.5 * (sorted[0] + sorted[1]));
    assert_eq!(j["noise_band_sec"].as_f64().unwrap(), sorted[1] - sorted[0]);
    let sweeps = j["sweeps_per_sec"].as_f64().unwrap();
    assert_eq!(sweeps, 2.0 / elapsed);
    let pps = j["points_per_sec"].as_f64().unwrap();
    assert_eq!(pps, sweeps * (16 * 14 * 15) as f64);
    assert_eq!(j["modeled_flops_per_sec"].as_f64().unwrap(), pps * 18.0);
}

#[test]
fn autotune_default_sweep_covers_the_block_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "tune.toml", "");
    let out = vtiprop()
        .arg("autotune")
        .arg("-c")
        .arg(&cfg)
        .args(["--steps", "1", "--warmup", "0", "--reps", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "autotune failed: {}", stderr_str(&out));
    let j = parse_json(&out);
    let candidates = j["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 16, "default sweep is 4×4");
    assert!(
        candidates.iter().any(|c| c["block_z"] == 28 && c["block_y"] == 20),
        "default sweep must include (28, 20)"
    );
    let best = j["best_points_per_sec"].as_f64().unwrap();
    for c in candidates {
        assert!(best >= c["report"]["points_per_sec"].as_f64().unwrap());
    }
}

#[test]
fn thread_count_precedence_is_flag_env_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "threads.toml", "");
    let summary = run_summary(&cfg, &[]);
    assert_eq!(summary["threads"], 2, "config value");

    let out = vtiprop()
        .arg("run")
        .arg("-c")
        .arg(&cfg)
        .env("VTIPROP_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(parse_json(&out)["threads"], 3, "env overrides config");

    let out = vtiprop()
        .arg("run")
        .arg("-c")
        .arg(&cfg)
        .env("VTIPROP_THREADS", "3")
        .args(["--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(parse_json(&out)["threads"], 1, "flag overrides env");
}
