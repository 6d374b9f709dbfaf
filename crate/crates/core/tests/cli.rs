use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pfrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfrac")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", "sent", "--scale", "0.1", "--set", "program.steps=3", "--out"];
    let out = out.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    pfrac(&args)
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn run_writes_outputs_and_audits_clean() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    let o = run_small(&out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let load = read(&out.join("load_disp.csv"));
    let rows: Vec<&str> = load.lines().collect();
    assert_eq!(rows[0], "step,displacement,reaction");
    assert_eq!(rows[1], "0,0e0,0e0");
    assert_eq!(rows.len(), 5);
    let energy = read(&out.join("energy.csv"));
    assert!(energy.starts_with("step,E,sum_D,dE_plus_D,LB,UB,passed"));
    assert_eq!(energy.lines().count(), 5);
    for n in 0..=3 {
        assert!(out.join(format!("snapshots/step_{n:06}.vtk")).is_file());
    }
    assert!(out.join("mesh.msh").is_file());
    let log: serde_json::Value = serde_json::from_str(&read(&out.join("run.json"))).unwrap();
    assert_eq!(log["status"], "completed");
    assert_eq!(log["config"]["backtrack"]["max_back"], 50);
    assert_eq!(code(&pfrac(&["check-energy", out.to_str().unwrap()])), 0);
}

#[test]
fn tampered_energy_fails_audit() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    assert_eq!(code(&run_small(&out, &[])), 0);
    let path = out.join("energy.csv");
    let text = read(&path);
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cols: Vec<String> = lines[2].split(',').map(str::to_string).collect();
    let e: f64 = cols[1].parse().unwrap();
    cols[1] = format!("{:e}", e * (1.0 + 1e-6));
    lines[2] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = pfrac(&["check-energy", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mismatch"));
}

#[test]
fn missing_snapshot_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    assert_eq!(code(&run_small(&out, &[])), 0);
    fs::remove_file(out.join("snapshots/step_000002.vtk")).unwrap();
    assert_eq!(code(&pfrac(&["check-energy", out.to_str().unwrap()])), 2);
    assert_eq!(code(&pfrac(&["check-energy", d.path().join("nothing").to_str().unwrap()])), 2);
}

#[test]
fn rerun_replaces_outputs_identically() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    assert_eq!(code(&run_small(&out, &[])), 0);
    let first = read(&out.join("energy.csv"));
    let snap = fs::read(out.join("snapshots/step_000003.vtk")).unwrap();
    fs::write(out.join("snapshots/step_000099.vtk"), "stale").unwrap();
    assert_eq!(code(&run_small(&out, &[])), 0);
    assert_eq!(read(&out.join("energy.csv")), first);
    assert_eq!(fs::read(out.join("snapshots/step_000003.vtk")).unwrap(), snap);
    assert!(!out.join("snapshots/step_000099.vtk").exists());
}

#[test]
fn backtracking_run_keeps_intermediates() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    let o = pfrac(&["run", "--preset", "sent", "--scale", "0.1", "--save-intermediates", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let im = read(&out.join("intermediates.csv"));
    assert!(im.lines().count() > 1);
    assert!(fs::read_dir(out.join("intermediates")).unwrap().count() > 0);
    let log: serde_json::Value = serde_json::from_str(&read(&out.join("run.json"))).unwrap();
    assert!(!log["events"].as_array().unwrap().is_empty());
    assert_eq!(read(&out.join("energy.csv")).lines().count(), 102);
    assert_eq!(code(&pfrac(&["check-energy", out.to_str().unwrap()])), 0);
}

#[test]
fn exported_config_reproduces_the_preset_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("sent.toml");
    let msh = d.path().join("sent.msh");
    let o = pfrac(&[
        "export", "--preset", "sent", "--scale", "0.1", "--set", "program.steps=3", "-o",
        cfg.to_str().unwrap(), "--mesh", msh.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(read(&msh).starts_with("$MeshFormat"));
    let a = d.path().join("a");
    let b = d.path().join("b");
    assert_eq!(code(&run_small(&a, &[])), 0);
    assert_eq!(code(&pfrac(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])), 0);
    for f in ["energy.csv", "load_disp.csv", "snapshots/step_000003.vtk"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    assert_eq!(code(&run_small(&out, &["--set", "material.ell=-1"])), 2);
    assert_eq!(code(&run_small(&out, &["--set", "material.colour=3"])), 2);
    assert_eq!(code(&run_small(&out, &["--eta=-1"])), 2);
    assert_eq!(code(&pfrac(&["run", "--preset", "nope"])), 2);
    assert_eq!(code(&pfrac(&["run", "--preset", "sent", "--scale", "2"])), 2);
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[run\n").unwrap();
    assert_eq!(code(&pfrac(&["run", "--config", bad.to_str().unwrap()])), 2);
}
