//! The command-line contract: files, exit codes, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sde-select"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, l96) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("l96"));
    let ou = config("ou.cfg");
    run_ok(&["simulate", "--config", s(&ou), "--out", s(&a)]);
    run_ok(&["simulate", "--config", s(&ou), "--out", s(&b)]);
    assert_eq!(data_rows(&a.join("observations.csv")), 40);
    assert_eq!(data_rows(&a.join("latent.csv")), 201);
    for f in ["latent.csv", "observations.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config"]["selection"]["tau1"], 2.9);
    assert!(m["version"].is_string());

    run_ok(&["simulate", "--config", s(&config("l96.cfg")), "--out", s(&l96)]);
    assert_eq!(data_rows(&l96.join("latent.csv")), 1001);
    assert_eq!(data_rows(&l96.join("observations.csv")), 200);
}

#[test]
fn config_errors_exit_1_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(config("ou.cfg")).unwrap().replace("dt = 0.01", "dt = fast");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["simulate", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system.dt"));

    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = run(&["simulate", "--config", s(&config("ou.cfg")), "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn dry_run_prints_defaults_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["select", "--config", s(&config("ou.cfg")), "--out", s(dir.path()), "--dry-run"]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["selection"]["q_active"], 0.9);
    assert_eq!(printed["inference"]["s0_sq"], 4.0);
    assert!(printed["selection"]["mu0"].is_null());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn ou_pipeline_select_infer_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let ou = config("ou.cfg");
    run_ok(&["simulate", "--config", s(&ou), "--out", s(out)]);
    run_ok(&["select", "--config", s(&ou), "--out", s(out)]);
    let decision = json(&out.join("select/decision.json"));
    assert_eq!(decision["report"]["selected_indices"], serde_json::json!([2]));
    assert_eq!(decision["reduced"]["system"], "OU");
    for f in ["gamma_probs.json", "ss_chain.csv", "manifest.json"] {
        assert!(out.join("select").join(f).exists(), "{f}");
    }

    let desk = config("ou_desk.cfg");
    run_ok(&["infer", "--config", s(&desk), "--out", s(out), "--vanilla"]);
    let infer = out.join("infer");
    for f in ["inf_chain.csv", "sigma_draws.csv", "summary.json", "vanilla_chain.csv", "manifest.json"] {
        assert!(infer.join(f).exists(), "{f}");
    }
    let first = std::fs::read(infer.join("summary.json")).unwrap();
    run_ok(&["infer", "--config", s(&desk), "--out", s(out)]);
    assert_eq!(std::fs::read(infer.join("summary.json")).unwrap(), first);

    // the manifest reproduces the run byte for byte
    let chain = std::fs::read(infer.join("inf_chain.csv")).unwrap();
    run_ok(&["infer", "--config", s(&infer.join("manifest.json"))]);
    assert_eq!(std::fs::read(infer.join("inf_chain.csv")).unwrap(), chain);
    assert_eq!(std::fs::read(infer.join("summary.json")).unwrap(), first);

    let inf_chain = infer.join("inf_chain.csv");
    run_ok(&["diagnose", "--out", s(out), "--chain", s(&inf_chain)]);
    let acf = std::fs::read_to_string(out.join("diagnose/acf.csv")).unwrap();
    let lag0: Vec<&str> = acf.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(lag0[0], "0");
    assert!(lag0[1..].iter().all(|v| *v == "1"), "{lag0:?}");
    let density = std::fs::read_to_string(out.join("diagnose/density.csv")).unwrap();
    assert!(density.starts_with("param,bin_left,bin_right,density"));
    assert_eq!(density.lines().count(), 1 + 2 * 200);
    assert!(out.join("diagnose/summary.json").exists());

    let cmp = run_ok(&["diagnose", "--out", s(out), "--compare", s(&inf_chain), s(&infer.join("vanilla_chain.csv"))]);
    let text = String::from_utf8_lossy(&cmp.stdout);
    assert!(text.contains("theta: ESS linchpin") && text.contains("ratio"), "{text}");

    let missing = run(&["diagnose", "--out", s(out), "--chain", s(&inf_chain), "--params", "kappa"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("theta") && err.contains("Sigma[1]"), "{err}");
}

#[test]
fn empty_active_set_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let desk = config("ou_desk.cfg");
    run_ok(&["simulate", "--config", s(&desk), "--out", s(out)]);
    run_ok(&["select", "--config", s(&desk), "--out", s(out)]);
    let path = out.join("select/decision.json");
    let mut d = json(&path);
    d["mask"] = serde_json::json!([[0, 0, 0, 0, 0]]);
    std::fs::write(&path, serde_json::to_string(&d).unwrap()).unwrap();
    let res = run(&["infer", "--config", s(&desk), "--out", s(out)]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no dictionary term"));
}

#[test]
fn non_finite_start_exits_3_naming_the_term() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let desk = config("ou_desk.cfg");
    run_ok(&["simulate", "--config", s(&desk), "--out", s(out)]);
    let obs = out.join("observations.csv");
    let text = std::fs::read_to_string(&obs).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = format!("{},1e200", lines[1].split(',').next().unwrap());
    std::fs::write(&obs, lines.join("\n") + "\n").unwrap();
    let res = run(&["select", "--config", s(&desk), "--out", s(out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("not finite"));
}

#[test]
fn several_chains_and_forced_template() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let desk = config("ou_desk.cfg");
    run_ok(&["simulate", "--config", s(&desk), "--out", s(out)]);
    run_ok(&["infer", "--config", s(&desk), "--out", s(out), "--template", "OU", "--chains", "2"]);
    let a = json(&out.join("infer/chain_0/summary.json"));
    let b = json(&out.join("infer/chain_1/summary.json"));
    assert_eq!(a["seed"].as_u64().unwrap() + 1, b["seed"].as_u64().unwrap());
    assert_ne!(a["parameters"], b["parameters"]);
    assert_eq!(a["system"], "OU");
}

#[test]
fn butterfly_table_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_ok(&["diagnose", "--butterfly", "--butterfly-seeds", "1", "--out", s(dir.path())]);
    let table = std::fs::read_to_string(dir.path().join("diagnose/butterfly_table.csv")).unwrap();
    assert!(table.starts_with("s,sigma_x,sigma_y,sigma_z,ref_x,ref_y,ref_z,analytic"));
    assert_eq!(table.lines().count(), 6);
    assert!(String::from_utf8_lossy(&res.stdout).contains("analytic"));
}
