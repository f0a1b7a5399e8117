use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ticontrol(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ticontrol"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: [&str; 8] = [
    "--mesh.nt",
    "40",
    "--mesh.nx",
    "41",
    "--mesh.ns",
    "10",
    "--paths",
    "4000",
];

#[test]
fn verify_accepts_the_exponential_lq_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nbuiltin = \"lq-exponential\"\n[mesh]\nnt = 100\nnx = 101\n[verify]\nnested_outer = 100\nnested_inner = 100\n",
    );
    let out = dir.path().join("out");
    let res = ticontrol(&["verify", &cfg], &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("equilibrium_report.json"));
    assert_eq!(report["construct"], "epsilon-ell-equilibrium");
    let rows = report["spike_table"].as_array().unwrap();
    assert_eq!(rows.len(), 45);
    assert!(rows.iter().all(|r| r["pass"] == true));
    assert_eq!(report["dpp_table"][0]["pass"], true);
    let table = std::fs::read_to_string(out.join("equilibrium_spike_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 46);
}

#[test]
fn a_crude_candidate_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nx0 = 1.0\n[verify]\nepsilon = 0.0\ndpp = false\npaths = 4000\nsteps = 40\ntimes = [0.0]\n",
    );
    let res = ticontrol(
        &[
            "verify",
            &cfg,
            "--builtin",
            "lq-exponential",
            "--mesh.nt",
            "1",
            "--mesh.nx",
            "3",
        ],
        &dir.path().join("out"),
    );
    assert_eq!(res.status.code(), Some(2));
    let report = read_json(&dir.path().join("out/equilibrium_report.json"));
    assert_eq!(report["verdict"]["pass"], false);
}

#[test]
fn unknown_key_exits_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nnt = 10\nresolution = 3\n");
    let res = ticontrol(&["solve-pde", &cfg], &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("resolution"));
    let res = ticontrol(&["solve-pde", "/nonexistent/run.toml"], &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn solver_failure_exits_with_the_solver_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[picard]\nmax_iters = 1\ntol = 1e-300\n");
    let mut args = vec!["solve-bsde", cfg.as_str()];
    args.extend(SMALL);
    let res = ticontrol(&args, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("picard_solve"));
}

#[test]
fn cross_check_reports_three_values_and_their_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["cross-check"];
    args.extend(SMALL);
    let res = ticontrol(&args, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let js = read_json(&out.join("triple_solver_agreement.json"));
    let v = |k: &str| js["value_at_x0"][k].as_f64().unwrap();
    let (p, b, l) = (v("pde"), v("bsde"), v("lattice"));
    let gap = |a: f64, c: f64| (a - c).abs() / a.abs().max(c.abs());
    assert_eq!(js["pairwise_gaps"]["pde_bsde"].as_f64().unwrap(), gap(p, b));
    assert_eq!(js["pairwise_gaps"]["pde_lattice"].as_f64().unwrap(), gap(p, l));
    assert_eq!(js["pairwise_gaps"]["bsde_lattice"].as_f64().unwrap(), gap(b, l));
    // coarse meshes still agree to a few percent
    assert!(js["max_gap"].as_f64().unwrap() < 0.06);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 20_240_601);
    assert_eq!(manifest["meshes"]["n_t"], 40);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn every_solver_writes_named_outputs_and_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, files) in [
        (
            "solve-pde",
            vec!["extended_hjb_system.json", "extended_hjb_system_summary.json"],
        ),
        (
            "solve-lattice",
            vec!["lattice_equilibrium.json", "lattice_equilibrium_summary.json"],
        ),
        (
            "solve-bsde",
            vec![
                "bsvie_residual.json",
                "drift_control_bsde_means.json",
                "drift_control_bsde_policy.json",
                "drift_control_bsde_system.json",
            ],
        ),
    ] {
        let out = dir.path().join(cmd);
        let mut args = vec![cmd, "--format", "json"];
        args.extend(SMALL);
        let res = ticontrol(&args, &out);
        assert_eq!(
            res.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        for f in &files {
            let js = read_json(&out.join(f));
            assert!(js["construct"].is_string(), "{cmd}/{f}");
        }
        let manifest = read_json(&out.join("manifest.json"));
        assert_eq!(manifest["files"].as_array().unwrap().len(), files.len());
    }
}

#[test]
fn crra_example_matches_its_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = ticontrol(
        &[
            "example-crra",
            "--builtin",
            "crra-log",
            "--mesh.nt",
            "100",
            "--paths",
            "20000",
        ],
        &out,
    );
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let js = read_json(&out.join("crra_consumption_equilibrium.json"));
    let a0 = js["a_at_0"].as_f64().unwrap();
    // log utility, rate 0.5, unit horizon: a(0) = ∫_0^1 e^{-0.5r} dr + e^{-0.5}
    let tail = (-0.5f64).exp();
    let expect = (1.0 - tail) / 0.5 + tail;
    assert!((a0 - expect).abs() < 1e-6, "{a0} vs {expect}");
    assert!(js["bsde"]["sup_rel_gap_consumption_fraction"].as_f64().unwrap() < 0.05);
    let csv = std::fs::read_to_string(out.join("crra_coefficient.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,a,consumption_fraction"));
}

#[test]
fn reruns_differ_only_in_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["solve-bsde"];
        args.extend(SMALL);
        assert_eq!(ticontrol(&args, &out).status.code(), Some(0));
        let mut m = read_json(&out.join("manifest.json"));
        m.as_object_mut().unwrap().remove("timestamp");
        let means = std::fs::read(out.join("drift_control_bsde_means.csv")).unwrap();
        (m, means)
    };
    assert_eq!(run("a"), run("b"));
}
