//! Command-line front end. Every subcommand reads a configuration (see
//! [`crate::config`]), runs, and writes its tables plus `manifest.json` into
//! the output directory.
//!
//! Exit codes: 0 success, 1 solver error, 2 verification failure, 3
//! configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::bsde::{
    bsvie_residual, extract_policy, picard_solve, write_policy_csv, BsdeSolution, PicardConfig, RegressionBasis,
};
use crate::builtins::crra_consumption_with;
use crate::closed_forms::{crra_coefficient_a, log_coefficient_a, CoefficientSolver};
use crate::config::{Candidate, Explore, Format, Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::lattice::{lattice_policy_export, solve_lattice, LatticeEquilibrium, LatticeParams, SGrid};
use crate::mc::{simulate_paths, sub_seed, McParams, PathEnsemble, TimeGrid};
use crate::pde::{solve_extended_hjb, PdeGrids};
use crate::problem::{Policy, ProblemSpec};
use crate::verify::{
    adjusted_reward_consistency, deviation_library, dpp_residual, reduction_check, spike_test, write_spike_csv,
    AdjustedRewardParams, EquilibriumReport, NestedBudget,
};

const OP: &str = "cli";

#[derive(Debug, Parser)]
#[command(
    name = "ticontrol",
    version,
    about = "Equilibrium solvers for time-inconsistent drift control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference solve of the extended HJB system.
    SolvePde(RunArgs),
    /// Regression Monte Carlo solve of the BSDE system.
    SolveBsde(RunArgs),
    /// Sophisticated backward induction on a trinomial lattice.
    SolveLattice(RunArgs),
    /// Spike-deviation, dynamic-programming and reformulation checks of a candidate policy.
    Verify(RunArgs),
    /// Closed-form CRRA consumption coefficient, checked against the BSDE solver.
    ExampleCrra(RunArgs),
    /// Value at (0, x0) from the PDE, BSDE and lattice solvers with pairwise gaps.
    CrossCheck(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file; omitted means all defaults.
    config: Option<PathBuf>,
    /// Built-in base problem, overriding `[problem] builtin`.
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "ticontrol-out")]
    out: PathBuf,
    #[arg(long = "mesh.nt")]
    nt: Option<usize>,
    #[arg(long = "mesh.nx")]
    nx: Option<usize>,
    #[arg(long = "mesh.ns")]
    ns: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let src = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config(OP, format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let ov = Overrides {
            builtin: self.builtin.clone(),
            seed: self.seed,
            nt: self.nt,
            nx: self.nx,
            ns: self.ns,
            paths: self.paths,
            format: self.format.map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            }),
        };
        RunConfig::parse(&src, &ov)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("ticontrol: verification failed");
            2
        }
        Err(e) => {
            eprintln!("ticontrol: {e}");
            if e.is_config() {
                3
            } else {
                1
            }
        }
    }
}

/// Tables and summaries of one run, written as they are produced.
struct Outputs {
    dir: PathBuf,
    format: Format,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path, format: Format) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    /// Writes a table produced as CSV, converted when JSON is requested.
    fn table(&mut self, stem: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        match self.format {
            Format::Csv => self.save(&format!("{stem}.csv"), &buf),
            Format::Json => {
                let text = String::from_utf8_lossy(&buf);
                let v = csv_to_json(stem, &text);
                self.json(stem, &v)
            }
        }
    }

    fn json(&mut self, stem: &str, v: &Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(v)?;
        bytes.push(b'\n');
        self.save(&format!("{stem}.json"), &bytes)
    }

    fn save(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        log::info!("wrote {}", self.dir.join(name).display());
        self.files.push(name.to_string());
        Ok(())
    }

    fn manifest(mut self, command: &str, cfg: &RunConfig) -> Result<()> {
        let mut hasher = Sha256::new();
        hasher.update(format!("{cfg:?}").as_bytes());
        let hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.files.sort();
        let v = json!({
            "construct": "run-manifest",
            "command": command,
            "builtin": cfg.builtin,
            "config_sha256": hash,
            "seed": cfg.mc.seed,
            "meshes": {
                "n_t": cfg.mesh.nt,
                "n_x": cfg.mesh.nx,
                "n_s": cfg.mesh.ns,
                "paths": cfg.mc.paths,
                "verify_steps": cfg.verify.steps,
                "verify_paths": cfg.verify.paths,
            },
            "version": env!("CARGO_PKG_VERSION"),
            "files": self.files,
            "timestamp": stamp,
        });
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        std::fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

/// `{construct, columns, rows}` with numeric cells as numbers, `true`/`false`
/// as booleans and blanks as null.
fn csv_to_json(construct: &str, text: &str) -> Value {
    let mut lines = text.lines();
    let columns: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    let rows: Vec<Value> = lines
        .map(|line| {
            Value::Array(
                line.split(',')
                    .map(|cell| match cell {
                        "" => Value::Null,
                        "true" => Value::Bool(true),
                        "false" => Value::Bool(false),
                        _ => match cell.parse::<f64>() {
                            Ok(x) => json!(x),
                            Err(_) => Value::String(cell.to_string()),
                        },
                    })
                    .collect(),
            )
        })
        .collect();
    json!({ "construct": construct.replace('_', "-"), "columns": columns, "rows": rows })
}

fn lattice_params(cfg: &RunConfig) -> LatticeParams<f64> {
    let mut p = LatticeParams::new(cfg.mesh.nt, cfg.mesh.nx).with_s_grid(SGrid::Intervals(cfg.mesh.ns));
    p.x_range = cfg.mesh.x_range;
    p
}

fn pde_grids(cfg: &RunConfig) -> PdeGrids<f64> {
    let mut g = PdeGrids::new(cfg.mesh.nt, cfg.mesh.nx).with_s_grid(SGrid::Intervals(cfg.mesh.ns));
    g.x_range = cfg.mesh.x_range;
    g
}

fn exploration(
    cfg: &RunConfig,
    spec: &ProblemSpec<f64>,
    lattice: Option<&LatticeEquilibrium<f64>>,
) -> Result<Policy<f64>> {
    match (cfg.mc.explore, lattice) {
        (Explore::Midpoint, _) => Ok(Policy::Constant(spec.actions.midpoint())),
        (Explore::Lattice, Some(eq)) => Ok(lattice_policy_export(eq)),
        (Explore::Lattice, None) => Ok(lattice_policy_export(&solve_lattice(spec, &lattice_params(cfg))?)),
    }
}

fn solve_bsde(
    cfg: &RunConfig,
    spec: &ProblemSpec<f64>,
    explore: &Policy<f64>,
    basis: RegressionBasis,
) -> Result<(PathEnsemble<f64>, BsdeSolution<f64>)> {
    let grid = TimeGrid::new(0.0, spec.horizon, cfg.mesh.nt)?;
    let ens = simulate_paths(spec, explore, grid, spec.x0, cfg.mc.paths, cfg.mc.seed)?;
    let pc = PicardConfig {
        max_iters: cfg.picard.max_iters,
        tol: cfg.picard.tol,
        weight: cfg.picard.weight,
        damping: cfg.picard.damping,
        s_grid: Some(SGrid::Intervals(cfg.mesh.ns)),
        basis,
        seed: cfg.mc.seed,
    };
    let sol = picard_solve(spec, &ens, &pc)?;
    Ok((ens, sol))
}

fn default_basis(cfg: &RunConfig) -> RegressionBasis {
    cfg.picard.basis.unwrap_or_else(|| RegressionBasis::polynomial(4))
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Returns `Ok(false)` when a verification ran and failed.
fn execute(command: &Command) -> Result<bool> {
    let (name, args) = match command {
        Command::SolvePde(a) => ("solve-pde", a),
        Command::SolveBsde(a) => ("solve-bsde", a),
        Command::SolveLattice(a) => ("solve-lattice", a),
        Command::Verify(a) => ("verify", a),
        Command::ExampleCrra(a) => ("example-crra", a),
        Command::CrossCheck(a) => ("cross-check", a),
    };
    let cfg = args.load()?;
    let mut out = Outputs::new(&args.out, cfg.output.format)?;
    let spec = &cfg.spec;
    log::info!("{name}: builtin {} with seed {}", cfg.builtin, cfg.mc.seed);
    let mut pass = true;
    match command {
        Command::SolvePde(_) => {
            let sol = solve_extended_hjb(spec, &pde_grids(&cfg))?;
            out.table("extended_hjb_system", |w| sol.write_csv(w))?;
            out.json("extended_hjb_system_summary", &sol.summary_json(spec))?;
        }
        Command::SolveLattice(_) => {
            let eq = solve_lattice(spec, &lattice_params(&cfg))?;
            out.table("lattice_equilibrium", |w| eq.write_csv(w))?;
            let lat = &eq.lattice;
            out.json(
                "lattice_equilibrium_summary",
                &json!({
                    "construct": "lattice-equilibrium",
                    "n_t": lat.n_t(),
                    "n_x": lat.n_x(),
                    "n_s": cfg.mesh.ns,
                    "x_range": [lat.xs[0], lat.xs[lat.n_x() - 1]],
                    "value_at_x0": eq.value(0, spec.x0),
                }),
            )?;
        }
        Command::SolveBsde(_) => {
            let explore = exploration(&cfg, spec, None)?;
            let (ens, sol) = solve_bsde(&cfg, spec, &explore, default_basis(&cfg))?;
            let policy = extract_policy(&sol, spec, &ens, cfg.mesh.nx)?;
            let residual = bsvie_residual(spec, &ens, &sol)?;
            out.table("drift_control_bsde_means", |w| sol.write_means_csv(w))?;
            out.table("drift_control_bsde_policy", |w| write_policy_csv(&policy, w))?;
            out.table("bsvie_residual", |w| {
                use std::io::Write;
                writeln!(w, "t,mean,stderr")?;
                for r in &residual {
                    writeln!(w, "{},{},{}", r.t, r.mean, r.stderr)?;
                }
                Ok(())
            })?;
            let mut report = sol.report_json();
            let worst = residual.iter().map(|r| r.mean.abs()).fold(0.0, f64::max);
            report["bsvie_residual_max"] = json!(worst);
            out.json("drift_control_bsde_system", &report)?;
            if cfg.output.export_paths {
                out.table("path_ensemble", |w| ens.write_csv(w))?;
            }
        }
        Command::Verify(_) => {
            let v = &cfg.verify;
            let (cand, bsde) = match v.candidate {
                Candidate::Lattice => (
                    lattice_policy_export(&solve_lattice(spec, &lattice_params(&cfg))?),
                    None,
                ),
                Candidate::Bsde => {
                    let explore = exploration(&cfg, spec, None)?;
                    let (ens, sol) = solve_bsde(&cfg, spec, &explore, default_basis(&cfg))?;
                    (extract_policy(&sol, spec, &ens, cfg.mesh.nx)?, Some(sol))
                }
            };
            let devs = deviation_library(&spec.actions, &cand, v.delta);
            let mc = McParams::new(v.steps, v.paths, cfg.mc.seed);
            let spikes = spike_test(spec, &cand, &devs, &v.times, &v.ells, v.epsilon, &mc)?;
            let dpp = if v.dpp {
                let tau = v.dpp_tau.unwrap_or(0.5 * spec.horizon);
                let budget = NestedBudget {
                    outer_paths: v.nested_outer,
                    inner_paths: v.nested_inner,
                    ..NestedBudget::default()
                };
                let mc = McParams::new(v.dpp_steps, v.dpp_paths, sub_seed(cfg.mc.seed, 1));
                vec![dpp_residual(spec, &cand, 0.0, tau, &mc, &budget)?]
            } else {
                Vec::new()
            };
            let reduction = match (&bsde, spec.discount.exponential_rate()) {
                (Some(sol), Some(_)) => Some(reduction_check(spec, sol)?),
                _ => None,
            };
            let adjusted = if v.adjusted_reward {
                let params = AdjustedRewardParams {
                    inner: McParams::new(100, 4000, sub_seed(cfg.mc.seed, 2)),
                    outer: McParams::new(100, 50_000, sub_seed(cfg.mc.seed, 3)),
                    ..AdjustedRewardParams::default()
                };
                Some(adjusted_reward_consistency(spec, &cand, &params)?)
            } else {
                None
            };
            let report = EquilibriumReport::new(spikes, dpp, reduction, adjusted);
            pass = report.verdict.pass;
            out.table("equilibrium_spike_table", |w| write_spike_csv(&report.spike_table, w))?;
            let mut js = serde_json::to_value(&report)?;
            if let Value::Object(m) = &mut js {
                let mut tagged = Map::new();
                tagged.insert("construct".into(), json!("epsilon-ell-equilibrium"));
                tagged.insert(
                    "candidate".into(),
                    json!(match v.candidate {
                        Candidate::Lattice => "lattice",
                        Candidate::Bsde => "bsde",
                    }),
                );
                tagged.extend(std::mem::take(m));
                js = Value::Object(tagged);
            }
            out.json("equilibrium_report", &js)?;
        }
        Command::ExampleCrra(_) => {
            let params = cfg.crra;
            let crra_spec = crra_consumption_with(spec.discount.clone(), params);
            let grid = TimeGrid::new(0.0, crra_spec.horizon, cfg.mesh.nt)?;
            let times = grid.nodes();
            let sol = crra_coefficient_a(&crra_spec.discount, params, &times, &CoefficientSolver::default())?;
            out.table("crra_coefficient", |w| sol.write_csv(w))?;
            let mut cfg_crra = cfg.clone();
            cfg_crra.mc.explore = Explore::Midpoint;
            let basis = cfg.picard.basis.unwrap_or_else(|| RegressionBasis::log_polynomial(1));
            let explore = exploration(&cfg_crra, &crra_spec, None)?;
            let (ens, bsde) = solve_bsde(&cfg_crra, &crra_spec, &explore, basis)?;
            let policy = extract_policy(&bsde, &crra_spec, &ens, cfg.mesh.nx)?;
            // consumption fraction at the median state, away from the horizon
            let mut worst = 0.0f64;
            for (i, &t) in times.iter().enumerate().take(cfg.mesh.nt) {
                if t > 0.9 * crra_spec.horizon {
                    break;
                }
                let mut xs = ens.states_at(i).to_vec();
                xs.sort_by(f64::total_cmp);
                let fraction = policy.evaluate(t, xs[xs.len() / 2], &crra_spec.actions).first();
                worst = worst.max(rel_gap(fraction, sol.consumption_fraction(t)));
            }
            let mut summary = json!({
                "construct": "crra-consumption-equilibrium",
                "discount": crra_spec.discount,
                "eta": params.eta,
                "r": params.r,
                "beta": params.beta,
                "a_at_0": sol.a[0],
                "consumption_fraction_at_0": sol.consumption_fraction(0.0),
                "coefficient_iterations": sol.iterations,
                "bsde": {
                    "iterations": bsde.log.len(),
                    "sup_rel_gap_consumption_fraction": worst,
                },
            });
            if params.eta == 1.0 {
                let a = log_coefficient_a(&crra_spec.discount, crra_spec.horizon, &[0.0]);
                summary["log_closed_form_a_at_0"] = json!(a[0]);
            }
            out.json("crra_consumption_equilibrium", &summary)?;
        }
        Command::CrossCheck(_) => {
            let eq = solve_lattice(spec, &lattice_params(&cfg))?;
            let pde = solve_extended_hjb(spec, &pde_grids(&cfg))?;
            let explore = exploration(&cfg, spec, Some(&eq))?;
            let (_, bsde) = solve_bsde(&cfg, spec, &explore, default_basis(&cfg))?;
            let (v_lat, v_pde) = (eq.value(0, spec.x0), pde.value(0, spec.x0));
            let (v_bsde, se) = bsde.y0();
            let gaps = [rel_gap(v_pde, v_bsde), rel_gap(v_pde, v_lat), rel_gap(v_bsde, v_lat)];
            out.json(
                "triple_solver_agreement",
                &json!({
                    "construct": "triple-solver-agreement",
                    "x0": spec.x0,
                    "value_at_x0": { "pde": v_pde, "bsde": v_bsde, "bsde_stderr": se, "lattice": v_lat },
                    "pairwise_gaps": { "pde_bsde": gaps[0], "pde_lattice": gaps[1], "bsde_lattice": gaps[2] },
                    "max_gap": gaps.iter().cloned().fold(0.0, f64::max),
                    "picard_iterations": bsde.log.len(),
                }),
            )?;
        }
    }
    out.manifest(name, &cfg)?;
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_tables_convert_cell_by_cell() {
        let v = csv_to_json("some_table", "t,x,ok,note\n0,1.5,true,\n0.5,NaN,false,row error\n");
        assert_eq!(v["construct"], "some-table");
        assert_eq!(v["columns"], json!(["t", "x", "ok", "note"]));
        assert_eq!(v["rows"][0], json!([0.0, 1.5, true, null]));
        // NaN has no JSON number
        assert_eq!(v["rows"][1], json!([0.5, null, false, "row error"]));
    }

    #[test]
    fn relative_gap_of_zeros_is_zero() {
        assert_eq!(rel_gap(0.0, 0.0), 0.0);
        assert_eq!(rel_gap(1.0, 2.0), 0.5);
    }

    #[test]
    fn usage_errors_exit_with_the_config_code() {
        assert_eq!(run(["ticontrol", "solve-everything"]), 3);
        assert_eq!(run(["ticontrol", "solve-pde", "--mesh.nt", "many"]), 3);
        assert_eq!(run(["ticontrol", "--help"]), 0);
    }
}
