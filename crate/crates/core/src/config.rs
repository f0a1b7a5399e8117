//! Run configuration: a TOML file of `[section] key = value` entries on top
//! of a built-in problem. Every key has a default; unknown keys and sections
//! are rejected.
//!
//! ```toml
//! [problem]
//! builtin = "lq-hyperbolic"   # base problem, see `builtins::NAMES`
//! horizon = 1.0
//! x0 = 0.0
//! action_lo = [-2.0]
//! action_hi = [2.0]
//! state_lo = -10.0            # optional truncation of the state domain
//! state_hi = 10.0
//!
//! [discount]
//! family = "hyperbolic"       # exponential | hyperbolic | generalized-hyperbolic | sum-of-exponentials
//! k = 1.0                     # also: theta, m, weights, rates
//!
//! [sigma]                     # σ(x) = c0 + c1 x
//! c0 = 1.0
//! c1 = 0.0
//!
//! [drift]                     # b(x, a) = c0 + cx x + ca·a
//! c0 = 0.0
//! cx = 0.0
//! ca = [1.0]
//!
//! [running_reward]
//! kind = "quadratic"          # zero | quadratic | utility
//! aa = [-1.0]                 # quadratic: aa, a, xx, x, c; utility: coord, eta, wealth_scaled
//! xx = -1.0
//!
//! [terminal_reward]
//! kind = "zero"               # zero | constant | quadratic | utility | table
//!
//! [crra]                      # market of `example-crra`
//! eta = 1.0
//! r = 0.03
//! beta = 0.3
//!
//! [mesh]
//! nt = 200                    # time steps of every solver
//! nx = 201                    # state nodes of the lattice and the PDE
//! ns = 50                     # type intervals
//! x_min = -6.0                # optional state range of the lattice and the PDE
//! x_max = 6.0
//!
//! [mc]
//! paths = 50000
//! seed = 20240601
//! explore = "lattice"         # lattice | midpoint: policy simulated for the BSDE
//!
//! [picard]
//! max_iters = 30
//! tol = 1e-4
//! damping = 1.0
//! weight = 2.0                # optional; defaults to 2 max(1, sup|b|)
//! basis = "polynomial"        # polynomial | log-polynomial
//! degree = 4
//!
//! [verify]
//! candidate = "lattice"       # lattice | bsde
//! times = [0.0, 0.25, 0.5]
//! ells = [0.05, 0.1, 0.2]
//! epsilon = 0.05
//! delta = 0.2                 # size of the candidate ± δ deviations
//! steps = 100
//! paths = 20000
//! dpp = true
//! dpp_tau = 0.5               # defaults to T/2
//! dpp_steps = 50
//! dpp_paths = 50000
//! nested_outer = 400
//! nested_inner = 400
//! adjusted_reward = false
//!
//! [output]
//! format = "csv"              # csv | json for tables
//! export_paths = false        # also write the simulated ensemble
//! ```

use toml::{Table, Value};

use crate::bsde::RegressionBasis;
use crate::builtins::{self, CrraParams};
use crate::error::{Error, Result};
use crate::problem::{ActionBox, DiscountFunction, ProblemSpec, RunningReward, TerminalReward};

const OP: &str = "config";

/// Seed used when neither the file nor the command line gives one.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Explore {
    /// The lattice equilibrium's feedback table.
    Lattice,
    /// The midpoint of the action box.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Lattice,
    Bsde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub nt: usize,
    pub nx: usize,
    pub ns: usize,
    pub x_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub explore: Explore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSection {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub weight: Option<f64>,
    /// `None` leaves the choice to the command: polynomial of degree 4, or
    /// the log-state line for the consumption example.
    pub basis: Option<RegressionBasis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub candidate: Candidate,
    pub times: Vec<f64>,
    pub ells: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub steps: usize,
    pub paths: usize,
    pub dpp: bool,
    pub dpp_tau: Option<f64>,
    pub dpp_steps: usize,
    pub dpp_paths: usize,
    pub nested_outer: usize,
    pub nested_inner: usize,
    pub adjusted_reward: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub format: Format,
    pub export_paths: bool,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub builtin: String,
    pub spec: ProblemSpec<f64>,
    pub crra: CrraParams<f64>,
    pub mesh: MeshConfig,
    pub mc: McConfig,
    pub picard: PicardSection,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub builtin: Option<String>,
    pub seed: Option<u64>,
    pub nt: Option<usize>,
    pub nx: Option<usize>,
    pub ns: Option<usize>,
    pub paths: Option<usize>,
    pub format: Option<Format>,
}

const SECTIONS: [&str; 12] = [
    "problem",
    "discount",
    "sigma",
    "drift",
    "running_reward",
    "terminal_reward",
    "crra",
    "mesh",
    "mc",
    "picard",
    "verify",
    "output",
];

/// One `[section]` of the file; absent sections read as empty.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str, keys: &[&str]) -> Result<Self> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => return Err(Error::config(OP, format!("`{name}` must be a [section]"))),
        };
        if let Some(t) = table {
            if let Some(k) = t.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(Error::UnknownKey {
                    section: name.to_string(),
                    key: k.clone(),
                });
            }
        }
        Ok(Self { name, table })
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn value(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        Error::config(OP, format!("[{}] {key}: expected {what}", self.name))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize(key)?.unwrap_or(default))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.value(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(self.bad(key, "a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "a list of numbers")),
        }
    }

    /// A list of at most two coefficients, padded with zeros.
    fn pair(&self, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        match self.list(key)? {
            None => Ok(default),
            Some(v) if v.len() <= 2 => Ok([v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]),
            Some(_) => Err(self.bad(key, "at most two coefficients")),
        }
    }

    /// Rejects keys that do not belong to the chosen variant.
    fn only(&self, variant: &str, keys: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(Error::config(
                    OP,
                    format!("[{}] {k} does not apply to `{variant}`", self.name),
                ));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Built-in defaults for the named problem.
    pub fn builtin(name: &str) -> Result<Self> {
        Self::parse(
            "",
            &Overrides {
                builtin: Some(name.to_string()),
                ..Overrides::default()
            },
        )
    }

    /// Parses the TOML text `src` and applies `ov` on top.
    pub fn parse(src: &str, ov: &Overrides) -> Result<Self> {
        let root: Table = src
            .parse()
            .map_err(|e: toml::de::Error| Error::config(OP, e.message().to_string()))?;
        if let Some((k, _)) = root.iter().find(|(k, _)| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::UnknownKey {
                section: String::new(),
                key: k.clone(),
            });
        }

        let problem = Section::new(
            &root,
            "problem",
            &[
                "builtin",
                "horizon",
                "x0",
                "action_lo",
                "action_hi",
                "state_lo",
                "state_hi",
            ],
        )?;
        let builtin = match (&ov.builtin, problem.str("builtin")?) {
            (Some(b), _) => b.clone(),
            (None, Some(b)) => b.to_string(),
            (None, None) => builtins::NAMES[0].to_string(),
        };
        let mut spec = builtins::by_name(&builtin).ok_or_else(|| {
            Error::config(
                OP,
                format!("unknown builtin `{builtin}`; expected one of {:?}", builtins::NAMES),
            )
        })?;
        spec.horizon = problem.f64_or("horizon", spec.horizon)?;
        spec.x0 = problem.f64_or("x0", spec.x0)?;
        match (problem.list("action_lo")?, problem.list("action_hi")?) {
            (None, None) => {}
            (lo, hi) => {
                spec.actions = ActionBox::new(
                    lo.unwrap_or_else(|| spec.actions.lo.clone()),
                    hi.unwrap_or_else(|| spec.actions.hi.clone()),
                )?;
            }
        }
        match (problem.f64("state_lo")?, problem.f64("state_hi")?) {
            (Some(lo), Some(hi)) => spec.state_bounds = Some((lo, hi)),
            (None, None) => {}
            _ => return Err(Error::config(OP, "[problem] state_lo and state_hi go together")),
        }

        let discount = Section::new(&root, "discount", &["family", "theta", "k", "m", "weights", "rates"])?;
        if discount.present() {
            spec.discount = parse_discount(&discount)?;
        }
        let sigma = Section::new(&root, "sigma", &["c0", "c1"])?;
        spec.sigma.c0 = sigma.f64_or("c0", spec.sigma.c0)?;
        spec.sigma.c1 = sigma.f64_or("c1", spec.sigma.c1)?;
        let drift = Section::new(&root, "drift", &["c0", "cx", "ca"])?;
        spec.drift.c0 = drift.f64_or("c0", spec.drift.c0)?;
        spec.drift.cx = drift.f64_or("cx", spec.drift.cx)?;
        spec.drift.ca = drift.pair("ca", spec.drift.ca)?;
        let running = Section::new(
            &root,
            "running_reward",
            &["kind", "aa", "a", "xx", "x", "c", "coord", "eta", "wealth_scaled"],
        )?;
        if running.present() {
            spec.running = parse_running(&running)?;
        }
        let terminal = Section::new(&root, "terminal_reward", &["kind", "c", "xx", "x", "eta", "xs", "ys"])?;
        if terminal.present() {
            spec.terminal = parse_terminal(&terminal)?;
        }
        spec.validate()?;

        let crra_s = Section::new(&root, "crra", &["eta", "r", "beta"])?;
        let base = CrraParams::new(1.0);
        let crra = CrraParams {
            eta: crra_s.f64_or("eta", base.eta)?,
            r: crra_s.f64_or("r", base.r)?,
            beta: crra_s.f64_or("beta", base.beta)?,
            horizon: spec.horizon,
        };

        let mesh_s = Section::new(&root, "mesh", &["nt", "nx", "ns", "x_min", "x_max"])?;
        let x_range = match (mesh_s.f64("x_min")?, mesh_s.f64("x_max")?) {
            (Some(a), Some(b)) if a < b => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::config(
                    OP,
                    "[mesh] x_min and x_max go together with x_min < x_max",
                ))
            }
        };
        let mesh = MeshConfig {
            nt: ov.nt.map_or_else(|| mesh_s.usize_or("nt", 200), Ok)?,
            nx: ov.nx.map_or_else(|| mesh_s.usize_or("nx", 201), Ok)?,
            ns: ov.ns.map_or_else(|| mesh_s.usize_or("ns", 50), Ok)?,
            x_range,
        };
        if mesh.nt == 0 || mesh.nx < 3 || mesh.ns == 0 {
            return Err(Error::config(OP, "[mesh] needs nt >= 1, nx >= 3 and ns >= 1"));
        }

        let mc_s = Section::new(&root, "mc", &["paths", "seed", "explore"])?;
        let seed = match (ov.seed, mc_s.value("seed")) {
            (Some(s), _) => s,
            (None, None) => DEFAULT_SEED,
            (None, Some(Value::Integer(s))) if *s >= 0 => *s as u64,
            (None, Some(_)) => return Err(mc_s.bad("seed", "a non-negative integer")),
        };
        let explore = match mc_s.str("explore")?.unwrap_or("lattice") {
            "lattice" => Explore::Lattice,
            "midpoint" => Explore::Midpoint,
            other => return Err(Error::config(OP, format!("[mc] explore: unknown policy `{other}`"))),
        };
        let mc = McConfig {
            paths: ov.paths.map_or_else(|| mc_s.usize_or("paths", 50_000), Ok)?,
            seed,
            explore,
        };
        if mc.paths == 0 {
            return Err(Error::config(OP, "[mc] paths must be >= 1"));
        }

        let pic = Section::new(
            &root,
            "picard",
            &["max_iters", "tol", "damping", "weight", "basis", "degree"],
        )?;
        let degree = pic.usize("degree")?;
        let basis = match (pic.str("basis")?, degree) {
            (None, None) => None,
            (None | Some("polynomial"), d) => Some(RegressionBasis::polynomial(d.unwrap_or(4))),
            (Some("log-polynomial"), d) => Some(RegressionBasis::log_polynomial(d.unwrap_or(4))),
            (Some(other), _) => return Err(Error::config(OP, format!("[picard] basis: unknown family `{other}`"))),
        };
        let picard = PicardSection {
            max_iters: pic.usize_or("max_iters", 30)?,
            tol: pic.f64_or("tol", 1e-4)?,
            damping: pic.f64_or("damping", 1.0)?,
            weight: pic.f64("weight")?,
            basis,
        };

        let ver = Section::new(
            &root,
            "verify",
            &[
                "candidate",
                "times",
                "ells",
                "epsilon",
                "delta",
                "steps",
                "paths",
                "dpp",
                "dpp_tau",
                "dpp_steps",
                "dpp_paths",
                "nested_outer",
                "nested_inner",
                "adjusted_reward",
            ],
        )?;
        let candidate = match ver.str("candidate")?.unwrap_or("lattice") {
            "lattice" => Candidate::Lattice,
            "bsde" => Candidate::Bsde,
            other => {
                return Err(Error::config(
                    OP,
                    format!("[verify] candidate: unknown solver `{other}`"),
                ))
            }
        };
        let verify = VerifyConfig {
            candidate,
            times: ver.list("times")?.unwrap_or_else(|| vec![0.0, 0.25, 0.5]),
            ells: ver.list("ells")?.unwrap_or_else(|| vec![0.05, 0.1, 0.2]),
            epsilon: ver.f64_or("epsilon", 0.05)?,
            delta: ver.f64_or("delta", 0.2)?,
            steps: ver.usize_or("steps", 100)?,
            paths: ver.usize_or("paths", 20_000)?,
            dpp: ver.bool_or("dpp", true)?,
            dpp_tau: ver.f64("dpp_tau")?,
            dpp_steps: ver.usize_or("dpp_steps", 50)?,
            dpp_paths: ver.usize_or("dpp_paths", 50_000)?,
            nested_outer: ver.usize_or("nested_outer", 400)?,
            nested_inner: ver.usize_or("nested_inner", 400)?,
            adjusted_reward: ver.bool_or("adjusted_reward", false)?,
        };

        let out = Section::new(&root, "output", &["format", "export_paths"])?;
        let format = match (ov.format, out.str("format")?) {
            (Some(f), _) => f,
            (None, None | Some("csv")) => Format::Csv,
            (None, Some("json")) => Format::Json,
            (None, Some(other)) => return Err(Error::config(OP, format!("[output] format: unknown format `{other}`"))),
        };
        let output = OutputConfig {
            format,
            export_paths: out.bool_or("export_paths", false)?,
        };

        Ok(Self {
            builtin,
            spec,
            crra,
            mesh,
            mc,
            picard,
            verify,
            output,
        })
    }
}

fn parse_discount(s: &Section) -> Result<DiscountFunction<f64>> {
    let family = s.str("family")?.ok_or_else(|| s.bad("family", "a discount family"))?;
    let d = match family {
        "exponential" => {
            s.only(family, &["family", "theta"])?;
            DiscountFunction::Exponential {
                theta: s.f64_or("theta", 0.0)?,
            }
        }
        "hyperbolic" => {
            s.only(family, &["family", "k"])?;
            DiscountFunction::Hyperbolic { k: s.f64_or("k", 1.0)? }
        }
        "generalized-hyperbolic" => {
            s.only(family, &["family", "k", "m"])?;
            DiscountFunction::GeneralizedHyperbolic {
                k: s.f64_or("k", 1.0)?,
                m: s.f64_or("m", 1.0)?,
            }
        }
        "sum-of-exponentials" => {
            s.only(family, &["family", "weights", "rates"])?;
            DiscountFunction::SumOfExponentials {
                weights: s
                    .list("weights")?
                    .ok_or_else(|| s.bad("weights", "a list of numbers"))?,
                rates: s.list("rates")?.ok_or_else(|| s.bad("rates", "a list of numbers"))?,
            }
        }
        other => {
            return Err(Error::config(
                OP,
                format!("[discount] family: unknown family `{other}`"),
            ))
        }
    };
    d.validate()?;
    Ok(d)
}

fn parse_running(s: &Section) -> Result<RunningReward<f64>> {
    let kind = s.str("kind")?.ok_or_else(|| s.bad("kind", "a reward kind"))?;
    match kind {
        "zero" => {
            s.only(kind, &["kind"])?;
            Ok(RunningReward::Zero)
        }
        "quadratic" => {
            s.only(kind, &["kind", "aa", "a", "xx", "x", "c"])?;
            Ok(RunningReward::Quadratic {
                aa: s.pair("aa", [0.0; 2])?,
                a: s.pair("a", [0.0; 2])?,
                xx: s.f64_or("xx", 0.0)?,
                x: s.f64_or("x", 0.0)?,
                c: s.f64_or("c", 0.0)?,
            })
        }
        "utility" => {
            s.only(kind, &["kind", "coord", "eta", "wealth_scaled"])?;
            Ok(RunningReward::Utility {
                coord: s.usize_or("coord", 0)?,
                eta: s.f64_or("eta", 1.0)?,
                wealth_scaled: s.bool_or("wealth_scaled", true)?,
            })
        }
        other => Err(Error::config(
            OP,
            format!("[running_reward] kind: unknown kind `{other}`"),
        )),
    }
}

fn parse_terminal(s: &Section) -> Result<TerminalReward<f64>> {
    let kind = s.str("kind")?.ok_or_else(|| s.bad("kind", "a reward kind"))?;
    match kind {
        "zero" => {
            s.only(kind, &["kind"])?;
            Ok(TerminalReward::Zero)
        }
        "constant" => {
            s.only(kind, &["kind", "c"])?;
            Ok(TerminalReward::Constant { c: s.f64_or("c", 0.0)? })
        }
        "quadratic" => {
            s.only(kind, &["kind", "xx", "x", "c"])?;
            Ok(TerminalReward::Quadratic {
                xx: s.f64_or("xx", 0.0)?,
                x: s.f64_or("x", 0.0)?,
                c: s.f64_or("c", 0.0)?,
            })
        }
        "utility" => {
            s.only(kind, &["kind", "eta"])?;
            Ok(TerminalReward::Utility {
                eta: s.f64_or("eta", 1.0)?,
            })
        }
        "table" => {
            s.only(kind, &["kind", "xs", "ys"])?;
            Ok(TerminalReward::Table {
                xs: s.list("xs")?.ok_or_else(|| s.bad("xs", "a list of numbers"))?,
                ys: s.list("ys")?.ok_or_else(|| s.bad("ys", "a list of numbers"))?,
            })
        }
        other => Err(Error::config(
            OP,
            format!("[terminal_reward] kind: unknown kind `{other}`"),
        )),
    }
}
