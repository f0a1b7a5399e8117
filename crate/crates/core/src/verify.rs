//! Simulation checks of the equilibrium property: spike deviations, the
//! extended dynamic programming identity, the exponential reduction and the
//! adjusted-reward reformulation.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::BsdeSolution;
use crate::error::{Error, Result};
use crate::lattice::{classical_dp, Lattice, LatticeParams};
use crate::mc::{estimate_partial_y, estimate_reward};
use crate::mc::{nested_tag, paired_gain, simulate_paths, sub_seed, McParams, TimeGrid};
use crate::problem::{Action, ActionBox, Policy, ProblemSpec};
use crate::scalar::{bracket, interp_clamped, mean_stderr, Real};

/// Width of the statistical slack in standard errors.
pub const SLACK_SE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeRow {
    pub t: f64,
    pub ell: f64,
    pub deviation_id: String,
    /// `Ĵ(deviation spliced into the candidate) - Ĵ(candidate)`.
    pub gain: f64,
    pub stderr: f64,
    /// `εℓ + 3·stderr`.
    pub threshold: f64,
    pub pass: bool,
    pub error: Option<String>,
}

/// Pass rule of a spike row.
pub fn spike_pass(gain: f64, stderr: f64, epsilon: f64, ell: f64) -> bool {
    gain <= epsilon * ell + SLACK_SE * stderr
}

/// Constant actions at the box corners and midpoint, then the candidate
/// shifted by `±delta` in every coordinate.
pub fn deviation_library<T: Real>(actions: &ActionBox<T>, candidate: &Policy<T>, delta: T) -> Vec<(String, Policy<T>)> {
    let dim = actions.dim();
    vec![
        ("lower".to_string(), Policy::Constant(actions.lower())),
        ("upper".to_string(), Policy::Constant(actions.upper())),
        ("midpoint".to_string(), Policy::Constant(actions.midpoint())),
        (
            format!("candidate+{delta}"),
            Policy::shifted(candidate.clone(), Action::from_slice(&vec![delta; dim])),
        ),
        (
            format!("candidate-{delta}"),
            Policy::shifted(candidate.clone(), Action::from_slice(&vec![-delta; dim])),
        ),
    ]
}

/// `candidate` shifted by half the box width on `[from, until)`.
pub fn corrupt_policy<T: Real>(candidate: &Policy<T>, actions: &ActionBox<T>, from: T, until: T) -> Policy<T> {
    let half = T::lit(0.5);
    let shift: Vec<T> = (0..actions.dim()).map(|j| half * actions.width(j)).collect();
    Policy::spliced(
        Policy::shifted(candidate.clone(), Action::from_slice(&shift)),
        candidate.clone(),
        from,
        until,
    )
}

/// For every `(t, ℓ, deviation)`: the common-random-number gain of playing
/// the deviation on `[t, t + ℓ)` and the candidate afterwards, from `(t, x0)`.
pub fn spike_test<T: Real>(
    spec: &ProblemSpec<T>,
    candidate: &Policy<T>,
    deviations: &[(String, Policy<T>)],
    t_list: &[T],
    ell_list: &[T],
    epsilon: T,
    mc: &McParams,
) -> Result<Vec<SpikeRow>> {
    spec.validate()?;
    if !(epsilon >= T::zero()) {
        return Err(Error::config("spike_test", "epsilon must be >= 0"));
    }
    let x0 = spec.x0;
    let horizon = spec.horizon;
    let eps = epsilon.to_f64_lossy();
    let mut rows = Vec::with_capacity(t_list.len() * ell_list.len() * deviations.len());
    for (ti, &t) in t_list.iter().enumerate() {
        for (li, &ell) in ell_list.iter().enumerate() {
            let params = mc.derived(nested_tag(ti, li));
            for (id, dev) in deviations {
                let base = SpikeRow {
                    t: t.to_f64_lossy(),
                    ell: ell.to_f64_lossy(),
                    deviation_id: id.clone(),
                    gain: f64::NAN,
                    stderr: f64::NAN,
                    threshold: f64::NAN,
                    pass: false,
                    error: None,
                };
                if !(t >= T::zero() && t < horizon) || !(ell > T::zero() && ell <= horizon - t) {
                    let e = Error::domain(
                        "spike_test",
                        format!("need 0 <= t < T and 0 < ell <= T - t, got t = {t}, ell = {ell}"),
                    );
                    rows.push(SpikeRow {
                        error: Some(e.to_string()),
                        ..base
                    });
                    continue;
                }
                let spliced = Policy::spliced(dev.clone(), candidate.clone(), t, t + ell);
                let (gain, se) = paired_gain(spec, candidate, &spliced, t, x0, &params)?;
                let (gain, se) = (gain.to_f64_lossy(), se.to_f64_lossy());
                rows.push(SpikeRow {
                    gain,
                    stderr: se,
                    threshold: eps * ell.to_f64_lossy() + SLACK_SE * se,
                    pass: spike_pass(gain, se, eps, ell.to_f64_lossy()),
                    ..base
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_spike_csv<W: Write>(rows: &[SpikeRow], mut w: W) -> Result<()> {
    writeln!(w, "t,ell,deviation_id,gain,stderr,threshold,pass,error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.ell,
            r.deviation_id,
            r.gain,
            r.stderr,
            r.threshold,
            r.pass,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

/// Inner simulation budget for nested estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NestedBudget {
    pub outer_paths: usize,
    pub inner_paths: usize,
    /// Cap on the total number of inner Euler steps.
    pub max_inner_steps: u64,
}

impl Default for NestedBudget {
    fn default() -> Self {
        Self {
            outer_paths: 400,
            inner_paths: 400,
            max_inner_steps: 2_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppRow {
    pub sigma_time: f64,
    pub tau_time: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Combined stderr of `lhs` and `rhs`.
    pub stderr: f64,
    pub pass: bool,
}

/// `v̂(σ, x0)` against
/// `Ê[v̂(τ, X_τ) + Σ_{σ ≤ r < τ} (f_r(r, X_r, ν*_r) - ψ(r, X_r)) Δ]`
/// under the candidate, where `ψ(r, x)` and `v̂(τ, x)` are re-simulated from
/// every outer node. Both times must fall on the simulation grid.
pub fn dpp_residual<T: Real>(
    spec: &ProblemSpec<T>,
    candidate: &Policy<T>,
    sigma_t: T,
    tau_t: T,
    mc: &McParams,
    budget: &NestedBudget,
) -> Result<DppRow> {
    const OP: &str = "dpp_residual";
    spec.validate()?;
    let horizon = spec.horizon;
    if !(sigma_t >= T::zero() && sigma_t <= tau_t && tau_t <= horizon) {
        return Err(Error::domain(
            OP,
            format!("need 0 <= sigma <= tau <= T, got {sigma_t}, {tau_t}"),
        ));
    }
    let x0 = spec.x0;
    let lhs_params = mc.derived(1);
    let (lhs, se_l) = estimate_reward(spec, candidate, sigma_t, sigma_t, x0, &lhs_params)?;
    let row = |rhs: T, se_r: T| {
        let residual = (lhs - rhs).to_f64_lossy();
        let se = (se_l * se_l + se_r * se_r).sqrt().to_f64_lossy();
        DppRow {
            sigma_time: sigma_t.to_f64_lossy(),
            tau_time: tau_t.to_f64_lossy(),
            lhs: lhs.to_f64_lossy(),
            rhs: rhs.to_f64_lossy(),
            residual,
            stderr: se,
            pass: residual.abs() <= SLACK_SE * se,
        }
    };
    if tau_t == sigma_t {
        return Ok(row(lhs, se_l));
    }
    if sigma_t == horizon {
        return Ok(row(lhs, se_l));
    }
    let full = TimeGrid::spanning(sigma_t, horizon, mc.n_steps)?;
    let dt = full.dt();
    let k = ((tau_t - sigma_t) / dt).round().to_f64_lossy() as usize;
    if k == 0 || (full.node(k) - tau_t).abs() > T::lit(1e-9) * horizon {
        return Err(Error::config(
            OP,
            format!("tau = {tau_t} is not a node of the step-{dt} grid from sigma"),
        ));
    }
    let inner_steps: u64 = (0..=k)
        .map(|i| {
            TimeGrid::<T>::spanning(full.node(i), horizon, mc.n_steps)
                .map(|g| g.n_steps() as u64)
                .unwrap_or(0)
        })
        .sum();
    let needed = inner_steps * budget.outer_paths as u64 * budget.inner_paths as u64;
    if needed > budget.max_inner_steps {
        return Err(Error::Budget {
            op: OP,
            needed,
            limit: budget.max_inner_steps,
        });
    }
    let grid = TimeGrid::new(sigma_t, tau_t, k)?;
    let outer = simulate_paths(spec, candidate, grid, x0, budget.outer_paths, sub_seed(mc.seed, 2))?;
    let inner_seed = sub_seed(mc.seed, 3);
    let totals: Vec<T> = (0..budget.outer_paths)
        .into_par_iter()
        .map(|q| {
            let inner =
                |i: usize| McParams::new(mc.n_steps, budget.inner_paths, sub_seed(inner_seed, nested_tag(q, i)));
            let mut total = T::zero();
            for i in 0..k {
                let r = grid.node(i);
                let x = outer.state(q, i);
                let (psi, _) = estimate_partial_y(spec, candidate, r, r, x, &inner(i))?;
                total = total + (spec.running(r, r, x, &outer.action(q, i)) - psi) * dt;
            }
            let (cont, _) = estimate_reward(spec, candidate, tau_t, tau_t, outer.state(q, k), &inner(k))?;
            Ok(total + cont)
        })
        .collect::<Result<_>>()?;
    let (rhs, se_r) = mean_stderr(&totals);
    Ok(row(rhs, se_r))
}

/// `sup |∂Y_t^t - θ Y_t| / (1 + |Y_t|)` over paths and steps.
pub fn reduction_check<T: Real>(spec: &ProblemSpec<T>, sol: &BsdeSolution<T>) -> Result<T> {
    let theta = spec
        .discount
        .exponential_rate()
        .ok_or_else(|| Error::precondition("reduction_check", "needs an exponential discount function"))?;
    Ok(sol
        .y
        .par_iter()
        .zip(&sol.diag_u)
        .map(|(&y, &u)| (u - theta * y).abs() / (T::one() + y.abs()))
        .reduce(T::zero, |a, b| a.max(b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedRewardParams<T> {
    /// Lattice of the classical problem.
    pub lattice: LatticeParams<T>,
    /// Times of the `ψ` table, evenly spaced on `[0, T)`. The table is
    /// interpolated quadratically in both directions.
    pub table_t: usize,
    /// States of the `ψ` table.
    pub table_x: usize,
    /// State range of the table; defaults to `x0 ± 4 σ_max √T`. `ψ` is held
    /// constant outside it.
    pub table_range: Option<(T, T)>,
    /// Inner simulations per table node.
    pub inner: McParams,
    /// Simulation of `v̂(0, x0)` under the candidate.
    pub outer: McParams,
}

impl<T: Real> Default for AdjustedRewardParams<T> {
    fn default() -> Self {
        Self {
            lattice: LatticeParams::new(100, 101),
            table_t: 11,
            table_x: 21,
            table_range: None,
            inner: McParams::new(100, 4000, 11),
            outer: McParams::new(100, 50_000, 12),
        }
    }
}

/// Three-point Lagrange interpolation on the nodes nearest to `x`, with `x`
/// clamped into the node range. Exact for quadratics, which keeps the
/// curvature of the tabulated type derivative from biasing the reward.
fn quadratic_interp<T: Real>(xs: &[T], ys: &[T], x: T) -> T {
    let n = xs.len();
    if n < 3 {
        return interp_clamped(xs, ys, x);
    }
    let x = x.max(xs[0]).min(xs[n - 1]);
    let i = bracket(xs, x);
    let near = if i + 1 < n && (xs[i + 1] - x) < (x - xs[i]) {
        i + 1
    } else {
        i
    };
    let c = near.clamp(1, n - 2);
    let (x0, x1, x2) = (xs[c - 1], xs[c], xs[c + 1]);
    ys[c - 1] * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        + ys[c] * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        + ys[c + 1] * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedRewardReport {
    /// Classical value of the adjusted-reward problem at `(0, x0)`.
    pub classical_value: f64,
    /// `v̂(0, x0)` of the candidate.
    pub equilibrium_value: f64,
    pub equilibrium_stderr: f64,
    /// `|classical - equilibrium| / |equilibrium|` (0 when both vanish).
    pub gap: f64,
}

/// Solves the time-consistent problem with running reward
/// `k_t(x, a) = f_t(t, x, a) - ψ(t, x)` on a lattice, where `ψ` is the type
/// derivative of the candidate's reward tabulated by nested simulation, and
/// compares its value at `(0, x0)` with the candidate's simulated value.
pub fn adjusted_reward_consistency<T: Real>(
    spec: &ProblemSpec<T>,
    candidate: &Policy<T>,
    params: &AdjustedRewardParams<T>,
) -> Result<AdjustedRewardReport> {
    const OP: &str = "adjusted_reward_consistency";
    if !spec.markovian {
        return Err(Error::precondition(OP, "needs a Markovian problem"));
    }
    if params.table_t < 2 || params.table_x < 2 {
        return Err(Error::config(OP, "the psi table needs at least 2 times and 2 states"));
    }
    let lat = Lattice::build(spec, &params.lattice)?;
    let horizon = spec.horizon;
    let (xlo, xhi) = params.table_range.unwrap_or_else(|| {
        let w = T::lit(4.0) * spec.sigma_max() * horizon.sqrt();
        (spec.x0 - w, spec.x0 + w)
    });
    let tt: Vec<T> = (0..params.table_t)
        .map(|i| horizon * T::from_usize_lossy(i) / T::from_usize_lossy(params.table_t))
        .collect();
    let tx: Vec<T> = (0..params.table_x)
        .map(|j| xlo + (xhi - xlo) * T::from_usize_lossy(j) / T::from_usize_lossy(params.table_x - 1))
        .collect();
    let nodes: Vec<(usize, usize)> = (0..tt.len()).flat_map(|i| (0..tx.len()).map(move |j| (i, j))).collect();
    let table: Vec<T> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let inner = params.inner.derived(nested_tag(i, j));
            estimate_partial_y(spec, candidate, tt[i], tt[i], tx[j], &inner).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let nx = tx.len();
    let psi = |t: T, x: T| {
        let rows: Vec<T> = (0..tt.len())
            .map(|i| quadratic_interp(&tx, &table[i * nx..(i + 1) * nx], x))
            .collect();
        quadratic_interp(&tt, &rows, t)
    };
    // mid-step evaluation keeps the reward second order in the time step
    let mid: Vec<T> = lat.times.windows(2).map(|w| T::lit(0.5) * (w[0] + w[1])).collect();
    let extra = move |i: usize, x: T| -psi(mid[i], x);
    let classical = classical_dp(spec, &lat, T::one(), &extra)?;
    let cv = classical.value(&lat, 0, spec.x0);
    let (ev, se) = estimate_reward(spec, candidate, T::zero(), T::zero(), spec.x0, &params.outer)?;
    let (cv, ev, se) = (cv.to_f64_lossy(), ev.to_f64_lossy(), se.to_f64_lossy());
    let gap = if cv == ev { 0.0 } else { (cv - ev).abs() / ev.abs() };
    Ok(AdjustedRewardReport {
        classical_value: cv,
        equilibrium_value: ev,
        equilibrium_stderr: se,
        gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub spike_rows: usize,
    pub spike_failures: usize,
    pub dpp_failures: usize,
    pub slack_stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub spike_table: Vec<SpikeRow>,
    pub dpp_table: Vec<DppRow>,
    pub reduction_residual: Option<f64>,
    pub adjusted_reward: Option<AdjustedRewardReport>,
    pub verdict: Verdict,
}

impl EquilibriumReport {
    pub fn new(
        spike_table: Vec<SpikeRow>,
        dpp_table: Vec<DppRow>,
        reduction_residual: Option<f64>,
        adjusted_reward: Option<AdjustedRewardReport>,
    ) -> Self {
        let spike_failures = spike_table.iter().filter(|r| !r.pass).count();
        let dpp_failures = dpp_table.iter().filter(|r| !r.pass).count();
        Self {
            verdict: Verdict {
                spike_rows: spike_table.len(),
                spike_failures,
                dpp_failures,
                slack_stderr: SLACK_SE,
                pass: spike_failures == 0 && dpp_failures == 0,
            },
            spike_table,
            dpp_table,
            reduction_residual,
            adjusted_reward,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::lattice::{lattice_policy_export, solve_lattice};
    use crate::problem::DiscountFunction;

    fn lq(d: DiscountFunction<f64>) -> ProblemSpec<f64> {
        builtins::lq(d)
    }

    #[test]
    fn deviating_to_the_candidate_gains_nothing() {
        let spec = lq(DiscountFunction::Hyperbolic { k: 1.0 });
        let cand = Policy::Constant(Action::scalar(0.3));
        let devs = vec![("self".to_string(), cand.clone())];
        let rows = spike_test(
            &spec,
            &cand,
            &devs,
            &[0.0, 0.5],
            &[0.1],
            0.0,
            &McParams::new(20, 200, 1),
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.gain == 0.0 && r.pass));
    }

    #[test]
    fn overlong_spike_is_a_row_error() {
        let spec = lq(DiscountFunction::Hyperbolic { k: 1.0 });
        let cand = Policy::Constant(Action::scalar(0.0));
        let devs = deviation_library(&spec.actions, &cand, 0.2);
        assert_eq!(devs.len(), 5);
        let rows = spike_test(
            &spec,
            &cand,
            &devs,
            &[0.9],
            &[0.05, 0.2],
            0.05,
            &McParams::new(20, 100, 1),
        )
        .unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows[..5].iter().all(|r| r.error.is_none()));
        assert!(rows[5..]
            .iter()
            .all(|r| !r.pass && r.error.as_deref().unwrap().contains("ell")));
    }

    #[test]
    fn pass_set_grows_with_epsilon() {
        for (g, se, ell) in [(0.01, 0.001, 0.1), (-0.2, 0.05, 0.2), (0.3, 0.0, 0.05)] {
            let mut prev = false;
            for eps in [0.0, 0.01, 0.1, 1.0, 10.0] {
                let p = spike_pass(g, se, eps, ell);
                assert!(p || !prev);
                prev = p;
            }
        }
    }

    #[test]
    fn classical_optimum_survives_and_corruption_is_caught() {
        let spec = lq(DiscountFunction::Exponential { theta: 0.5 });
        let eq = solve_lattice(&spec, &LatticeParams::new(40, 81)).unwrap();
        let cand = lattice_policy_export(&eq);
        let devs = deviation_library(&spec.actions, &cand, 0.2);
        let mc = McParams::new(40, 4000, 5);
        let rows = spike_test(&spec, &cand, &devs, &[0.0, 0.25, 0.5], &[0.05, 0.1, 0.2], 0.0, &mc).unwrap();
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");

        let bad = corrupt_policy(&cand, &spec.actions, 0.0, 1.0);
        let devs = deviation_library(&spec.actions, &bad, 0.2);
        let rows = spike_test(&spec, &bad, &devs, &[0.0], &[0.2], 0.05, &mc).unwrap();
        assert!(rows
            .iter()
            .any(|r| r.gain - 0.05 * 0.2 > SLACK_SE * r.stderr && r.stderr > 0.0));
    }

    #[test]
    fn dpp_identity_holds_at_equal_times_and_in_the_exponential_case() {
        let spec = lq(DiscountFunction::Exponential { theta: 0.5 });
        let cand = Policy::Constant(Action::scalar(-0.2));
        let mc = McParams::new(20, 4000, 3);
        let r = dpp_residual(&spec, &cand, 0.3, 0.3, &mc, &NestedBudget::default()).unwrap();
        assert_eq!(r.residual, 0.0);
        let budget = NestedBudget {
            outer_paths: 300,
            inner_paths: 100,
            ..NestedBudget::default()
        };
        let r = dpp_residual(&spec, &cand, 0.0, 0.5, &mc, &budget).unwrap();
        assert!(r.pass, "{r:?}");
        let tight = NestedBudget {
            max_inner_steps: 1000,
            ..budget
        };
        assert!(matches!(
            dpp_residual(&spec, &cand, 0.0, 0.5, &mc, &tight),
            Err(Error::Budget { .. })
        ));
        assert!(dpp_residual(&spec, &cand, 0.0, 0.52, &mc, &budget)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn reduction_needs_an_exponential_discount() {
        let spec = lq(DiscountFunction::Hyperbolic { k: 1.0 });
        let sol = BsdeSolution {
            times: vec![0.0, 1.0],
            s_nodes: vec![0.0, 1.0],
            n_paths: 1,
            weight: 2.0,
            bases: Vec::new(),
            y: vec![1.0, 0.0],
            zeta: Vec::new(),
            diag_u: vec![0.0, 0.0],
            slice_c: Vec::new(),
            slice_w: Vec::new(),
            log: Vec::new(),
        };
        assert!(matches!(reduction_check(&spec, &sol), Err(Error::Precondition { .. })));
        let flat = lq(DiscountFunction::Exponential { theta: 0.0 });
        assert_eq!(reduction_check(&flat, &sol).unwrap(), 0.0);
        let exp = lq(DiscountFunction::Exponential { theta: 0.5 });
        assert_eq!(reduction_check(&exp, &sol).unwrap(), 0.25);
    }

    #[test]
    fn adjusted_reward_trivial_cases() {
        let small = AdjustedRewardParams {
            lattice: LatticeParams::new(20, 41),
            table_t: 3,
            table_x: 5,
            table_range: None,
            inner: McParams::new(20, 50, 1),
            outer: McParams::new(20, 500, 2),
        };
        let zero = builtins::zero_reward(lq(DiscountFunction::Hyperbolic { k: 1.0 }));
        let cand = Policy::Constant(Action::scalar(0.0));
        let r = adjusted_reward_consistency(&zero, &cand, &small).unwrap();
        assert_eq!((r.classical_value, r.equilibrium_value, r.gap), (0.0, 0.0, 0.0));

        // no discounting: k = f and the classical optimum is the candidate's value
        let flat = lq(DiscountFunction::Exponential { theta: 0.0 });
        let eq = solve_lattice(&flat, &LatticeParams::new(20, 41)).unwrap();
        let opt = lattice_policy_export(&eq);
        let params = AdjustedRewardParams {
            outer: McParams::new(20, 20_000, 2),
            ..small
        };
        let r = adjusted_reward_consistency(&flat, &opt, &params).unwrap();
        assert!(
            r.gap < 0.02 + 3.0 * r.equilibrium_stderr / r.equilibrium_value.abs(),
            "{r:?}"
        );

        let mut nm = flat.clone();
        nm.markovian = false;
        assert!(adjusted_reward_consistency(&nm, &opt, &params).is_err());
    }

    #[test]
    fn quadratic_interp_is_exact_on_parabolas() {
        let xs: Vec<f64> = (0..7).map(|i| -1.5 + 0.5 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x * x - x + 0.3).collect();
        for x in [-1.5, -1.2, 0.01, 0.26, 1.49, 1.5] {
            assert!((quadratic_interp(&xs, &ys, x) - (2.0 * x * x - x + 0.3)).abs() < 1e-12);
        }
        assert_eq!(quadratic_interp(&xs, &ys, 9.0), ys[6]);
    }

    #[test]
    fn report_verdict_counts_failures() {
        let row = |pass| SpikeRow {
            t: 0.0,
            ell: 0.1,
            deviation_id: "d".into(),
            gain: 0.0,
            stderr: 0.0,
            threshold: 0.0,
            pass,
            error: None,
        };
        let rep = EquilibriumReport::new(vec![row(true), row(false)], Vec::new(), None, None);
        assert_eq!(rep.verdict.spike_failures, 1);
        assert!(!rep.verdict.pass);
        let mut buf = Vec::new();
        write_spike_csv(&rep.spike_table, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
