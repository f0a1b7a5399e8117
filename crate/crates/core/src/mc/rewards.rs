use rayon::prelude::*;

use super::{euler_step, path_rng, McParams, TimeGrid};
use crate::error::{Error, Result};
use crate::problem::{Action, Policy, ProblemSpec};
use crate::scalar::{mean_stderr, Real};

/// Weight applied to the undiscounted rewards along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `φ(· - s)`: the reward `J(s, ·)` itself.
    Value,
    /// `-φ'(· - s)`: its type derivative `∂_s J(s, ·)`.
    TypeDerivative,
}

impl Kernel {
    #[inline]
    fn weight<T: Real>(self, spec: &ProblemSpec<T>, tau: T) -> T {
        match self {
            Kernel::Value => spec.discount.phi(tau),
            Kernel::TypeDerivative => -spec.discount.dphi(tau),
        }
    }
}

/// Per-path totals `Σ_i w(t_i - s) f̃(X_i, a_i) Δ + w(T - s) ξ̃(X_T)` of
/// simulations started at `(t, x)`, with left-endpoint quadrature. Path `p`
/// uses stream `p` of `params.seed`, so two calls with the same seed share
/// their Brownian increments.
pub fn path_totals<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    s: T,
    t: T,
    x: T,
    params: &McParams,
    kernel: Kernel,
) -> Result<Vec<T>> {
    let horizon = spec.horizon;
    if params.n_paths == 0 {
        return Err(Error::config("path_totals", "empty ensemble (n_paths = 0)"));
    }
    if !(t >= T::zero() && t <= horizon) {
        return Err(Error::domain(
            "path_totals",
            format!("start time {t} outside [0, {horizon}]"),
        ));
    }
    if t == horizon {
        let v = kernel.weight(spec, horizon - s) * spec.terminal_tilde(x);
        return Ok(vec![v; params.n_paths]);
    }
    let grid = TimeGrid::spanning(t, horizon, params.n_steps)?;
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let out: Vec<std::result::Result<T, usize>> = (0..params.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(params.seed, p);
            let mut xs = x;
            let mut total = T::zero();
            for i in 0..n {
                let ti = grid.node(i);
                let a = policy.evaluate(ti, xs, &spec.actions);
                total = total + kernel.weight(spec, ti - s) * spec.running_tilde(ti, xs, &a) * dt;
                let dw = sqrt_dt * T::std_normal(&mut rng);
                xs = euler_step(spec, ti, xs, &a, dt, dw);
                if !xs.is_finite() {
                    return Err(i + 1);
                }
            }
            Ok(total + kernel.weight(spec, horizon - s) * spec.terminal_tilde(xs))
        })
        .collect();
    out.into_iter()
        .enumerate()
        .map(|(p, r)| r.map_err(|step| Error::Simulation { path: p, step }))
        .collect()
}

/// `J(s, t, x, ν) = E[∫_t^T f_r(s, X, ν_r) dr + ξ(s, X_T)]` as `(mean, stderr)`.
pub fn estimate_reward<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    s: T,
    t: T,
    x0: T,
    params: &McParams,
) -> Result<(T, T)> {
    if !(s >= T::zero() && s <= spec.horizon) || !(t >= s && t <= spec.horizon) {
        return Err(Error::domain(
            "estimate_reward",
            format!("need 0 <= s <= t <= T, got s = {s}, t = {t}"),
        ));
    }
    let totals = path_totals(spec, policy, s, t, x0, params, Kernel::Value)?;
    Ok(mean_stderr(&totals))
}

/// `E_{t,x}[∂_s ξ(s, X_T) + ∫_t^T ∂_s f_r(s, X, ν_r) dr]` by re-simulation
/// from `(t, x)`, as `(mean, stderr)`.
pub fn estimate_partial_y<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    s: T,
    t: T,
    x: T,
    inner: &McParams,
) -> Result<(T, T)> {
    if !s.is_finite() {
        return Err(Error::domain("estimate_partial_y", "type variable is not finite"));
    }
    let totals = path_totals(spec, policy, s, t, x, inner, Kernel::TypeDerivative)?;
    Ok(mean_stderr(&totals))
}

/// Adjusted reward `k_t(x, a) = f_t(t, x, a) - E_{t,x}[∂_s ξ(t, X_T) + ∫_t^T ∂_s f(t, ·)]`.
pub fn adjusted_reward_k<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    t: T,
    x: T,
    a: &Action<T>,
    inner: &McParams,
) -> Result<T> {
    let (psi, _) = estimate_partial_y(spec, policy, t, t, x, inner)?;
    Ok(spec.running(t, t, x, a) - psi)
}

/// Paired common-random-number difference `J(s, t, x, alt) - J(s, t, x, base)`
/// as `(mean, stderr)`.
pub fn paired_gain<T: Real>(
    spec: &ProblemSpec<T>,
    base: &Policy<T>,
    alt: &Policy<T>,
    t: T,
    x: T,
    params: &McParams,
) -> Result<(T, T)> {
    let b = path_totals(spec, base, t, t, x, params, Kernel::Value)?;
    let a = path_totals(spec, alt, t, t, x, params, Kernel::Value)?;
    let d: Vec<T> = a.iter().zip(&b).map(|(&u, &v)| u - v).collect();
    Ok(mean_stderr(&d))
}
