//! Discrete-time sophisticated equilibrium on a trinomial state lattice.
//!
//! At each step the current self picks the action maximizing its own
//! one-step reward plus the continuation `J(t_i, t_{i+1}, ·)` generated by
//! the later selves; every type slice `J(s, ·, ·)` is then propagated with
//! that action.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{maximize_scalar, Action, FeedbackTable, MaximizerOptions, Policy, ProblemSpec, RunningReward};
use crate::scalar::{bracket, interp_clamped, Real};

/// Placement of the type grid `s_0 = 0 < … < s_{n_s} = T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SGrid {
    /// One type per time node.
    TimeGrid,
    /// `n_s` uniform intervals; nodes coincide with time nodes when `n_s`
    /// divides `n_t`.
    Intervals(usize),
}

impl SGrid {
    /// Type nodes for a uniform time grid `times` (length `n_t + 1`).
    pub fn nodes<T: Real>(&self, times: &[T]) -> Result<Vec<T>> {
        let n_t = times.len() - 1;
        match *self {
            SGrid::TimeGrid => Ok(times.to_vec()),
            SGrid::Intervals(0) => Err(Error::config("SGrid", "need at least one type interval")),
            SGrid::Intervals(n_s) if n_t.is_multiple_of(n_s) => {
                let stride = n_t / n_s;
                Ok((0..=n_s).map(|k| times[k * stride]).collect())
            }
            SGrid::Intervals(n_s) => {
                let (t0, t1) = (times[0], times[n_t]);
                let step = (t1 - t0) / T::from_usize_lossy(n_s);
                Ok((0..=n_s)
                    .map(|k| {
                        if k == n_s {
                            t1
                        } else {
                            t0 + step * T::from_usize_lossy(k)
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Type slice `k` is propagated back to `s_{k-1}` so that the diagonal
/// `s = t` is always bracketed by two available slices. Earlier than `s_k`
/// the kernel is evaluated at small negative lags.
pub(crate) fn slice_start<T: Real>(s_nodes: &[T], k: usize) -> T {
    if k == 0 {
        s_nodes[0]
    } else {
        s_nodes[k - 1]
    }
}

/// `(k, w)` with `s_k <= t < s_{k+1}` (clamped) and `w = (t - s_k)/(s_{k+1} - s_k)`.
pub(crate) fn diag_weights<T: Real>(s_nodes: &[T], t: T) -> (usize, T) {
    let k = bracket(s_nodes, t);
    let w = (t - s_nodes[k]) / (s_nodes[k + 1] - s_nodes[k]);
    (k, w)
}

#[inline]
pub(crate) fn lerp<T: Real>(a: T, b: T, w: T) -> T {
    if w == T::zero() {
        a
    } else {
        a + w * (b - a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeParams<T> {
    pub n_t: usize,
    pub n_x: usize,
    /// Half-width of the state grid around `x0`; widened automatically when
    /// the stencil needs coarser spacing.
    pub half_width: Option<T>,
    /// Explicit `[x_min, x_max]`, overriding `half_width`.
    pub x_range: Option<(T, T)>,
    pub s_grid: SGrid,
    /// Finite action set replacing the box search.
    pub action_set: Option<Vec<T>>,
    pub maximizer: MaximizerOptions<T>,
}

impl<T: Real> LatticeParams<T> {
    pub fn new(n_t: usize, n_x: usize) -> Self {
        Self {
            n_t,
            n_x,
            half_width: None,
            x_range: None,
            s_grid: SGrid::TimeGrid,
            action_set: None,
            maximizer: MaximizerOptions::default(),
        }
    }

    pub fn with_s_grid(mut self, s: SGrid) -> Self {
        self.s_grid = s;
        self
    }
}

/// Three-point transition `(k, [p_down, p_mid, p_up])` onto nodes
/// `j + k - 1, j + k, j + k + 1` matching mean `m` and variance `v`.
/// Variances below `|m'|(h - |m'|)` (`m'` the residual drift after the
/// shift) cannot be matched with non-negative weights and are raised to
/// that floor.
#[inline]
pub fn stencil<T: Real>(m: T, v: T, h: T) -> (isize, [T; 3]) {
    let k = (m / h).round();
    let mp = m - k * h;
    let two = T::lit(2.0);
    let v = v.max(mp.abs() * (h - mp.abs()));
    let q = (v + mp * mp) / (h * h);
    let skew = mp / h;
    let k = k.to_isize().unwrap_or(0);
    (k, [q / two - skew / two, T::one() - q, q / two + skew / two])
}

/// Uniform state grid and time grid shared by the lattice solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<T> {
    pub times: Vec<T>,
    pub xs: Vec<T>,
    pub h: T,
    pub dt: T,
    pub s_nodes: Vec<T>,
    action_set: Option<Vec<T>>,
    maximizer: MaximizerOptions<T>,
}

impl<T: Real> Lattice<T> {
    pub fn build(spec: &ProblemSpec<T>, params: &LatticeParams<T>) -> Result<Self> {
        const OP: &str = "solve_lattice";
        spec.validate()?;
        if !spec.markovian {
            return Err(Error::config(OP, "the lattice needs a Markovian problem"));
        }
        if spec.actions.dim() != 1 {
            return Err(Error::config(OP, "the lattice supports scalar actions only"));
        }
        if params.n_t == 0 || params.n_x < 3 {
            return Err(Error::config(OP, "need n_t >= 1 and n_x >= 3"));
        }
        let horizon = spec.horizon;
        let dt = horizon / T::from_usize_lossy(params.n_t);
        let times: Vec<T> = (0..=params.n_t)
            .map(|i| {
                if i == params.n_t {
                    horizon
                } else {
                    dt * T::from_usize_lossy(i)
                }
            })
            .collect();
        let cells = T::from_usize_lossy(params.n_x - 1);
        let (lo, hi) = match params.x_range {
            Some((lo, hi)) if lo < hi => (lo, hi),
            Some(_) => return Err(Error::config(OP, "x_range must satisfy lo < hi")),
            None => {
                let sig = spec.sigma_max();
                let spread = T::lit(6.0) * sig * horizon.sqrt();
                let stable = cells / T::lit(2.0) * (T::lit(1.5) * sig * sig * dt).sqrt();
                let hw = params.half_width.unwrap_or(spread).max(stable);
                (spec.x0 - hw, spec.x0 + hw)
            }
        };
        let h = (hi - lo) / cells;
        let xs: Vec<T> = (0..params.n_x)
            .map(|j| {
                if j == params.n_x - 1 {
                    hi
                } else {
                    lo + h * T::from_usize_lossy(j)
                }
            })
            .collect();
        let var_max = xs
            .iter()
            .map(|&x| {
                let s = spec.sigma_at(T::zero(), x);
                s * s * dt
            })
            .fold(T::zero(), T::max);
        let limit = T::lit(0.75) * h * h;
        if var_max > limit {
            let sig2 = var_max / dt;
            return Err(Error::config(
                OP,
                format!(
                    "stencil infeasible: σ²Δ = {var_max} exceeds 0.75·h² = {limit}; use Δ <= {}",
                    limit / sig2
                ),
            ));
        }
        if let Some(set) = &params.action_set {
            if set.is_empty() || set.iter().any(|a| *a < spec.actions.lo[0] || *a > spec.actions.hi[0]) {
                return Err(Error::config(OP, "action set must be non-empty and inside the box"));
            }
        }
        let s_nodes = params.s_grid.nodes(&times)?;
        Ok(Self {
            times,
            xs,
            h,
            dt,
            s_nodes,
            action_set: params.action_set.clone(),
            maximizer: params.maximizer,
        })
    }

    pub fn n_t(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    /// Value at an arbitrary node index, extrapolated linearly past the edges.
    #[inline]
    fn at(vals: &[T], idx: isize) -> T {
        let n = vals.len() as isize;
        if idx < 0 {
            vals[0] + T::from_isize(idx).unwrap() * (vals[1] - vals[0])
        } else if idx >= n {
            let over = T::from_isize(idx - (n - 1)).unwrap();
            vals[(n - 1) as usize] + over * (vals[(n - 1) as usize] - vals[(n - 2) as usize])
        } else {
            vals[idx as usize]
        }
    }

    /// `E^a[vals(X_{t_{i+1}}) | X_{t_i} = x_j]`.
    #[inline]
    pub fn expect(&self, spec: &ProblemSpec<T>, t: T, j: usize, a: &Action<T>, vals: &[T]) -> T {
        let x = self.xs[j];
        let sig = spec.sigma_at(t, x);
        let m = spec.state_drift(t, x, a) * self.dt;
        let v = sig * sig * self.dt;
        let (k, p) = stencil(m, v, self.h);
        let c = j as isize + k;
        p[0] * Self::at(vals, c - 1) + p[1] * Self::at(vals, c) + p[2] * Self::at(vals, c + 1)
    }

    /// Maximizes `f(t, t, x_j, a) Δ + scale · E^a[target]` over the actions.
    fn best_action(&self, spec: &ProblemSpec<T>, i: usize, j: usize, target: &[T], scale: T) -> Action<T> {
        let t = self.times[i];
        let x = self.xs[j];
        let objective = |a: T| {
            let a = Action::scalar(a);
            spec.running(t, t, x, &a) * self.dt + scale * self.expect(spec, t, j, &a, target)
        };
        if let Some(set) = &self.action_set {
            let mut best = (set[0], objective(set[0]));
            for &a in &set[1..] {
                let v = objective(a);
                if v > best.1 {
                    best = (a, v);
                }
            }
            return Action::scalar(best.0);
        }
        let (lo, hi) = (spec.actions.lo[0], spec.actions.hi[0]);
        if let Some(a) = self.quadratic_argmax(spec, t, j, target, scale) {
            return Action::scalar(a);
        }
        Action::scalar(maximize_scalar(
            objective,
            lo,
            hi,
            self.maximizer.grid_points,
            self.maximizer.tol,
        ))
    }

    /// Closed-form maximizer when the reward is concave quadratic in `a` and
    /// the optimal stencil is unshifted, so the objective is an exact parabola.
    fn quadratic_argmax(&self, spec: &ProblemSpec<T>, i_t: T, j: usize, target: &[T], scale: T) -> Option<T> {
        let RunningReward::Quadratic { aa, a: la, .. } = &spec.running else {
            return None;
        };
        let x = self.xs[j];
        let n = target.len();
        if j == 0 || j + 1 >= n {
            return None;
        }
        let (jm, j0, jp) = (target[j - 1], target[j], target[j + 1]);
        let h = self.h;
        let two = T::lit(2.0);
        let a1 = (jp - jm) / (two * h);
        let a2 = (jp - two * j0 + jm) / (two * h * h);
        let phi0 = spec.discount.phi(T::zero());
        let sig = spec.sigma_at(i_t, x);
        let m0 = sig * (spec.drift.c0 + spec.drift.cx * spec.clip_state(x)) * self.dt;
        let m1 = sig * spec.drift.ca[0] * self.dt;
        let q = self.dt * phi0 * aa[0] + scale * a2 * m1 * m1;
        let l = self.dt * phi0 * la[0] + scale * (m1 * a1 + two * m0 * m1 * a2);
        if !(q < T::zero()) {
            return None;
        }
        let a = (-l / (two * q)).max(spec.actions.lo[0]).min(spec.actions.hi[0]);
        let m = m0 + m1 * a;
        ((m / h).abs() < T::lit(0.5)).then_some(a)
    }
}

/// Game value, type family and equilibrium actions on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEquilibrium<T> {
    pub lattice: Lattice<T>,
    /// `v(t_i, x_j)`, `[time][x]`.
    pub v: Vec<T>,
    /// `J(s_k, t_i, x_j)`, `[type][time][x]`; NaN before a slice starts.
    pub jfam: Vec<T>,
    /// `a*(t_i, x_j)` for `i < n_t`, `[time][x]`.
    pub policy: Vec<T>,
}

impl<T: Real> LatticeEquilibrium<T> {
    pub fn v_at(&self, i: usize, j: usize) -> T {
        self.v[i * self.lattice.n_x() + j]
    }

    pub fn j_at(&self, k: usize, i: usize, j: usize) -> T {
        let (nt, nx) = (self.lattice.n_t() + 1, self.lattice.n_x());
        self.jfam[(k * nt + i) * nx + j]
    }

    pub fn action_at(&self, i: usize, j: usize) -> T {
        self.policy[i * self.lattice.n_x() + j]
    }

    /// `v(t_i, x)` interpolated in `x`.
    pub fn value(&self, i: usize, x: T) -> T {
        let nx = self.lattice.n_x();
        interp_clamped(&self.lattice.xs, &self.v[i * nx..(i + 1) * nx], x)
    }

    /// `t,x,v,a` rows (action blank at the horizon).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,v,a")?;
        let lat = &self.lattice;
        for i in 0..=lat.n_t() {
            for j in 0..lat.n_x() {
                let a = if i < lat.n_t() {
                    self.action_at(i, j).to_string()
                } else {
                    String::new()
                };
                writeln!(w, "{},{},{},{a}", lat.times[i], lat.xs[j], self.v_at(i, j))?;
            }
        }
        Ok(())
    }
}

/// Backward induction for the sophisticated equilibrium.
pub fn solve_lattice<T: Real>(spec: &ProblemSpec<T>, params: &LatticeParams<T>) -> Result<LatticeEquilibrium<T>> {
    let lat = Lattice::build(spec, params)?;
    let (n_t, n_x) = (lat.n_t(), lat.n_x());
    let n_s = lat.s_nodes.len();
    let plane = (n_t + 1) * n_x;
    let mut jfam = vec![T::nan(); n_s * plane];
    let mut v = vec![T::zero(); plane];
    let mut policy = vec![T::zero(); n_t * n_x];
    let horizon = spec.horizon;

    for (k, &s) in lat.s_nodes.iter().enumerate() {
        let base = k * plane + n_t * n_x;
        for (j, &x) in lat.xs.iter().enumerate() {
            jfam[base + j] = spec.terminal(s, x);
        }
    }
    let (k, w) = diag_weights(&lat.s_nodes, horizon);
    for j in 0..n_x {
        let a = jfam[k * plane + n_t * n_x + j];
        let b = jfam[(k + 1) * plane + n_t * n_x + j];
        v[n_t * n_x + j] = lerp(a, b, w);
    }

    let mut target = vec![T::zero(); n_x];
    for i in (0..n_t).rev() {
        let t = lat.times[i];
        let (k, w) = diag_weights(&lat.s_nodes, t);
        for j in 0..n_x {
            let a = jfam[k * plane + (i + 1) * n_x + j];
            let b = jfam[(k + 1) * plane + (i + 1) * n_x + j];
            target[j] = lerp(a, b, w);
        }
        let acts: Vec<Action<T>> = (0..n_x)
            .into_par_iter()
            .map(|j| lat.best_action(spec, i, j, &target, T::one()))
            .collect();
        for (j, a) in acts.iter().enumerate() {
            policy[i * n_x + j] = a.first();
        }
        jfam.par_chunks_mut(plane).enumerate().for_each(|(ks, slice)| {
            let s = lat.s_nodes[ks];
            if t < slice_start(&lat.s_nodes, ks) {
                return;
            }
            let (done, cur) = slice.split_at_mut((i + 1) * n_x);
            let next = &cur[..n_x];
            let now = &mut done[i * n_x..];
            for j in 0..n_x {
                let a = &acts[j];
                now[j] = spec.running(s, t, lat.xs[j], a) * lat.dt + lat.expect(spec, t, j, a, next);
            }
        });
        for j in 0..n_x {
            let a = jfam[k * plane + i * n_x + j];
            let b = jfam[(k + 1) * plane + i * n_x + j];
            v[i * n_x + j] = lerp(a, b, w);
        }
    }
    Ok(LatticeEquilibrium {
        lattice: lat,
        v,
        jfam,
        policy,
    })
}

/// Classical (time-consistent) dynamic programming on the same lattice:
/// `w_i = max_a [(f(t_i, t_i, x, a) + extra(i, x)) Δ + β E^a w_{i+1}]`,
/// `w_{n_t} = ξ(T, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalSolution<T> {
    pub values: Vec<T>,
    pub policy: Vec<T>,
}

impl<T: Real> ClassicalSolution<T> {
    pub fn value(&self, lat: &Lattice<T>, i: usize, x: T) -> T {
        let nx = lat.n_x();
        interp_clamped(&lat.xs, &self.values[i * nx..(i + 1) * nx], x)
    }
}

pub fn classical_dp<T: Real>(
    spec: &ProblemSpec<T>,
    lat: &Lattice<T>,
    step_discount: T,
    extra: &(dyn Fn(usize, T) -> T + Sync),
) -> Result<ClassicalSolution<T>> {
    let (n_t, n_x) = (lat.n_t(), lat.n_x());
    let mut values = vec![T::zero(); (n_t + 1) * n_x];
    let mut policy = vec![T::zero(); n_t * n_x];
    for (j, &x) in lat.xs.iter().enumerate() {
        values[n_t * n_x + j] = spec.terminal(spec.horizon, x);
    }
    for i in (0..n_t).rev() {
        let t = lat.times[i];
        let (now, next) = values.split_at_mut((i + 1) * n_x);
        let next = &next[..n_x];
        let row: Vec<(T, T)> = (0..n_x)
            .into_par_iter()
            .map(|j| {
                let a = lat.best_action(spec, i, j, next, step_discount);
                let x = lat.xs[j];
                let val = (spec.running(t, t, x, &a) + extra(i, x)) * lat.dt
                    + step_discount * lat.expect(spec, t, j, &a, next);
                (a.first(), val)
            })
            .collect();
        for (j, (a, val)) in row.into_iter().enumerate() {
            policy[i * n_x + j] = a;
            now[i * n_x + j] = val;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "classical_dp",
            iteration: 0,
            step: 0,
        });
    }
    Ok(ClassicalSolution { values, policy })
}

/// Feedback table of the lattice actions, or a constant policy when every
/// node carries the same action.
pub fn lattice_policy_export<T: Real>(eq: &LatticeEquilibrium<T>) -> Policy<T> {
    let lat = &eq.lattice;
    let first = eq.policy[0];
    if eq.policy.iter().all(|&a| a == first) {
        return Policy::Constant(Action::scalar(first));
    }
    let rows: Vec<Vec<Action<T>>> = (0..lat.n_t())
        .map(|i| (0..lat.n_x()).map(|j| Action::scalar(eq.action_at(i, j))).collect())
        .collect();
    Policy::Feedback(FeedbackTable::new(
        lat.times[..lat.n_t()].to_vec(),
        lat.xs.clone(),
        &rows,
    ))
}
