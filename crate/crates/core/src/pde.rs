//! Finite differences for the extended HJB system: the value equation for
//! `V`, which sees the type family only through the diagonal `∂_s J(t,t,x)`,
//! and the linear equations for every slice `J^s` under the frozen
//! equilibrium action.

use std::io::Write;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::lattice::{diag_weights, lerp, slice_start, SGrid};
use crate::problem::{hamiltonian_h, maximizer, Action, ProblemSpec};
use crate::scalar::{interp_clamped, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme<T> {
    ExplicitEuler,
    /// `0` is explicit, `1` fully implicit, `0.5` Crank–Nicolson.
    ThetaImplicit(T),
}

impl<T: Real> Scheme<T> {
    fn theta(&self) -> T {
        match *self {
            Scheme::ExplicitEuler => T::zero(),
            Scheme::ThetaImplicit(th) => th,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeGrids<T> {
    pub n_t: usize,
    pub n_x: usize,
    /// Defaults to `x0 ± 6·max σ·√T`.
    pub x_range: Option<(T, T)>,
    pub s_grid: SGrid,
    pub scheme: Scheme<T>,
}

impl<T: Real> PdeGrids<T> {
    pub fn new(n_t: usize, n_x: usize) -> Self {
        Self {
            n_t,
            n_x,
            x_range: None,
            s_grid: SGrid::TimeGrid,
            scheme: Scheme::ThetaImplicit(T::lit(0.5)),
        }
    }

    pub fn with_s_grid(mut self, s: SGrid) -> Self {
        self.s_grid = s;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution<T> {
    pub times: Vec<T>,
    pub xs: Vec<T>,
    pub s_nodes: Vec<T>,
    /// `[time][x]`
    pub v: Vec<T>,
    /// `[type][time][x]`, NaN before a slice starts.
    pub j: Vec<T>,
    /// `∂_s J(t, t, x)`, `[time][x]`.
    pub diag_dsj: Vec<T>,
    /// `a*(t_i, x_j)` for `i < n_t`.
    pub policy: Vec<T>,
}

impl<T: Real> PdeSolution<T> {
    pub fn n_t(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    fn row<'a>(&self, data: &'a [T], i: usize) -> &'a [T] {
        &data[i * self.n_x()..(i + 1) * self.n_x()]
    }

    pub fn v_row(&self, i: usize) -> &[T] {
        self.row(&self.v, i)
    }

    pub fn j_row(&self, k: usize, i: usize) -> &[T] {
        let plane = (self.n_t() + 1) * self.n_x();
        &self.j[k * plane + i * self.n_x()..k * plane + (i + 1) * self.n_x()]
    }

    /// `V(t_i, x)` interpolated in `x`.
    pub fn value(&self, i: usize, x: T) -> T {
        interp_clamped(&self.xs, self.v_row(i), x)
    }

    /// `J(t_i, t_i, x_j)` interpolated between the bracketing type slices.
    pub fn j_diagonal(&self, i: usize, jx: usize) -> T {
        let (k, w) = diag_weights(&self.s_nodes, self.times[i]);
        lerp(self.j_row(k, i)[jx], self.j_row(k + 1, i)[jx], w)
    }

    /// `sup |V - J(t,t,·)|` over all nodes.
    pub fn diagonal_gap(&self) -> T {
        let mut gap = T::zero();
        for i in 0..=self.n_t() {
            for jx in 0..self.n_x() {
                gap = gap.max((self.v_row(i)[jx] - self.j_diagonal(i, jx)).abs());
            }
        }
        gap
    }

    /// `t,x,V,a,diag_dsJ` rows (action blank at the horizon).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,V,a,diag_dsJ")?;
        for i in 0..=self.n_t() {
            for jx in 0..self.n_x() {
                let a = if i < self.n_t() {
                    self.row(&self.policy, i)[jx].to_string()
                } else {
                    String::new()
                };
                writeln!(
                    w,
                    "{},{},{},{a},{}",
                    self.times[i],
                    self.xs[jx],
                    self.v_row(i)[jx],
                    self.row(&self.diag_dsj, i)[jx]
                )?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self, spec: &ProblemSpec<T>) -> serde_json::Value {
        let (res_v, res_j) = pde_residual(spec, self);
        json!({
            "construct": "extended-hjb-system",
            "n_t": self.n_t(),
            "n_x": self.n_x(),
            "n_s": self.s_nodes.len() - 1,
            "x_range": [self.xs[0].to_f64_lossy(), self.xs[self.n_x() - 1].to_f64_lossy()],
            "value_at_x0": self.value(0, spec.x0).to_f64_lossy(),
            "residual_v": res_v.to_f64_lossy(),
            "residual_j": res_j.to_f64_lossy(),
            "diagonal_gap": self.diagonal_gap().to_f64_lossy(),
        })
    }
}

/// Central first difference, one-sided at the edges.
fn gradient<T: Real>(vals: &[T], j: usize, h: T) -> T {
    let n = vals.len();
    if j == 0 {
        (vals[1] - vals[0]) / h
    } else if j == n - 1 {
        (vals[n - 1] - vals[n - 2]) / h
    } else {
        (vals[j + 1] - vals[j - 1]) / (T::lit(2.0) * h)
    }
}

fn laplacian<T: Real>(vals: &[T], j: usize, h: T) -> T {
    (vals[j + 1] - T::lit(2.0) * vals[j] + vals[j - 1]) / (h * h)
}

/// `(lower, centre, upper)` weights of `μ ∂_x + d ∂_xx` at an interior node.
#[derive(Clone, Copy)]
struct Stencil<T> {
    lo: T,
    mid: T,
    up: T,
}

/// `out = prev + Δ(θ L out + (1-θ) L prev + src)` with linear extrapolation
/// at both edges.
fn advance<T: Real>(
    prev: &[T],
    ops: &[Stencil<T>],
    src: &[T],
    dt: T,
    theta: T,
    out: &mut [T],
    scratch: &mut Vec<T>,
) -> bool {
    let n = prev.len();
    let explicit = T::one() - theta;
    for j in 1..n - 1 {
        let op = ops[j];
        let lp = op.lo * prev[j - 1] + op.mid * prev[j] + op.up * prev[j + 1];
        out[j] = prev[j] + dt * (explicit * lp + src[j]);
    }
    if theta > T::zero() {
        // tridiagonal system on the interior nodes 1..n-1
        let m = n - 2;
        scratch.clear();
        scratch.resize(2 * m, T::zero());
        let (cp, dp) = scratch.split_at_mut(m);
        let coeffs = |j: usize| {
            let op = ops[j];
            let (mut a, mut b, mut c) = (-theta * dt * op.lo, T::one() - theta * dt * op.mid, -theta * dt * op.up);
            if j == 1 {
                b = b + T::lit(2.0) * a;
                c = c - a;
                a = T::zero();
            }
            if j == n - 2 {
                b = b + T::lit(2.0) * c;
                a = a - c;
                c = T::zero();
            }
            (a, b, c)
        };
        for r in 0..m {
            let (a, b, c) = coeffs(r + 1);
            let (cprev, dprev) = if r == 0 {
                (T::zero(), T::zero())
            } else {
                (cp[r - 1], dp[r - 1])
            };
            let denom = b - a * cprev;
            if !(denom.abs() > T::TINY) || !denom.is_finite() {
                return false;
            }
            cp[r] = c / denom;
            dp[r] = (out[r + 1] - a * dprev) / denom;
        }
        out[m] = dp[m - 1];
        for r in (0..m - 1).rev() {
            out[r + 1] = dp[r] - cp[r] * out[r + 2];
        }
    }
    out[0] = T::lit(2.0) * out[1] - out[2];
    out[n - 1] = T::lit(2.0) * out[n - 2] - out[n - 3];
    out.iter().all(|v| v.is_finite())
}

/// Segment slope of the type family between the slices bracketing `t`.
fn diagonal_slope<T: Real>(s_nodes: &[T], t: T, below: &[T], above: &[T], out: &mut [T]) {
    let (k, _) = diag_weights(s_nodes, t);
    let ds = s_nodes[k + 1] - s_nodes[k];
    for ((o, a), b) in out.iter_mut().zip(below).zip(above) {
        *o = (*b - *a) / ds;
    }
}

/// Backward sweep: at each step the action comes from `∂_x V` at the later
/// time, `V` is advanced with the diagonal `∂_s J` as its coupling term,
/// and every active slice `J^s` is advanced with the same action.
pub fn solve_extended_hjb<T: Real>(spec: &ProblemSpec<T>, grids: &PdeGrids<T>) -> Result<PdeSolution<T>> {
    const OP: &str = "solve_extended_hjb";
    spec.validate()?;
    if !spec.markovian {
        return Err(Error::config(OP, "the PDE solver needs a Markovian problem"));
    }
    if spec.actions.dim() != 1 {
        return Err(Error::config(OP, "the PDE solver supports scalar actions only"));
    }
    if grids.n_t == 0 || grids.n_x < 5 {
        return Err(Error::config(OP, "need n_t >= 1 and n_x >= 5"));
    }
    let theta = grids.scheme.theta();
    if !(theta >= T::zero() && theta <= T::one()) {
        return Err(Error::config(OP, "theta must lie in [0, 1]"));
    }
    let (n_t, n_x) = (grids.n_t, grids.n_x);
    let horizon = spec.horizon;
    let dt = horizon / T::from_usize_lossy(n_t);
    let times: Vec<T> = (0..=n_t)
        .map(|i| if i == n_t { horizon } else { dt * T::from_usize_lossy(i) })
        .collect();
    let (lo, hi) = match grids.x_range {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some(_) => return Err(Error::config(OP, "x_range must satisfy lo < hi")),
        None => {
            let hw = T::lit(6.0) * spec.sigma_max() * horizon.sqrt();
            (spec.x0 - hw, spec.x0 + hw)
        }
    };
    let h = (hi - lo) / T::from_usize_lossy(n_x - 1);
    let xs: Vec<T> = (0..n_x)
        .map(|j| {
            if j == n_x - 1 {
                hi
            } else {
                lo + h * T::from_usize_lossy(j)
            }
        })
        .collect();
    let half_var: Vec<T> = xs
        .iter()
        .map(|&x| {
            let s = spec.sigma_at(T::zero(), x);
            T::lit(0.5) * s * s
        })
        .collect();
    if let Scheme::ExplicitEuler = grids.scheme {
        let cfl = half_var.iter().fold(T::zero(), |m, &d| m.max(d)) * T::lit(2.0) * dt / (h * h);
        if cfl > T::lit(0.5) {
            return Err(Error::config(
                OP,
                format!("explicit scheme violates CFL: max σ²Δt/Δx² = {cfl} > 0.5"),
            ));
        }
    }
    let s_nodes = grids.s_grid.nodes(&times)?;
    let n_s = s_nodes.len();
    let plane = (n_t + 1) * n_x;

    let mut v = vec![T::zero(); plane];
    let mut jfam = vec![T::nan(); n_s * plane];
    let mut diag = vec![T::zero(); plane];
    let mut policy = vec![T::zero(); n_t * n_x];

    for (k, &s) in s_nodes.iter().enumerate() {
        for (jx, &x) in xs.iter().enumerate() {
            jfam[k * plane + n_t * n_x + jx] = spec.terminal(s, x);
        }
    }
    for (jx, &x) in xs.iter().enumerate() {
        v[n_t * n_x + jx] = spec.terminal(horizon, x);
    }

    let slope_at = |jfam: &[T], i: usize, out: &mut [T]| {
        let (k, _) = diag_weights(&s_nodes, times[i]);
        let below = &jfam[k * plane + i * n_x..k * plane + (i + 1) * n_x];
        let above = &jfam[(k + 1) * plane + i * n_x..(k + 1) * plane + (i + 1) * n_x];
        diagonal_slope(&s_nodes, times[i], below, above, out);
    };

    let mut scratch = Vec::new();
    let mut ops = vec![
        Stencil {
            lo: T::zero(),
            mid: T::zero(),
            up: T::zero()
        };
        n_x
    ];
    let mut src = vec![T::zero(); n_x];
    for i in (0..n_t).rev() {
        let t = times[i];
        {
            let (_, tail) = diag.split_at_mut((i + 1) * n_x);
            slope_at(&jfam, i + 1, &mut tail[..n_x]);
        }
        let u_next = &diag[(i + 1) * n_x..(i + 2) * n_x];
        let v_next = v[(i + 1) * n_x..(i + 2) * n_x].to_vec();
        let acts: Vec<Action<T>> = (0..n_x)
            .into_par_iter()
            .map(|jx| maximizer(spec, t, xs[jx], gradient(&v_next, jx, h)))
            .collect::<Result<_>>()?;
        for jx in 0..n_x {
            policy[i * n_x + jx] = acts[jx].first();
            let mu = spec.state_drift(t, xs[jx], &acts[jx]);
            let d = half_var[jx];
            ops[jx] = Stencil {
                lo: d / (h * h) - mu / (T::lit(2.0) * h),
                mid: -T::lit(2.0) * d / (h * h),
                up: d / (h * h) + mu / (T::lit(2.0) * h),
            };
            src[jx] = spec.running(t, t, xs[jx], &acts[jx]) - u_next[jx];
        }
        let (now, next) = v.split_at_mut((i + 1) * n_x);
        if !advance(&next[..n_x], &ops, &src, dt, theta, &mut now[i * n_x..], &mut scratch) {
            return Err(Error::NonFinite {
                op: OP,
                iteration: 0,
                step: i,
            });
        }
        let ok = jfam
            .par_chunks_mut(plane)
            .enumerate()
            .map(|(k, slice)| {
                if t < slice_start(&s_nodes, k) {
                    return true;
                }
                let s = s_nodes[k];
                let src: Vec<T> = (0..n_x).map(|jx| spec.running(s, t, xs[jx], &acts[jx])).collect();
                let (done, cur) = slice.split_at_mut((i + 1) * n_x);
                let mut scratch = Vec::new();
                advance(&cur[..n_x], &ops, &src, dt, theta, &mut done[i * n_x..], &mut scratch)
            })
            .collect::<Vec<bool>>();
        if let Some(k) = ok.iter().position(|ok| !ok) {
            return Err(Error::NonFinite {
                op: OP,
                iteration: k,
                step: i,
            });
        }
    }
    slope_at(&jfam, 0, &mut diag[..n_x]);
    Ok(PdeSolution {
        times,
        xs,
        s_nodes,
        v,
        j: jfam,
        diag_dsj: diag,
        policy,
    })
}

/// Sup-norm plug-back residuals `(res_V, res_J)` of both equations: backward
/// time difference, centred space differences evaluated at the earlier
/// time, interior nodes `2..n_x-2`, terminal row excluded. The action in the
/// `V` residual is re-optimized from the discrete gradient.
pub fn pde_residual<T: Real>(spec: &ProblemSpec<T>, sol: &PdeSolution<T>) -> (T, T) {
    let (n_t, n_x) = (sol.n_t(), sol.n_x());
    if n_x < 5 {
        return (T::zero(), T::zero());
    }
    let h = sol.xs[1] - sol.xs[0];
    let dt = sol.times[1] - sol.times[0];
    let half = T::lit(0.5);
    let mut u = vec![T::zero(); n_x];
    let mut res_v = T::zero();
    let mut res_j = T::zero();
    for i in 0..n_t {
        let t = sol.times[i];
        let now = sol.v_row(i);
        let next = sol.v_row(i + 1);
        let (k, _) = diag_weights(&sol.s_nodes, t);
        diagonal_slope(&sol.s_nodes, t, sol.j_row(k, i), sol.j_row(k + 1, i), &mut u);
        for jx in 2..n_x - 2 {
            let x = sol.xs[jx];
            let z = gradient(now, jx, h);
            let Ok(a) = maximizer(spec, t, x, z) else {
                continue;
            };
            let sig = spec.sigma_at(t, x);
            let r = (next[jx] - now[jx]) / dt + hamiltonian_h(spec, t, t, x, z, &a) - u[jx]
                + half * sig * sig * laplacian(now, jx, h);
            res_v = res_v.max(r.abs());
        }
        for (k, &s) in sol.s_nodes.iter().enumerate() {
            if t < slice_start(&sol.s_nodes, k) {
                continue;
            }
            let now = sol.j_row(k, i);
            let next = sol.j_row(k, i + 1);
            for jx in 2..n_x - 2 {
                let x = sol.xs[jx];
                let a = Action::scalar(sol.policy[i * n_x + jx]);
                let sig = spec.sigma_at(t, x);
                let r = (next[jx] - now[jx]) / dt
                    + spec.running(s, t, x, &a)
                    + spec.state_drift(t, x, &a) * gradient(now, jx, h)
                    + half * sig * sig * laplacian(now, jx, h);
                res_j = res_j.max(r.abs());
            }
        }
    }
    (res_v, res_j)
}
