use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::basis::{chunked_mean, JointDesign, RegressionBasis, StepBasis, CHUNK, MAX_BASIS};
use crate::error::{Error, Result};
use crate::lattice::{diag_weights, slice_start, SGrid};
use crate::mc::PathEnsemble;
use crate::problem::{hamiltonian_sup, maximizer, Action, FeedbackTable, Policy, ProblemSpec};
use crate::scalar::{mean_stderr, Real};

const OP: &str = "picard_solve";

#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig<T> {
    pub max_iters: usize,
    /// Stop once the weighted delta is at most this.
    pub tol: T,
    /// Time weight `c` of the norm; defaults to twice the largest `|b|`
    /// seen along the ensemble (at least 2).
    pub weight: Option<T>,
    /// `λ ∈ (0, 1]`: new iterate `λ·T(old) + (1-λ)·old`.
    pub damping: T,
    /// Type grid; defaults to every fourth time node.
    pub s_grid: Option<SGrid>,
    pub basis: RegressionBasis,
    pub seed: u64,
}

impl<T: Real> Default for PicardConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: T::lit(1e-4),
            weight: None,
            damping: T::one(),
            s_grid: None,
            basis: RegressionBasis::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Change of `(Y, Z, diagonal, type family)`: mean square per step,
    /// averaged over steps with weights `∝ e^{c t}`.
    pub delta: f64,
    /// Weighted mean-square change of the maximizing action along the paths.
    pub policy_delta: f64,
}

/// Converged iterate. Pathwise arrays are step-major; the martingale
/// integrands and the type family are kept as regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution<T> {
    pub times: Vec<T>,
    pub s_nodes: Vec<T>,
    pub n_paths: usize,
    pub weight: T,
    pub bases: Vec<StepBasis<T>>,
    /// `Y`, `[(n_t + 1) × n_paths]`.
    pub y: Vec<T>,
    /// Coefficients of `ζ = σZ` per step `0..n_t`.
    pub zeta: Vec<Vec<T>>,
    /// `∂Y_t^t`, `[(n_t + 1) × n_paths]`.
    pub diag_u: Vec<T>,
    /// Type-family coefficients `[slice][step]`; empty before the slice starts.
    pub slice_c: Vec<Vec<Vec<T>>>,
    pub slice_w: Vec<Vec<Vec<T>>>,
    pub log: Vec<IterationRecord>,
}

#[inline]
fn z_from_zeta<T: Real>(sigma: T, zeta: T) -> T {
    if sigma == T::zero() {
        T::zero()
    } else {
        zeta / sigma
    }
}

impl<T: Real> BsdeSolution<T> {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn y_at(&self, i: usize) -> &[T] {
        &self.y[i * self.n_paths..(i + 1) * self.n_paths]
    }

    pub fn diag_u_at(&self, i: usize) -> &[T] {
        &self.diag_u[i * self.n_paths..(i + 1) * self.n_paths]
    }

    /// `(mean, stderr)` of `Y_0`.
    pub fn y0(&self) -> (T, T) {
        mean_stderr(self.y_at(0))
    }

    /// `ζ(t_i, x)` from the regression surface.
    pub fn zeta_at(&self, i: usize, x: T) -> T {
        self.bases[i].eval(&self.zeta[i], x)
    }

    /// `Z(t_i, x) = ζ/σ`.
    pub fn z_at(&self, spec: &ProblemSpec<T>, i: usize, x: T) -> T {
        z_from_zeta(spec.sigma_at(self.times[i], x), self.zeta_at(i, x))
    }

    /// Equilibrium action `a*(t_i, X_i)` for every path.
    pub fn policy_samples(&self, spec: &ProblemSpec<T>, ens: &PathEnsemble<T>, i: usize) -> Result<Vec<Action<T>>> {
        ens.states_at(i)
            .par_iter()
            .map(|&x| maximizer(spec, self.times[i], x, self.z_at(spec, i, x)))
            .collect()
    }

    /// `t,mean_y,mean_diag_u`.
    pub fn write_means_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean_y,mean_diag_u")?;
        for i in 0..=self.n_steps() {
            let (my, _) = mean_stderr(self.y_at(i));
            let (mu, _) = mean_stderr(self.diag_u_at(i));
            writeln!(w, "{},{my},{mu}", self.times[i])?;
        }
        Ok(())
    }

    pub fn report_json(&self) -> serde_json::Value {
        let (y0, se) = self.y0();
        let deltas: Vec<f64> = self.log.iter().map(|r| r.delta).collect();
        let ratios: Vec<f64> = deltas.windows(2).map(|w| w[1] / w[0]).collect();
        json!({
            "construct": "drift-control-bsde-system",
            "n_steps": self.n_steps(),
            "n_paths": self.n_paths,
            "n_s": self.s_nodes.len() - 1,
            "weight_c": self.weight.to_f64_lossy(),
            "iterations": self.log,
            "ratios": ratios,
            "y0_mean": y0.to_f64_lossy(),
            "y0_stderr": se.to_f64_lossy(),
            "basis_degrees": self.bases.iter().map(|b| b.degree).collect::<Vec<_>>(),
        })
    }
}

/// Small dense row-major matrix.
#[derive(Debug, Clone)]
struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    fn mul(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(v).fold(T::zero(), |s, (a, b)| s + *a * *b)
            })
            .collect()
    }

    /// Joint projections of every column of the raw moments `M0[r][c]`
    /// (against `ψ`) and `M1[r][c]` (against `ψ ΔW`).
    fn joint(design: &JointDesign<T>, rows: usize, m0: &[T], m1: &[T], cols: usize) -> (Self, Self) {
        let mut a = vec![T::zero(); rows * cols];
        let mut aw = vec![T::zero(); rows * cols];
        for c in 0..cols {
            let col0: Vec<T> = (0..rows).map(|r| m0[r * cols + c]).collect();
            let col1: Vec<T> = (0..rows).map(|r| m1[r * cols + c]).collect();
            let (u, v) = design.solve(&col0, &col1);
            for r in 0..rows {
                a[r * cols + c] = u[r];
                aw[r * cols + c] = v[r];
            }
        }
        (Self { rows, cols, data: a }, Self { rows, cols, data: aw })
    }
}

#[inline]
fn axpy<T: Real>(acc: &mut [T], a: T, x: &[T]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o = *o + a * *v;
    }
}

fn lerp_vec<T: Real>(a: &[T], b: &[T], w: T) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + w * (*y - *x)).collect()
}

/// Overwrites `out[p] = f(p, out[p])` and returns `(Σ (new-old)², Σ extra)`
/// reduced in fixed chunks.
fn update_paths<T: Real>(out: &mut [T], f: impl Fn(usize, T) -> Result<(T, T)> + Sync) -> Result<(T, T)> {
    let parts: Vec<Result<(T, T)>> = out
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sq = T::zero();
            let mut extra = T::zero();
            for (k, slot) in chunk.iter_mut().enumerate() {
                let (new, e) = f(c * CHUNK + k, *slot)?;
                sq = sq + (new - *slot) * (new - *slot);
                extra = extra + e;
                *slot = new;
            }
            Ok((sq, extra))
        })
        .collect();
    let mut total = (T::zero(), T::zero());
    for p in parts {
        let (a, b) = p?;
        total = (total.0 + a, total.1 + b);
    }
    Ok(total)
}

/// Projections that depend only on the ensemble.
struct StaticOps<T> {
    design: JointDesign<T>,
    /// value block of the joint projection of `ψ(X_{i+1})`
    a: Mat<T>,
    /// integrand block of the same projection
    aw: Mat<T>,
}

fn static_ops<T: Real>(ens: &PathEnsemble<T>, bases: &[StepBasis<T>], i: usize, dt: T) -> Result<StaticOps<T>> {
    let (bi, bn) = (&bases[i], &bases[i + 1]);
    let (li, ln) = (bi.len(), bn.len());
    let (xi, xn, dw) = (ens.states_at(i), ens.states_at(i + 1), ens.increments_at(i));
    let design = JointDesign::build(bi, xi, dw, dt, i)?;
    let m = chunked_mean(ens.n_paths, li * ln * 2, |p, acc| {
        let mut pi = [T::zero(); MAX_BASIS];
        let mut pn = [T::zero(); MAX_BASIS];
        bi.features(xi[p], &mut pi);
        bn.features(xn[p], &mut pn);
        let (first, second) = acc.split_at_mut(li * ln);
        for r in 0..li {
            for c in 0..ln {
                let v = pi[r] * pn[c];
                first[r * ln + c] = first[r * ln + c] + v;
                second[r * ln + c] = second[r * ln + c] + v * dw[p];
            }
        }
    });
    let (a, aw) = Mat::joint(&design, li, &m[..li * ln], &m[li * ln..], ln);
    Ok(StaticOps { design, a, aw })
}

fn drift_bound<T: Real>(spec: &ProblemSpec<T>, ens: &PathEnsemble<T>) -> T {
    let dim = spec.actions.dim();
    let corners: Vec<Action<T>> = (0..1usize << dim)
        .map(|mask| {
            let v: Vec<T> = (0..dim)
                .map(|j| {
                    if mask >> j & 1 == 1 {
                        spec.actions.hi[j]
                    } else {
                        spec.actions.lo[j]
                    }
                })
                .collect();
            Action::from_slice(&v)
        })
        .collect();
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for i in 0..=ens.n_steps() {
        for &x in ens.states_at(i) {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let mut m = T::zero();
    for x in [lo, hi] {
        for a in &corners {
            m = m.max(spec.drift_at(T::zero(), x, a).abs());
        }
    }
    m
}

/// Picard iteration on the coupled system: a value BSDE whose driver is
/// `H(x, Z, ∂Y_t^t) - ζ·b(a_e)` and the family `∂Y^s` whose driver is
/// `∂_s f(s, ·, a*) + ζ^s·(b(a*) - b(a_e))`, both written under the law of
/// the exploration ensemble. Each iteration uses the previous iterate's
/// diagonal in the value pass and the previous iterate's action in the
/// family pass.
pub fn picard_solve<T: Real>(
    spec: &ProblemSpec<T>,
    ens: &PathEnsemble<T>,
    cfg: &PicardConfig<T>,
) -> Result<BsdeSolution<T>> {
    spec.validate()?;
    if ens.action_dim != spec.actions.dim() {
        return Err(Error::config(
            OP,
            "ensemble and problem disagree on the action dimension",
        ));
    }
    if ens.grid.t0() != T::zero()
        || (ens.grid.t_end() - spec.horizon).abs() > T::lit(1e-12) * spec.horizon.max(T::one())
    {
        return Err(Error::config(OP, "ensemble must span [0, T]"));
    }
    if cfg.max_iters == 0 || !(cfg.tol > T::zero()) {
        return Err(Error::config(OP, "need max_iters >= 1 and tol > 0"));
    }
    if !(cfg.damping > T::zero() && cfg.damping <= T::one()) {
        return Err(Error::config(OP, "damping must lie in (0, 1]"));
    }
    if cfg.basis.degree + 1 > MAX_BASIS {
        return Err(Error::config(OP, format!("basis degree must be below {MAX_BASIS}")));
    }
    if let Some(c) = cfg.weight {
        if !(c >= T::zero()) || !c.is_finite() {
            return Err(Error::config(OP, "weight c must be finite and >= 0"));
        }
    }
    let n = ens.n_paths;
    let n_t = ens.n_steps();
    let dt = ens.grid.dt();
    let times = ens.grid.nodes();
    let s_grid = cfg.s_grid.unwrap_or(SGrid::Intervals((n_t / 4).max(1)));
    let s_nodes = s_grid.nodes(&times)?;
    let n_s = s_nodes.len();
    let weight = cfg
        .weight
        .unwrap_or_else(|| T::lit(2.0) * drift_bound(spec, ens).max(T::one()));
    let horizon = spec.horizon;
    let lam = cfg.damping;

    let bases: Vec<StepBasis<T>> = (0..=n_t)
        .into_par_iter()
        .map(|i| StepBasis::fit(&cfg.basis, ens.states_at(i), i))
        .collect::<Result<_>>()?;
    let ops: Vec<StaticOps<T>> = (0..n_t)
        .into_par_iter()
        .map(|i| static_ops(ens, &bases, i, dt))
        .collect::<Result<_>>()?;

    let active = |k: usize, i: usize| times[i] >= slice_start(&s_nodes, k);
    // weight of the type-derivative reward observed at step i for slice k
    let kappa = |k: usize, i: usize| {
        if i == n_t {
            -spec.discount.dphi(horizon - s_nodes[k])
        } else {
            -spec.discount.dphi(times[i] - s_nodes[k]) * dt
        }
    };
    let b_explore = |i: usize, p: usize| spec.drift_at(times[i], ens.state(p, i), &ens.action(p, i));

    let mut y = vec![T::zero(); (n_t + 1) * n];
    let mut diag_u = vec![T::zero(); (n_t + 1) * n];
    for (p, &x) in ens.states_at(n_t).iter().enumerate() {
        y[n_t * n + p] = spec.terminal(horizon, x);
        diag_u[n_t * n + p] = spec.terminal_ds(horizon, x);
    }
    let mut zeta: Vec<Vec<T>> = (0..n_t).map(|i| vec![T::zero(); bases[i].len()]).collect();
    let mut slice_c: Vec<Vec<Vec<T>>> = (0..n_s)
        .map(|k| {
            (0..=n_t)
                .map(|i| {
                    if active(k, i) {
                        vec![T::zero(); bases[i].len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect();
    let mut slice_w = slice_c.clone();
    let terminal_tilde: Vec<T> = ens.states_at(n_t).iter().map(|&x| spec.terminal_tilde(x)).collect();

    // weights e^{c(t_i - T)} Δ, normalized so the delta is a weighted mean
    let step_weight: Vec<T> = {
        let raw: Vec<T> = times[..n_t]
            .iter()
            .map(|&t| (weight * (t - horizon)).exp() * dt)
            .collect();
        let total = raw.iter().fold(T::zero(), |a, &b| a + b);
        raw.into_iter().map(|w| w / total).collect()
    };

    let mut log = Vec::new();
    for iter in 1..=cfg.max_iters {
        let mut delta = T::zero();
        let mut policy_delta = T::zero();
        let old_zeta = zeta.clone();

        // value pass
        for i in (0..n_t).rev() {
            let t = times[i];
            let b = &bases[i];
            let len = b.len();
            let xs = ens.states_at(i);
            let dw = ens.increments_at(i);
            let (head, tail) = y.split_at_mut((i + 1) * n);
            let y_next = &tail[..n];
            let m = chunked_mean(n, 2 * len, |p, acc| {
                let mut psi = [T::zero(); MAX_BASIS];
                b.features(xs[p], &mut psi);
                for k in 0..len {
                    acc[k] = acc[k] + psi[k] * y_next[p];
                    acc[len + k] = acc[len + k] + psi[k] * y_next[p] * dw[p];
                }
            });
            let (chat, mut zc) = ops[i].design.solve(&m[..len], &m[len..]);
            if lam < T::one() {
                zc = lerp_vec(&old_zeta[i], &zc, lam);
            }
            let u_now = &diag_u[i * n..(i + 1) * n];
            let old_zc = &old_zeta[i];
            let (sq_y, sq_a) = update_paths(&mut head[i * n..], |p, old| {
                let x = xs[p];
                let sig = spec.sigma_at(t, x);
                let zt = b.eval(&zc, x);
                let (h, a) = hamiltonian_sup(spec, t, x, z_from_zeta(sig, zt), u_now[p])?;
                let a_old = maximizer(spec, t, x, z_from_zeta(sig, b.eval(old_zc, x)))?;
                let fresh = b.eval(&chat, x) + dt * (h - zt * b_explore(i, p));
                let new = if lam < T::one() {
                    old + lam * (fresh - old)
                } else {
                    fresh
                };
                if !new.is_finite() {
                    return Err(Error::NonFinite {
                        op: OP,
                        iteration: iter,
                        step: i,
                    });
                }
                let da = a
                    .as_slice()
                    .iter()
                    .zip(a_old.as_slice())
                    .fold(T::zero(), |s, (u, v)| s + (*u - *v) * (*u - *v));
                Ok((new, da))
            })?;
            let dz: Vec<T> = zc.iter().zip(&old_zeta[i]).map(|(a, b)| *a - *b).collect();
            let nf = T::from_usize_lossy(n);
            let w = step_weight[i];
            delta = delta + w * (sq_y / nf + b.gram_norm(&dz));
            policy_delta = policy_delta + w * sq_a / nf;
            zeta[i] = zc;
        }

        // type-family pass with the previous iterate's action
        let mut g_next = terminal_tilde.clone();
        let mut d_next = vec![T::zero(); n];
        for i in (0..n_t).rev() {
            let t = times[i];
            let (bi, bn) = (&bases[i], &bases[i + 1]);
            let (li, ln) = (bi.len(), bn.len());
            let (xi, xn, dw) = (ens.states_at(i), ens.states_at(i + 1), ens.increments_at(i));
            let width = 2 * li + 2 * li * ln;
            let m = chunked_mean(n, width, |p, acc| {
                let mut pi = [T::zero(); MAX_BASIS];
                let mut pn = [T::zero(); MAX_BASIS];
                bi.features(xi[p], &mut pi);
                bn.features(xn[p], &mut pn);
                let (g, gd, dd) = (g_next[p], d_next[p], dw[p]);
                for r in 0..li {
                    acc[r] = acc[r] + pi[r] * g;
                    acc[li + r] = acc[li + r] + pi[r] * g * dd;
                    let base = 2 * li + r * ln;
                    let base_w = 2 * li + li * ln + r * ln;
                    let pg = pi[r] * gd;
                    for c in 0..ln {
                        acc[base + c] = acc[base + c] + pg * pn[c];
                        acc[base_w + c] = acc[base_w + c] + pg * pn[c] * dd;
                    }
                }
            });
            let design = &ops[i].design;
            let (g, gw) = design.solve(&m[..li], &m[li..2 * li]);
            let (bmat, bwmat) = Mat::joint(design, li, &m[2 * li..2 * li + li * ln], &m[2 * li + li * ln..], ln);

            let mut slice_sq = T::zero();
            let mut n_active = 0usize;
            for k in 0..n_s {
                if !active(k, i) {
                    continue;
                }
                n_active += 1;
                let kn = kappa(k, i + 1);
                let (cn, wn) = (&slice_c[k][i + 1], &slice_w[k][i + 1]);
                let mut c = ops[i].a.mul(cn);
                axpy(&mut c, kn, &g);
                axpy(&mut c, dt, &bmat.mul(wn));
                let mut w = ops[i].aw.mul(cn);
                axpy(&mut w, kn, &gw);
                axpy(&mut w, dt, &bwmat.mul(wn));
                if lam < T::one() {
                    c = lerp_vec(&slice_c[k][i], &c, lam);
                    w = lerp_vec(&slice_w[k][i], &w, lam);
                }
                let dc: Vec<T> = c.iter().zip(&slice_c[k][i]).map(|(a, b)| *a - *b).collect();
                let dwv: Vec<T> = w.iter().zip(&slice_w[k][i]).map(|(a, b)| *a - *b).collect();
                slice_sq = slice_sq + bi.gram_norm(&dc) + bi.gram_norm(&dwv);
                slice_c[k][i] = c;
                slice_w[k][i] = w;
            }

            // reward and drift gap at step i under the previous action
            let zc_old = &old_zeta[i];
            let pairs: Vec<(T, T)> = xi
                .par_iter()
                .enumerate()
                .map(|(p, &x)| {
                    let sig = spec.sigma_at(t, x);
                    let a = maximizer(spec, t, x, z_from_zeta(sig, bi.eval(zc_old, x)))?;
                    Ok((spec.running_tilde(t, x, &a), spec.drift_at(t, x, &a) - b_explore(i, p)))
                })
                .collect::<Result<_>>()?;
            let (kd, wd) = diag_weights(&s_nodes, t);
            let c_d = lerp_vec(&slice_c[kd][i], &slice_c[kd + 1][i], wd);
            let w_d = lerp_vec(&slice_w[kd][i], &slice_w[kd + 1][i], wd);
            let kap_d = kappa(kd, i) + wd * (kappa(kd + 1, i) - kappa(kd, i));
            let (sq_u, _) = update_paths(&mut diag_u[i * n..(i + 1) * n], |p, old| {
                let x = xi[p];
                let (gv, dv) = pairs[p];
                let fresh = bi.eval(&c_d, x) + kap_d * gv + dt * bi.eval(&w_d, x) * dv;
                let new = if lam < T::one() {
                    old + lam * (fresh - old)
                } else {
                    fresh
                };
                if !new.is_finite() {
                    return Err(Error::NonFinite {
                        op: OP,
                        iteration: iter,
                        step: i,
                    });
                }
                Ok((new, T::zero()))
            })?;
            let nf = T::from_usize_lossy(n);
            delta = delta + step_weight[i] * (sq_u / nf + slice_sq / T::from_usize_lossy(n_active.max(1)));
            for (p, (gv, dv)) in pairs.into_iter().enumerate() {
                g_next[p] = gv;
                d_next[p] = dv;
            }
        }

        let delta = delta.to_f64_lossy();
        log::debug!("picard iteration {iter}: delta {delta:e}");
        log.push(IterationRecord {
            iteration: iter,
            delta,
            policy_delta: policy_delta.to_f64_lossy(),
        });
        if !delta.is_finite() {
            return Err(Error::NonFinite {
                op: OP,
                iteration: iter,
                step: 0,
            });
        }
        if delta <= cfg.tol.to_f64_lossy() {
            return Ok(BsdeSolution {
                times,
                s_nodes,
                n_paths: n,
                weight,
                bases,
                y,
                zeta,
                diag_u,
                slice_c,
                slice_w,
                log,
            });
        }
    }
    Err(Error::NonConvergence {
        op: OP,
        iterations: cfg.max_iters,
        deltas: log.iter().map(|r| r.delta).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    /// `δ_{k+1} / δ_k`.
    pub ratios: Vec<f64>,
    /// Every ratio from the second iteration on is below one.
    pub geometric: bool,
}

pub fn contraction_report(log: &[IterationRecord]) -> Result<ContractionReport> {
    if log.len() < 3 {
        return Err(Error::precondition(
            "contraction_report",
            format!("needs at least 3 iterations, got {}", log.len()),
        ));
    }
    let ratios: Vec<f64> = log.windows(2).map(|w| w[1].delta / w[0].delta).collect();
    let geometric = ratios[1..].iter().all(|&r| r < 1.0);
    Ok(ContractionReport { ratios, geometric })
}

/// Feedback table `a*(t_i, x_j)` from the regression surface of `ζ`, on a
/// common state grid spanning the ensemble. Each step's surface is
/// evaluated inside that step's observed state range.
pub fn extract_policy<T: Real>(
    sol: &BsdeSolution<T>,
    spec: &ProblemSpec<T>,
    ens: &PathEnsemble<T>,
    n_grid: usize,
) -> Result<Policy<T>> {
    let n_t = sol.n_steps();
    let ranges: Vec<(T, T)> = (0..n_t)
        .map(|i| {
            ens.states_at(i)
                .iter()
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                })
        })
        .collect();
    let lo = ranges.iter().fold(T::infinity(), |m, r| m.min(r.0));
    let hi = ranges.iter().fold(T::neg_infinity(), |m, r| m.max(r.1));
    let n_grid = n_grid.max(2);
    let xs: Vec<T> = if hi > lo {
        (0..n_grid)
            .map(|j| lo + (hi - lo) * T::from_usize_lossy(j) / T::from_usize_lossy(n_grid - 1))
            .collect()
    } else {
        vec![lo, lo + T::one()]
    };
    let rows: Vec<Vec<Action<T>>> = (0..n_t)
        .into_par_iter()
        .map(|i| {
            let t = sol.times[i];
            // a step whose states collapsed (the initial one) only knows ζ at
            // a single point, so borrow the next fitted surface
            let k = (i..n_t).find(|&k| ranges[k].1 > ranges[k].0).unwrap_or(i);
            let (rlo, rhi) = ranges[k];
            xs.iter()
                .map(|&x| {
                    let zt = sol.bases[k].eval(&sol.zeta[k], x.max(rlo).min(rhi));
                    maximizer(spec, t, x, z_from_zeta(spec.sigma_at(t, x), zt))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let table = FeedbackTable::new(sol.times[..n_t].to_vec(), xs, &rows);
    Ok(match table.as_constant() {
        Some(a) => Policy::Constant(a),
        None => Policy::Feedback(table),
    })
}

/// `t,x,a` rows of a feedback table (first action coordinate).
pub fn write_policy_csv<T: Real, W: Write>(policy: &Policy<T>, mut w: W) -> Result<()> {
    writeln!(w, "t,x,a")?;
    match policy {
        Policy::Feedback(table) => {
            for (i, &t) in table.times().iter().enumerate() {
                for (j, &x) in table.xs().iter().enumerate() {
                    writeln!(w, "{t},{x},{}", table.at_node(i, j).first())?;
                }
            }
        }
        Policy::Constant(a) => writeln!(w, ",,{}", a.first())?,
        other => writeln!(w, ",,{}", other.label())?,
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Pathwise residual of
/// `Y_t = Y_T + Σ_{r ≥ t} [h(r, X, Z_r, a*_r) - ∂Y_r^r] Δ - Σ_{r ≥ t} Z_r ΔX_r`
/// at every step, as `(mean, stderr)` over paths.
pub fn bsvie_residual<T: Real>(
    spec: &ProblemSpec<T>,
    ens: &PathEnsemble<T>,
    sol: &BsdeSolution<T>,
) -> Result<Vec<ResidualRow>> {
    let n = ens.n_paths;
    let n_t = sol.n_steps();
    let dt = ens.grid.dt();
    let mut acc: Vec<T> = sol.y_at(n_t).to_vec();
    let mut rows = vec![ResidualRow {
        t: sol.times[n_t].to_f64_lossy(),
        mean: 0.0,
        stderr: 0.0,
    }];
    let mut res = vec![T::zero(); n];
    for i in (0..n_t).rev() {
        let t = sol.times[i];
        let xs = ens.states_at(i);
        let dw = ens.increments_at(i);
        let u = sol.diag_u_at(i);
        let incs: Vec<T> = (0..n)
            .into_par_iter()
            .map(|p| {
                let x = xs[p];
                let sig = spec.sigma_at(t, x);
                let zt = sol.zeta_at(i, x);
                let (h, _) = hamiltonian_sup(spec, t, x, z_from_zeta(sig, zt), T::zero())?;
                let dx_over_sigma = spec.drift_at(t, x, &ens.action(p, i)) * dt + dw[p];
                Ok((h - u[p]) * dt - zt * dx_over_sigma)
            })
            .collect::<Result<_>>()?;
        for p in 0..n {
            acc[p] = acc[p] + incs[p];
            res[p] = sol.y_at(i)[p] - acc[p];
        }
        let (m, se) = mean_stderr(&res);
        rows.push(ResidualRow {
            t: t.to_f64_lossy(),
            mean: m.to_f64_lossy(),
            stderr: se.to_f64_lossy(),
        });
    }
    rows.reverse();
    Ok(rows)
}
