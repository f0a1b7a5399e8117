use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{path_rng, TimeGrid};
use crate::error::{Error, Result};
use crate::problem::{Action, Policy, ProblemSpec};
use crate::scalar::Real;

/// Seeded ensemble of Euler paths. Arrays are stored step-major
/// (`[step][path]`), which is the access pattern of the backward solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    pub grid: TimeGrid<T>,
    pub n_paths: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub policy_id: String,
    states: Vec<T>,
    actions: Vec<T>,
    increments: Vec<T>,
}

impl<T: Real> PathEnsemble<T> {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn state(&self, p: usize, i: usize) -> T {
        self.states[i * self.n_paths + p]
    }

    /// All path states at step `i`.
    pub fn states_at(&self, i: usize) -> &[T] {
        &self.states[i * self.n_paths..(i + 1) * self.n_paths]
    }

    /// Brownian increments `W_{t_{i+1}} - W_{t_i}` for every path.
    pub fn increments_at(&self, i: usize) -> &[T] {
        &self.increments[i * self.n_paths..(i + 1) * self.n_paths]
    }

    pub fn action(&self, p: usize, i: usize) -> Action<T> {
        let base = (i * self.n_paths + p) * self.action_dim;
        Action::from_slice(&self.actions[base..base + self.action_dim])
    }

    /// Columnar dump `path,step,t,x,a` (actions blank at the terminal step,
    /// coordinates separated by `;`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,step,t,x,a")?;
        for p in 0..self.n_paths {
            for i in 0..=self.n_steps() {
                let a = if i < self.n_steps() {
                    let a = self.action(p, i);
                    a.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
                } else {
                    String::new()
                };
                writeln!(w, "{p},{i},{},{},{a}", self.grid.node(i), self.state(p, i))?;
            }
        }
        Ok(())
    }
}

/// One Euler step of `dX = σ(X)(b(X, a) dt + dW)`.
#[inline]
pub fn euler_step<T: Real>(spec: &ProblemSpec<T>, t: T, x: T, a: &Action<T>, dt: T, dw: T) -> T {
    x + spec.sigma_at(t, x) * (spec.drift_at(t, x, a) * dt + dw)
}

/// Simulates `n_paths` Euler paths from `(grid.t0, x0)` under `policy`.
/// Path `p` draws its increments from its own stream, so the ensemble is
/// reproducible bit for bit and common across policies.
pub fn simulate_paths<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    grid: TimeGrid<T>,
    x0: T,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n_paths == 0 {
        return Err(Error::config("simulate_paths", "n_paths must be >= 1"));
    }
    let n = grid.n_steps();
    let dim = spec.actions.dim();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut states = vec![T::zero(); (n + 1) * n_paths];
    let mut actions = vec![T::zero(); n * n_paths * dim];
    let mut increments = vec![T::zero(); n * n_paths];
    states[..n_paths].fill(x0);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_paths).map(|p| path_rng(seed, p)).collect();

    for i in 0..n {
        let t = grid.node(i);
        let (done, rest) = states.split_at_mut((i + 1) * n_paths);
        let cur = &done[i * n_paths..];
        let next = &mut rest[..n_paths];
        let acts = &mut actions[i * n_paths * dim..(i + 1) * n_paths * dim];
        let incs = &mut increments[i * n_paths..(i + 1) * n_paths];
        next.par_iter_mut()
            .zip(acts.par_chunks_mut(dim))
            .zip(incs.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .enumerate()
            .for_each(|(p, (((nx, ac), dw), rng))| {
                let x = cur[p];
                let a = policy.evaluate(t, x, &spec.actions);
                ac.copy_from_slice(a.as_slice());
                *dw = sqrt_dt * T::std_normal(rng);
                *nx = euler_step(spec, t, x, &a, dt, *dw);
            });
        if let Some(p) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Simulation { path: p, step: i + 1 });
        }
    }
    Ok(PathEnsemble {
        grid,
        n_paths,
        action_dim: dim,
        seed,
        policy_id: policy.label(),
        states,
        actions,
        increments,
    })
}

/// `2n` paths: the originals, then copies that share each original's history
/// up to step `k` and draw fresh increments from `seed` afterwards.
#[cfg(test)]
pub(crate) fn branched<T: Real>(
    spec: &ProblemSpec<T>,
    policy: &Policy<T>,
    ens: &PathEnsemble<T>,
    k: usize,
    seed: u64,
) -> PathEnsemble<T> {
    let (n, m, dim) = (ens.n_paths, ens.n_steps(), ens.action_dim);
    let dt = ens.grid.dt();
    let mut out = PathEnsemble {
        n_paths: 2 * n,
        states: vec![T::zero(); (m + 1) * 2 * n],
        actions: vec![T::zero(); m * 2 * n * dim],
        increments: vec![T::zero(); m * 2 * n],
        ..ens.clone()
    };
    for p in 0..n {
        let mut rng = path_rng(seed, p);
        let mut x = ens.state(p, 0);
        for i in 0..=m {
            for (q, own) in [(p, true), (n + p, false)] {
                out.states[i * 2 * n + q] = if own || i <= k { ens.state(p, i) } else { x };
            }
            if i == m {
                break;
            }
            for q in [p, n + p] {
                let base = (i * 2 * n + q) * dim;
                let src = (i * n + p) * dim;
                out.increments[i * 2 * n + q] = ens.increments_at(i)[p];
                out.actions[base..base + dim].copy_from_slice(&ens.actions[src..src + dim]);
            }
            if i >= k {
                let t = ens.grid.node(i);
                let a = policy.evaluate(t, x, &spec.actions);
                let dw = dt.sqrt() * T::std_normal(&mut rng);
                let q = n + p;
                out.increments[i * 2 * n + q] = dw;
                out.actions[(i * 2 * n + q) * dim..(i * 2 * n + q + 1) * dim].copy_from_slice(a.as_slice());
                x = euler_step(spec, t, x, &a, dt, dw);
            } else {
                x = ens.state(p, i + 1);
            }
        }
    }
    out
}
