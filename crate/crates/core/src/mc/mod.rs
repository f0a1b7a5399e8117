//! Seeded Euler simulation of the controlled state and Monte Carlo reward
//! estimators.

mod ensemble;
mod rewards;

pub use ensemble::{euler_step, simulate_paths, PathEnsemble};
#[cfg(test)]
pub(crate) use ensemble::branched;
pub use rewards::{adjusted_reward_k, estimate_partial_y, estimate_reward, paired_gain, path_totals, Kernel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform time grid on `[t0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    t0: T,
    t_end: T,
    n_steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, t_end: T, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::config(
                "TimeGrid",
                format!("need t0 < t_end and n_steps >= 1, got [{t0}, {t_end}] with {n_steps} steps"),
            ));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Grid on `[t, horizon]` whose step matches a grid of `full_steps` on
    /// `[0, horizon]` as closely as possible.
    pub fn spanning(t: T, horizon: T, full_steps: usize) -> Result<Self> {
        let frac = ((horizon - t) / horizon).to_f64_lossy();
        let n = ((full_steps as f64) * frac).round().max(1.0) as usize;
        Self::new(t, horizon, n)
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> T {
        (self.t_end - self.t0) / T::from_usize_lossy(self.n_steps)
    }

    /// `t_i`; the last node is `t_end` exactly.
    pub fn node(&self, i: usize) -> T {
        if i >= self.n_steps {
            self.t_end
        } else {
            self.t0 + self.dt() * T::from_usize_lossy(i)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }
}

/// Outer Monte Carlo budget. `n_steps` is the number of Euler steps over the
/// full horizon; simulations started later use proportionally fewer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl McParams {
    pub fn new(n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self { n_steps, n_paths, seed }
    }

    /// Same mesh, seed replaced by the sub-seed for `tag`.
    pub fn derived(&self, tag: u64) -> Self {
        Self {
            seed: sub_seed(self.seed, tag),
            ..*self
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based child seed: a bijective mix of `(master, tag)`.
pub fn sub_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}

/// Tag for the `i`-th nested simulation spawned from outer path `p`.
pub fn nested_tag(p: usize, i: usize) -> u64 {
    ((p as u64) << 32) | (i as u64 & 0xffff_ffff)
}

/// Independent stream for path `p` of a simulation seeded with `seed`.
pub fn path_rng(seed: u64, p: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn last_node_is_exact() {
        let g = TimeGrid::new(0.1f64, 0.7, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(0.0f64, 1.0, 0).is_err());
        assert!(TimeGrid::new(1.0f64, 1.0, 4).is_err());
    }

    #[test]
    fn spanning_grid_keeps_the_step() {
        let g = TimeGrid::spanning(0.25f64, 1.0, 200).unwrap();
        assert_eq!(g.n_steps(), 150);
        assert!((g.dt() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = path_rng(7, 0).gen();
        let b: u64 = path_rng(7, 1).gen();
        let c: u64 = path_rng(7, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(sub_seed(7, nested_tag(0, 1)), sub_seed(7, nested_tag(1, 0)));
    }
}
