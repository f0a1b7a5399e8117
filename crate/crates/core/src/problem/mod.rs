//! Problem data: dynamics, rewards, discounting and the pointwise
//! Hamiltonian algebra of the drift-control system.
//!
//! The state is one-dimensional and follows `dX = σ(X)(b(X, a) dt + dW)`.
//! Player `s` values a running reward `f_t(s, x, a) = φ(t - s) f̃(x, a)` and a
//! terminal reward `ξ(s, x) = φ(T - s) ξ̃(x)`.

mod discount;
mod hamiltonian;
mod policy;

pub use discount::{eval_discount, DiscountFunction};
pub use hamiltonian::{
    hamiltonian_dh, hamiltonian_h, hamiltonian_sup, maximize_scalar, maximizer, maximizer_with, MaximizerOptions,
};
pub use policy::{AnalyticPolicy, FeedbackTable, Policy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Up to two action coordinates, stored inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<T> {
    coords: [T; 2],
    dim: usize,
}

impl<T: Real> Action<T> {
    pub fn scalar(a: T) -> Self {
        Self {
            coords: [a, T::zero()],
            dim: 1,
        }
    }

    pub fn pair(a: T, b: T) -> Self {
        Self { coords: [a, b], dim: 2 }
    }

    pub fn from_slice(v: &[T]) -> Self {
        match v.len() {
            1 => Self::scalar(v[0]),
            2 => Self::pair(v[0], v[1]),
            n => panic!("actions have 1 or 2 coordinates, got {n}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> T {
        self.coords[..self.dim][j]
    }

    /// First coordinate; the solvers work with scalar controls.
    pub fn first(&self) -> T {
        self.coords[0]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coords[..self.dim]
    }

    pub fn map(&self, mut f: impl FnMut(usize, T) -> T) -> Self {
        let mut out = *self;
        for j in 0..self.dim {
            out.coords[j] = f(j, self.coords[j]);
        }
        out
    }
}

/// Coordinatewise box `A = Π [lo_j, hi_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> ActionBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn interval(lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() > 2 || self.lo.len() != self.hi.len() {
            return Err(Error::config(
                "ActionBox",
                "action box needs 1 or 2 coordinates with matching bounds",
            ));
        }
        for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l <= h) {
                return Err(Error::config(
                    "ActionBox",
                    format!("coordinate {j}: lower bound {l} exceeds upper bound {h}"),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, j: usize) -> T {
        self.hi[j] - self.lo[j]
    }

    pub fn clamp(&self, a: Action<T>) -> Action<T> {
        a.map(|j, v| v.max(self.lo[j]).min(self.hi[j]))
    }

    pub fn lower(&self) -> Action<T> {
        Action::from_slice(&self.lo)
    }

    pub fn upper(&self) -> Action<T> {
        Action::from_slice(&self.hi)
    }

    pub fn midpoint(&self) -> Action<T> {
        let two = T::lit(2.0);
        let mid: Vec<T> = self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l + h) / two).collect();
        Action::from_slice(&mid)
    }

    pub fn is_singleton(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| l == h)
    }
}

/// Volatility `σ(x) = c0 + c1·x` (uncontrolled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volatility<T> {
    pub c0: T,
    pub c1: T,
}

/// Drift `b(x, a) = c0 + cx·x + Σ_j ca_j a_j`, entering as `σ(x)·b(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift<T> {
    pub c0: T,
    pub cx: T,
    pub ca: [T; 2],
}

/// Undiscounted running reward `f̃(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunningReward<T> {
    Zero,
    /// `Σ_j (aa_j a_j² + a_j' a_j) + xx·x² + x'·x + c`
    Quadratic {
        aa: [T; 2],
        a: [T; 2],
        xx: T,
        x: T,
        c: T,
    },
    /// CRRA utility `U(a_coord · x)` (or `U(a_coord)` when not wealth scaled).
    Utility {
        coord: usize,
        eta: T,
        wealth_scaled: bool,
    },
}

/// Undiscounted terminal reward `ξ̃(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalReward<T> {
    Zero,
    Constant {
        c: T,
    },
    Quadratic {
        xx: T,
        x: T,
        c: T,
    },
    Utility {
        eta: T,
    },
    /// Piecewise linear table, clamped outside its abscissa range.
    Table {
        xs: Vec<T>,
        ys: Vec<T>,
    },
}

/// CRRA utility; `η = 1` is the logarithm.
pub fn crra_utility<T: Real>(c: T, eta: T) -> T {
    let c = c.max(T::lit(1e-300));
    if (eta - T::one()).abs() < T::lit(1e-14) {
        c.ln()
    } else {
        let q = T::one() - eta;
        (c.powf(q) - T::one()) / q
    }
}

/// Full declarative description of one control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    pub horizon: T,
    pub x0: T,
    pub actions: ActionBox<T>,
    pub sigma: Volatility<T>,
    pub drift: Drift<T>,
    pub running: RunningReward<T>,
    pub terminal: TerminalReward<T>,
    pub discount: DiscountFunction<T>,
    /// Truncated state domain; coefficients are evaluated at the clipped state.
    pub state_bounds: Option<(T, T)>,
    pub markovian: bool,
}

impl<T: Real> ProblemSpec<T> {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "ProblemSpec";
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::config(OP, "horizon must be a positive finite time"));
        }
        if !self.x0.is_finite() {
            return Err(Error::config(OP, "x0 must be finite"));
        }
        self.actions.validate()?;
        self.discount.validate()?;
        if let Some((lo, hi)) = self.state_bounds {
            if !(lo < hi) {
                return Err(Error::config(OP, "state bounds must satisfy lo < hi"));
            }
        }
        match &self.running {
            RunningReward::Utility { coord, eta, .. } => {
                if *coord >= self.actions.dim() {
                    return Err(Error::config(OP, "utility coordinate outside the action box"));
                }
                if !(*eta > T::zero()) {
                    return Err(Error::config(OP, "utility curvature eta must be > 0"));
                }
                if self.actions.lo[*coord] <= T::zero() {
                    return Err(Error::config(OP, "utility coordinate needs a positive action box"));
                }
            }
            RunningReward::Quadratic { .. } | RunningReward::Zero => {}
        }
        if let TerminalReward::Table { xs, ys } = &self.terminal {
            if xs.is_empty() || xs.len() != ys.len() || xs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(OP, "terminal table needs strictly increasing abscissae"));
            }
        }
        Ok(())
    }

    pub fn clip_state(&self, x: T) -> T {
        match self.state_bounds {
            Some((lo, hi)) => x.max(lo).min(hi),
            None => x,
        }
    }

    pub fn sigma_at(&self, _t: T, x: T) -> T {
        let x = self.clip_state(x);
        self.sigma.c0 + self.sigma.c1 * x
    }

    pub fn drift_at(&self, _t: T, x: T, a: &Action<T>) -> T {
        let x = self.clip_state(x);
        let mut b = self.drift.c0 + self.drift.cx * x;
        for j in 0..a.dim() {
            b = b + self.drift.ca[j] * a.get(j);
        }
        b
    }

    /// Drift of the state itself, `σ(x)·b(x, a)`.
    pub fn state_drift(&self, t: T, x: T, a: &Action<T>) -> T {
        self.sigma_at(t, x) * self.drift_at(t, x, a)
    }

    pub fn running_tilde(&self, _t: T, x: T, a: &Action<T>) -> T {
        let x = self.clip_state(x);
        match &self.running {
            RunningReward::Zero => T::zero(),
            RunningReward::Quadratic {
                aa,
                a: lin,
                xx,
                x: xl,
                c,
            } => {
                let mut v = *xx * x * x + *xl * x + *c;
                for j in 0..a.dim() {
                    let aj = a.get(j);
                    v = v + aa[j] * aj * aj + lin[j] * aj;
                }
                v
            }
            RunningReward::Utility {
                coord,
                eta,
                wealth_scaled,
            } => {
                let c = if *wealth_scaled {
                    a.get(*coord) * x
                } else {
                    a.get(*coord)
                };
                crra_utility(c, *eta)
            }
        }
    }

    pub fn terminal_tilde(&self, x: T) -> T {
        let x = self.clip_state(x);
        match &self.terminal {
            TerminalReward::Zero => T::zero(),
            TerminalReward::Constant { c } => *c,
            TerminalReward::Quadratic { xx, x: xl, c } => *xx * x * x + *xl * x + *c,
            TerminalReward::Utility { eta } => crra_utility(x, *eta),
            TerminalReward::Table { xs, ys } => crate::scalar::interp_clamped(xs, ys, x),
        }
    }

    /// `f_t(s, x, a) = φ(t - s) f̃(x, a)`.
    pub fn running(&self, s: T, t: T, x: T, a: &Action<T>) -> T {
        self.discount.phi(t - s) * self.running_tilde(t, x, a)
    }

    /// `∂_s f_t(s, x, a) = -φ'(t - s) f̃(x, a)`.
    pub fn running_ds(&self, s: T, t: T, x: T, a: &Action<T>) -> T {
        -self.discount.dphi(t - s) * self.running_tilde(t, x, a)
    }

    /// `ξ(s, x) = φ(T - s) ξ̃(x)`.
    pub fn terminal(&self, s: T, x: T) -> T {
        self.discount.phi(self.horizon - s) * self.terminal_tilde(x)
    }

    /// `∂_s ξ(s, x) = -φ'(T - s) ξ̃(x)`.
    pub fn terminal_ds(&self, s: T, x: T) -> T {
        -self.discount.dphi(self.horizon - s) * self.terminal_tilde(x)
    }

    /// Largest `|σ|` over the truncated domain (or near `x0` when unbounded).
    pub fn sigma_max(&self) -> T {
        let (lo, hi) = self.state_bounds.unwrap_or((
            self.x0 - T::lit(10.0) * (T::one() + self.x0.abs()),
            self.x0 + T::lit(10.0) * (T::one() + self.x0.abs()),
        ));
        let at = |x: T| (self.sigma.c0 + self.sigma.c1 * x).abs();
        at(lo).max(at(hi)).max(at(self.x0))
    }

    /// Largest `|σ b|` over the truncated domain and the action box corners.
    pub fn state_drift_max(&self) -> T {
        let (lo, hi) = self
            .state_bounds
            .unwrap_or((self.x0 - T::lit(6.0), self.x0 + T::lit(6.0)));
        let mut m = T::zero();
        let corners = [self.actions.lower(), self.actions.upper(), self.actions.midpoint()];
        for x in [lo, hi, self.x0] {
            for a in &corners {
                m = m.max(self.state_drift(T::zero(), x, a).abs());
            }
        }
        m
    }

    pub fn with_discount(mut self, d: DiscountFunction<T>) -> Self {
        self.discount = d;
        self
    }

    pub fn with_running(mut self, r: RunningReward<T>) -> Self {
        self.running = r;
        self
    }

    pub fn with_terminal(mut self, r: TerminalReward<T>) -> Self {
        self.terminal = r;
        self
    }

    pub fn with_actions(mut self, b: ActionBox<T>) -> Self {
        self.actions = b;
        self
    }
}
