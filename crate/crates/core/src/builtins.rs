//! Built-in test problems.

use crate::problem::{ActionBox, DiscountFunction, Drift, ProblemSpec, RunningReward, TerminalReward, Volatility};
use crate::scalar::Real;

/// Drift-control linear-quadratic problem: `dX = a dt + dW`,
/// `f̃ = -(a² + x²)`, `ξ̃ = 0`, `T = 1`, `A = [-2, 2]`, `x0 = 0`.
pub fn lq<T: Real>(discount: DiscountFunction<T>) -> ProblemSpec<T> {
    ProblemSpec {
        horizon: T::one(),
        x0: T::zero(),
        actions: ActionBox {
            lo: vec![T::lit(-2.0)],
            hi: vec![T::lit(2.0)],
        },
        sigma: Volatility {
            c0: T::one(),
            c1: T::zero(),
        },
        drift: Drift {
            c0: T::zero(),
            cx: T::zero(),
            ca: [T::one(), T::zero()],
        },
        running: RunningReward::Quadratic {
            aa: [-T::one(), T::zero()],
            a: [T::zero(), T::zero()],
            xx: -T::one(),
            x: T::zero(),
            c: T::zero(),
        },
        terminal: TerminalReward::Zero,
        discount,
        state_bounds: None,
        markovian: true,
    }
}

/// Market and preference parameters of the consumption problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrraParams<T> {
    pub eta: T,
    pub r: T,
    pub beta: T,
    pub horizon: T,
}

impl<T: Real> CrraParams<T> {
    pub fn new(eta: T) -> Self {
        Self {
            eta,
            r: T::lit(0.03),
            beta: T::lit(0.3),
            horizon: T::one(),
        }
    }
}

/// Consumption-only CRRA problem with the risky position frozen at its
/// equilibrium value `β/η·x`. The action is the consumption fraction `π`,
/// so wealth follows `dX = X((r + β²/η - π) dt + β/η dW)`, written as
/// `σ(x) = β/η·x` and `b(π) = ηr/β + β - (η/β)π`. Running reward `U(πx)`,
/// terminal reward `U(x)`.
pub fn crra_consumption<T: Real>(discount: DiscountFunction<T>, eta: T) -> ProblemSpec<T> {
    crra_consumption_with(discount, CrraParams::new(eta))
}

pub fn crra_consumption_with<T: Real>(discount: DiscountFunction<T>, p: CrraParams<T>) -> ProblemSpec<T> {
    ProblemSpec {
        horizon: p.horizon,
        x0: T::one(),
        actions: ActionBox {
            lo: vec![T::lit(0.05)],
            hi: vec![T::lit(4.0)],
        },
        sigma: Volatility {
            c0: T::zero(),
            c1: p.beta / p.eta,
        },
        drift: Drift {
            c0: p.eta * p.r / p.beta + p.beta,
            cx: T::zero(),
            ca: [-p.eta / p.beta, T::zero()],
        },
        running: RunningReward::Utility {
            coord: 0,
            eta: p.eta,
            wealth_scaled: true,
        },
        terminal: TerminalReward::Utility { eta: p.eta },
        discount,
        state_bounds: Some((T::lit(1e-3), T::lit(1e3))),
        markovian: true,
    }
}

/// Same dynamics with both rewards set to zero.
pub fn zero_reward<T: Real>(spec: ProblemSpec<T>) -> ProblemSpec<T> {
    spec.with_running(RunningReward::Zero)
        .with_terminal(TerminalReward::Zero)
}

/// Names accepted by the CLI.
pub const NAMES: [&str; 4] = ["lq-hyperbolic", "lq-exponential", "crra-log", "crra-log-hyperbolic"];

pub fn by_name(name: &str) -> Option<ProblemSpec<f64>> {
    match name {
        "lq-hyperbolic" => Some(lq(DiscountFunction::Hyperbolic { k: 1.0 })),
        "lq-exponential" => Some(lq(DiscountFunction::Exponential { theta: 0.5 })),
        "crra-log" => Some(crra_consumption(DiscountFunction::Exponential { theta: 0.5 }, 1.0)),
        "crra-log-hyperbolic" => Some(crra_consumption(DiscountFunction::Hyperbolic { k: 1.0 }, 1.0)),
        _ => None,
    }
}
