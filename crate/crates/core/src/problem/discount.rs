use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Discount kernel `φ` with `φ(0) = 1`.
///
/// Rewards are evaluated by player `s` at time `t` through `φ(t - s)`; a
/// non-exponential `φ` is what makes the problem time-inconsistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DiscountFunction<T> {
    /// `e^{-θτ}`
    Exponential { theta: T },
    /// `1 / (1 + kτ)`
    Hyperbolic { k: T },
    /// `(1 + kτ)^{-m/k}`
    GeneralizedHyperbolic { k: T, m: T },
    /// `Σ w_i e^{-θ_i τ}` with `Σ w_i = 1`
    SumOfExponentials { weights: Vec<T>, rates: Vec<T> },
}

impl<T: Real> DiscountFunction<T> {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "DiscountFunction";
        match self {
            Self::Exponential { theta } if *theta < T::zero() => {
                Err(Error::config(OP, "exponential rate must be >= 0"))
            }
            Self::Hyperbolic { k } if *k <= T::zero() => Err(Error::config(OP, "hyperbolic rate must be > 0")),
            Self::GeneralizedHyperbolic { k, m } if *k <= T::zero() || *m <= T::zero() => {
                Err(Error::config(OP, "generalized hyperbolic needs k > 0 and m > 0"))
            }
            Self::SumOfExponentials { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(Error::config(
                        OP,
                        "weights and rates must be non-empty and of equal length",
                    ));
                }
                if weights.iter().chain(rates.iter()).any(|&w| w < T::zero()) {
                    return Err(Error::config(OP, "weights and rates must be >= 0"));
                }
                let total: T = weights.iter().copied().sum();
                if (total - T::one()).abs() > T::lit(1e-9) {
                    return Err(Error::config(OP, format!("weights sum to {total}, expected 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `φ(τ)` by its analytic formula. Defined for slightly negative `τ`
    /// as well, which the s-window of the solvers relies on.
    pub fn phi(&self, tau: T) -> T {
        match self {
            Self::Exponential { theta } => (-*theta * tau).exp(),
            Self::Hyperbolic { k } => T::one() / (T::one() + *k * tau),
            Self::GeneralizedHyperbolic { k, m } => (T::one() + *k * tau).powf(-*m / *k),
            Self::SumOfExponentials { weights, rates } => {
                weights.iter().zip(rates).map(|(&w, &r)| w * (-r * tau).exp()).sum()
            }
        }
    }

    /// `φ'(τ)`.
    pub fn dphi(&self, tau: T) -> T {
        match self {
            Self::Exponential { theta } => -*theta * (-*theta * tau).exp(),
            Self::Hyperbolic { k } => {
                let d = T::one() + *k * tau;
                -*k / (d * d)
            }
            Self::GeneralizedHyperbolic { k, m } => -*m * (T::one() + *k * tau).powf(-*m / *k - T::one()),
            Self::SumOfExponentials { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(&w, &r)| -w * r * (-r * tau).exp())
                .sum(),
        }
    }

    /// `∫_0^τ φ(u) du` in closed form.
    pub fn integral(&self, tau: T) -> T {
        fn exp_integral<T: Real>(rate: T, tau: T) -> T {
            if rate.abs() < T::lit(1e-12) {
                tau
            } else {
                -(-rate * tau).exp_m1() / rate
            }
        }
        match self {
            Self::Exponential { theta } => exp_integral(*theta, tau),
            Self::Hyperbolic { k } => (*k * tau).ln_1p() / *k,
            Self::GeneralizedHyperbolic { k, m } => {
                if (*k - *m).abs() < T::lit(1e-12) {
                    (*k * tau).ln_1p() / *k
                } else {
                    ((T::one() + *k * tau).powf(T::one() - *m / *k) - T::one()) / (*k - *m)
                }
            }
            Self::SumOfExponentials { weights, rates } => {
                weights.iter().zip(rates).map(|(&w, &r)| w * exp_integral(r, tau)).sum()
            }
        }
    }

    /// Constant rate `θ` when the kernel is exponential (including a sum of
    /// exponentials sharing one rate).
    pub fn exponential_rate(&self) -> Option<T> {
        match self {
            Self::Exponential { theta } => Some(*theta),
            Self::SumOfExponentials { rates, .. } => {
                let r0 = rates[0];
                rates.iter().all(|&r| r == r0).then_some(r0)
            }
            _ => None,
        }
    }

    /// True when `φ' ≡ 0`, i.e. there is no type dependence at all.
    pub fn is_flat(&self) -> bool {
        self.exponential_rate() == Some(T::zero())
    }
}

/// Checked evaluation of `(φ(τ), φ'(τ))` for `τ ∈ [0, horizon]`.
pub fn eval_discount<T: Real>(d: &DiscountFunction<T>, tau: T, horizon: T) -> Result<(T, T)> {
    if !(tau >= T::zero() && tau <= horizon) {
        return Err(Error::domain(
            "eval_discount",
            format!("tau = {tau} outside [0, {horizon}]"),
        ));
    }
    Ok((d.phi(tau), d.dphi(tau)))
}
