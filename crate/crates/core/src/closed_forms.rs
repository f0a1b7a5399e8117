//! Equilibrium coefficient `a(t)` of the CRRA consumption–investment problem
//! under a general discount kernel, where the equilibrium value is
//! `a(t)·U(x)` up to an additive function of time and consumption is
//! `a(t)^{-1/η}·x`.

use std::io::Write;

use crate::builtins::CrraParams;
use crate::error::{Error, Result};
use crate::problem::{AnalyticPolicy, DiscountFunction, Policy};
use crate::scalar::{interp_clamped, Real};

/// Log utility: `a(t) = φ(T - t) + ∫_0^{T-t} φ(u) du`.
pub fn log_coefficient_a<T: Real>(discount: &DiscountFunction<T>, horizon: T, times: &[T]) -> Vec<T> {
    times
        .iter()
        .map(|&t| {
            let tau = horizon - t;
            discount.phi(tau) + discount.integral(tau)
        })
        .collect()
}

/// Internal mesh and stopping rule of the coefficient iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSolver<T> {
    pub internal_steps: usize,
    pub max_iters: usize,
    pub tol: T,
}

impl<T: Real> Default for CoefficientSolver<T> {
    fn default() -> Self {
        Self {
            internal_steps: 2000,
            max_iters: 200,
            tol: T::lit(1e-10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrraSolution<T> {
    pub times: Vec<T>,
    pub a: Vec<T>,
    pub params: CrraParams<T>,
    pub discount: DiscountFunction<T>,
    pub iterations: usize,
}

impl<T: Real> CrraSolution<T> {
    /// `c*/x = a(t)^{-1/η}`.
    pub fn consumption_fraction(&self, t: T) -> T {
        interp_clamped(&self.times, &self.a, t).powf(-T::one() / self.params.eta)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,a,consumption_fraction")?;
        for (&t, &a) in self.times.iter().zip(&self.a) {
            writeln!(w, "{t},{a},{}", a.powf(-T::one() / self.params.eta))?;
        }
        Ok(())
    }
}

/// `∫` over the uniform nodes `ys` with spacing `h`: Simpson, with the 3/8
/// rule on the last three intervals when their count is odd.
fn composite_simpson<T: Real>(ys: &[T], h: T) -> T {
    let n = ys.len().saturating_sub(1);
    match n {
        0 => T::zero(),
        1 => h * (ys[0] + ys[1]) / T::lit(2.0),
        _ => {
            let (even_part, tail) = if n.is_multiple_of(2) { (n, 0) } else { (n - 3, 3) };
            let mut s = T::zero();
            let mut k = 0;
            while k + 2 <= even_part {
                s = s + h / T::lit(3.0) * (ys[k] + T::lit(4.0) * ys[k + 1] + ys[k + 2]);
                k += 2;
            }
            if tail == 3 {
                let y = &ys[n - 3..];
                s = s + T::lit(3.0) * h / T::lit(8.0) * (y[0] + T::lit(3.0) * y[1] + T::lit(3.0) * y[2] + y[3]);
            }
            s
        }
    }
}

/// Running integral of `f` on a uniform grid, third order per step.
fn cumulative<T: Real>(f: &[T], h: T) -> Vec<T> {
    let m = f.len() - 1;
    let mut out = vec![T::zero(); m + 1];
    let twelfth = h / T::lit(12.0);
    for k in 0..m {
        let inc = if k + 2 <= m {
            T::lit(5.0) * f[k] + T::lit(8.0) * f[k + 1] - f[k + 2]
        } else if k >= 1 {
            -f[k - 1] + T::lit(8.0) * f[k] + T::lit(5.0) * f[k + 1]
        } else {
            T::lit(6.0) * (f[k] + f[k + 1])
        };
        out[k + 1] = out[k] + twelfth * inc;
    }
    out
}

/// General CRRA curvature `η ∈ (0, 1]`. With `q = 1 - 1/η`,
/// `α(t) = r + β²/(2η) - a(t)^{-1/η}` and `E_r(t) = exp((1-η)∫_t^r α)`,
/// the coefficient solves
///
/// `a' + η a^q + (1-η)(r + β²/(2η)) a + φ'(T-t) E_T(t) + ∫_t^T φ'(r-t) a(r)^q E_r(t) dr = 0`,
/// `a(T) = 1`.
///
/// Each iteration freezes the non-local terms at the previous iterate and
/// integrates the remaining ODE backward with RK4.
pub fn crra_coefficient_a<T: Real>(
    discount: &DiscountFunction<T>,
    params: CrraParams<T>,
    times: &[T],
    solver: &CoefficientSolver<T>,
) -> Result<CrraSolution<T>> {
    const OP: &str = "crra_coefficient_a";
    discount.validate()?;
    let CrraParams { eta, r, beta, horizon } = params;
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::config(OP, format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(horizon > T::zero()) || solver.internal_steps < 2 || !(solver.tol > T::zero()) {
        return Err(Error::config(OP, "need T > 0, at least 2 internal steps and tol > 0"));
    }
    let m = solver.internal_steps;
    let h = horizon / T::from_usize_lossy(m);
    let grid: Vec<T> = (0..=m)
        .map(|k| if k == m { horizon } else { h * T::from_usize_lossy(k) })
        .collect();
    let q = T::one() - T::one() / eta;
    let one_m_eta = T::one() - eta;
    let kappa = r + beta * beta / (T::lit(2.0) * eta);

    let mut a = log_coefficient_a(discount, horizon, &grid);
    let mut deltas = Vec::new();
    for iter in 1..=solver.max_iters {
        let alpha: Vec<T> = a.iter().map(|&v| kappa - v.powf(-T::one() / eta)).collect();
        let p: Vec<T> = cumulative(&alpha, h).iter().map(|&c| (one_m_eta * c).exp()).collect();
        let g: Vec<T> = a.iter().map(|&v| v.powf(q)).collect();
        let mut integrand = Vec::with_capacity(m + 1);
        let nonlocal: Vec<T> = (0..=m)
            .map(|k| {
                integrand.clear();
                integrand.extend((k..=m).map(|j| discount.dphi(grid[j] - grid[k]) * g[j] * p[j] / p[k]));
                discount.dphi(horizon - grid[k]) * p[m] / p[k] + composite_simpson(&integrand, h)
            })
            .collect();

        let rhs = |v: T, n: T| -> Result<T> {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Positivity {
                    op: OP,
                    detail: format!("coefficient reached {v} at iteration {iter}"),
                });
            }
            Ok(-(eta * v.powf(q) + one_m_eta * kappa * v + n))
        };
        let mut next = vec![T::zero(); m + 1];
        next[m] = T::one();
        let half = T::lit(0.5);
        for k in (0..m).rev() {
            let (n1, n0) = (nonlocal[k + 1], nonlocal[k]);
            // cubic midpoint where four nodes are available
            let nm = if k >= 1 && k + 2 <= m {
                (T::lit(9.0) * (n0 + n1) - nonlocal[k - 1] - nonlocal[k + 2]) / T::lit(16.0)
            } else {
                half * (n0 + n1)
            };
            let y = next[k + 1];
            let k1 = rhs(y, n1)?;
            let k2 = rhs(y - half * h * k1, nm)?;
            let k3 = rhs(y - half * h * k2, nm)?;
            let k4 = rhs(y - h * k3, n0)?;
            next[k] = y - h / T::lit(6.0) * (k1 + T::lit(2.0) * k2 + T::lit(2.0) * k3 + k4);
            if !(next[k] > T::zero()) {
                return Err(Error::Positivity {
                    op: OP,
                    detail: format!("a(t) = {} at t = {} in iteration {iter}", next[k], grid[k]),
                });
            }
        }
        let delta = a.iter().zip(&next).fold(T::zero(), |d, (x, y)| d.max((*x - *y).abs()));
        a = next;
        deltas.push(delta.to_f64_lossy());
        if delta <= solver.tol {
            return Ok(CrraSolution {
                times: times.to_vec(),
                a: times.iter().map(|&t| interp_clamped(&grid, &a, t)).collect(),
                params,
                discount: discount.clone(),
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        op: OP,
        iterations: solver.max_iters,
        deltas,
    })
}

/// Investment `β/η·x` and consumption `a(t)^{-1/η}·x`.
pub fn crra_policy<T: Real>(sol: &CrraSolution<T>) -> Policy<T> {
    crra_policy_impl(sol, false)
}

/// The consumption fraction `a(t)^{-1/η}` alone, the action of the
/// consumption-only encoding.
pub fn crra_consumption_policy<T: Real>(sol: &CrraSolution<T>) -> Policy<T> {
    crra_policy_impl(sol, true)
}

fn crra_policy_impl<T: Real>(sol: &CrraSolution<T>, consumption_only: bool) -> Policy<T> {
    Policy::Analytic(AnalyticPolicy::Crra {
        times: sol.times.clone(),
        coefficient: sol.a.clone(),
        eta: sol.params.eta,
        beta: sol.params.beta,
        consumption_only,
    })
}
