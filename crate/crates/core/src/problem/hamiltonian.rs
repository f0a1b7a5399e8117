use super::{Action, ProblemSpec, RunningReward};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How `sup_a` is computed when no closed form applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizerOptions<T> {
    /// Allow grid search + golden-section refinement for non-concave
    /// coordinates. Without it such problems are rejected.
    pub grid_fallback: bool,
    pub grid_points: usize,
    pub tol: T,
}

impl<T: Real> Default for MaximizerOptions<T> {
    fn default() -> Self {
        Self {
            grid_fallback: true,
            grid_points: 201,
            tol: T::lit(1e-10),
        }
    }
}

/// `h_t(s, x, z, a) = f_t(s, x, a) + b(x, a)·σ(x)·z`.
pub fn hamiltonian_h<T: Real>(spec: &ProblemSpec<T>, t: T, s: T, x: T, z: T, a: &Action<T>) -> T {
    spec.running(s, t, x, a) + spec.drift_at(t, x, a) * spec.sigma_at(t, x) * z
}

/// `∂h_t(s, x, z, a) = ∂_s f_t(s, x, a) + b(x, a)·σ(x)·z`.
pub fn hamiltonian_dh<T: Real>(spec: &ProblemSpec<T>, t: T, s: T, x: T, z: T, a: &Action<T>) -> T {
    spec.running_ds(s, t, x, a) + spec.drift_at(t, x, a) * spec.sigma_at(t, x) * z
}

/// `(sup_a h_t(t, x, z, a) - u, argmax)`.
pub fn hamiltonian_sup<T: Real>(spec: &ProblemSpec<T>, t: T, x: T, z: T, u: T) -> Result<(T, Action<T>)> {
    let a = maximizer(spec, t, x, z)?;
    Ok((hamiltonian_h(spec, t, t, x, z, &a) - u, a))
}

/// The maximizer map `(t, x, z) ↦ argmax_a h_t(t, x, z, a)` with default options.
pub fn maximizer<T: Real>(spec: &ProblemSpec<T>, t: T, x: T, z: T) -> Result<Action<T>> {
    maximizer_with(spec, t, x, z, &MaximizerOptions::default())
}

/// Shape of `a_j ↦ h` once the other coordinates are fixed. The built-in
/// rewards are separable across coordinates and the drift is affine in `a`.
enum CoordShape<T> {
    /// `q2·a² + q1·a`
    Quadratic { q2: T, q1: T },
    /// `U(scale·a)`
    Utility { eta: T, scale: T },
}

fn coord_shape<T: Real>(spec: &ProblemSpec<T>, x: T, j: usize) -> CoordShape<T> {
    match &spec.running {
        RunningReward::Zero => CoordShape::Quadratic {
            q2: T::zero(),
            q1: T::zero(),
        },
        RunningReward::Quadratic { aa, a, .. } => CoordShape::Quadratic { q2: aa[j], q1: a[j] },
        RunningReward::Utility {
            coord,
            eta,
            wealth_scaled,
        } if *coord == j => CoordShape::Utility {
            eta: *eta,
            scale: if *wealth_scaled { spec.clip_state(x) } else { T::one() },
        },
        RunningReward::Utility { .. } => CoordShape::Quadratic {
            q2: T::zero(),
            q1: T::zero(),
        },
    }
}

pub fn maximizer_with<T: Real>(
    spec: &ProblemSpec<T>,
    t: T,
    x: T,
    z: T,
    opts: &MaximizerOptions<T>,
) -> Result<Action<T>> {
    let bx = &spec.actions;
    let sigma = spec.sigma_at(t, x);
    let mut out = bx.lower();
    for j in 0..bx.dim() {
        let (lo, hi) = (bx.lo[j], bx.hi[j]);
        // slope of the drift term in a_j
        let kappa = spec.drift.ca[j] * sigma * z;
        let best = match coord_shape(spec, x, j) {
            CoordShape::Quadratic { q2, q1 } => {
                let lin = q1 + kappa;
                if q2 < T::zero() {
                    (-lin / (T::lit(2.0) * q2)).max(lo).min(hi)
                } else if q2 == T::zero() {
                    if lin > T::zero() {
                        hi
                    } else {
                        lo
                    }
                } else {
                    if !opts.grid_fallback {
                        return Err(Error::config(
                            "hamiltonian_sup",
                            format!("running reward is convex in action coordinate {j} and grid fallback is disabled"),
                        ));
                    }
                    maximize_scalar(|a| q2 * a * a + lin * a, lo, hi, opts.grid_points, opts.tol)
                }
            }
            CoordShape::Utility { eta, scale } => {
                if !(scale > T::zero()) {
                    return Err(Error::domain(
                        "hamiltonian_sup",
                        format!("utility of a wealth-scaled action needs positive state, got {x}"),
                    ));
                }
                if kappa < T::zero() {
                    // scale·(scale·a)^{-η} = -κ
                    let a = (-kappa / scale).powf(-T::one() / eta) / scale;
                    a.max(lo).min(hi)
                } else {
                    hi
                }
            }
        };
        out = out.map(|k, v| if k == j { best } else { v });
    }
    Ok(out)
}

/// Maximizes a scalar function over `[lo, hi]`: uniform grid search followed
/// by golden-section refinement around the best grid point. Ties keep the
/// smallest argument.
pub fn maximize_scalar<T: Real>(f: impl Fn(T) -> T, lo: T, hi: T, points: usize, tol: T) -> T {
    if hi <= lo {
        return lo;
    }
    let n = points.max(3);
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    let node = |i: usize| {
        if i == n - 1 {
            hi
        } else {
            lo + step * T::from_usize_lossy(i)
        }
    };
    let mut best_i = 0;
    let mut best_v = f(lo);
    for i in 1..n {
        let v = f(node(i));
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = node(best_i.saturating_sub(1));
    let mut b = node((best_i + 1).min(n - 1));
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut guard = 0;
    while (b - a).abs() > tol && guard < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        guard += 1;
    }
    let refined = (a + b) / T::lit(2.0);
    if f(refined) > best_v {
        refined
    } else {
        node(best_i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::problem::{ActionBox, DiscountFunction, Volatility};
    use proptest::prelude::*;

    /// f̃ = -a², b = a, σ = 1, A = [-1, 1]
    fn toy() -> ProblemSpec<f64> {
        let mut spec = builtins::lq(DiscountFunction::Hyperbolic { k: 1.0 })
            .with_actions(ActionBox::interval(-1.0, 1.0).unwrap())
            .with_running(RunningReward::Quadratic {
                aa: [-1.0, 0.0],
                a: [0.0, 0.0],
                xx: 0.0,
                x: 0.0,
                c: 0.0,
            });
        spec.sigma = Volatility { c0: 1.0, c1: 0.0 };
        spec
    }

    /// Independent grid-search oracle over the box.
    fn grid_sup(spec: &ProblemSpec<f64>, t: f64, x: f64, z: f64, step: f64) -> (f64, f64) {
        let (lo, hi) = (spec.actions.lo[0], spec.actions.hi[0]);
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (f64::NEG_INFINITY, lo);
        for i in 0..=n {
            let a = lo + i as f64 * step;
            let v = hamiltonian_h(spec, t, t, x, z, &Action::scalar(a));
            if v > best.0 {
                best = (v, a);
            }
        }
        best
    }

    #[test]
    fn pointwise_value_by_substitution() {
        let spec = toy();
        let v = hamiltonian_h(&spec, 0.3, 0.3, 0.0, 1.0, &Action::scalar(0.5));
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_zero_drift_vanishes() {
        let mut spec = toy().with_running(RunningReward::Zero);
        spec.drift.ca = [0.0, 0.0];
        for &(z, a) in &[(3.0, 0.2), (-1.0, -0.9)] {
            assert_eq!(hamiltonian_h(&spec, 0.1, 0.0, 0.4, z, &Action::scalar(a)), 0.0);
        }
    }

    #[test]
    fn interior_and_clipped_maximizers_match_grid_oracle() {
        let spec = toy();
        let (v, a) = hamiltonian_sup(&spec, 0.0, 0.0, 1.0, 0.0).unwrap();
        let (gv, ga) = grid_sup(&spec, 0.0, 0.0, 1.0, 1e-4);
        assert!((v - 0.25).abs() < 1e-12 && (a.first() - 0.5).abs() < 1e-12);
        assert!((v - gv).abs() < 1e-8 && (a.first() - ga).abs() <= 1e-4);

        let (v, a) = hamiltonian_sup(&spec, 0.0, 0.0, 4.0, 0.0).unwrap();
        let (gv, ga) = grid_sup(&spec, 0.0, 0.0, 4.0, 1e-4);
        assert!((v - 3.0).abs() < 1e-12 && a.first() == 1.0);
        assert!((v - gv).abs() < 1e-8 && (a.first() - ga).abs() <= 1e-4);
    }

    #[test]
    fn singleton_box_value_is_h_minus_u() {
        let spec = toy().with_actions(ActionBox::interval(0.3, 0.3).unwrap());
        let u = 0.7;
        let (v, a) = hamiltonian_sup(&spec, 0.0, 0.2, 2.0, u).unwrap();
        assert_eq!(a.first(), 0.3);
        let h = hamiltonian_h(&spec, 0.0, 0.0, 0.2, 2.0, &Action::scalar(0.3));
        assert!((v + u - h).abs() < 1e-15);
    }

    #[test]
    fn convex_reward_needs_grid_fallback() {
        let spec = toy().with_running(RunningReward::Quadratic {
            aa: [1.0, 0.0],
            a: [0.0, 0.0],
            xx: 0.0,
            x: 0.0,
            c: 0.0,
        });
        let strict = MaximizerOptions {
            grid_fallback: false,
            ..Default::default()
        };
        assert!(maximizer_with(&spec, 0.0, 0.0, 0.1, &strict).is_err());
        // a² + 0.1a on [-1, 1] peaks at a = 1
        let a = maximizer(&spec, 0.0, 0.0, 0.1).unwrap();
        assert!((a.first() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_objective_breaks_ties_downward() {
        let mut spec = toy().with_running(RunningReward::Zero);
        spec.drift.ca = [0.0, 0.0];
        assert_eq!(maximizer(&spec, 0.0, 0.0, 1.0).unwrap().first(), -1.0);
    }

    #[test]
    fn log_utility_maximizer_is_reciprocal_of_wealth_gradient() {
        let spec = builtins::crra_consumption::<f64>(DiscountFunction::Exponential { theta: 0.5 }, 1.0);
        // with b σ z = -x·z·π + ..., the log maximizer is π = 1/(x z)
        let (x, z) = (1.7, 1.0 / (1.7 * 0.8));
        let a = maximizer(&spec, 0.0, x, z).unwrap();
        assert!((a.first() - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn u_shift_moves_value_not_argmax(x in -3.0f64..3.0, z in -5.0f64..5.0, u1 in -2.0f64..2.0, u2 in -2.0f64..2.0) {
            let spec = builtins::lq(DiscountFunction::Hyperbolic { k: 1.0 });
            let (v1, a1) = hamiltonian_sup(&spec, 0.4, x, z, u1).unwrap();
            let (v2, a2) = hamiltonian_sup(&spec, 0.4, x, z, u2).unwrap();
            prop_assert_eq!(a1, a2);
            prop_assert!(((v1 - v2) - (u2 - u1)).abs() < 1e-12);
        }

        #[test]
        fn analytic_argmax_within_grid_step(x in -3.0f64..3.0, z in -6.0f64..6.0) {
            let spec = builtins::lq(DiscountFunction::Hyperbolic { k: 1.0 });
            let step = 1e-3;
            let (gv, ga) = grid_sup(&spec, 0.2, x, z, step);
            let (v, a) = hamiltonian_sup(&spec, 0.2, x, z, 0.0).unwrap();
            prop_assert!((a.first() - ga).abs() <= step);
            prop_assert!(v >= gv - 1e-12);
        }

        #[test]
        fn golden_refinement_finds_concave_peak(c in -0.9f64..0.9) {
            let a = maximize_scalar(|a: f64| -(a - c).powi(2), -1.0, 1.0, 11, 1e-12);
            prop_assert!((a - c).abs() < 1e-6);
        }
    }
}
