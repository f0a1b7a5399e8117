//! Scalar abstraction shared by every solver.
//!
//! All numerical code is written against [`Real`] so the same solvers run in
//! `f32` (fast, coarse) or `f64` (the default used by the CLI and tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point scalar usable by the solvers.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Machine epsilon scaled for "is this effectively zero" checks.
    const TINY: Self;

    /// Draws one standard normal variate.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $tiny:expr) => {
        impl Real for $t {
            const TINY: Self = $tiny;

            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }
        }
    };
}

impl_real!(f32, 1e-6);
impl_real!(f64, 1e-12);

/// Pairwise (cascade) summation with a fixed split order.
///
/// The result depends only on the slice contents and length, never on how the
/// caller partitioned work, so reductions are bit-stable across worker counts.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let nf = T::from_usize_lossy(n);
    let mean = pairwise_sum(xs) / nf;
    if n == 1 {
        return (mean, T::zero());
    }
    let sq: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / T::from_usize_lossy(n - 1);
    (mean, (var / nf).sqrt())
}

/// Linear interpolation on a sorted abscissa, clamped at both ends.
pub fn interp_clamped<T: Real>(xs: &[T], ys: &[T], x: T) -> T {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = bracket(xs, x);
    let w = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + w * (ys[j + 1] - ys[j])
}

/// Index `j` with `xs[j] <= x < xs[j+1]`, clamped to `[0, len-2]`.
pub fn bracket<T: Real>(xs: &[T], x: T) -> usize {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let upper = xs.partition_point(|&v| v <= x);
    upper.saturating_sub(1).min(n - 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 22.5);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_stderr(&[3.0f64; 17]);
        assert_eq!(m, 3.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn interpolation_hits_nodes_and_clamps() {
        let xs = [0.0f64, 1.0, 3.0];
        let ys = [1.0f64, 2.0, 0.0];
        assert_eq!(interp_clamped(&xs, &ys, 1.0), 2.0);
        assert_eq!(interp_clamped(&xs, &ys, 2.0), 1.0);
        assert_eq!(interp_clamped(&xs, &ys, -5.0), 1.0);
        assert_eq!(interp_clamped(&xs, &ys, 9.0), 0.0);
        assert_eq!(bracket(&xs, 3.0), 1);
    }

    #[test]
    fn works_in_single_precision() {
        let (m, _) = mean_stderr(&[1.0f32, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-6);
    }
}
