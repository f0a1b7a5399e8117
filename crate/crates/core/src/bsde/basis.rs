use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

/// Paths per reduction chunk. Fixed so sums do not depend on thread count.
pub(crate) const CHUNK: usize = 2048;

/// `Σ_p f(p)` of a `width`-vector accumulated chunk by chunk and combined in
/// chunk order, divided by `n`.
pub(crate) fn chunked_mean<T: Real>(n: usize, width: usize, f: impl Fn(usize, &mut [T]) + Sync) -> Vec<T> {
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); width];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(p, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); width];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t = *t + v;
        }
    }
    let nf = T::from_usize_lossy(n.max(1));
    total.iter_mut().for_each(|t| *t = *t / nf);
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Powers of the state.
    Polynomial,
    /// Powers of `ln x`; needs a positive state.
    LogPolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub degree: usize,
    /// Center and scale the transformed state per time step.
    pub standardize: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            kind: BasisKind::Polynomial,
            degree: 4,
            standardize: true,
        }
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    pub fn log_polynomial(degree: usize) -> Self {
        Self {
            kind: BasisKind::LogPolynomial,
            degree,
            standardize: true,
        }
    }
}

/// The basis fitted to the states of one time step, with its Gram matrix
/// `E_n[ψψᵀ]` and Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBasis<T> {
    pub kind: BasisKind,
    pub degree: usize,
    pub center: T,
    pub scale: T,
    gram: Vec<T>,
    chol: Vec<T>,
}

fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > T::lit(1e-10) * a[j * n + j].max(T::one())) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ y = m` for a row-major lower factor `L`.
fn chol_solve<T: Real>(l: &[T], n: usize, m: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = m[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s = s - l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

impl<T: Real> StepBasis<T> {
    /// Fits the basis to `xs`, lowering the degree (with a warning) until the
    /// Gram matrix is numerically positive definite. A step where every path
    /// sits at the same state gets the constant basis.
    pub fn fit(basis: &RegressionBasis, xs: &[T], step: usize) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::RankDeficient { step });
        }
        if basis.kind == BasisKind::LogPolynomial && xs.iter().any(|&x| !(x > T::zero())) {
            return Err(Error::config(
                "regression_step",
                format!("log-polynomial basis needs positive states (step {step})"),
            ));
        }
        let g: Vec<T> = xs.iter().map(|&x| Self::transform(basis.kind, x)).collect();
        let nf = T::from_usize_lossy(g.len());
        let mean = pairwise_sum(&g) / nf;
        let var = pairwise_sum(&g.iter().map(|&v| (v - mean) * (v - mean)).collect::<Vec<_>>()) / nf;
        let sd = var.sqrt();
        let degenerate = !(sd > T::lit(1e-12) * (T::one() + mean.abs()));
        let (center, scale) = if basis.standardize && !degenerate {
            (mean, sd)
        } else {
            (T::zero(), T::one())
        };
        let mut degree = if degenerate { 0 } else { basis.degree };
        let powers = {
            let top = 2 * degree + 1;
            chunked_mean(g.len(), top, |p, acc| {
                let z = (g[p] - center) / scale;
                let mut v = T::one();
                for a in acc.iter_mut() {
                    *a = *a + v;
                    v = v * z;
                }
            })
        };
        loop {
            let len = degree + 1;
            let gram: Vec<T> = (0..len * len).map(|ij| powers[ij / len + ij % len]).collect();
            if let Some(chol) = cholesky(&gram, len) {
                if degree < basis.degree && !degenerate {
                    log::warn!(
                        "step {step}: regression degree lowered from {} to {degree}",
                        basis.degree
                    );
                }
                return Ok(Self {
                    kind: basis.kind,
                    degree,
                    center,
                    scale,
                    gram,
                    chol,
                });
            }
            if degree == 0 {
                return Err(Error::RankDeficient { step });
            }
            degree -= 1;
        }
    }

    #[inline]
    fn transform(kind: BasisKind, x: T) -> T {
        match kind {
            BasisKind::Polynomial => x,
            BasisKind::LogPolynomial => x.ln(),
        }
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn features(&self, x: T, out: &mut [T]) {
        let z = (Self::transform(self.kind, x) - self.center) / self.scale;
        let mut v = T::one();
        for o in out.iter_mut().take(self.len()) {
            *o = v;
            v = v * z;
        }
    }

    #[inline]
    pub fn eval(&self, coef: &[T], x: T) -> T {
        let z = (Self::transform(self.kind, x) - self.center) / self.scale;
        // Horner
        coef.iter().rev().fold(T::zero(), |acc, &c| acc * z + c)
    }

    /// `Gram⁻¹ m`: the regression coefficients for the moment vector
    /// `m = E_n[ψ·y]`.
    pub fn solve(&self, m: &[T]) -> Vec<T> {
        chol_solve(&self.chol, self.len(), m)
    }

    /// `dᵀ Gram d`, the empirical mean square of `ψ·d`.
    pub fn gram_norm(&self, d: &[T]) -> T {
        let n = self.len();
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                s = s + d[i] * self.gram[i * n + j] * d[j];
            }
        }
        s
    }
}

/// Joint least-squares design of one step: the target at `i+1` is regressed
/// on `ψ(X_i)` and `ψ(X_i)·ΔW_i` together, so the martingale part of the
/// target is explained by the second block instead of inflating the noise of
/// the first. Stores the Cholesky factor of the `2L × 2L` moment matrix of
/// `(ψ, ψ·ΔW/√Δ)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct JointDesign<T> {
    len: usize,
    sqrt_dt: T,
    chol: Vec<T>,
}

impl<T: Real> JointDesign<T> {
    pub(crate) fn build(b: &StepBasis<T>, xs: &[T], dw: &[T], dt: T, step: usize) -> Result<Self> {
        let len = b.len();
        let n2 = 2 * len;
        let sqrt_dt = dt.sqrt();
        let k = chunked_mean(xs.len(), n2 * n2, |p, acc| {
            let mut f = [T::zero(); 2 * MAX_BASIS];
            b.features(xs[p], &mut f[..len]);
            let u = dw[p] / sqrt_dt;
            for r in 0..len {
                f[len + r] = f[r] * u;
            }
            for r in 0..n2 {
                for c in 0..=r {
                    acc[r * n2 + c] = acc[r * n2 + c] + f[r] * f[c];
                }
            }
        });
        let mut full = k;
        for r in 0..n2 {
            for c in r + 1..n2 {
                full[r * n2 + c] = full[c * n2 + r];
            }
        }
        let chol = cholesky(&full, n2).ok_or(Error::RankDeficient { step })?;
        Ok(Self { len, sqrt_dt, chol })
    }

    /// Coefficients `(c, w)` of `y ≈ c·ψ + (w·ψ) ΔW` from the moments
    /// `m0 = E_n[ψ y]` and `m1 = E_n[ψ y ΔW]`.
    pub(crate) fn solve(&self, m0: &[T], m1: &[T]) -> (Vec<T>, Vec<T>) {
        let len = self.len;
        let mut rhs: Vec<T> = m0.to_vec();
        rhs.extend(m1.iter().map(|&v| v / self.sqrt_dt));
        let sol = chol_solve(&self.chol, 2 * len, &rhs);
        let c = sol[..len].to_vec();
        let w = sol[len..].iter().map(|&v| v / self.sqrt_dt).collect();
        (c, w)
    }
}

/// Largest supported basis length.
pub(crate) const MAX_BASIS: usize = 16;

/// Result of one least-squares step.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression<T> {
    pub basis: StepBasis<T>,
    pub coef: Vec<T>,
    /// Conditional expectation of the target at every path.
    pub fitted: Vec<T>,
    pub z_coef: Vec<T>,
    /// Martingale integrand `d⟨target, W⟩/dt` at every path.
    pub z: Vec<T>,
}

/// Regresses `targets` (values at step `i+1`) on the basis in `x_now`
/// (states at step `i`), jointly with the basis times `ΔW`: the first block
/// is the conditional expectation and the second the martingale integrand.
pub fn regression_step<T: Real>(
    x_now: &[T],
    targets: &[T],
    dw: &[T],
    dt: T,
    basis: &RegressionBasis,
    step: usize,
) -> Result<Regression<T>> {
    let n = x_now.len();
    if targets.len() != n || dw.len() != n {
        return Err(Error::config(
            "regression_step",
            "states, targets and increments differ in length",
        ));
    }
    if basis.degree >= MAX_BASIS {
        return Err(Error::config(
            "regression_step",
            format!("basis degree must be below {MAX_BASIS}"),
        ));
    }
    if let Some(p) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "regression_step",
            iteration: p,
            step,
        });
    }
    let b = StepBasis::fit(basis, x_now, step)?;
    let design = JointDesign::build(&b, x_now, dw, dt, step)?;
    let len = b.len();
    let m = chunked_mean(n, 2 * len, |p, acc| {
        let mut psi = [T::zero(); MAX_BASIS];
        b.features(x_now[p], &mut psi[..len]);
        for k in 0..len {
            acc[k] = acc[k] + psi[k] * targets[p];
            acc[len + k] = acc[len + k] + psi[k] * targets[p] * dw[p];
        }
    });
    let (coef, z_coef) = design.solve(&m[..len], &m[len..]);
    let fitted: Vec<T> = x_now.par_iter().map(|&x| b.eval(&coef, x)).collect();
    let z = x_now.par_iter().map(|&x| b.eval(&z_coef, x)).collect();
    Ok(Regression {
        basis: b,
        coef,
        fitted,
        z_coef,
        z,
    })
}
