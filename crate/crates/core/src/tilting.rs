//! The exponential change of measure that makes the associated walk driftless.

use serde::{Deserialize, Serialize};

use crate::enumerate::{fold_sequences, SeqView};
use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

pub const DEFAULT_TOL: f64 = 1e-12;

/// Largest enumeration accepted by [`change_of_measure_check`].
pub const CHANGE_OF_MEASURE_BUDGET: f64 = 1e7;

const BISECTION_WIDTH: f64 = 1e-13;

/// `phi(beta) = E[X e^{beta X}]`.
pub fn phi(env: &EnvironmentLaw, beta: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for (a, &x) in env.atoms().iter().zip(env.log_means()) {
        s.add(a.weight * x * (beta * x).exp());
    }
    s.value()
}

/// `phi'(beta) = E[X^2 e^{beta X}]`.
pub fn phi_prime(env: &EnvironmentLaw, beta: f64) -> f64 {
    env.atoms()
        .iter()
        .zip(env.log_means())
        .map(|(a, &x)| a.weight * x * x * (beta * x).exp())
        .sum()
}

/// `E[e^{beta X}]`.
pub fn laplace(env: &EnvironmentLaw, beta: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for (a, &x) in env.atoms().iter().zip(env.log_means()) {
        s.add(a.weight * (beta * x).exp());
    }
    s.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSolution {
    pub beta: f64,
    pub gamma: f64,
    pub tilted_weights: Vec<f64>,
    /// `|phi(beta)|` at the returned root.
    pub residual: f64,
}

impl TiltSolution {
    /// The trivial tilt `beta = 0`, used for degenerate sanity configurations
    /// where no root exists.
    pub fn identity(env: &EnvironmentLaw) -> Self {
        Self {
            beta: 0.0,
            gamma: 1.0,
            tilted_weights: env.weights(),
            residual: phi(env, 0.0).abs(),
        }
    }

    pub fn log_gamma(&self) -> f64 {
        self.gamma.ln()
    }
}

/// Root of `phi` in (0,1): bisection to width 1e-13, then one Newton step.
pub fn solve_beta(env: &EnvironmentLaw, tol: f64) -> Result<TiltSolution> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let phi0 = phi(env, 0.0);
    if phi0 >= 0.0 {
        return Err(Error::NotSubcritical { mean_log: phi0 });
    }
    let phi1 = phi(env, 1.0);
    if phi1 <= 0.0 {
        return Err(Error::NoRoot { phi0, phi1 });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if phi(env, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut beta = 0.5 * (lo + hi);
    let mut residual = phi(env, beta).abs();
    let polished = beta - phi(env, beta) / phi_prime(env, beta);
    if polished > 0.0 && polished < 1.0 {
        let r = phi(env, polished).abs();
        if r <= residual {
            beta = polished;
            residual = r;
        }
    }
    if residual > tol {
        return Err(Error::Domain(format!(
            "root residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::NoRoot { phi0, phi1 });
    }
    let gamma = laplace(env, beta);
    let raw: Vec<f64> = env
        .atoms()
        .iter()
        .zip(env.log_means())
        .map(|(a, &x)| a.weight * (beta * x).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let tilted_weights = raw.iter().map(|w| w / total).collect();
    Ok(TiltSolution {
        beta,
        gamma,
        tilted_weights,
        residual,
    })
}

/// The tilted law: same atoms, weights `w_i e^{beta X_i} / gamma`.
pub fn tilted_env(env: &EnvironmentLaw, solution: &TiltSolution) -> Result<EnvironmentLaw> {
    env.with_weights(&solution.tilted_weights)
}

/// Exact check of `E[h] = gamma^n E**[h e^{-beta S_n}]` for a functional of
/// the atom sequence and partial sums. Returns `(lhs, rhs)`.
pub fn change_of_measure_check<H>(
    env: &EnvironmentLaw,
    solution: &TiltSolution,
    n: usize,
    h: H,
) -> Result<(f64, f64)>
where
    H: Fn(&SeqView) -> f64 + Sync,
{
    let merge = |a: &mut CompensatedSum, b: CompensatedSum| a.add_sum(&b);
    let lhs = fold_sequences(
        env,
        n,
        0.0,
        CHANGE_OF_MEASURE_BUDGET,
        CompensatedSum::new,
        |acc, v| acc.add(v.weight * h(v)),
        merge,
    )?;
    let tilted = tilted_env(env, solution)?;
    let beta = solution.beta;
    let rhs = fold_sequences(
        &tilted,
        n,
        0.0,
        CHANGE_OF_MEASURE_BUDGET,
        CompensatedSum::new,
        |acc, v| acc.add(v.weight * h(v) * (-beta * v.sums[n]).exp()),
        merge,
    )?;
    Ok((lhs.value(), solution.gamma.powi(n as i32) * rhs.value()))
}

/// Norming sequence `a_n = c n^{1/alpha}` of the tilted walk and the
/// limiting density `s0` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableNorm {
    pub alpha: f64,
    /// Scale `c`; the tilted standard deviation when `alpha = 2`.
    pub sigma: f64,
    pub s0: f64,
}

impl StableNorm {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma {sigma} must be positive")));
        }
        Ok(Self {
            alpha: 2.0,
            sigma,
            s0: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
        })
    }

    /// Gaussian norming from the standard deviation of `X` under the tilted law.
    pub fn from_tilted(tilted: &EnvironmentLaw) -> Result<Self> {
        Self::gaussian(tilted.variance_log().sqrt())
    }

    /// `alpha < 2`: the caller supplies the scale and the density at zero.
    pub fn custom(alpha: f64, scale: f64, s0: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::Domain(format!("alpha {alpha} outside (1,2]")));
        }
        if !(scale > 0.0 && s0 > 0.0) {
            return Err(Error::Domain("scale and s0 must be positive".into()));
        }
        Ok(Self {
            alpha,
            sigma: scale,
            s0,
        })
    }

    pub fn a_n(&self, n: u64) -> f64 {
        self.sigma * (n as f64).powf(1.0 / self.alpha)
    }

    pub fn b_n(&self, n: u64) -> f64 {
        1.0 / (self.a_n(n) * n as f64)
    }

    pub fn ln_a_n(&self, n: u64) -> f64 {
        self.sigma.ln() + (n as f64).ln() / self.alpha
    }
}
