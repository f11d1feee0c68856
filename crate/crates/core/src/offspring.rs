//! Offspring distributions and their generating-function calculus.
//!
//! Besides the pgf `f(s)`, every law exposes the survival map
//! `g(h) = 1 - f(1 - h)` in a form that does not cancel when `h` is tiny,
//! and samplers for sums of i.i.d. offspring counts that cost O(1) in the
//! number of parents for the parametric kinds.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest count carried by an explicit pmf.
pub const MAX_EXPLICIT_SUPPORT: usize = 64;

/// Relative tail mass below which series for Poisson moments are cut.
const POISSON_TAIL_CUT: f64 = 1e-14;

/// Parent counts up to this size are summed draw by draw.
const DIRECT_SUM_LIMIT: u64 = 8;

/// A finite probability vector over counts `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitPmf {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl ExplicitPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidLaw("explicit pmf is empty".into()));
        }
        if probs.len() > MAX_EXPLICIT_SUPPORT + 1 {
            return Err(Error::InvalidLaw(format!(
                "explicit support 0..{} exceeds K = {MAX_EXPLICIT_SUPPORT}",
                probs.len() - 1
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidLaw(
                "explicit probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "explicit probabilities sum to {total:.15}, not 1"
            )));
        }
        if probs[0] >= 1.0 || probs[1..].iter().all(|&p| p == 0.0) {
            return Err(Error::InvalidLaw("all mass sits at 0".into()));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok(Self { probs, cdf })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1) as u64
    }
}

/// One offspring distribution `q` on the nonnegative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawSpec", into = "LawSpec")]
pub enum OffspringLaw {
    /// `q(k) = p (1-p)^k`.
    Geometric { p: f64 },
    Poisson { lambda: f64 },
    /// Mass `1-p` at 0 and `p` at 2.
    Binary { p: f64 },
    Explicit(ExplicitPmf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LawSpec {
    Geometric { p: f64 },
    Poisson { lambda: f64 },
    Binary { p: f64 },
    Explicit { probs: Vec<f64> },
}

impl TryFrom<LawSpec> for OffspringLaw {
    type Error = Error;
    fn try_from(spec: LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Geometric { p } => OffspringLaw::geometric(p),
            LawSpec::Poisson { lambda } => OffspringLaw::poisson(lambda),
            LawSpec::Binary { p } => OffspringLaw::binary(p),
            LawSpec::Explicit { probs } => OffspringLaw::explicit(probs),
        }
    }
}

impl From<OffspringLaw> for LawSpec {
    fn from(law: OffspringLaw) -> Self {
        match law {
            OffspringLaw::Geometric { p } => LawSpec::Geometric { p },
            OffspringLaw::Poisson { lambda } => LawSpec::Poisson { lambda },
            OffspringLaw::Binary { p } => LawSpec::Binary { p },
            OffspringLaw::Explicit(pmf) => LawSpec::Explicit { probs: pmf.probs },
        }
    }
}

impl std::fmt::Display for OffspringLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OffspringLaw::Geometric { p } => write!(f, "Geometric(p={p})"),
            OffspringLaw::Poisson { lambda } => write!(f, "Poisson(lambda={lambda})"),
            OffspringLaw::Binary { p } => write!(f, "Binary(p={p})"),
            OffspringLaw::Explicit(pmf) => write!(f, "Explicit({:?})", pmf.probs),
        }
    }
}

fn check_prob(p: f64, name: &str, lo_open: bool, hi_open: bool) -> Result<()> {
    let ok = p.is_finite()
        && if lo_open { p > 0.0 } else { p >= 0.0 }
        && if hi_open { p < 1.0 } else { p <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} parameter {p} out of range")))
    }
}

impl OffspringLaw {
    pub fn geometric(p: f64) -> Result<Self> {
        check_prob(p, "geometric", true, true)?;
        Ok(OffspringLaw::Geometric { p })
    }

    /// Geometric law with mean `e^x`.
    pub fn geometric_with_log_mean(x: f64) -> Result<Self> {
        Self::geometric(1.0 / (1.0 + x.exp()))
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidLaw(format!(
                "poisson mean {lambda} must be positive"
            )));
        }
        Ok(OffspringLaw::Poisson { lambda })
    }

    pub fn binary(p: f64) -> Result<Self> {
        check_prob(p, "binary", true, false)?;
        Ok(OffspringLaw::Binary { p })
    }

    pub fn explicit(probs: Vec<f64>) -> Result<Self> {
        Ok(OffspringLaw::Explicit(ExplicitPmf::new(probs)?))
    }

    /// Linear-fractional laws compose in closed form.
    pub fn is_linear_fractional(&self) -> bool {
        matches!(self, OffspringLaw::Geometric { .. })
    }

    pub fn has_finite_support(&self) -> bool {
        matches!(self, OffspringLaw::Binary { .. } | OffspringLaw::Explicit(_))
    }

    pub fn prob_zero(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => *p,
            OffspringLaw::Poisson { lambda } => (-lambda).exp(),
            OffspringLaw::Binary { p } => 1.0 - p,
            OffspringLaw::Explicit(pmf) => pmf.probs[0],
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => p * (1.0 - p).powf(k as f64),
            OffspringLaw::Poisson { lambda } => {
                let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
                (-lambda + k as f64 * lambda.ln() - ln_fact).exp()
            }
            OffspringLaw::Binary { p } => match k {
                0 => 1.0 - p,
                2 => *p,
                _ => 0.0,
            },
            OffspringLaw::Explicit(pmf) => pmf.probs.get(k as usize).copied().unwrap_or(0.0),
        }
    }

    /// Generating function `f(s)`, `s` in [0,1].
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("pgf argument {s} outside [0,1]")));
        }
        Ok(self.pgf_unchecked(s))
    }

    #[inline]
    pub fn pgf_unchecked(&self, s: f64) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => p / (1.0 - (1.0 - p) * s),
            OffspringLaw::Poisson { lambda } => (lambda * (s - 1.0)).exp(),
            OffspringLaw::Binary { p } => 1.0 - p + p * s * s,
            OffspringLaw::Explicit(pmf) => pmf.probs.iter().rev().fold(0.0, |acc, &q| acc * s + q),
        }
    }

    /// `g(h) = 1 - f(1 - h)`: survival probability of one parent whose
    /// children each survive independently with probability `h`.
    #[inline]
    pub fn survival_map(&self, h: f64) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => {
                let r = 1.0 - p;
                r * h / (p + r * h)
            }
            OffspringLaw::Poisson { lambda } => -(-lambda * h).exp_m1(),
            OffspringLaw::Binary { p } => p * h * (2.0 - h),
            OffspringLaw::Explicit(pmf) => {
                let l = (-h).ln_1p();
                pmf.probs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &q)| q * -(k as f64 * l).exp_m1())
                    .sum()
            }
        }
    }

    /// `m(q) = f'(1)`.
    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => (1.0 - p) / p,
            OffspringLaw::Poisson { lambda } => *lambda,
            OffspringLaw::Binary { p } => 2.0 * p,
            OffspringLaw::Explicit(pmf) => pmf
                .probs
                .iter()
                .enumerate()
                .map(|(k, q)| k as f64 * q)
                .sum(),
        }
    }

    /// `X = log m(q)`.
    pub fn log_mean(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => (-p).ln_1p() - p.ln(),
            _ => self.mean().ln(),
        }
    }

    /// `E[Y(Y-1)] = f''(1)`.
    pub fn second_factorial_moment(&self) -> f64 {
        match self {
            OffspringLaw::Geometric { p } => {
                let r = 1.0 - p;
                2.0 * r * r / (p * p)
            }
            OffspringLaw::Poisson { lambda } => lambda * lambda,
            OffspringLaw::Binary { p } => 2.0 * p,
            OffspringLaw::Explicit(pmf) => pmf
                .probs
                .iter()
                .enumerate()
                .map(|(k, q)| (k * k.saturating_sub(1)) as f64 * q)
                .sum(),
        }
    }

    /// `eta = f''(1) / f'(1)^2`.
    pub fn eta(&self) -> f64 {
        let m = self.mean();
        self.second_factorial_moment() / (m * m)
    }

    /// Standardized truncated second moment `sum_{y >= a} y^2 q(y) / m^2`.
    pub fn zeta(&self, a: u64) -> Result<f64> {
        if a < 1 {
            return Err(Error::Domain("zeta needs a >= 1".into()));
        }
        let m = self.mean();
        let tail = match self {
            OffspringLaw::Geometric { p } => {
                let r = 1.0 - p;
                let a = a as f64;
                r.powf(a) * (a * a + 2.0 * a * r / p + r * (1.0 + r) / (p * p))
            }
            OffspringLaw::Poisson { lambda } => poisson_second_moment_tail(*lambda, a),
            OffspringLaw::Binary { p } => {
                if a <= 2 {
                    4.0 * p
                } else {
                    0.0
                }
            }
            OffspringLaw::Explicit(pmf) => pmf
                .probs
                .iter()
                .enumerate()
                .skip(a as usize)
                .map(|(k, q)| (k * k) as f64 * q)
                .sum(),
        };
        Ok(tail / (m * m))
    }

    /// One offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            OffspringLaw::Geometric { p } => geometric_failures(*p, rng),
            OffspringLaw::Poisson { lambda } => poisson_count(*lambda, rng),
            OffspringLaw::Binary { p } => {
                if rng.random::<f64>() < *p {
                    2
                } else {
                    0
                }
            }
            OffspringLaw::Explicit(pmf) => pmf.draw(rng),
        }
    }

    /// Total offspring of `z` independent parents (a draw from `q^{*z}`).
    pub fn sample_sum<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> u64 {
        if z == 0 {
            return 0;
        }
        if z <= DIRECT_SUM_LIMIT {
            return (0..z).map(|_| self.sample(rng)).sum();
        }
        match self {
            OffspringLaw::Geometric { p } => negative_binomial(z, *p, rng),
            OffspringLaw::Poisson { lambda } => poisson_count(z as f64 * lambda, rng),
            OffspringLaw::Binary { p } => 2 * binomial(z, *p, rng),
            OffspringLaw::Explicit(pmf) => multinomial_total(z, &pmf.probs, rng),
        }
    }

    /// Total offspring of `z` parents each conditioned on all of its children
    /// dying out, where one child line survives with probability `1 - t`
    /// (pgf `f(t s) / f(t)`).
    pub fn sample_sum_doomed<R: Rng + ?Sized>(&self, z: u64, t: f64, rng: &mut R) -> u64 {
        if z == 0 || t <= 0.0 {
            return 0;
        }
        match self {
            OffspringLaw::Geometric { p } => {
                let p2 = 1.0 - (1.0 - p) * t;
                if z <= DIRECT_SUM_LIMIT {
                    (0..z).map(|_| geometric_failures(p2, rng)).sum()
                } else {
                    negative_binomial(z, p2, rng)
                }
            }
            OffspringLaw::Poisson { lambda } => poisson_count(z as f64 * lambda * t, rng),
            OffspringLaw::Binary { p } => {
                let w2 = p * t * t;
                2 * binomial(z, w2 / (1.0 - p + w2), rng)
            }
            OffspringLaw::Explicit(pmf) => {
                let mut w: Vec<f64> = Vec::with_capacity(pmf.probs.len());
                let mut tk = 1.0;
                for &q in &pmf.probs {
                    w.push(q * tk);
                    tk *= t;
                }
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= total);
                multinomial_total(z, &w, rng)
            }
        }
    }

    /// Offspring count of one parent conditioned on at least one child line
    /// surviving, each independently with probability `h` in (0,1].
    pub fn sample_surviving<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> u64 {
        debug_assert!(h > 0.0 && h <= 1.0);
        match self {
            OffspringLaw::Geometric { p } => {
                // doomed children before the first surviving one, then a fresh tail
                let rho = (1.0 - p) * (1.0 - h);
                geometric_failures(1.0 - rho, rng) + 1 + geometric_failures(*p, rng)
            }
            OffspringLaw::Poisson { lambda } => {
                let surviving = zero_truncated_poisson(lambda * h, rng);
                let doomed = if h < 1.0 {
                    poisson_count(lambda * (1.0 - h), rng)
                } else {
                    0
                };
                surviving + doomed
            }
            OffspringLaw::Binary { .. } => 2,
            OffspringLaw::Explicit(pmf) => {
                let l = (-h).ln_1p();
                let w: Vec<f64> = pmf
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(k, &q)| if k == 0 { 0.0 } else { q * -(k as f64 * l).exp_m1() })
                    .collect();
                let total: f64 = w.iter().sum();
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (k, &x) in w.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return k as u64;
                    }
                }
                w.iter().rposition(|&x| x > 0.0).unwrap_or(1) as u64
            }
        }
    }
}

fn geometric_failures<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    Geometric::new(p)
        .expect("geometric parameter validated")
        .sample(rng)
}

fn poisson_count<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda)
        .expect("poisson mean within sampler range")
        .sample(rng) as u64
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || n == 0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("binomial parameters validated")
        .sample(rng)
}

/// Failures before the `z`-th success, via the gamma-Poisson mixture.
fn negative_binomial<R: Rng + ?Sized>(z: u64, p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let rate = Gamma::new(z as f64, (1.0 - p) / p)
        .expect("gamma parameters positive")
        .sample(rng);
    poisson_count(rate, rng)
}

/// Sum of `z` i.i.d. draws from `probs` via sequential conditional binomials.
fn multinomial_total<R: Rng + ?Sized>(z: u64, probs: &[f64], rng: &mut R) -> u64 {
    let mut remaining = z;
    let mut mass = 1.0;
    let mut total = 0u64;
    for (k, &q) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let c = if k + 1 == probs.len() || q >= mass {
            remaining
        } else {
            binomial(remaining, (q / mass).min(1.0), rng)
        };
        total += k as u64 * c;
        remaining -= c;
        mass -= q;
    }
    total
}

fn zero_truncated_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    if mu > 1.0 {
        loop {
            let k = poisson_count(mu, rng);
            if k > 0 {
                return k;
            }
        }
    }
    // inverse cdf on {1,2,...}: P(k) = mu^k / (k! (e^mu - 1))
    let u = rng.random::<f64>() * mu.exp_m1();
    let mut term = mu;
    let mut acc = term;
    let mut k = 1u64;
    while acc < u && k < 1000 {
        k += 1;
        term *= mu / k as f64;
        acc += term;
    }
    k
}

fn poisson_second_moment_tail(lambda: f64, a: u64) -> f64 {
    let total = lambda + lambda * lambda;
    let mut y = a;
    let ln_fact: f64 = (1..=a).map(|i| (i as f64).ln()).sum();
    let mut ln_pmf = -lambda + a as f64 * lambda.ln() - ln_fact;
    let mut sum = 0.0;
    loop {
        let term = (y * y) as f64 * ln_pmf.exp();
        sum += term;
        if y as f64 > lambda + 1.0 && term <= POISSON_TAIL_CUT * total.max(sum) {
            break;
        }
        y += 1;
        ln_pmf += lambda.ln() - (y as f64).ln();
        if y > a + 100_000_000 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSpec;
    use proptest::prelude::*;

    fn laws() -> Vec<OffspringLaw> {
        vec![
            OffspringLaw::geometric(0.5).unwrap(),
            OffspringLaw::geometric(0.27).unwrap(),
            OffspringLaw::poisson(2.5).unwrap(),
            OffspringLaw::poisson(0.3).unwrap(),
            OffspringLaw::binary(0.4).unwrap(),
            OffspringLaw::binary(1.0).unwrap(),
            OffspringLaw::explicit(vec![0.5, 0.0, 0.5]).unwrap(),
            OffspringLaw::explicit(vec![0.2, 0.3, 0.1, 0.25, 0.15]).unwrap(),
        ]
    }

    fn direct_pgf(law: &OffspringLaw, s: f64) -> f64 {
        let mut acc = CompSum::default();
        for k in 0..2000u64 {
            acc.add(law.pmf(k) * s.powi(k as i32));
        }
        acc.0 + acc.1
    }

    #[derive(Default)]
    struct CompSum(f64, f64);
    impl CompSum {
        fn add(&mut self, x: f64) {
            let t = self.0 + x;
            self.1 += if self.0.abs() >= x.abs() { (self.0 - t) + x } else { (x - t) + self.0 };
            self.0 = t;
        }
    }

    #[test]
    fn pgf_examples() {
        let g = OffspringLaw::geometric(0.5).unwrap();
        assert_eq!(g.pgf(0.0).unwrap(), 0.5);
        let b = OffspringLaw::binary(0.4).unwrap();
        assert!((b.pgf(0.5).unwrap() - 0.7).abs() < 1e-15);
        for law in laws() {
            assert!((law.pgf(1.0).unwrap() - 1.0).abs() < 1e-15, "{law}");
        }
        assert!(matches!(g.pgf(1.5), Err(Error::Domain(_))));
        assert!(matches!(g.pgf(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn moment_examples() {
        let g = OffspringLaw::geometric(0.5).unwrap();
        let b = OffspringLaw::binary(0.4).unwrap();
        let p = OffspringLaw::poisson(2.5).unwrap();
        assert!((g.mean() - 1.0).abs() < 1e-15);
        assert!((b.mean() - 0.8).abs() < 1e-15);
        assert!((p.mean() - 2.5).abs() < 1e-15);
        assert!((p.eta() - 1.0).abs() < 1e-14);
        assert!((OffspringLaw::poisson(0.3).unwrap().eta() - 1.0).abs() < 1e-14);
        assert!((b.eta() - 1.25).abs() < 1e-14);
        assert!((g.eta() - 2.0).abs() < 1e-14);
        assert!((OffspringLaw::geometric(0.13).unwrap().eta() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_examples() {
        let e = OffspringLaw::explicit(vec![0.5, 0.0, 0.5]).unwrap();
        assert!((e.zeta(1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(e.zeta(3).unwrap(), 0.0);
        let p = OffspringLaw::poisson(1.0).unwrap();
        assert!((p.zeta(1).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(p.zeta(0), Err(Error::Domain(_))));
    }

    #[test]
    fn zeta_matches_direct_tail_sums() {
        for law in laws() {
            let m = law.mean();
            for a in 1..12u64 {
                let direct: f64 = (a..3000).map(|y| (y * y) as f64 * law.pmf(y)).sum::<f64>() / (m * m);
                let z = law.zeta(a).unwrap();
                assert!((z - direct).abs() <= 1e-10 * direct.max(1.0), "{law} a={a}: {z} vs {direct}");
            }
        }
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(OffspringLaw::geometric(1.0).is_err());
        assert!(OffspringLaw::geometric(0.0).is_err());
        assert!(OffspringLaw::poisson(0.0).is_err());
        assert!(OffspringLaw::binary(0.0).is_err());
        assert!(OffspringLaw::explicit(vec![1.0]).is_err());
        assert!(OffspringLaw::explicit(vec![0.5, 0.4]).is_err());
        assert!(OffspringLaw::explicit(vec![0.5, -0.1, 0.6]).is_err());
        assert!(OffspringLaw::explicit(vec![0.0; 66]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let law: OffspringLaw = serde_json::from_str(r#"{"kind":"geometric","p":0.6}"#).unwrap();
        assert_eq!(law, OffspringLaw::Geometric { p: 0.6 });
        let back = serde_json::to_string(&law).unwrap();
        assert_eq!(back, r#"{"kind":"geometric","p":0.6}"#);
        assert!(serde_json::from_str::<OffspringLaw>(r#"{"kind":"binary","p":1.5}"#).is_err());
        let e: OffspringLaw = serde_json::from_str(r#"{"kind":"explicit","probs":[0.25,0.5,0.25]}"#).unwrap();
        assert!((e.mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn survival_map_matches_pgf_complement() {
        for law in laws() {
            for &h in &[1.0, 0.5, 0.1, 1e-3] {
                let direct = 1.0 - law.pgf_unchecked(1.0 - h);
                assert!((law.survival_map(h) - direct).abs() < 1e-13, "{law} h={h}");
            }
            // tiny h: g(h) ~ m h with no cancellation
            let h = 1e-200;
            let g = law.survival_map(h);
            assert!((g / (law.mean() * h) - 1.0).abs() < 1e-10, "{law}: {g}");
        }
    }

    #[test]
    fn mean_matches_pgf_derivative() {
        for law in laws() {
            let h = 1e-6;
            let fd = (law.pgf_unchecked(1.0) - law.pgf_unchecked(1.0 - h)) / h;
            assert!((fd / law.mean() - 1.0).abs() < 1e-4, "{law}");
        }
    }

    #[test]
    fn sampler_chi_square_fit() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for (i, law) in laws().into_iter().enumerate() {
            let mut rng = StreamSpec::new(20_240 + i as u64, "offspring/chi2").rng();
            let n = 100_000usize;
            let kmax = 40usize;
            let mut counts = vec![0u64; kmax + 1];
            for _ in 0..n {
                let k = (law.sample(&mut rng) as usize).min(kmax);
                counts[k] += 1;
            }
            // pool cells with expected count < 5 into their neighbour
            let mut expected: Vec<f64> = (0..kmax).map(|k| law.pmf(k as u64) * n as f64).collect();
            expected.push(n as f64 - expected.iter().sum::<f64>());
            let (mut stat, mut dof) = (0.0, 0i64);
            let (mut eo, mut oo) = (0.0, 0.0);
            for k in 0..=kmax {
                eo += expected[k];
                oo += counts[k] as f64;
                if eo >= 5.0 {
                    stat += (oo - eo).powi(2) / eo;
                    dof += 1;
                    eo = 0.0;
                    oo = 0.0;
                }
            }
            if eo > 0.0 {
                stat += (oo - eo).powi(2) / eo.max(1e-300);
            }
            if dof < 2 {
                continue;
            }
            let pval = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat);
            assert!(pval > 0.001, "{law}: chi2 {stat} dof {dof} p {pval}");
        }
    }

    #[test]
    fn sum_sampler_moments() {
        for (i, law) in laws().into_iter().enumerate() {
            let mut rng = StreamSpec::new(77 + i as u64, "offspring/sum").rng();
            let z = 50u64;
            let reps = 20_000;
            let mut acc = crate::stats::MeanAcc::new();
            for _ in 0..reps {
                acc.push(law.sample_sum(z, &mut rng) as f64);
            }
            let m = law.mean() * z as f64;
            assert!((acc.mean - m).abs() <= 4.5 * acc.stderr() + 1e-9, "{law}: {} vs {m}", acc.mean);
            let var = z as f64 * (law.second_factorial_moment() + law.mean() - law.mean().powi(2));
            if var < 1e-12 {
                assert_eq!(acc.variance(), 0.0);
                continue;
            }
            assert!((acc.variance() / var - 1.0).abs() < 0.06, "{law}: var {} vs {var}", acc.variance());
        }
    }

    #[test]
    fn conditioned_samplers_match_exact_laws() {
        // compare empirical means with exact conditional means
        for (i, law) in laws().into_iter().enumerate() {
            let mut rng = StreamSpec::new(500 + i as u64, "offspring/cond").rng();
            for &h in &[0.9, 0.3, 0.02] {
                let t: f64 = 1.0 - h;
                let g = law.survival_map(h);
                let kmax = 3000u64;
                let surv_mean: f64 = (1..kmax)
                    .map(|y| y as f64 * law.pmf(y) * (1.0 - t.powf(y as f64)))
                    .sum::<f64>()
                    / g;
                let doomed_mean: f64 = (0..kmax)
                    .map(|y| y as f64 * law.pmf(y) * t.powf(y as f64))
                    .sum::<f64>()
                    / (1.0 - g);
                let mut a = crate::stats::MeanAcc::new();
                let mut b = crate::stats::MeanAcc::new();
                for _ in 0..40_000 {
                    a.push(law.sample_surviving(h, &mut rng) as f64);
                    b.push(law.sample_sum_doomed(20, t, &mut rng) as f64);
                }
                assert!((a.mean - surv_mean).abs() < 4.5 * a.stderr().max(1e-12), "{law} h={h}: surviving {} vs {surv_mean}", a.mean);
                assert!((b.mean - 20.0 * doomed_mean).abs() < 4.5 * b.stderr().max(1e-12), "{law} h={h}: doomed {} vs {}", b.mean, 20.0 * doomed_mean);
            }
        }
    }

    proptest! {
        #[test]
        fn pgf_is_monotone_convex_and_matches_series(
            kind in 0usize..4, par in 0.05f64..0.95, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0
        ) {
            let law = match kind {
                0 => OffspringLaw::geometric(par).unwrap(),
                1 => OffspringLaw::poisson(4.0 * par).unwrap(),
                2 => OffspringLaw::binary(par).unwrap(),
                _ => OffspringLaw::explicit(vec![par / 2.0, 1.0 - par, par / 2.0]).unwrap(),
            };
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let (flo, fhi) = (law.pgf(lo).unwrap(), law.pgf(hi).unwrap());
            prop_assert!(flo <= fhi + 1e-15);
            let mid = 0.5 * (lo + hi);
            prop_assert!(law.pgf(mid).unwrap() <= 0.5 * (flo + fhi) + 1e-14);
            prop_assert!((law.pgf(s1).unwrap() - direct_pgf(&law, s1)).abs() < 1e-10);
        }

        #[test]
        fn zeta_dominates_eta_and_decreases(kind in 0usize..4, par in 0.05f64..0.95, a in 1u64..20) {
            let law = match kind {
                0 => OffspringLaw::geometric(par).unwrap(),
                1 => OffspringLaw::poisson(6.0 * par).unwrap(),
                2 => OffspringLaw::binary(par).unwrap(),
                _ => OffspringLaw::explicit(vec![par / 2.0, 0.0, 1.0 - par, 0.0, par / 2.0]).unwrap(),
            };
            prop_assert!(law.zeta(1).unwrap() >= law.eta() - 1e-12);
            prop_assert!(law.zeta(a + 1).unwrap() <= law.zeta(a).unwrap() + 1e-15);
            prop_assert!(law.eta() >= 0.0);
        }
    }
}
