//! Quenched generating-function calculus and population simulation for a
//! fixed environment sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};

/// Below this the survival recursion continues in log space.
pub const LOG_MODE_THRESHOLD: f64 = 1e-250;

/// Below this `survival_quenched` reports underflow.
pub const UNDERFLOW_THRESHOLD: f64 = 1e-280;

/// Default per-generation population guard.
pub const DEFAULT_CAP: u64 = 100_000_000;

/// `f_{0,n}(s) = f_1(f_2(... f_n(s)))` for the atom sequence `seq`.
pub fn compose_pgf_backward(env: &EnvironmentLaw, seq: &[usize], s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("pgf argument {s} outside [0,1]")));
    }
    Ok(seq
        .iter()
        .rev()
        .fold(s, |t, &a| env.law(a).pgf_unchecked(t)))
}

/// `P{Z_n > 0 | Pi}`, with its logarithm kept when the value underflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchedSurvival {
    /// 0 when `underflow` is set.
    pub value: f64,
    pub log_value: f64,
    pub underflow: bool,
}

impl QuenchedSurvival {
    fn from_log(log_value: f64) -> Self {
        let value = log_value.exp();
        if value < UNDERFLOW_THRESHOLD {
            Self {
                value: 0.0,
                log_value,
                underflow: true,
            }
        } else {
            Self {
                value,
                log_value,
                underflow: false,
            }
        }
    }
}

/// One step of `h <- g(h)` carried in log space.
#[inline]
fn survival_step_log(env: &EnvironmentLaw, atom: usize, log_h: f64) -> f64 {
    if log_h > LOG_MODE_THRESHOLD.ln() {
        env.law(atom).survival_map(log_h.exp()).ln()
    } else {
        // g(h) = m h (1 + O(h)) and h is below 1e-250
        log_h + env.log_means()[atom]
    }
}

/// Backward survival recursion `h_n = 1`, `h_k = g_{k+1}(h_{k+1})`.
///
/// Returns `h_0..h_n` as logarithms; `h_0` is the quenched survival
/// probability to generation `n` and `h_k` that of a single individual in
/// generation `k`.
pub fn survival_profile_log(env: &EnvironmentLaw, seq: &[usize]) -> Vec<f64> {
    let n = seq.len();
    let mut log_h = vec![0.0; n + 1];
    for k in (0..n).rev() {
        log_h[k] = survival_step_log(env, seq[k], log_h[k + 1]);
    }
    log_h
}

/// Quenched survival by the generic cancellation-free recursion.
pub fn survival_quenched(env: &EnvironmentLaw, seq: &[usize]) -> QuenchedSurvival {
    let mut log_h = 0.0;
    for &a in seq.iter().rev() {
        log_h = survival_step_log(env, a, log_h);
    }
    QuenchedSurvival::from_log(log_h)
}

/// Closed form for linear-fractional sequences:
/// `1 / q = e^{-S_n} + sum_{k<n} (eta_{k+1} / 2) e^{-S_k}`.
pub fn survival_linear_fractional(env: &EnvironmentLaw, seq: &[usize]) -> Result<QuenchedSurvival> {
    if !seq.iter().all(|&a| env.law(a).is_linear_fractional()) {
        return Err(Error::InvalidEnvironment(
            "closed form needs linear-fractional atoms".into(),
        ));
    }
    let xs = env.log_means();
    let mut terms = Vec::with_capacity(seq.len() + 1);
    let mut s = 0.0;
    for &a in seq {
        terms.push((0.5 * env.law(a).eta()).ln() - s);
        s += xs[a];
    }
    terms.push(-s);
    Ok(QuenchedSurvival::from_log(-crate::stats::log_sum_exp(terms)))
}

/// Exact quenched quantities of one environment sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedRecord {
    pub atoms: Vec<usize>,
    /// `S_0..S_n` with `S_0 = 0`.
    pub sums: Vec<f64>,
    /// `eta_1..eta_n`.
    pub eta: Vec<f64>,
    pub survival: QuenchedSurvival,
    /// `(s, f_{0,n}(s))` on the requested grid.
    pub pgf: Vec<(f64, f64)>,
}

impl QuenchedRecord {
    pub fn new(env: &EnvironmentLaw, atoms: Vec<usize>, s_grid: &[f64]) -> Result<Self> {
        let xs = env.log_means();
        let mut sums = Vec::with_capacity(atoms.len() + 1);
        let mut s = 0.0;
        sums.push(s);
        for &a in &atoms {
            s += xs[a];
            sums.push(s);
        }
        let eta = atoms.iter().map(|&a| env.law(a).eta()).collect();
        let survival = survival_quenched(env, &atoms);
        let pgf = s_grid
            .iter()
            .map(|&s| Ok((s, compose_pgf_backward(env, &atoms, s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            atoms,
            sums,
            eta,
            survival,
            pgf,
        })
    }

    /// `min_{0<=k<=n} S_k`, i.e. `L_n ∧ 0`.
    pub fn running_min(&self) -> f64 {
        self.sums.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `Z_0..Z_k`; when the cap was exceeded the path stops at the censoring
/// generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPath {
    pub z: Vec<u64>,
    pub censored_at: Option<usize>,
}

impl PopulationPath {
    pub fn alive_at_end(&self, n: usize) -> bool {
        self.censored_at.is_none() && self.z.len() == n + 1 && self.z[n] > 0
    }
}

/// Sample `Z_0 = 1, Z_1, ..., Z_n` in the environment `seq`.
pub fn simulate_population<R: Rng + ?Sized>(
    env: &EnvironmentLaw,
    seq: &[usize],
    cap: u64,
    rng: &mut R,
) -> Result<PopulationPath> {
    if cap < 1 {
        return Err(Error::Domain("population cap must be >= 1".into()));
    }
    let mut z = Vec::with_capacity(seq.len() + 1);
    z.push(1u64);
    let mut cur = 1u64;
    for (k, &a) in seq.iter().enumerate() {
        cur = if cur == 0 {
            0
        } else {
            env.law(a).sample_sum(cur, rng)
        };
        z.push(cur);
        if cur > cap {
            return Ok(PopulationPath {
                z,
                censored_at: Some(k + 1),
            });
        }
    }
    Ok(PopulationPath {
        z,
        censored_at: None,
    })
}

/// `P{Z_n > 0 | Z_k = z, Pi} = 1 - (1 - h_k)^z` from a log survival profile.
pub fn survival_from(log_h: f64, z: u64) -> f64 {
    if z == 0 {
        return 0.0;
    }
    let h = log_h.exp();
    if h >= 1.0 {
        return 1.0;
    }
    -((z as f64) * (-h).ln_1p()).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaKind {
    Monotone,
    Floor,
    Agresti,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaViolation {
    pub kind: LemmaKind,
    pub k: usize,
    /// The side that should be larger.
    pub big: f64,
    pub small: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub s: f64,
    pub n: usize,
    /// `log f_{k,0}(s)^{exp(-S_k)}` for `k = 1..n`.
    pub log_power: Vec<f64>,
    /// `log(e^{-S_k} (1 - f_{k,0}(s)))` and the log of the Agresti lower bound.
    pub log_scaled_survival: Vec<f64>,
    pub log_agresti: Vec<f64>,
    pub violations: Vec<LemmaViolation>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check along the forward compositions `f_{k,0}(s) = f_k(... f_1(s))`:
/// `f_{k,0}(s)^{exp(-S_k)}` is nondecreasing in `k` and at least `s`, and
/// `e^{-S_k}(1 - f_{k,0}(s)) >= (1/(1-s) + sum_{i<=k} eta_i e^{S_i})^{-1}`.
/// Comparisons are made in log space with relative slack `slack`.
pub fn lemma_checks(env: &EnvironmentLaw, seq: &[usize], s: f64, slack: f64) -> Result<LemmaReport> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s = {s} must lie in (0,1)")));
    }
    let xs = env.log_means();
    let n = seq.len();
    let mut log_c = (-s).ln_1p();
    let mut sum = 0.0;
    let mut agresti_terms = vec![-(-s).ln_1p()];
    let mut report = LemmaReport {
        s,
        n,
        log_power: Vec::with_capacity(n),
        log_scaled_survival: Vec::with_capacity(n),
        log_agresti: Vec::with_capacity(n),
        violations: Vec::new(),
    };
    let log_s = s.ln();
    let mut prev = log_s;
    for (i, &a) in seq.iter().enumerate() {
        let k = i + 1;
        log_c = survival_step_log(env, a, log_c);
        sum += xs[a];
        let c = log_c.exp();
        // e^{-S_k} ln(1 - c_k), kept accurate for tiny c_k
        let lp = -(log_c - sum).exp() * if c < 1e-8 { 1.0 + 0.5 * c } else { -(-c).ln_1p() / c };
        let eta = env.law(a).eta();
        if eta > 0.0 {
            agresti_terms.push(eta.ln() + sum);
        }
        let la = -crate::stats::log_sum_exp(agresti_terms.iter().copied());
        let ls = log_c - sum;
        let tol = |v: f64| slack * v.abs().max(1e-300);
        if lp < prev - tol(prev) {
            report.violations.push(LemmaViolation {
                kind: LemmaKind::Monotone,
                k,
                big: lp,
                small: prev,
            });
        }
        if lp < log_s - tol(log_s) {
            report.violations.push(LemmaViolation {
                kind: LemmaKind::Floor,
                k,
                big: lp,
                small: log_s,
            });
        }
        if ls < la - slack * la.abs().max(1.0) {
            report.violations.push(LemmaViolation {
                kind: LemmaKind::Agresti,
                k,
                big: ls,
                small: la,
            });
        }
        report.log_power.push(lp);
        report.log_scaled_survival.push(ls);
        report.log_agresti.push(la);
        prev = lp;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringLaw;
    use crate::rng::StreamSpec;
    use crate::stats::MeanAcc;
    use proptest::prelude::*;

    fn binary_env() -> EnvironmentLaw {
        EnvironmentLaw::single(OffspringLaw::binary(0.4).unwrap())
    }

    fn reference() -> EnvironmentLaw {
        EnvironmentLaw::geometric(&[0.65, 0.25, 0.10], &[-1.0, 1.0, 2f64.sqrt() - 1.0]).unwrap()
    }

    #[test]
    fn composition_examples() {
        let env = binary_env();
        assert_eq!(compose_pgf_backward(&env, &[0], 0.0).unwrap(), 0.6);
        assert!((compose_pgf_backward(&env, &[0, 0], 0.0).unwrap() - 0.744).abs() < 1e-15);
        assert_eq!(compose_pgf_backward(&env, &[0, 0, 0], 1.0).unwrap(), 1.0);
        assert!(compose_pgf_backward(&env, &[0], 1.2).is_err());
    }

    #[test]
    fn survival_examples() {
        let g = EnvironmentLaw::single(OffspringLaw::geometric(0.5).unwrap());
        assert!((survival_quenched(&g, &[0]).value - 0.5).abs() < 1e-15);
        let b = binary_env();
        let q = survival_quenched(&b, &[0, 0]);
        assert!((q.value - (1.0 - 0.744)).abs() < 1e-14);
    }

    #[test]
    fn linear_fractional_matches_generic_and_rational() {
        // exact rational recomputation: with p_i = a/b the recursion 1/h <- 1/(m h) + 1
        // stays rational; compare against f64 at n = 10
        let env = EnvironmentLaw::new(vec![
            crate::environment::Atom { weight: 0.5, law: OffspringLaw::geometric(0.75).unwrap() },
            crate::environment::Atom { weight: 0.5, law: OffspringLaw::geometric(0.4).unwrap() },
        ])
        .unwrap();
        let seq = [0, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        // m = r/p: 1/3 and 3/2; y_n = 1, y_k = y_{k+1}/m_{k+1} + 1
        let (mut num, mut den) = (1i128, 1i128);
        for &a in seq.iter().rev() {
            let (mn, md) = if a == 0 { (1i128, 3i128) } else { (3, 2) };
            // y / m + 1 = (num * md) / (den * mn) + 1
            let (nn, nd) = (num * md + den * mn, den * mn);
            (num, den) = (nn, nd);
        }
        let exact = den as f64 / num as f64;
        let generic = survival_quenched(&env, &seq).value;
        let closed = survival_linear_fractional(&env, &seq).unwrap().value;
        assert!((generic / exact - 1.0).abs() < 1e-13);
        assert!((closed / exact - 1.0).abs() < 1e-13);
    }

    #[test]
    fn underflow_switches_to_log() {
        let env = EnvironmentLaw::geometric(&[1.0], &[-3.0]).unwrap();
        let seq = vec![0; 400];
        let q = survival_quenched(&env, &seq);
        assert!(q.underflow && q.value == 0.0);
        let lf = survival_linear_fractional(&env, &seq).unwrap();
        assert!((q.log_value / lf.log_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_moment_bound_and_monotonicity_on_random_environments() {
        let env = reference();
        let mut rng = StreamSpec::new(10, "branching/bound").rng();
        for _ in 0..10_000 {
            let seq = env.sample_environment(40, &mut rng);
            let rec = QuenchedRecord::new(&env, seq.clone(), &[]).unwrap();
            assert!(rec.survival.value <= rec.running_min().exp());
            let shorter = survival_quenched(&env, &seq[..39]);
            assert!(rec.survival.value <= shorter.value);
        }
    }

    #[test]
    fn binary_population_is_even() {
        let env = EnvironmentLaw::single(OffspringLaw::binary(0.7).unwrap());
        let mut rng = StreamSpec::new(1, "branching/even").rng();
        for _ in 0..1000 {
            let p = simulate_population(&env, &[0; 10], DEFAULT_CAP, &mut rng).unwrap();
            assert!(p.z[1..].iter().all(|z| z % 2 == 0));
            assert_eq!(p.z[0], 1);
            for w in p.z.windows(2) {
                assert!(w[0] > 0 || w[1] == 0);
            }
        }
    }

    #[test]
    fn quenched_mean_is_exp_of_walk() {
        let env = reference();
        let seq = [1, 0, 2, 1, 1, 0, 2, 1];
        let target: f64 = seq.iter().map(|&a| env.log_means()[a]).sum::<f64>().exp();
        let mut rng = StreamSpec::new(4, "branching/mean").rng();
        let mut acc = MeanAcc::new();
        for _ in 0..200_000 {
            let p = simulate_population(&env, &seq, DEFAULT_CAP, &mut rng).unwrap();
            acc.push(p.z[8] as f64);
        }
        assert!((acc.mean - target).abs() < 4.0 * acc.stderr(), "{} vs {target}", acc.mean);
    }

    #[test]
    fn cap_censors() {
        let env = EnvironmentLaw::single(OffspringLaw::poisson(10.0).unwrap());
        let mut rng = StreamSpec::new(4, "branching/cap").rng();
        let p = simulate_population(&env, &[0; 20], 1000, &mut rng).unwrap();
        assert!(p.censored_at.is_some());
        assert!(!p.alive_at_end(20));
    }

    #[test]
    fn survival_from_profile() {
        assert_eq!(survival_from(0.0, 3), 1.0);
        assert_eq!(survival_from(-1.0, 0), 0.0);
        let h: f64 = 0.2;
        assert!((survival_from(h.ln(), 3) - (1.0 - 0.8f64.powi(3))).abs() < 1e-15);
    }

    #[test]
    fn lemma_checks_pass_and_degenerate_s() {
        let env = reference();
        let mut rng = StreamSpec::new(6, "branching/lemma").rng();
        for _ in 0..2000 {
            let seq = env.sample_environment(50, &mut rng);
            let r = lemma_checks(&env, &seq, 0.5, 1e-12).unwrap();
            assert!(r.passed(), "{:?}", r.violations);
        }
        let up = EnvironmentLaw::geometric(&[1.0], &[0.7]).unwrap();
        assert!(lemma_checks(&up, &[0; 50], 0.5, 1e-12).unwrap().passed());
        let s = 1.0 - 1e-9;
        let r = lemma_checks(&env, &[0, 1, 2, 1, 0], s, 1e-12).unwrap();
        for &lp in &r.log_power {
            assert!((lp.exp() - 1.0).abs() < 1e-6);
        }
        assert!(lemma_checks(&env, &[0], 1.0, 1e-12).is_err());
    }

    proptest! {
        #[test]
        fn survival_is_monotone_in_extensions(seed in 0u64..1000, n in 1usize..60) {
            let env = reference();
            let mut rng = StreamSpec::new(seed, "branching/prop").rng();
            let seq = env.sample_environment(n, &mut rng);
            let prof = survival_profile_log(&env, &seq);
            let full = survival_quenched(&env, &seq);
            prop_assert!((prof[0] - full.log_value).abs() < 1e-12 * full.log_value.abs().max(1.0));
            let lf = survival_linear_fractional(&env, &seq).unwrap();
            prop_assert!((full.value / lf.value - 1.0).abs() < 1e-12);
            let mut last = 1.0;
            for k in 1..=n {
                let q = survival_quenched(&env, &seq[..k]).value;
                prop_assert!(q <= last);
                last = q;
            }
        }

        #[test]
        fn pgf_composition_is_monotone(seed in 0u64..1000, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
            let env = reference();
            let mut rng = StreamSpec::new(seed, "branching/pgf").rng();
            let seq = env.sample_environment(12, &mut rng);
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let (a, b) = (compose_pgf_backward(&env, &seq, lo).unwrap(), compose_pgf_backward(&env, &seq, hi).unwrap());
            prop_assert!(a <= b + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            let q = survival_quenched(&env, &seq).value;
            prop_assert!((1.0 - compose_pgf_backward(&env, &seq, 0.0).unwrap() - q).abs() < 1e-12);
        }
    }
}
