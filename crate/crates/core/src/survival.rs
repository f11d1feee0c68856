//! Annealed survival estimators and the survival-conditioned sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branching::{
    simulate_population, survival_from, survival_profile_log, survival_quenched, DEFAULT_CAP,
};
use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::rng::{BlockPlan, SimRng, StreamSpec};
use crate::stats::{effective_sample_size, Estimate, MeanAcc, Method};
use crate::tilting::{tilted_env, TiltSolution};

/// Tries per environment for the rejection path sampler.
pub const REJECTION_BUDGET: u64 = 100_000;

/// Environments with quenched survival below this are not attempted by the
/// rejection path sampler.
pub const REJECTION_FLOOR: f64 = 1e-4;

/// Fraction of `reps` below which the conditioned sample's ESS is flagged.
pub const ESS_WARN_FRACTION: f64 = 0.01;

fn sample_sums(env: &EnvironmentLaw, seq: &[usize]) -> Vec<f64> {
    let xs = env.log_means();
    let mut sums = Vec::with_capacity(seq.len() + 1);
    let mut s = 0.0;
    sums.push(s);
    for &a in seq {
        s += xs[a];
        sums.push(s);
    }
    sums
}

fn naive_replica(env: &EnvironmentLaw, n: usize, cap: u64, rng: &mut SimRng) -> f64 {
    let mut seq = Vec::with_capacity(n);
    let mut z = 1u64;
    for k in 0..n {
        let a = env.sample_index(rng);
        seq.push(a);
        z = env.law(a).sample_sum(z, rng);
        if z == 0 {
            return 0.0;
        }
        if z > cap {
            // the rest of the environment is independent of the past
            seq.extend((k + 1..n).map(|_| env.sample_index(rng)));
            let prof = survival_profile_log(env, &seq[k + 1..]);
            return survival_from(prof[0], z);
        }
    }
    1.0
}

/// `P{Z_n > 0}` by one of the three estimators.
///
/// Naive replicas whose population exceeds `cap` are completed with the exact
/// conditional survival probability given the censoring generation.
pub fn estimate_survival_with_cap(
    env: &EnvironmentLaw,
    solution: &TiltSolution,
    n: usize,
    reps: u64,
    method: Method,
    streams: &StreamSpec,
    cap: u64,
) -> Result<Estimate> {
    let t0 = std::time::Instant::now();
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let est = match method {
        Method::Naive => {
            let acc = BlockPlan::new(reps).fold(
                streams,
                MeanAcc::new(),
                |_, rng, len| {
                    let mut acc = MeanAcc::new();
                    for _ in 0..len {
                        acc.push(naive_replica(env, n, cap, rng));
                    }
                    acc
                },
                |a, b| a.merge(&b),
            );
            Estimate::from_acc(&acc, Method::Naive)
        }
        Method::QuenchedCond => {
            let acc = BlockPlan::new(reps).fold(
                streams,
                MeanAcc::new(),
                |_, rng, len| {
                    let mut acc = MeanAcc::new();
                    for _ in 0..len {
                        let seq = env.sample_environment(n, rng);
                        acc.push(survival_quenched(env, &seq).value);
                    }
                    acc
                },
                |a, b| a.merge(&b),
            );
            Estimate::from_acc(&acc, Method::QuenchedCond)
        }
        Method::TiltedIs => {
            let tilted = tilted_env(env, solution)?;
            tilted_survival_inner(env, &tilted, solution.beta, n, reps, streams)
                .scaled(solution.gamma.powi(n as i32))
        }
        Method::Direct => {
            return Err(Error::Config(
                "survival method must be naive, quenched-cond or tilted-is".into(),
            ))
        }
    };
    Ok(est.with_elapsed(t0))
}

pub fn estimate_survival(
    env: &EnvironmentLaw,
    solution: &TiltSolution,
    n: usize,
    reps: u64,
    method: Method,
    streams: &StreamSpec,
) -> Result<Estimate> {
    estimate_survival_with_cap(env, solution, n, reps, method, streams, DEFAULT_CAP)
}

/// `E**[e^{-beta S_n} qhat_n]` over tilted environments; `gamma^n` times this
/// is `P{Z_n > 0}`.
pub fn tilted_survival_inner(
    env: &EnvironmentLaw,
    tilted: &EnvironmentLaw,
    beta: f64,
    n: usize,
    reps: u64,
    streams: &StreamSpec,
) -> Estimate {
    let xs = env.log_means();
    let acc = BlockPlan::new(reps).fold(
        streams,
        MeanAcc::new(),
        |_, rng, len| {
            let mut acc = MeanAcc::new();
            for _ in 0..len {
                let seq = tilted.sample_environment(n, rng);
                let s: f64 = seq.iter().map(|&a| xs[a]).sum();
                let q = survival_quenched(env, &seq);
                acc.push((q.log_value - beta * s).exp());
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Estimate::from_acc(&acc, Method::TiltedIs)
}

/// How the population path is drawn inside a fixed environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathSampler {
    /// Generation-by-generation draw from the law conditioned on survival.
    Sequential,
    /// Unconditioned paths until one survives.
    Rejection,
}

impl std::str::FromStr for PathSampler {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "rejection" => Ok(Self::Rejection),
            other => Err(format!("unknown path sampler `{other}` (sequential|rejection)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionOptions {
    pub sampler: PathSampler,
    pub cap: u64,
    pub rejection_budget: u64,
    pub floor: f64,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            sampler: PathSampler::Sequential,
            cap: DEFAULT_CAP,
            rejection_budget: REJECTION_BUDGET,
            floor: REJECTION_FLOOR,
        }
    }
}

/// One environment with a population path that survives to `n`.
pub struct ConditionedDraw<'a> {
    pub atoms: &'a [usize],
    /// `S_0..S_n` of the original walk.
    pub sums: &'a [f64],
    /// `Z_0..Z_n`, all positive.
    pub z: &'a [u64],
    pub log_survival: f64,
}

/// Weighted output of [`conditioned_population`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSample<T> {
    pub n: usize,
    pub reps: u64,
    /// `(weight, visitor output)` for every retained draw, in replica order.
    pub items: Vec<(f64, T)>,
    /// Mean weight over all replicas: the tilted survival estimate.
    pub survival: Estimate,
    pub ess: f64,
    pub ess_warning: bool,
    /// Replicas dropped by the rejection floor or budget.
    pub excluded: u64,
    pub excluded_weight: f64,
    /// Replicas whose conditioned path exceeded the cap.
    pub censored: u64,
    pub censored_weight: f64,
    pub mean_tries: f64,
}

impl<T> WeightedSample<T> {
    /// Upper bound on the relative bias from dropped replicas.
    pub fn bias_bound(&self) -> f64 {
        let total = self.survival.value * self.reps as f64;
        if total > 0.0 {
            (self.excluded_weight + self.censored_weight) / total
        } else {
            0.0
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.items.iter().map(|(w, _)| w).sum()
    }

    /// Self-normalized weighted mean of `f`.
    pub fn mean<F: Fn(&T) -> f64>(&self, f: F) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (w, t) in &self.items {
            num += w * f(t);
            den += w;
        }
        num / den
    }

    /// Self-normalized mean with a delta-method standard error.
    pub fn mean_with_stderr<F: Fn(&T) -> f64>(&self, f: F) -> (f64, f64) {
        let m = self.mean(&f);
        let (mut sw, mut sv) = (0.0, 0.0);
        for (w, t) in &self.items {
            sw += w;
            let d = w * (f(t) - m);
            sv += d * d;
        }
        (m, sv.sqrt() / sw)
    }
}

enum PathOutcome {
    Alive(Vec<u64>, u64),
    Censored,
    Excluded,
}

/// `J ~ Bin(z, h)` given `J >= 1`.
fn binomial_at_least_one(z: u64, h: f64, p_surv: f64, rng: &mut SimRng) -> u64 {
    let l = (-h).ln_1p();
    let mut term = z as f64 * h * ((z - 1) as f64 * l).exp();
    let ratio = h / (1.0 - h);
    let u = rng.random::<f64>() * p_surv;
    let mut acc = term;
    let mut j = 1u64;
    while acc < u && j < z {
        term *= (z - j) as f64 / (j + 1) as f64 * ratio;
        j += 1;
        acc += term;
    }
    j
}

fn sequential_path(
    env: &EnvironmentLaw,
    seq: &[usize],
    log_h: &[f64],
    cap: u64,
    rng: &mut SimRng,
) -> PathOutcome {
    let n = seq.len();
    let mut z = Vec::with_capacity(n + 1);
    z.push(1u64);
    let mut cur = 1u64;
    for k in 0..n {
        let law = env.law(seq[k]);
        let p_surv = survival_from(log_h[k], cur);
        let next = if p_surv >= 0.5 {
            loop {
                let y = law.sample_sum(cur, rng);
                let acc = survival_from(log_h[k + 1], y);
                if acc >= 1.0 || rng.random::<f64>() < acc {
                    break y;
                }
            }
        } else {
            let h_k = log_h[k].exp();
            let h_next = log_h[k + 1].exp();
            let j = binomial_at_least_one(cur, h_k, p_surv, rng);
            let mut y = law.sample_sum_doomed(cur - j, 1.0 - h_next, rng);
            for _ in 0..j {
                y += law.sample_surviving(h_next, rng);
            }
            y
        };
        if next > cap {
            return PathOutcome::Censored;
        }
        z.push(next);
        cur = next;
    }
    PathOutcome::Alive(z, 1)
}

fn rejection_path(
    env: &EnvironmentLaw,
    seq: &[usize],
    q: f64,
    opts: &ConditionOptions,
    rng: &mut SimRng,
) -> PathOutcome {
    if q < opts.floor {
        return PathOutcome::Excluded;
    }
    let n = seq.len();
    for tries in 1..=opts.rejection_budget {
        let Ok(p) = simulate_population(env, seq, opts.cap, rng) else {
            return PathOutcome::Excluded;
        };
        if p.censored_at.is_some() {
            // the censored path might have survived; its survival chance is
            // counted against the cap
            let k = p.z.len() - 1;
            let prof = survival_profile_log(env, &seq[k..]);
            if rng.random::<f64>() < survival_from(prof[0], p.z[k]) {
                return PathOutcome::Censored;
            }
            continue;
        }
        if p.alive_at_end(n) {
            return PathOutcome::Alive(p.z, tries);
        }
    }
    PathOutcome::Excluded
}

/// Weighted sample of `(Pi, Z)` given `Z_n > 0`.
///
/// Environments are drawn from the tilted law with weight
/// `gamma^n e^{-beta S_n} qhat_n(Pi)`; the path is then drawn from the
/// quenched law given survival. `visit` maps each retained draw to the stored
/// summary. Environment draws use `streams` exactly as
/// [`tilted_survival_inner`] does, so the mean weight reproduces the tilted
/// survival estimate on the same seed.
pub fn conditioned_population<T, V>(
    env: &EnvironmentLaw,
    solution: &TiltSolution,
    n: usize,
    reps: u64,
    opts: &ConditionOptions,
    streams: &StreamSpec,
    visit: V,
) -> Result<WeightedSample<T>>
where
    T: Send,
    V: Fn(&ConditionedDraw) -> T + Sync,
{
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let t0 = std::time::Instant::now();
    let tilted = tilted_env(env, solution)?;
    let xs = env.log_means();
    let log_gamma_n = n as f64 * solution.log_gamma();
    let z_streams = streams.child("z");

    struct Block<T> {
        items: Vec<(f64, T)>,
        all: MeanAcc,
        excluded: u64,
        excluded_weight: f64,
        censored: u64,
        censored_weight: f64,
        tries: u64,
    }

    let init = Block {
        items: Vec::new(),
        all: MeanAcc::new(),
        excluded: 0,
        excluded_weight: 0.0,
        censored: 0,
        censored_weight: 0.0,
        tries: 0,
    };
    let out = BlockPlan::new(reps).fold(
        streams,
        init,
        |b, rng, len| {
            let mut zrng = z_streams.block_rng(b);
            let mut blk = Block {
                items: Vec::with_capacity(len as usize),
                all: MeanAcc::new(),
                excluded: 0,
                excluded_weight: 0.0,
                censored: 0,
                censored_weight: 0.0,
                tries: 0,
            };
            for _ in 0..len {
                let seq = tilted.sample_environment(n, rng);
                let s: f64 = seq.iter().map(|&a| xs[a]).sum();
                let log_h = survival_profile_log(env, &seq);
                let w = (log_gamma_n - solution.beta * s + log_h[0]).exp();
                blk.all.push(w);
                if w == 0.0 {
                    continue;
                }
                let outcome = match opts.sampler {
                    PathSampler::Sequential => sequential_path(env, &seq, &log_h, opts.cap, &mut zrng),
                    PathSampler::Rejection => rejection_path(env, &seq, log_h[0].exp(), opts, &mut zrng),
                };
                match outcome {
                    PathOutcome::Alive(z, tries) => {
                        blk.tries += tries;
                        let sums = sample_sums(env, &seq);
                        let draw = ConditionedDraw {
                            atoms: &seq,
                            sums: &sums,
                            z: &z,
                            log_survival: log_h[0],
                        };
                        blk.items.push((w, visit(&draw)));
                    }
                    PathOutcome::Censored => {
                        blk.censored += 1;
                        blk.censored_weight += w;
                    }
                    PathOutcome::Excluded => {
                        blk.excluded += 1;
                        blk.excluded_weight += w;
                    }
                }
            }
            blk
        },
        |a, b| {
            a.items.extend(b.items);
            a.all.merge(&b.all);
            a.excluded += b.excluded;
            a.excluded_weight += b.excluded_weight;
            a.censored += b.censored;
            a.censored_weight += b.censored_weight;
            a.tries += b.tries;
        },
    );
    let (sw, sw2) = out
        .items
        .iter()
        .fold((0.0, 0.0), |(a, b), (w, _)| (a + w, b + w * w));
    let ess = effective_sample_size(sw, sw2);
    let ess_warning = ess < ESS_WARN_FRACTION * reps as f64;
    if ess_warning {
        log::warn!("conditioned sample at n={n}: ESS {ess:.1} below {ESS_WARN_FRACTION} of {reps} replicas");
    }
    let retained = out.items.len().max(1) as f64;
    let survival = Estimate::from_acc(&out.all, Method::TiltedIs).with_elapsed(t0);
    Ok(WeightedSample {
        n,
        reps,
        items: out.items,
        survival,
        ess,
        ess_warning,
        excluded: out.excluded,
        excluded_weight: out.excluded_weight,
        censored: out.censored,
        censored_weight: out.censored_weight,
        mean_tries: out.tries as f64 / retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Atom;
    use crate::offspring::OffspringLaw;
    use crate::tilting::solve_beta;

    fn reference() -> EnvironmentLaw {
        EnvironmentLaw::geometric(&[0.65, 0.25, 0.10], &[-1.0, 1.0, 2f64.sqrt() - 1.0]).unwrap()
    }

    fn mixed() -> EnvironmentLaw {
        EnvironmentLaw::new(vec![
            Atom { weight: 0.6, law: OffspringLaw::binary(0.3).unwrap() },
            Atom { weight: 0.4, law: OffspringLaw::poisson(1.5).unwrap() },
        ])
        .unwrap()
    }

    #[test]
    fn one_step_closed_form() {
        let env = mixed();
        let sol = solve_beta(&env, 1e-12).unwrap();
        let exact = 0.6 * 0.3 + 0.4 * (1.0 - (-1.5f64).exp());
        for (i, m) in [Method::Naive, Method::QuenchedCond, Method::TiltedIs].into_iter().enumerate() {
            let e = estimate_survival(&env, &sol, 1, 200_000, m, &StreamSpec::new(i as u64, "t")).unwrap();
            assert!(e.z_score(exact).abs() < 3.0 || (m != Method::Naive && (e.value - exact).abs() < 1e-12), "{m:?} {e:?}");
        }
    }

    #[test]
    fn methods_agree_on_reference() {
        let env = reference();
        let sol = solve_beta(&env, 1e-12).unwrap();
        for n in [5, 10, 20] {
            let ests: Vec<Estimate> = [Method::Naive, Method::QuenchedCond, Method::TiltedIs]
                .into_iter()
                .map(|m| estimate_survival(&env, &sol, n, 200_000, m, &StreamSpec::new(3, format!("agree/{n}"))).unwrap())
                .collect();
            for i in 0..3 {
                for j in i + 1..3 {
                    let pooled = ests[i].stderr.hypot(ests[j].stderr);
                    assert!((ests[i].value - ests[j].value).abs() < 3.5 * pooled, "n={n} {:?} {:?}", ests[i], ests[j]);
                }
            }
        }
    }

    #[test]
    fn tilted_beats_naive_at_n30() {
        let env = reference();
        let sol = solve_beta(&env, 1e-12).unwrap();
        let s = StreamSpec::new(9, "order");
        let naive = estimate_survival(&env, &sol, 30, 100_000, Method::Naive, &s).unwrap();
        let is = estimate_survival(&env, &sol, 30, 100_000, Method::TiltedIs, &s).unwrap();
        assert!(is.stderr < naive.stderr, "{is:?} {naive:?}");
    }

    #[test]
    fn conditioned_weights_reproduce_tilted_estimate() {
        let env = reference();
        let sol = solve_beta(&env, 1e-12).unwrap();
        let s = StreamSpec::new(5, "cond");
        let ws = conditioned_population(&env, &sol, 12, 20_000, &ConditionOptions::default(), &s, |d| {
            assert!(d.z.iter().all(|&z| z > 0));
            d.z[12]
        })
        .unwrap();
        let is = estimate_survival(&env, &sol, 12, 20_000, Method::TiltedIs, &s).unwrap();
        assert!((ws.survival.value / is.value - 1.0).abs() < 1e-12);
        assert_eq!(ws.items.len(), 20_000);
        assert!(!ws.ess_warning);
    }

    #[test]
    fn sequential_and_rejection_agree_on_fixed_environment() {
        // conditional mean of Z_n given survival is e^{S_n} / qhat_n
        let env = mixed();
        let seq = [1, 0, 1, 1, 0, 1];
        let q = survival_quenched(&env, &seq).value;
        let s: f64 = seq.iter().map(|&a| env.log_means()[a]).sum();
        let target = s.exp() / q;
        let log_h = survival_profile_log(&env, &seq);
        let mut rng = StreamSpec::new(2, "fixed").rng();
        let opts = ConditionOptions { sampler: PathSampler::Rejection, ..Default::default() };
        let (mut a, mut b) = (MeanAcc::new(), MeanAcc::new());
        for _ in 0..100_000 {
            if let PathOutcome::Alive(z, _) = sequential_path(&env, &seq, &log_h, DEFAULT_CAP, &mut rng) {
                a.push(z[6] as f64);
            }
            if let PathOutcome::Alive(z, _) = rejection_path(&env, &seq, q, &opts, &mut rng) {
                b.push(z[6] as f64);
            }
        }
        assert!((a.mean - target).abs() < 4.0 * a.stderr(), "{} {target}", a.mean);
        assert!((b.mean - target).abs() < 4.0 * b.stderr(), "{} {target}", b.mean);
    }

    #[test]
    fn geometric_conditional_law_on_fixed_environment() {
        let env = reference();
        let seq = [0, 0, 1, 0, 2, 0, 0, 1, 0, 0];
        let sums = sample_sums(&env, &seq);
        let a = (-sums[10]).exp();
        let b: f64 = sums[..10].iter().map(|s| (-s).exp()).sum();
        let pi = a / (a + b);
        let log_h = survival_profile_log(&env, &seq);
        let mut rng = StreamSpec::new(8, "geom").rng();
        let mut ones = 0u64;
        let reps = 200_000;
        for _ in 0..reps {
            if let PathOutcome::Alive(z, _) = sequential_path(&env, &seq, &log_h, DEFAULT_CAP, &mut rng) {
                ones += (z[10] == 1) as u64;
            }
        }
        let p = ones as f64 / reps as f64;
        let se = (pi * (1.0 - pi) / reps as f64).sqrt();
        assert!((p - pi).abs() < 4.0 * se, "{p} vs {pi}");
    }
}
