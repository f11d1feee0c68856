//! The associated random walk `S_n = S_0 + X_1 + ... + X_n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::renewal::{BoundaryLaw, RenewalTable, Side};
use crate::rng::{BlockPlan, SimRng, StreamSpec};
use crate::stats::{Estimate, MeanAcc, Method, PairAcc};
use crate::tilting::{tilted_env, TiltSolution};

/// Longest path accepted by the conditioned samplers.
pub const MAX_CONDITIONED_LEN: usize = 10_000;

/// Acceptance rate below which rejection sampling gives up.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Tries between acceptance-rate checks.
const TIMEOUT_CHECK: u64 = 1 << 20;

/// Enumeration budget per depth in [`baxter_check`].
pub const BAXTER_BUDGET: f64 = (1u64 << 20) as f64;

/// A realized path with its running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    increments: Vec<f64>,
    sums: Vec<f64>,
    lower: f64,
    upper: f64,
    tau: usize,
}

impl WalkPath {
    pub fn from_increments(start: f64, increments: Vec<f64>) -> Self {
        let mut sums = Vec::with_capacity(increments.len() + 1);
        let mut s = start;
        sums.push(s);
        for &x in &increments {
            s += x;
            sums.push(s);
        }
        Self::from_parts(increments, sums)
    }

    fn from_parts(increments: Vec<f64>, sums: Vec<f64>) -> Self {
        let mut p = Self {
            increments,
            sums,
            lower: f64::INFINITY,
            upper: f64::NEG_INFINITY,
            tau: 0,
        };
        p.refresh_stats();
        p
    }

    fn refresh_stats(&mut self) {
        self.lower = f64::INFINITY;
        self.upper = f64::NEG_INFINITY;
        self.tau = 0;
        let mut best = self.sums[0];
        for (k, &s) in self.sums.iter().enumerate().skip(1) {
            self.lower = self.lower.min(s);
            self.upper = self.upper.max(s);
            if s < best {
                best = s;
                self.tau = k;
            }
        }
    }

    /// Redraw all increments from `env`, keeping the length and start.
    pub fn resample<R: Rng + ?Sized>(&mut self, env: &EnvironmentLaw, rng: &mut R) {
        let xs = env.log_means();
        let mut s = self.sums[0];
        for k in 0..self.increments.len() {
            let x = xs[env.sample_index(rng)];
            self.increments[k] = x;
            s += x;
            self.sums[k + 1] = s;
        }
        self.refresh_stats();
    }

    pub fn n(&self) -> usize {
        self.increments.len()
    }

    pub fn start(&self) -> f64 {
        self.sums[0]
    }

    pub fn end(&self) -> f64 {
        self.sums[self.n()]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `S_0..S_n`.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// `L_n = min(S_1..S_n)`; `+inf` for the empty path.
    pub fn lower(&self) -> f64 {
        self.lower
    }

    /// `M_n = max(S_1..S_n)`; `-inf` for the empty path.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// First index of the minimum of `S_0..S_n`.
    pub fn tau(&self) -> usize {
        self.tau
    }
}

/// Path of length `n` started at `start` with increments drawn from `env`.
pub fn simulate_walk<R: Rng + ?Sized>(
    env: &EnvironmentLaw,
    n: usize,
    start: f64,
    rng: &mut R,
) -> Result<WalkPath> {
    if n < 1 {
        return Err(Error::Domain("walk length must be >= 1".into()));
    }
    let mut p = WalkPath::from_increments(start, vec![0.0; n]);
    p.resample(env, rng);
    Ok(p)
}

/// `S'_i = S_n - S_{n-i}`: the time-reversed path.
pub fn dual_path(path: &WalkPath) -> Result<WalkPath> {
    if path.start() != 0.0 {
        return Err(Error::Domain("duality needs S_0 = 0".into()));
    }
    let n = path.n();
    let increments: Vec<f64> = path.increments.iter().rev().copied().collect();
    let sums: Vec<f64> = (0..=n).map(|i| path.sums[n] - path.sums[n - i]).collect();
    Ok(WalkPath::from_parts(increments, sums))
}

/// Plain Monte Carlo mean of `f(path)` over paths of length `n` drawn from `env`.
pub fn estimate_walk_functional<F>(
    env: &EnvironmentLaw,
    n: usize,
    start: f64,
    reps: u64,
    streams: &StreamSpec,
    f: F,
) -> Estimate
where
    F: Fn(&WalkPath) -> f64 + Sync,
{
    let t0 = std::time::Instant::now();
    let acc = BlockPlan::new(reps).fold(
        streams,
        MeanAcc::new(),
        |_, rng, len| {
            let mut acc = MeanAcc::new();
            let mut p = WalkPath::from_increments(start, vec![0.0; n]);
            for _ in 0..len {
                p.resample(env, rng);
                acc.push(f(&p));
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Estimate::from_acc(&acc, Method::Direct).with_elapsed(t0)
}

/// `E**[e^{-beta S_n}; L_n >= 0]` under the tilted law (no `gamma^n` factor).
pub fn tilted_min_nonneg(
    tilted: &EnvironmentLaw,
    beta: f64,
    n: usize,
    reps: u64,
    streams: &StreamSpec,
) -> Estimate {
    let t0 = std::time::Instant::now();
    if n == 0 {
        return Estimate {
            value: 1.0,
            stderr: 0.0,
            reps,
            method: Method::TiltedIs,
            elapsed_ms: 0.0,
        };
    }
    let xs = tilted.log_means();
    let acc = BlockPlan::new(reps).fold(
        streams,
        MeanAcc::new(),
        |_, rng, len| {
            let mut acc = MeanAcc::new();
            for _ in 0..len {
                let mut s = 0.0;
                let mut alive = true;
                for _ in 0..n {
                    s += xs[tilted.sample_index(rng)];
                    alive &= s >= 0.0;
                }
                acc.push(if alive { (-beta * s).exp() } else { 0.0 });
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    let mut e = Estimate::from_acc(&acc, Method::TiltedIs).with_elapsed(t0);
    e.reps = reps;
    e
}

/// `P{L_n >= 0}` under the original law, via `gamma^n E**[e^{-beta S_n}; L_n >= 0]`.
pub fn prob_min_nonneg(
    env: &EnvironmentLaw,
    solution: &TiltSolution,
    n: usize,
    reps: u64,
    streams: &StreamSpec,
) -> Result<Estimate> {
    let tilted = tilted_env(env, solution)?;
    let inner = tilted_min_nonneg(&tilted, solution.beta, n, reps, streams);
    Ok(inner.scaled(solution.gamma.powi(n as i32)))
}

/// `E_x[e^{-theta S_n}; L_n >= 0]` by direct simulation under `env`.
pub fn min_nonneg_laplace(
    env: &EnvironmentLaw,
    theta: f64,
    x: f64,
    n: usize,
    reps: u64,
    streams: &StreamSpec,
) -> Estimate {
    let t0 = std::time::Instant::now();
    let xs = env.log_means();
    let acc = BlockPlan::new(reps).fold(
        streams,
        MeanAcc::new(),
        |_, rng, len| {
            let mut acc = MeanAcc::new();
            for _ in 0..len {
                let mut s = x;
                let mut alive = true;
                for _ in 0..n {
                    s += xs[env.sample_index(rng)];
                    if s < 0.0 {
                        alive = false;
                        break;
                    }
                }
                acc.push(if alive { (-theta * s).exp() } else { 0.0 });
            }
            acc
        },
        |a, b| a.merge(&b),
    );
    Estimate::from_acc(&acc, Method::Direct).with_elapsed(t0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionMode {
    /// `L_n >= 0`.
    StayNonneg,
    /// `M_n < 0`.
    StayNeg,
    /// `tau_n = n`.
    FirstMinAtEnd,
}

impl ConditionMode {
    pub fn holds(&self, p: &WalkPath) -> bool {
        match self {
            ConditionMode::StayNonneg => p.lower() >= 0.0,
            ConditionMode::StayNeg => p.upper() < 0.0,
            ConditionMode::FirstMinAtEnd => p.tau() == p.n(),
        }
    }
}

/// Weighted sample of conditioned paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionedSample {
    pub mode: ConditionMode,
    pub paths: Vec<WalkPath>,
    /// All ones for rejection sampling.
    pub weights: Vec<f64>,
    pub tries: u64,
    /// Accepted / tried for rejection; 1 for the weighted sampler.
    pub acceptance_rate: f64,
    /// Set when the proposal used an estimated renewal function.
    pub approximate: bool,
}

impl ConditionedSample {
    /// Estimate of the probability of the conditioning event.
    pub fn event_probability(&self) -> Estimate {
        if self.approximate {
            let mut acc = MeanAcc::new();
            self.weights.iter().for_each(|&w| acc.push(w));
            Estimate::from_acc(&acc, Method::Direct)
        } else {
            let p = self.paths.len() as f64 / self.tries as f64;
            Estimate {
                value: p,
                stderr: (p * (1.0 - p) / self.tries as f64).sqrt(),
                reps: self.tries,
                method: Method::Direct,
                elapsed_ms: 0.0,
            }
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        crate::stats::effective_sample_size(s, s2)
    }
}

/// Proposal for [`sample_conditioned`].
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    /// Exact rejection from unconditioned paths.
    Rejection,
    /// Doob transform with an estimated harmonic function: `u` table for
    /// `StayNonneg`, `v` table for `StayNeg` and `FirstMinAtEnd`.
    HTransform(&'a RenewalTable),
}

/// `reps` paths of the walk under `env` conditioned on `mode`.
pub fn sample_conditioned(
    env: &EnvironmentLaw,
    mode: ConditionMode,
    n: usize,
    reps: u64,
    sampler: Sampler,
    streams: &StreamSpec,
) -> Result<ConditionedSample> {
    if !(1..=MAX_CONDITIONED_LEN).contains(&n) {
        return Err(Error::Domain(format!(
            "conditioned path length {n} outside 1..={MAX_CONDITIONED_LEN}"
        )));
    }
    match sampler {
        Sampler::Rejection => rejection(env, mode, n, reps, streams),
        Sampler::HTransform(table) => {
            let want = match mode {
                ConditionMode::StayNonneg => Side::U,
                _ => Side::V,
            };
            if table.side != want {
                return Err(Error::Domain(format!(
                    "{mode:?} needs a {want:?} renewal table"
                )));
            }
            h_transform(env, mode, n, reps, table, streams)
        }
    }
}

fn rejection(
    env: &EnvironmentLaw,
    mode: ConditionMode,
    n: usize,
    reps: u64,
    streams: &StreamSpec,
) -> Result<ConditionedSample> {
    let blocks = BlockPlan::new(reps).run(streams, |_, rng, len| {
        let mut out = Vec::with_capacity(len as usize);
        let mut tries = 0u64;
        let mut p = WalkPath::from_increments(0.0, vec![0.0; n]);
        while (out.len() as u64) < len {
            p.resample(env, rng);
            tries += 1;
            if mode.holds(&p) {
                out.push(p.clone());
            }
            if tries.is_multiple_of(TIMEOUT_CHECK) {
                let rate = out.len() as f64 / tries as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(Error::Timeout {
                        rate,
                        limit: MIN_ACCEPTANCE,
                    });
                }
            }
        }
        Ok((out, tries))
    });
    let mut paths = Vec::with_capacity(reps as usize);
    let mut tries = 0;
    for b in blocks {
        let (p, t) = b?;
        paths.extend(p);
        tries += t;
    }
    let weights = vec![1.0; paths.len()];
    Ok(ConditionedSample {
        mode,
        acceptance_rate: paths.len() as f64 / tries.max(1) as f64,
        paths,
        weights,
        tries,
        approximate: false,
    })
}

fn h_transform(
    env: &EnvironmentLaw,
    mode: ConditionMode,
    n: usize,
    reps: u64,
    table: &RenewalTable,
    streams: &StreamSpec,
) -> Result<ConditionedSample> {
    let xs = env.log_means();
    let ws = env.weights();
    let inside = |y: f64| match table.side {
        Side::U => y >= 0.0,
        Side::V => y < 0.0,
    };
    let blocks = BlockPlan::new(reps).run(streams, |_, rng: &mut SimRng, len| {
        let mut out = Vec::with_capacity(len as usize);
        let mut cand = vec![0.0; xs.len()];
        for _ in 0..len {
            let mut s = 0.0;
            let mut incs = Vec::with_capacity(n);
            let mut log_w = 0.0;
            let mut dead = false;
            for _ in 0..n {
                let mut z = 0.0;
                for (a, c) in cand.iter_mut().enumerate() {
                    let y = s + xs[a];
                    *c = if inside(y) { ws[a] * table.eval(y) } else { 0.0 };
                    z += *c;
                }
                if z <= 0.0 {
                    dead = true;
                    break;
                }
                let u = rng.random::<f64>() * z;
                let mut acc = 0.0;
                let mut pick = cand.iter().rposition(|&c| c > 0.0).unwrap_or(0);
                for (a, &c) in cand.iter().enumerate() {
                    acc += c;
                    if u < acc {
                        pick = a;
                        break;
                    }
                }
                let y = s + xs[pick];
                log_w += z.ln() - table.eval(y).ln();
                incs.push(xs[pick]);
                s = y;
            }
            let path = if dead {
                let mut incs = incs;
                incs.resize(n, 0.0);
                (WalkPath::from_increments(0.0, incs), 0.0)
            } else {
                (WalkPath::from_increments(0.0, incs), log_w.exp())
            };
            out.push(path);
        }
        out
    });
    let mut paths = Vec::with_capacity(reps as usize);
    let mut weights = Vec::with_capacity(reps as usize);
    for b in blocks {
        for (p, w) in b {
            let p = if mode == ConditionMode::FirstMinAtEnd && w > 0.0 {
                dual_path(&p)?
            } else {
                p
            };
            paths.push(p);
            weights.push(w);
        }
    }
    Ok(ConditionedSample {
        mode,
        tries: reps,
        acceptance_rate: 1.0,
        paths,
        weights,
        approximate: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaxterCheck {
    pub theta: f64,
    pub t: f64,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// `t^K`, to be compared against the requested 1e-6.
    pub t_pow_k: f64,
}

/// Both sides of `1 + sum t^k E[e^{theta S_k}; M_k < 0] = exp(sum t^k/k E[e^{theta S_k}; S_k < 0])`
/// truncated at `K`, from exact enumeration.
pub fn baxter_check(env: &EnvironmentLaw, theta: f64, t: f64, k: usize) -> Result<BaxterCheck> {
    if theta.is_nan() || theta <= 0.0 || !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain("need theta > 0 and t in (0,1)".into()));
    }
    crate::enumerate::check_budget(env.len(), k, BAXTER_BUDGET)?;
    let t_pow_k = t.powi(k as i32);
    if t_pow_k >= 1e-6 {
        log::warn!("baxter check: t^K = {t_pow_k:e} >= 1e-6, truncation dominates the gap");
    }
    // per depth: E[e^{theta S_k}; M_k < 0] and E[e^{theta S_k}; S_k < 0]
    let mut below = vec![0.0; k + 1];
    let mut neg = vec![0.0; k + 1];
    let xs = env.log_means();
    let ws = env.weights();
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        depth: usize,
        k: usize,
        w: f64,
        s: f64,
        max: f64,
        xs: &[f64],
        ws: &[f64],
        theta: f64,
        below: &mut [f64],
        neg: &mut [f64],
    ) {
        if depth > 0 {
            let e = w * (theta * s).exp();
            if max < 0.0 {
                below[depth] += e;
            }
            if s < 0.0 {
                neg[depth] += e;
            }
        }
        if depth == k {
            return;
        }
        for (a, &x) in xs.iter().enumerate() {
            let s2 = s + x;
            dfs(depth + 1, k, w * ws[a], s2, max.max(s2), xs, ws, theta, below, neg);
        }
    }
    dfs(0, k, 1.0, 0.0, f64::NEG_INFINITY, xs, &ws, theta, &mut below, &mut neg);
    let mut lhs = 1.0;
    let mut expo = 0.0;
    let mut tk = 1.0;
    for j in 1..=k {
        tk *= t;
        lhs += tk * below[j];
        expo += tk / j as f64 * neg[j];
    }
    let rhs = expo.exp();
    Ok(BaxterCheck {
        theta,
        t,
        k,
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        t_pow_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pr2Row {
    pub n: usize,
    pub ratio: f64,
    pub stderr: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `E_x[phi(S_n) e^{-theta S_n}; L_n >= 0] / E_x[e^{-theta S_n}; L_n >= 0]`
/// against `∫ phi(-z) nu_theta(dz)` for each `n`.
#[allow(clippy::too_many_arguments)]
pub fn prop_pr2_check<P>(
    env: &EnvironmentLaw,
    theta: f64,
    x: f64,
    phi: P,
    n_list: &[usize],
    reps: u64,
    nu: &BoundaryLaw,
    streams: &StreamSpec,
) -> Result<Vec<Pr2Row>>
where
    P: Fn(f64) -> f64 + Sync,
{
    if nu.table.side != Side::V {
        return Err(Error::Domain("pr2 check needs the nu boundary law".into()));
    }
    let rhs = nu.expect(|z| phi(-z));
    let xs = env.log_means();
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let acc = BlockPlan::new(reps).fold(
            &streams.child(&format!("n{n}")),
            PairAcc::default(),
            |_, rng, len| {
                let mut acc = PairAcc::default();
                for _ in 0..len {
                    let mut s = x;
                    let mut alive = true;
                    for _ in 0..n {
                        s += xs[env.sample_index(rng)];
                        if s < 0.0 {
                            alive = false;
                            break;
                        }
                    }
                    if alive {
                        let e = (-theta * s).exp();
                        acc.push(phi(s) * e, e);
                    } else {
                        acc.push(0.0, 0.0);
                    }
                }
                acc
            },
            |a, b| a.merge(&b),
        );
        let (ratio, stderr) = acc.ratio();
        rows.push(Pr2Row {
            n,
            ratio,
            stderr,
            rhs,
            gap: (ratio - rhs).abs(),
        });
    }
    Ok(rows)
}
