//! Exact small-instance values.
//!
//! Everything here is deterministic: sums run over all environment sequences
//! (or over a dense state space), in a fixed order, with compensated
//! accumulation.

use serde::{Deserialize, Serialize};

use crate::branching::{survival_linear_fractional, survival_quenched};
use crate::enumerate::{fold_sequences, SeqView};
use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;
use crate::stats::CompensatedSum;

/// Sequence budget for enumeration oracles.
pub const ENUMERATION_BUDGET: f64 = 2e7;

/// Largest mass allowed to escape the conditional pmf state space.
pub const TAIL_MASS_LIMIT: f64 = 1e-12;

/// Work budget (`n * zmax^2 * atoms`) for the kernel DP.
pub const KERNEL_BUDGET: f64 = 4e10;

/// Dense state budget for [`KilledWalk`].
pub const LATTICE_BUDGET: f64 = 2e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub quantity: String,
    pub n: usize,
    pub value: f64,
    /// Number of enumerated sequences or DP states.
    pub size: f64,
}

fn sum_over_sequences<F>(env: &EnvironmentLaw, n: usize, start: f64, f: F) -> Result<f64>
where
    F: Fn(&SeqView) -> f64 + Sync,
{
    let acc = fold_sequences(
        env,
        n,
        start,
        ENUMERATION_BUDGET,
        CompensatedSum::new,
        |acc, v| acc.add(v.weight * f(v)),
        |a, b| a.add_sum(&b),
    )?;
    Ok(acc.value())
}

/// `P{Z_n > 0} = E[1 - f_{0,n}(0)]`.
pub fn exact_survival(env: &EnvironmentLaw, n: usize) -> Result<ExactResult> {
    let value = sum_over_sequences(env, n, 0.0, |v| survival_quenched(env, v.atoms).value)?;
    Ok(ExactResult {
        quantity: "survival".into(),
        n,
        value,
        size: crate::enumerate::enumeration_size(env.len(), n),
    })
}

/// `E[f(path)]` over all sequences; the view carries `S_0 = start..S_n`.
pub fn exact_walk_functional<F>(
    env: &EnvironmentLaw,
    n: usize,
    start: f64,
    quantity: &str,
    f: F,
) -> Result<ExactResult>
where
    F: Fn(&SeqView) -> f64 + Sync,
{
    let value = sum_over_sequences(env, n, start, f)?;
    Ok(ExactResult {
        quantity: quantity.into(),
        n,
        value,
        size: crate::enumerate::enumeration_size(env.len(), n),
    })
}

pub fn min_of(sums: &[f64]) -> f64 {
    sums.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Max over `S_1..S_n` (`-inf` for `n = 0`).
pub fn max_after_start(sums: &[f64]) -> f64 {
    sums[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// First index attaining the minimum of `S_0..S_n`.
pub fn first_argmin(sums: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in sums.iter().enumerate() {
        if s < sums[best] {
            best = i;
        }
    }
    best
}

/// Law of `Z_n` given `Z_n > 0` on `{1..zmax}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPmf {
    pub n: usize,
    /// Indexed by `z`; entry 0 is zero.
    pub pmf: Vec<f64>,
    /// Conditional mass above `zmax`.
    pub tail: f64,
    pub survival: f64,
    /// Exact `E[Z_n | Z_n > 0]`.
    pub mean: f64,
    pub size: f64,
    pub method: String,
}

impl ConditionalPmf {
    pub fn zmax(&self) -> usize {
        self.pmf.len() - 1
    }
}

/// Exact conditional pmf of `Z_n` given survival.
///
/// Linear-fractional environments use the closed quenched law (geometric on
/// `{1, 2, ...}` per sequence) mixed over all sequences, and report the tail
/// above `zmax`. Other environments run the annealed transition kernel on
/// `{0..zmax}` and fail with `TailMass` if more than 1e-12 escapes.
pub fn exact_conditional_pmf(env: &EnvironmentLaw, n: usize, zmax: usize) -> Result<ConditionalPmf> {
    if n == 0 {
        return Err(Error::Domain("conditional pmf needs n >= 1".into()));
    }
    if zmax < 1 {
        return Err(Error::Domain("zmax must be >= 1".into()));
    }
    if env.all_linear_fractional() {
        linear_fractional_pmf(env, n, zmax)
    } else {
        kernel_pmf(env, n, zmax)
    }
}

fn linear_fractional_pmf(env: &EnvironmentLaw, n: usize, zmax: usize) -> Result<ConditionalPmf> {
    struct Acc {
        pmf: Vec<CompensatedSum>,
        tail: CompensatedSum,
        surv: CompensatedSum,
        mean: CompensatedSum,
    }
    let new = || Acc {
        pmf: (0..=zmax).map(|_| CompensatedSum::new()).collect(),
        tail: CompensatedSum::new(),
        surv: CompensatedSum::new(),
        mean: CompensatedSum::new(),
    };
    let acc = fold_sequences(
        env,
        n,
        0.0,
        ENUMERATION_BUDGET,
        new,
        |acc, v| {
            let q = survival_linear_fractional(env, v.atoms)
                .map(|q| q.value)
                .unwrap_or(0.0);
            let wq = v.weight * q;
            // E[Z_n | Z_n > 0, Pi] = e^{S_n} / q = 1 / pi
            let pi = q * (-v.sums[n]).exp();
            let pi = pi.min(1.0);
            let mut t = wq * pi;
            for j in 1..=zmax {
                acc.pmf[j].add(t);
                t *= 1.0 - pi;
            }
            acc.tail.add(wq * (zmax as f64 * (-pi).ln_1p()).exp());
            acc.surv.add(wq);
            acc.mean.add(v.weight * v.sums[n].exp());
        },
        |a, b| {
            for (x, y) in a.pmf.iter_mut().zip(&b.pmf) {
                x.add_sum(y);
            }
            a.tail.add_sum(&b.tail);
            a.surv.add_sum(&b.surv);
            a.mean.add_sum(&b.mean);
        },
    )?;
    let surv = acc.surv.value();
    let mut pmf: Vec<f64> = acc.pmf.iter().map(|c| c.value() / surv).collect();
    pmf[0] = 0.0;
    Ok(ConditionalPmf {
        n,
        pmf,
        tail: acc.tail.value() / surv,
        survival: surv,
        mean: acc.mean.value() / surv,
        size: crate::enumerate::enumeration_size(env.len(), n),
        method: "linear-fractional-mixture".into(),
    })
}

/// `q^{*1}` truncated to `{0..ymax}`.
fn offspring_row(law: &OffspringLaw, ymax: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..=ymax).map(|k| law.pmf(k as u64)).collect();
    if law.has_finite_support() {
        while row.len() > 1 && row.last() == Some(&0.0) {
            row.pop();
        }
    }
    row
}

fn kernel_pmf(env: &EnvironmentLaw, n: usize, zmax: usize) -> Result<ConditionalPmf> {
    let work = n as f64 * (zmax as f64).powi(2) * env.len() as f64;
    if work > KERNEL_BUDGET {
        return Err(Error::SizeLimit {
            size: work,
            budget: KERNEL_BUDGET,
        });
    }
    let rows: Vec<Vec<f64>> = env.atoms().iter().map(|a| offspring_row(&a.law, zmax)).collect();
    let mut p = vec![0.0; zmax + 1];
    p[1] = 1.0;
    let mut escaped = 0.0;
    let mut top = 1usize;
    for _ in 0..n {
        let mut next = vec![CompensatedSum::new(); zmax + 1];
        next[0].add(p[0]);
        for (a, row) in rows.iter().enumerate() {
            let w = env.weight(a);
            // conv holds q^{*z} truncated to zmax, built up z = 1, 2, ...
            let mut conv = vec![0.0; zmax + 1];
            conv[0] = 1.0;
            let mut reach = 0usize;
            // mass of q^{*z} above zmax; partial sums only grow, so it stays lost
            let mut lost = 0.0;
            let row_tail = if env.law(a).has_finite_support() {
                0.0
            } else {
                (1.0 - row.iter().sum::<f64>()).max(0.0)
            };
            for z in 1..=top {
                let mut nc = vec![0.0; zmax + 1];
                let new_reach = (reach + row.len() - 1).min(zmax);
                let kept_before: f64 = conv.iter().take(reach + 1).sum();
                lost += kept_before * row_tail;
                for (y, &c) in conv.iter().enumerate().take(reach + 1) {
                    if c == 0.0 {
                        continue;
                    }
                    for (k, &r) in row.iter().enumerate() {
                        if y + k > zmax {
                            lost += c * row[k..].iter().sum::<f64>();
                            break;
                        }
                        nc[y + k] += c * r;
                    }
                }
                conv = nc;
                reach = new_reach;
                if p[z] == 0.0 {
                    continue;
                }
                for (y, &c) in conv.iter().enumerate().take(reach + 1) {
                    next[y].add(w * p[z] * c);
                }
                escaped += w * p[z] * lost;
            }
        }
        p = next.iter().map(|c| c.value()).collect();
        top = p.iter().rposition(|&x| x > 0.0).unwrap_or(0).max(1);
        if escaped > TAIL_MASS_LIMIT {
            return Err(Error::TailMass {
                mass: escaped,
                limit: TAIL_MASS_LIMIT,
            });
        }
    }
    let surv: f64 = p[1..].iter().sum();
    let mut pmf: Vec<f64> = p.iter().map(|x| x / surv).collect();
    pmf[0] = 0.0;
    let mean = pmf.iter().enumerate().map(|(z, x)| z as f64 * x).sum();
    Ok(ConditionalPmf {
        n,
        pmf,
        tail: escaped / surv,
        survival: surv,
        mean,
        size: work,
        method: "annealed-kernel".into(),
    })
}

/// Which half-line the killed walk must stay in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Keep {
    /// `S_j >= 0` for `j = 0..k` (event `L_k >= 0`).
    Nonneg,
    /// `S_j < 0` for `j = 1..k` (event `M_k < 0`).
    Negative,
}

impl Keep {
    fn holds(&self, s: f64) -> bool {
        match self {
            Keep::Nonneg => s >= 0.0,
            Keep::Negative => s < 0.0,
        }
    }
}

/// Exact law of the killed walk on the atom-count lattice.
///
/// With finitely many atoms, `S_k` is a function of how often each atom has
/// occurred, so the surviving mass after `k` steps lives on count vectors
/// with `k` entries in total. The state space grows like `k^{A-1}`, which is
/// small for two or three atoms even at `k` in the hundreds.
#[derive(Debug, Clone)]
pub struct KilledWalk {
    xs: Vec<f64>,
    weights: Vec<f64>,
    start: f64,
    keep: Keep,
    side: usize,
    k: usize,
    nmax: usize,
    /// Dense over the first `A - 1` counts; the last count is implied by `k`.
    mass: Vec<f64>,
}

impl KilledWalk {
    pub fn new(env: &EnvironmentLaw, start: f64, keep: Keep, nmax: usize) -> Result<Self> {
        let a = env.len();
        let side = nmax + 1;
        let states = (side as f64).powi(a as i32 - 1);
        if states > LATTICE_BUDGET {
            return Err(Error::SizeLimit {
                size: states,
                budget: LATTICE_BUDGET,
            });
        }
        let mut mass = vec![0.0; states as usize];
        mass[0] = 1.0;
        Ok(Self {
            xs: env.log_means().to_vec(),
            weights: env.weights(),
            start,
            keep,
            side,
            k: 0,
            nmax,
            mass,
        })
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    fn position(&self, counts: &[usize], k: usize) -> f64 {
        let a = self.xs.len();
        let used: usize = counts.iter().sum();
        let mut s = self.start + (k - used) as f64 * self.xs[a - 1];
        for (c, x) in counts.iter().zip(&self.xs) {
            s += *c as f64 * x;
        }
        s
    }

    fn for_each_state<F: FnMut(usize, &[usize])>(&self, k: usize, mut f: F) {
        let d = self.xs.len() - 1;
        let mut counts = vec![0usize; d];
        loop {
            let idx = counts
                .iter()
                .rev()
                .fold(0usize, |acc, &c| acc * self.side + c);
            f(idx, &counts);
            // odometer over counts with total <= k
            let mut i = 0;
            loop {
                if i == d {
                    return;
                }
                counts[i] += 1;
                if counts.iter().sum::<usize>() <= k {
                    break;
                }
                counts[i] = 0;
                i += 1;
            }
        }
    }

    /// Advance one step, killing mass that leaves the half-line.
    pub fn step(&mut self) -> Result<()> {
        if self.k >= self.nmax {
            return Err(Error::Domain(format!("killed walk built for {} steps", self.nmax)));
        }
        let d = self.xs.len() - 1;
        let mut next = vec![0.0; self.mass.len()];
        let k = self.k;
        let mut stride = vec![1usize; d];
        for i in 1..d {
            stride[i] = stride[i - 1] * self.side;
        }
        let mut moves: Vec<(usize, usize, f64)> = Vec::new();
        self.for_each_state(k, |idx, counts| {
            let m = self.mass[idx];
            if m == 0.0 {
                return;
            }
            let mut c = counts.to_vec();
            for a in 0..=d {
                let target = if a < d {
                    c[a] += 1;
                    let s = self.position(&c, k + 1);
                    c[a] -= 1;
                    (s, idx + stride[a])
                } else {
                    (self.position(&c, k + 1), idx)
                };
                if self.keep.holds(target.0) {
                    moves.push((target.1, a, m));
                }
            }
        });
        for (t, a, m) in moves {
            next[t] += self.weights[a] * m;
        }
        self.mass = next;
        self.k += 1;
        Ok(())
    }

    /// `E_x[g(S_k); event]` at the current step.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let mut acc = CompensatedSum::new();
        self.for_each_state(self.k, |idx, counts| {
            let m = self.mass[idx];
            if m != 0.0 {
                acc.add(m * g(self.position(counts, self.k)));
            }
        });
        acc.value()
    }

    /// Number of states with positive mass.
    pub fn support(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }
}

/// `E_x[g(S_n); event]` for each `n` in the increasing list `ns`.
pub fn killed_walk_series<G: Fn(f64) -> f64>(
    env: &EnvironmentLaw,
    start: f64,
    keep: Keep,
    ns: &[usize],
    g: G,
) -> Result<Vec<f64>> {
    let nmax = ns.iter().copied().max().unwrap_or(0);
    if keep == Keep::Nonneg && start < 0.0 {
        return Ok(vec![0.0; ns.len()]);
    }
    let mut w = KilledWalk::new(env, start, keep, nmax)?;
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        while w.steps() < n {
            w.step()?;
        }
        out.push(w.expect(&g));
    }
    Ok(out)
}
