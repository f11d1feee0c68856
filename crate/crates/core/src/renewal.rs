//! Renewal functions of the killed walk and the boundary laws built on them.
//!
//! `u(x) = 1 + sum_k P{-S_k <= x, M_k < 0}` for `x >= 0` and
//! `v(x) = 1 + sum_k P{-S_k > x, L_k >= 0}` for `x <= 0` are estimated from
//! one batch of paths: a path contributes to every `k` until it is killed
//! (first `S_k >= 0` for `u`, first `S_k < 0` for `v`), so a path costs
//! `O(min(lifetime, K))` steps and large truncation depths are cheap.
//!
//! The series terms decay like `k^{-(1 + 1/alpha)}`. The neglected tail past
//! `K` is estimated by fitting that power to the terms in `(K/2, K]`; the
//! difference with the fit on `(K/4, K/2]` is reported as the truncation bar.

use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::rng::{BlockPlan, StreamSpec};
use crate::stats::MeanAcc;

/// Default truncation depth.
pub const DEFAULT_K: usize = 4096;

/// Quadrature step of boundary-law densities.
pub const QUADRATURE_STEP: f64 = 0.25;

/// Integrand level below which boundary-law quadrature stops.
pub const QUADRATURE_CUT: f64 = 1e-10;

/// Below this depth no tail fit is attempted.
const MIN_FIT_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `u` on `x >= 0`.
    U,
    /// `v` on `x <= 0`.
    V,
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "u" => Ok(Side::U),
            "v" => Ok(Side::V),
            other => Err(format!("unknown side `{other}` (expected u or v)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    pub k: usize,
    pub reps: u64,
    /// Stable index of the walk; fixes the tail power `1 + 1/alpha`.
    pub alpha: f64,
    pub tail_correction: bool,
}

impl SeriesOptions {
    pub fn new(k: usize, reps: u64) -> Self {
        Self {
            k,
            reps,
            alpha: 2.0,
            tail_correction: true,
        }
    }

    fn tail_power(&self) -> f64 {
        1.0 + 1.0 / self.alpha
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Domain("truncation depth K must be >= 1".into()));
        }
        if self.reps < 2 {
            return Err(Error::Domain("need at least 2 replicas".into()));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Domain(format!("alpha {} outside (1,2]", self.alpha)));
        }
        Ok(())
    }
}

/// `sum_{k >= n} k^{-p}` for `p > 1`.
pub fn power_tail(n: usize, p: f64) -> f64 {
    let direct = 16;
    let head: f64 = (n..n + direct).map(|k| (k as f64).powf(-p)).sum();
    let m = (n + direct) as f64;
    let em = m.powf(1.0 - p) / (p - 1.0) + 0.5 * m.powf(-p) + p * m.powf(-p - 1.0) / 12.0
        - p * (p + 1.0) * (p + 2.0) * m.powf(-p - 3.0) / 720.0;
    head + em
}

fn window_power_sum(lo: usize, hi: usize, p: f64) -> f64 {
    (lo + 1..=hi).map(|k| (k as f64).powf(-p)).sum()
}

/// Tail estimate, truncation bar and smoothed `K`-th term from the two
/// window sums (already divided by the replica count).
fn fit_tail(k: usize, p: f64, w1: f64, w2: f64, enabled: bool, last_term: f64) -> (f64, f64, f64) {
    if !enabled || k < MIN_FIT_DEPTH {
        return (0.0, last_term, last_term);
    }
    let rest = power_tail(k + 1, p);
    let a2 = w2 / window_power_sum(k / 2, k, p);
    let a1 = w1 / window_power_sum(k / 4, k / 2, p);
    let tail = a2 * rest;
    (tail, (a1 * rest - tail).abs(), a2 * (k as f64).powf(-p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalTable {
    pub side: Side,
    pub k: usize,
    pub reps: u64,
    /// Evaluation points, ascending; nonpositive for `v`.
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Size of the `K`-th series term (smoothed by the tail fit when enabled).
    pub k_term: Vec<f64>,
    /// Tail correction included in `estimate`.
    pub tail: Vec<f64>,
    pub truncation_bar: Vec<f64>,
    pub truncation_warning: bool,
}

struct SeriesCounts {
    total: Vec<u64>,
    w1: Vec<u64>,
    w2: Vec<u64>,
    last: Vec<u64>,
    sum: Vec<u64>,
    sumsq: Vec<u128>,
    reps: u64,
}

impl SeriesCounts {
    fn new(g: usize) -> Self {
        Self {
            total: vec![0; g],
            w1: vec![0; g],
            w2: vec![0; g],
            last: vec![0; g],
            sum: vec![0; g],
            sumsq: vec![0; g],
            reps: 0,
        }
    }

    fn merge(&mut self, o: SeriesCounts) {
        let add = |a: &mut Vec<u64>, b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.total, &o.total);
        add(&mut self.w1, &o.w1);
        add(&mut self.w2, &o.w2);
        add(&mut self.last, &o.last);
        add(&mut self.sum, &o.sum);
        self.sumsq.iter_mut().zip(&o.sumsq).for_each(|(x, y)| *x += y);
        self.reps += o.reps;
    }
}

/// Estimate `u` (resp. `v`) at the given points under `env` (normally the
/// tilted law). Points must lie in the side's half-line.
pub fn renewal_table(
    env: &EnvironmentLaw,
    side: Side,
    points: &[f64],
    opts: SeriesOptions,
    streams: &StreamSpec,
) -> Result<RenewalTable> {
    opts.validate()?;
    let mut x: Vec<f64> = points.to_vec();
    match side {
        Side::U if x.iter().any(|&p| p < 0.0) => {
            return Err(Error::Domain("u is defined for x >= 0".into()))
        }
        Side::V if x.iter().any(|&p| p > 0.0) => {
            return Err(Error::Domain("v is defined for x <= 0".into()))
        }
        _ => {}
    }
    x.sort_by(f64::total_cmp);
    x.dedup();
    // depth coordinate, ascending
    let depth: Vec<f64> = match side {
        Side::U => x.clone(),
        Side::V => x.iter().rev().map(|p| -p).collect(),
    };
    let g = depth.len();
    let k = opts.k;
    let xs = env.log_means();
    let plan = BlockPlan::new(opts.reps);

    let counts = plan.fold(
        streams,
        SeriesCounts::new(g),
        |_, rng, len| {
            let mut c = SeriesCounts::new(g);
            let mut path = vec![0u32; g];
            let mut touched = false;
            for _ in 0..len {
                let mut s = 0.0;
                for step in 1..=k {
                    s += xs[env.sample_index(rng)];
                    let bucket = match side {
                        Side::U => {
                            if s >= 0.0 {
                                break;
                            }
                            let d = -s;
                            depth.partition_point(|&p| p < d)
                        }
                        Side::V => {
                            if s < 0.0 {
                                break;
                            }
                            depth.partition_point(|&p| p <= s)
                        }
                    };
                    if bucket < g {
                        c.total[bucket] += 1;
                        if step > k / 2 {
                            c.w2[bucket] += 1;
                        } else if step > k / 4 {
                            c.w1[bucket] += 1;
                        }
                        if step == k {
                            c.last[bucket] += 1;
                        }
                        path[bucket] += 1;
                        touched = true;
                    }
                }
                if touched {
                    let mut cum = 0u64;
                    for j in 0..g {
                        cum += path[j] as u64;
                        path[j] = 0;
                        c.sum[j] += cum;
                        c.sumsq[j] += (cum as u128) * (cum as u128);
                    }
                    touched = false;
                }
            }
            c.reps = len;
            c
        },
        |acc, c| acc.merge(c),
    );

    let n = counts.reps as f64;
    let p = opts.tail_power();
    let (mut ct, mut c1, mut c2, mut cl) = (0u64, 0u64, 0u64, 0u64);
    let mut table = RenewalTable {
        side,
        k,
        reps: counts.reps,
        x: Vec::with_capacity(g),
        estimate: Vec::with_capacity(g),
        stderr: Vec::with_capacity(g),
        k_term: Vec::with_capacity(g),
        tail: Vec::with_capacity(g),
        truncation_bar: Vec::with_capacity(g),
        truncation_warning: false,
    };
    for j in 0..g {
        ct += counts.total[j];
        c1 += counts.w1[j];
        c2 += counts.w2[j];
        cl += counts.last[j];
        let mean = ct as f64 / n;
        let m2 = counts.sumsq[j] as f64 / n - (counts.sum[j] as f64 / n).powi(2);
        let se = (m2.max(0.0) * n / (n - 1.0) / n).sqrt();
        let (tail, bar, kt) = fit_tail(
            k,
            p,
            c1 as f64 / n,
            c2 as f64 / n,
            opts.tail_correction,
            cl as f64 / n,
        );
        if bar > 10.0 * se.max(f64::MIN_POSITIVE) && bar > 0.0 {
            table.truncation_warning = true;
        }
        table.x.push(match side {
            Side::U => depth[j],
            Side::V => -depth[j],
        });
        table.estimate.push(1.0 + mean + tail);
        table.stderr.push(se);
        table.k_term.push(kt);
        table.tail.push(tail);
        table.truncation_bar.push(bar);
    }
    if side == Side::V {
        table.x.reverse();
        table.estimate.reverse();
        table.stderr.reverse();
        table.k_term.reverse();
        table.tail.reverse();
        table.truncation_bar.reverse();
    }
    if table.truncation_warning {
        log::warn!(
            "renewal {:?} table: truncation at K={} exceeds 10x stderr somewhere on the grid",
            side,
            k
        );
    }
    Ok(table)
}

/// Single-point convenience: estimate of `u(x)`, `x >= 0`.
pub fn renewal_u(
    env: &EnvironmentLaw,
    x: f64,
    opts: SeriesOptions,
    streams: &StreamSpec,
) -> Result<RenewalTable> {
    renewal_table(env, Side::U, &[x], opts, streams)
}

/// Single-point convenience: estimate of `v(x)`, `x <= 0`.
pub fn renewal_v(
    env: &EnvironmentLaw,
    x: f64,
    opts: SeriesOptions,
    streams: &StreamSpec,
) -> Result<RenewalTable> {
    renewal_table(env, Side::V, &[x], opts, streams)
}

/// Evenly spaced grid `0, step, ..., xmax` (negated for `v`).
pub fn grid(side: Side, xmax: f64, step: f64) -> Vec<f64> {
    let m = (xmax / step + 1e-9).floor() as usize;
    (0..=m)
        .map(|i| {
            let d = i as f64 * step;
            match side {
                Side::U => d,
                Side::V => -d,
            }
        })
        .collect()
}

impl RenewalTable {
    fn index_of(&self, x: f64) -> Option<usize> {
        let i = self.x.partition_point(|&p| p < x - 1e-12);
        (i < self.x.len() && (self.x[i] - x).abs() <= 1e-12).then_some(i)
    }

    /// Value at `x`: exact table entry when `x` is a grid point, linear
    /// interpolation inside the grid, linear extrapolation outside.
    /// Returns 0 on the wrong half-line (where the killed walk cannot be).
    pub fn eval(&self, x: f64) -> f64 {
        match self.side {
            Side::U if x < 0.0 => return 0.0,
            Side::V if x > 0.0 => return 0.0,
            _ => {}
        }
        if let Some(i) = self.index_of(x) {
            return self.estimate[i];
        }
        let n = self.x.len();
        if n == 1 {
            return self.estimate[0];
        }
        let i = self.x.partition_point(|&p| p < x).clamp(1, n - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let (y0, y1) = (self.estimate[i - 1], self.estimate[i]);
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).max(1.0)
    }

    /// Combined (statistical, truncation) uncertainty at a grid point.
    pub fn uncertainty(&self, x: f64) -> (f64, f64) {
        match self.index_of(x) {
            Some(i) => (self.stderr[i], self.truncation_bar[i]),
            None => {
                let i = self
                    .x
                    .partition_point(|&p| p < x)
                    .min(self.x.len() - 1);
                (self.stderr[i], self.truncation_bar[i])
            }
        }
    }
}

/// Points needed for a harmonic check at every grid point: the grid and all
/// one-step successors that stay on the side's half-line.
pub fn harmonic_points(env: &EnvironmentLaw, side: Side, grid: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = grid.to_vec();
    for &x in grid {
        for &dx in env.log_means() {
            let y = x + dx;
            let keep = match side {
                Side::U => y >= 0.0,
                Side::V => y < 0.0,
            };
            if keep {
                pts.push(y);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicCheck {
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub z: f64,
}

/// `E[u(x+X); x+X >= 0] = u(x)` (or `E[v(x+X); x+X < 0] = v(x)`), with the
/// expectation over atoms evaluated exactly from the table.
pub fn harmonic_check(env: &EnvironmentLaw, x: f64, table: &RenewalTable) -> HarmonicCheck {
    let mut lhs = 0.0;
    let mut var = 0.0;
    let mut bar = 0.0;
    for (a, &dx) in env.atoms().iter().zip(env.log_means()) {
        let y = x + dx;
        let inside = match table.side {
            Side::U => y >= 0.0,
            Side::V => y < 0.0,
        };
        if inside {
            lhs += a.weight * table.eval(y);
            let (se, tb) = table.uncertainty(y);
            var += (a.weight * se).powi(2);
            bar += a.weight * tb;
        }
    }
    let rhs = table.eval(x);
    let (se, tb) = table.uncertainty(x);
    var += se * se;
    bar += tb;
    let spread = var.sqrt() + bar;
    let d = lhs - rhs;
    let z = if d == 0.0 {
        0.0
    } else if spread == 0.0 {
        f64::INFINITY
    } else {
        d / spread
    };
    HarmonicCheck { x, lhs, rhs, z }
}

/// `1 + sum_k E[e^{-theta |S_k|}; killed walk alive at k]` with tail correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSeries {
    pub side: Side,
    pub theta: f64,
    pub k: usize,
    pub value: f64,
    pub stderr: f64,
    pub tail: f64,
    pub truncation_bar: f64,
}

impl LaplaceSeries {
    /// `∫_0^∞ e^{-theta z} u(z) dz` (side `U`) or `∫_0^∞ e^{-theta z} v(-z) dz` (side `V`).
    pub fn integral(&self) -> f64 {
        self.value / self.theta
    }

    /// (stderr, truncation bar) of [`integral`](Self::integral).
    pub fn integral_bars(&self) -> (f64, f64) {
        (self.stderr / self.theta, self.truncation_bar / self.theta)
    }
}

/// Laplace transform of a renewal function from the identity
/// `∫ e^{-theta z} v(-z) dz = (1 + sum_k E[e^{-theta S_k}; L_k >= 0]) / theta`
/// (and its mirror for `u` with `M_k < 0`).
pub fn laplace_series(
    env: &EnvironmentLaw,
    side: Side,
    theta: f64,
    opts: SeriesOptions,
    streams: &StreamSpec,
) -> Result<LaplaceSeries> {
    opts.validate()?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta {theta} must be positive")));
    }
    let k = opts.k;
    let xs = env.log_means();
    let plan = BlockPlan::new(opts.reps);
    #[derive(Default)]
    struct Part {
        acc: MeanAcc,
        w1: f64,
        w2: f64,
        last: f64,
    }
    let part = plan.fold(
        streams,
        Part::default(),
        |_, rng, len| {
            let mut p = Part::default();
            for _ in 0..len {
                let mut s = 0.0;
                let mut total = 0.0;
                for step in 1..=k {
                    s += xs[env.sample_index(rng)];
                    let alive = match side {
                        Side::U => s < 0.0,
                        Side::V => s >= 0.0,
                    };
                    if !alive {
                        break;
                    }
                    let f = (-theta * s.abs()).exp();
                    total += f;
                    if step > k / 2 {
                        p.w2 += f;
                    } else if step > k / 4 {
                        p.w1 += f;
                    }
                    if step == k {
                        p.last += f;
                    }
                }
                p.acc.push(total);
            }
            p
        },
        |a, b| {
            a.acc.merge(&b.acc);
            a.w1 += b.w1;
            a.w2 += b.w2;
            a.last += b.last;
        },
    );
    let n = part.acc.count as f64;
    let (tail, bar, _) = fit_tail(
        k,
        opts.tail_power(),
        part.w1 / n,
        part.w2 / n,
        opts.tail_correction,
        part.last / n,
    );
    Ok(LaplaceSeries {
        side,
        theta,
        k,
        value: 1.0 + part.acc.mean + tail,
        stderr: part.acc.stderr(),
        tail,
        truncation_bar: bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `mu_theta(dz) = c1 e^{-theta z} u(z) dz` on `z >= 0`.
    Mu,
    /// `nu_theta(dz) = c2 e^{theta z} v(z) dz` on `z < 0`.
    Nu,
}

/// A boundary measure tabulated on a uniform quadrature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLaw {
    pub theta: f64,
    pub which: Boundary,
    /// Normalizer `c1` or `c2`.
    pub normalizer: f64,
    pub table: RenewalTable,
    /// Quadrature nodes `z` (nonnegative for `Mu`, nonpositive for `Nu`) and
    /// unnormalized integrand values.
    pub nodes: Vec<f64>,
    pub integrand: Vec<f64>,
}

impl BoundaryLaw {
    pub fn build(
        env: &EnvironmentLaw,
        theta: f64,
        which: Boundary,
        opts: SeriesOptions,
        streams: &StreamSpec,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta {theta} must be positive")));
        }
        // u grows at most linearly; cut where e^{-theta z}(2 + 2z) < cut
        let mut zmax = QUADRATURE_STEP;
        while (-theta * zmax).exp() * (2.0 + 2.0 * zmax) >= QUADRATURE_CUT {
            zmax += QUADRATURE_STEP;
        }
        let side = match which {
            Boundary::Mu => Side::U,
            Boundary::Nu => Side::V,
        };
        let pts = grid(side, zmax, QUADRATURE_STEP);
        let table = renewal_table(env, side, &pts, opts, streams)?;
        let mut nodes = Vec::new();
        let mut integrand = Vec::new();
        for &z in &pts {
            let f = (-theta * z.abs()).exp() * table.eval(z);
            nodes.push(z);
            integrand.push(f);
            if f < QUADRATURE_CUT {
                break;
            }
        }
        let mass = trapezoid(&nodes, &integrand);
        Ok(Self {
            theta,
            which,
            normalizer: 1.0 / mass,
            table,
            nodes,
            integrand,
        })
    }

    /// Unnormalized integral `∫ e^{-theta |z|} w(z) dz` by the trapezoid rule.
    pub fn raw_integral(&self) -> f64 {
        1.0 / self.normalizer
    }

    pub fn density(&self, z: f64) -> f64 {
        let inside = match self.which {
            Boundary::Mu => z >= 0.0,
            Boundary::Nu => z < 0.0,
        };
        if !inside {
            return 0.0;
        }
        self.normalizer * (-self.theta * z.abs()).exp() * self.table.eval(z)
    }

    /// `∫ g(z) law(dz)` by the trapezoid rule on the quadrature nodes.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let vals: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.integrand)
            .map(|(&z, &f)| g(z) * f)
            .collect();
        self.normalizer * trapezoid(&self.nodes, &vals)
    }

    pub fn total_mass(&self) -> f64 {
        self.expect(|_| 1.0)
    }
}

fn trapezoid(nodes: &[f64], vals: &[f64]) -> f64 {
    nodes
        .windows(2)
        .zip(vals.windows(2))
        .map(|(z, f)| 0.5 * (f[0] + f[1]) * (z[1] - z[0]).abs())
        .sum()
}
