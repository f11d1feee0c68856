//! Accumulators and estimate records shared by every Monte Carlo routine.

use serde::{Deserialize, Serialize};

/// Streaming mean/variance (Welford), mergeable in a fixed order (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MeanAcc {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.count += other.count;
    }

    pub fn merged<'a>(parts: impl IntoIterator<Item = &'a MeanAcc>) -> MeanAcc {
        let mut acc = MeanAcc::new();
        for p in parts {
            acc.merge(p);
        }
        acc
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Running covariance of a pair, used for ratio estimators on shared draws.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairAcc {
    pub x: MeanAcc,
    pub y: MeanAcc,
    pub cxy: f64,
}

impl PairAcc {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        let dx = x - self.x.mean;
        self.x.push(x);
        self.y.push(y);
        // pre-update x mean, post-update y mean
        self.cxy += dx * (y - self.y.mean);
    }

    pub fn merge(&mut self, other: &PairAcc) {
        if other.x.count == 0 {
            return;
        }
        if self.x.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.x.count as f64, other.x.count as f64);
        let n = na + nb;
        let dx = other.x.mean - self.x.mean;
        let dy = other.y.mean - self.y.mean;
        self.cxy += other.cxy + dx * dy * na * nb / n;
        self.x.merge(&other.x);
        self.y.merge(&other.y);
    }

    pub fn covariance(&self) -> f64 {
        if self.x.count < 2 {
            0.0
        } else {
            self.cxy / (self.x.count - 1) as f64
        }
    }

    /// Ratio mean(x)/mean(y) with delta-method standard error.
    pub fn ratio(&self) -> (f64, f64) {
        let (mx, my) = (self.x.mean, self.y.mean);
        let r = mx / my;
        let n = self.x.count as f64;
        let var = (self.x.variance() - 2.0 * r * self.covariance() + r * r * self.y.variance())
            / (my * my * n);
        (r, var.max(0.0).sqrt())
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn add_sum(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Estimator family that produced an [`Estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    QuenchedCond,
    TiltedIs,
    /// Plain Monte Carlo average (walk functionals, renewal series).
    Direct,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::QuenchedCond => "quenched-cond",
            Method::TiltedIs => "tilted-is",
            Method::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Method::Naive),
            "quenched-cond" => Ok(Method::QuenchedCond),
            "tilted-is" => Ok(Method::TiltedIs),
            "direct" => Ok(Method::Direct),
            other => Err(format!(
                "unknown method `{other}` (expected naive, quenched-cond or tilted-is)"
            )),
        }
    }
}

/// A Monte Carlo output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub reps: u64,
    pub method: Method,
    pub elapsed_ms: f64,
}

impl Estimate {
    pub fn from_acc(acc: &MeanAcc, method: Method) -> Self {
        Self {
            value: acc.mean,
            stderr: acc.stderr(),
            reps: acc.count,
            method,
            elapsed_ms: 0.0,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            stderr: self.stderr * factor.abs(),
            ..self
        }
    }

    pub fn with_elapsed(self, started: std::time::Instant) -> Self {
        Self {
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            ..self
        }
    }

    /// |value - target| in units of stderr (infinite when stderr is zero and they differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.value - target;
        if d == 0.0 {
            0.0
        } else if self.stderr == 0.0 {
            f64::INFINITY
        } else {
            d / self.stderr
        }
    }
}

/// Kish effective sample size of a weight vector.
pub fn effective_sample_size(sum_w: f64, sum_w2: f64) -> f64 {
    if sum_w2 <= 0.0 {
        0.0
    } else {
        sum_w * sum_w / sum_w2
    }
}

/// Weighted quantile by sorting `(value, weight)` pairs; `q` in [0,1].
pub fn weighted_quantile(samples: &mut Vec<(f64, f64)>, q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    samples.retain(|&(_, w)| w > 0.0);
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let target = q * total;
    let mut acc = 0.0;
    for &(v, w) in samples.iter() {
        acc += w;
        if acc >= target {
            return v;
        }
    }
    samples.last().map(|s| s.0).unwrap_or(f64::NAN)
}

/// Total variation distance between two pmfs on a common support (missing tail = 0).
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let mut s = 0.0;
    for i in 0..n {
        let a = p.get(i).copied().unwrap_or(0.0);
        let b = q.get(i).copied().unwrap_or(0.0);
        s += (a - b).abs();
    }
    0.5 * s
}

/// `ln(sum exp(x_i))`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
