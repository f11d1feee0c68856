//! Finite-atom environment laws and their moment reports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;
use crate::tilting::phi;

/// Tolerance on the weight total accepted when building an environment.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub law: OffspringLaw,
}

/// Distribution of the random offspring law `Q`: finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvSpec", into = "EnvSpec")]
pub struct EnvironmentLaw {
    atoms: Vec<Atom>,
    log_means: Vec<f64>,
    cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnvSpec {
    atoms: Vec<Atom>,
}

impl TryFrom<EnvSpec> for EnvironmentLaw {
    type Error = Error;
    fn try_from(spec: EnvSpec) -> Result<Self> {
        EnvironmentLaw::new(spec.atoms)
    }
}

impl From<EnvironmentLaw> for EnvSpec {
    fn from(env: EnvironmentLaw) -> Self {
        EnvSpec { atoms: env.atoms }
    }
}

impl EnvironmentLaw {
    /// Weights must be positive and sum to 1 within [`WEIGHT_SUM_TOLERANCE`];
    /// they are renormalized exactly.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidEnvironment("no atoms".into()));
        }
        if atoms.iter().any(|a| !(a.weight.is_finite() && a.weight > 0.0)) {
            return Err(Error::InvalidEnvironment("atom weights must be positive".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidEnvironment(format!(
                "atom weights sum to {total}, not 1"
            )));
        }
        let atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|a| Atom {
                weight: a.weight / total,
                law: a.law,
            })
            .collect();
        let log_means = atoms.iter().map(|a| a.law.log_mean()).collect();
        let mut cdf = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.weight;
            cdf.push(acc);
        }
        Ok(Self {
            atoms,
            log_means,
            cdf,
        })
    }

    pub fn single(law: OffspringLaw) -> Self {
        Self::new(vec![Atom { weight: 1.0, law }]).expect("single atom is valid")
    }

    /// Atoms with geometric laws of the given log-means.
    pub fn geometric(weights: &[f64], log_means: &[f64]) -> Result<Self> {
        if weights.len() != log_means.len() {
            return Err(Error::InvalidEnvironment("weights and log-means differ in length".into()));
        }
        let atoms = weights
            .iter()
            .zip(log_means)
            .map(|(&w, &x)| {
                Ok(Atom {
                    weight: w,
                    law: OffspringLaw::geometric_with_log_mean(x)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("environment json: {e}")))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    /// Same atom laws, new weights.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.atoms.len() {
            return Err(Error::InvalidEnvironment("weight vector has wrong length".into()));
        }
        Self::new(
            self.atoms
                .iter()
                .zip(weights)
                .map(|(a, &w)| Atom {
                    weight: w,
                    law: a.law.clone(),
                })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn law(&self, i: usize) -> &OffspringLaw {
        &self.atoms[i].law
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.atoms[i].weight
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    /// `X_i = log m(q_i)` per atom.
    pub fn log_means(&self) -> &[f64] {
        &self.log_means
    }

    pub fn mean_log(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.log_means)
            .map(|(a, x)| a.weight * x)
            .sum()
    }

    pub fn variance_log(&self) -> f64 {
        let m = self.mean_log();
        self.atoms
            .iter()
            .zip(&self.log_means)
            .map(|(a, x)| a.weight * (x - m).powi(2))
            .sum()
    }

    /// `E[m(Q)]`.
    pub fn annealed_mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.law.mean()).sum()
    }

    pub fn all_linear_fractional(&self) -> bool {
        self.atoms.iter().all(|a| a.law.is_linear_fractional())
    }

    pub fn all_finite_support(&self) -> bool {
        self.atoms.iter().all(|a| a.law.has_finite_support())
    }

    #[inline]
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.cdf.len() == 1 {
            return 0;
        }
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    /// `n` i.i.d. atom indices.
    pub fn sample_environment<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.sample_index(rng)).collect()
    }

    /// Whether the log-means live on a lattice `a + hZ`.
    ///
    /// Distinct values are tested for pairwise commensurable differences by
    /// continued-fraction approximation with denominators up to 10^4.
    pub fn is_lattice(&self) -> bool {
        let mut xs: Vec<f64> = self.log_means.clone();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        if xs.len() <= 2 {
            return true;
        }
        let d0 = xs[1] - xs[0];
        xs[2..].iter().all(|&x| is_rational((x - xs[0]) / d0))
    }

    /// Moments of every atom at truncation level `a`.
    pub fn moment_report(&self, a: u64) -> Result<MomentReport> {
        let atoms = self
            .atoms
            .iter()
            .zip(&self.log_means)
            .map(|(at, &x)| {
                Ok(AtomMoments {
                    weight: at.weight,
                    x,
                    mean: at.law.mean(),
                    eta: at.law.eta(),
                    zeta: at.law.zeta(a)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentReport {
            a,
            atoms,
            mean_x: self.mean_log(),
            phi_at_0: phi(self, 0.0),
            phi_at_1: phi(self, 1.0),
        })
    }

    /// Feasibility of the tilt equation and finiteness of the ζ moment.
    pub fn assumption_report(&self, a: u64, alpha: f64) -> Result<AssumptionReport> {
        let moments = self.moment_report(a)?;
        let has_positive_atom = self.log_means.iter().any(|&x| x > 0.0);
        let has_negative_atom = self.log_means.iter().any(|&x| x < 0.0);
        let a1_feasible = moments.phi_at_0 < 0.0 && moments.phi_at_1 > 0.0;
        let a1_note = if a1_feasible {
            None
        } else if moments.phi_at_0 >= 0.0 {
            Some(format!(
                "E[X] = {} is not negative; no subcritical tilt",
                moments.phi_at_0
            ))
        } else {
            Some(format!(
                "phi(1) = {} <= 0: no sign change on (0,1)",
                moments.phi_at_1
            ))
        };
        let sign_note = match (has_positive_atom, has_negative_atom) {
            (true, true) => None,
            _ => Some("log-means do not take both signs".to_string()),
        };
        Ok(AssumptionReport {
            alpha,
            a1_feasible,
            a1_note,
            sign_note,
            // finite support of Q makes every moment of log+ zeta finite
            a3_finite: moments.atoms.iter().all(|m| m.zeta.is_finite()),
            lattice: self.is_lattice(),
            moments,
        })
    }
}

fn is_rational(r: f64) -> bool {
    // continued fraction: rational iff a convergent p/q with q <= 1e4 hits r
    let (mut h0, mut h1) = (0.0_f64, 1.0_f64);
    let (mut k0, mut k1) = (1.0_f64, 0.0_f64);
    let mut x = r;
    for _ in 0..40 {
        let a = x.floor();
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > 1e4 {
            return false;
        }
        if (h2 / k2 - r).abs() <= 1e-9 * r.abs().max(1.0) {
            return true;
        }
        let frac = x - a;
        if frac.abs() < 1e-12 {
            return true;
        }
        x = 1.0 / frac;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomMoments {
    pub weight: f64,
    pub x: f64,
    pub mean: f64,
    pub eta: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub a: u64,
    pub atoms: Vec<AtomMoments>,
    pub mean_x: f64,
    /// `E[X]`.
    pub phi_at_0: f64,
    /// `E[X e^X]`.
    pub phi_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub alpha: f64,
    pub a1_feasible: bool,
    pub a1_note: Option<String>,
    pub sign_note: Option<String>,
    pub a3_finite: bool,
    pub lattice: bool,
    pub moments: MomentReport,
}
