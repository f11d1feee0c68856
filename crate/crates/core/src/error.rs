use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("environment is not subcritical: E[X] = {mean_log:.6e} >= 0")]
    NotSubcritical { mean_log: f64 },

    #[error("no root of E[X e^(bX)] in (0,1): phi(0) = {phi0:.6e}, phi(1) = {phi1:.6e}")]
    NoRoot { phi0: f64, phi1: f64 },

    #[error("enumeration of {size} sequences exceeds budget {budget}")]
    SizeLimit { size: f64, budget: f64 },

    #[error("truncated tail mass {mass:.3e} exceeds {limit:.1e}; raise zmax")]
    TailMass { mass: f64, limit: f64 },

    #[error("conditioned sampler acceptance rate {rate:.3e} below {limit:.1e}")]
    Timeout { rate: f64, limit: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}
