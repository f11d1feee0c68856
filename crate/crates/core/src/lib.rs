//! Simulation and exact-computation toolkit for branching processes in a
//! random environment, focused on the weakly subcritical regime.

pub mod branching;
pub mod enumerate;
pub mod environment;
pub mod error;
pub mod harness;
pub mod offspring;
pub mod oracle;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod survival;
pub mod tilting;
pub mod walk;

pub use environment::{Atom, EnvironmentLaw};
pub use error::{Error, Result};
pub use offspring::OffspringLaw;
pub use rng::{BlockPlan, SimRng, StreamSpec};
pub use stats::{Estimate, Method};
pub use tilting::{solve_beta, StableNorm, TiltSolution};
