//! Simulation and verification of a coupled heat, reaction and phase-field system
//! with Arrhenius kinetics and latent-heat coupling.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod model;
pub mod solver;
pub mod stability;
pub mod verification;

pub use equilibrium::{build_equilibrium, EquilibriumState};
pub use error::{Error, Result};
pub use grid::{Field, Grid, State};
pub use model::{ConductivityLaw, Extent, HeatSource, ModelParams, SourceSpec};
pub use solver::{run, Scheme, StepControls, Trajectory};
pub use stability::{DecayFit, PerturbationState};
pub use verification::CheckReport;
