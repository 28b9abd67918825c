//! Filtered semi-discrete finite-difference schemes for nonlinear
//! piezoelectric beams under boundary and voltage feedback.

pub mod analysis;
pub mod banded;
pub mod controllers;
pub mod energy;
pub mod error;
pub mod integrator;
pub mod models;
pub mod oracles;
pub mod params;
pub mod scenario;
pub mod state;
pub mod stencils;

pub use error::{Error, Result};
pub use params::{Coefficients, GridSpec, MaterialParams, NondimScales};
pub use controllers::{compute_controls, ControlInput, ControlLaw, ControlMode, ControllerGains};
pub use models::{ModelOptions, SemiDiscreteSystem};
pub use state::{BeamState, Field, InitialCondition, ModelKind};
