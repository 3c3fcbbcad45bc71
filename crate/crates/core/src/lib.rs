//! Slow-fast systems with singular basins: models, averaging and adiabatic
//! reduction, equilibria and stable manifolds, basin classification, Monte
//! Carlo volume scaling, and the figure presets built on top of them.

pub mod basins;
pub mod equilibria;
pub mod experiments;
pub mod io;
pub mod models;
pub mod ode;
pub mod reduction;
pub mod scaling;

pub use basins::{BasinLabel, Classifier, McEstimate, Region};
pub use equilibria::{Equilibrium, Stability};
pub use models::{Model, ModelTag, NetworkParams, PitchforkParams, RotatorParams, SlowFastSystem, TanhParams};
pub use reduction::ReducedSystem;
