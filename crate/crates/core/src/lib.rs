//! Small-noise diffusions started next to a repelling boundary.
//!
//! The crate computes the deterministic objects that describe how such a
//! diffusion leaves the boundary (the rescaled flow and its inverse, the
//! martingale limit law, branching-process transforms, scale and speed
//! functions) and simulates the diffusion itself to check those predictions
//! by Monte Carlo.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`.

pub mod branching;
pub mod error;
pub mod flow;
pub mod io;
pub mod limit_law;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod scale;
pub mod sde;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DiffusionModel = model::DiffusionModel<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type RescaledFlow = flow::RescaledFlow<f64>;
pub type WLaw = limit_law::WLaw<f64>;
pub type BranchingMechanism = branching::BranchingMechanism<f64>;
pub type TransformSolution = branching::TransformSolution<f64>;
pub type PathEnsemble = sde::PathEnsemble<f64>;
pub type SimSpec = sde::SimSpec<f64>;
pub type Scale<'a> = scale::Scale<'a, f64>;
