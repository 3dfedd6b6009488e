//! Numerical kernels: ODE integration, quadrature, interpolation and roots.

pub mod interp;
pub mod ode;
pub mod quad;
pub mod roots;

pub use interp::MonotoneCubic;
pub use ode::{integrate, integrate_through, OdeOptions, OdeOutcome, OdeStats};
pub use quad::{conjugacy_integral, log_integrate, OriginExpansion, QuadOptions, QuadResult};
