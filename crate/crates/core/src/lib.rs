//! Simulation of the scalar stochastic delay equation
//!
//! ```text
//! dX(t) = X(t-1) dW(t),   X_0 = η ∈ C([-1, 0])
//! ```
//!
//! through its segment process `X_t(s) = X(t+s)`, `s ∈ [-1, 0]`, together
//! with estimators of its exponential growth rate, an asymptotic-coupling
//! experiment for the projected (sphere) process, and empirical diagnostics
//! of that process's invariant measure.
//!
//! * [`segment`]: grid segments, sup/L2/M2 norms, projection to the M2 sphere.
//! * [`noise`]: reproducible counter-based Brownian increments.
//! * [`integrator`]: unit-interval Euler–Maruyama and exponential-Euler steps.
//! * [`lyapunov`]: direct and ergodic-average growth-rate estimators.
//! * [`coupling`]: the switched feedback coupling and its statistics.
//! * [`measure`]: sphere samples, tightness and marginal-distance diagnostics.
//! * [`moments`]: second-moment checks against the Itô-isometry recursion.

pub mod coupling;
pub mod error;
pub mod initial;
pub mod integrator;
pub mod lyapunov;
pub mod measure;
pub mod moments;
pub mod noise;
pub mod segment;
pub mod stats;

pub use error::{Result, SimError};
pub use initial::InitialCondition;
pub use integrator::{advance_coupled_unit, advance_unit, advance_unit_renormalized, PathState, Trajectory};
pub use noise::{draw_noise, stream_id, NoiseBlock, NoiseStream};
pub use segment::{Segment, UnitSegment};
