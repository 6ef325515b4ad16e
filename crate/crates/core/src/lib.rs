//! Linear response of long-time averages of chaotic maps.
//!
//! For a map `f(.; gamma)` with an SRB attractor and an observable `Phi`, this crate
//! estimates `d/dgamma` of the long-time average of `Phi` from a single trajectory as
//! the difference of two terms:
//!
//! * the shadowing contribution, from the bounded solution of the inhomogeneous
//!   tangent equation, found by non-intrusive shadowing over segments ([`shadow`]);
//! * the unstable contribution, from `u` renormalized second-order tangent solutions
//!   and a trace formula evaluated at segment interfaces ([`curvature`]).
//!
//! [`response::compute_response`] runs the whole pipeline; [`oracle`] provides an
//! independent finite-difference estimate and [`studies`] the convergence studies.

pub mod curvature;
pub mod error;
pub mod linalg;
pub mod maps;
pub mod model;
pub mod oracle;
pub mod orbit;
pub mod response;
pub mod shadow;
pub mod studies;
pub mod tangent;

pub use error::{Error, Result, Stage};
pub use model::{validate_system, MapSystem, Observable, ValidationReport};
pub use orbit::{generate_orbit, Orbit, OrbitConfig};
pub use response::{compute_response, replicate, ReplicateSummary, ResponseConfig, ResponseReport};
