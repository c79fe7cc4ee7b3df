//! Simulator and verification toolkit for the n-centre problem of celestial
//! mechanics: a unit-mass particle moving in the superposed Coulomb/Kepler
//! fields of `n` fixed centres.
//!
//! The crate computes scattering data (asymptotic momenta, time delay),
//! conserved quantities (energy, angular momenta, the two-centre separation
//! constant, exponentially damped scattering integrals), and symbolic-dynamics
//! word censuses used to estimate topological entropy, at desk scale.
//!
//! Layout:
//! - [`model`] — centre configurations, phase states, potential / force / energy
//! - [`kepler`] — closed-form machinery for the reference Coulomb problem
//! - [`integrator`] — adaptive propagation with near-collision regularization
//! - [`scattering`] — orbit classification, asymptotic momenta, time delay
//! - [`integrals`] — damped scattering integrals, Jacobian rank, Poisson brackets
//! - [`entropy`] — close-approach itineraries and word-count growth
//! - [`beam`] — beam parameterization of initial conditions on an energy shell

pub mod beam;
pub mod entropy;
pub mod integrals;
pub mod integrator;
pub mod kepler;
pub mod model;
pub mod scattering;

pub(crate) mod util {
    /// Shortest round-trip decimal form; keeps text outputs exact and stable.
    pub fn fmt_f64(x: f64) -> String {
        format!("{x:?}")
    }
}
