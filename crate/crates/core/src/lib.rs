//! Critical spatial SIS/SIR epidemics on ℤ with village size `N`, their
//! branching-random-walk envelopes, couplings, likelihood ratios, exact
//! moment recursions and exit probabilities of the scaling limit.

pub mod error;
pub mod rng;
pub mod stats;

pub mod offspring;
pub mod envelope;
pub mod epidemic;
pub mod coupling;
pub mod rescale;
pub mod likelihood;
pub mod meanfield;
pub mod moments;
pub mod extent;
pub mod graphs;

pub use error::{Error, Result};
pub use rng::Key;
