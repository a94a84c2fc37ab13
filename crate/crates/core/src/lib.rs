//! Distributionally robust LQR for linear systems with multiplicative noise.
//!
//! The crate builds moment ambiguity sets from disturbance samples, computes
//! nominal and robust state-feedback gains (value iteration and LMI
//! synthesis), and certifies mean-square stability of the closed loop.

pub mod ambiguity;
pub mod drsynth;
pub mod error;
pub mod experiment;
pub mod matcore;
pub mod riccati;
pub mod sdpcore;
pub mod stability;
pub mod sysmodel;

pub use error::{Error, Result};
pub use matcore::SymMatrix;
pub use sysmodel::{CostWeights, DisturbanceMoments, MultNoiseSystem};
