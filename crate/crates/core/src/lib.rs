//! Dynamic friction identification for actuated rigid-body joints.
//!
//! The library learns a probabilistic state-space model — lumped inertial
//! parameters, a neural friction torque, and neural latent dynamics — from
//! noisy position/torque sequences via EM with sequential Monte Carlo, and
//! benchmarks it against classical static and dynamic friction models
//! (Coulomb+viscous, Stribeck, LuGre, GMS, feedforward/recurrent nets) on
//! synthetic ground-truth plants.

pub mod base_params;
pub mod classical;
pub mod config;
pub mod dataset;
pub mod doe;
pub mod em;
pub mod error;
pub mod eval;
pub mod friction;
pub mod modelfile;
pub mod neural;
pub mod plant;
pub mod pssm;
pub mod rnn;
pub mod sim;
pub mod smc;
pub mod ssm;
pub mod svg;
pub mod util;

pub use error::{Error, Result};
