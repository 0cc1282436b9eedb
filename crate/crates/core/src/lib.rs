//! Mean-field model of competitive product diffusion on a social network and
//! optimal timing of two seller incentive programs: referral rewards and
//! direct incentives.
//!
//! * [`model`]: degree-class network, state, controls and the drift.
//! * [`integrate`]: fixed-step trajectories and the profit objective.

pub mod abm;
pub mod csvfmt;
pub mod error;
pub mod gradient;
pub mod integrate;
pub mod model;
pub mod optimize;
pub mod pmp;
pub mod scenario;
pub mod seed;
pub mod validation;

pub use error::{Error, Result};
