//! Learning robust output control barrier functions from expert
//! demonstrations, checking their validity conditions, and running the
//! resulting min-norm safety filter on a simulated lane-keeping vehicle.
//!
//! Module map:
//!
//! - [`model`]: states, uncertainty-bounded system and measurement models, vehicle models
//! - [`barrier`]: random-Fourier-feature barrier and the robust constraint `q`
//! - [`datasets`]: boundary detection, buffering and covering radii
//! - [`learning`]: hinge-relaxed convex training
//! - [`verification`]: Lipschitz bounds and validity checks
//! - [`controller`]: closed-form min-norm safe input and a grid oracle
//! - [`sim`]: track, expert, rollouts and the comparison metric
//! - [`pipeline`]: the end-to-end run used by the command line tool

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod config;
pub mod controller;
pub mod datasets;
pub mod error;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod verification;

pub use error::{Error, Result};
