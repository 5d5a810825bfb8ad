//! Localization of a fixed directional wireless emitter from angle-of-arrival
//! (AoA) measurements, and belief-space trajectory planning that steers the
//! robot to reduce estimation uncertainty while avoiding obstacles.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. Everything here is pure computation; file formats, the command
//! line and the batch runner live in the `aoa-nav` companion crate.
//!
//! Module map:
//!
//! * [`world`] - ground-truth 2D world: specular ray tracing, link states,
//!   noisy AoA measurements, robot kinematics.
//! * [`models`] - LOS and NLOS observation/transition models with Jacobians.
//! * [`ekf`] - generic EKF step and the analytic covariance-update gradients.
//! * [`planner`] - interior-point DDP over belief dynamics with chance
//!   constrained obstacle avoidance.
//! * [`identification`] - EKF localization runs on simple maps.
//! * [`mapping`] - wall clustering (variational Bayes GMM), line fitting,
//!   obstacle circle covering, ray/wall intersection.
//! * [`mission`] - the closed-loop mode-switching controller.
//! * [`bench`] - baselines, procedural maps and performance profiles.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bench;
pub mod ekf;
pub mod geometry;
pub mod identification;
pub mod mapping;
pub mod mission;
pub mod models;
pub mod planner;
pub mod world;

mod dual;
mod error;

pub use error::{Error, Result};
pub use geometry::Point;
