//! Lifelong reinforcement learning with action sets that grow over time.
//!
//! The crate is organised around the pieces of a lifelong run:
//!
//! - [`lmdp`]: the lifelong MDP contract. A hidden latent action space,
//!   the registry of observed discrete actions, and the change schedule that
//!   grows the registry between episodes.
//! - [`env`]: concrete environments (continuous maze, tabular latent MDPs
//!   with exact kernels, and an n-gram recommender-style simulator).
//! - [`approx`]: Fourier features, small hand-differentiated networks,
//!   optimizers and finite-difference gradient checks.
//! - [`policy`]: the latent decision policy, the Boltzmann action selector,
//!   the inverse-dynamics encoder and the critic.
//! - [`adapt`]: variational adaptation of the selector and encoder after
//!   every change to the action set.
//! - [`algorithms`]: full lifelong runs for the structured learner and the
//!   two comparison baselines.
//! - [`verify`]: exact solvers and the sub-optimality bound certification.
//! - [`harness`]: experiment configuration, seeded multi-trial execution and
//!   curve aggregation.

pub mod adapt;
pub mod algorithms;
pub mod approx;
pub mod env;
pub mod error;
pub mod harness;
pub mod lmdp;
pub mod policy;
pub mod rng;
pub mod verify;

pub use error::{LabError, Result};
