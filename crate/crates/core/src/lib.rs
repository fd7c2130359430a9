//! Training engine for legged locomotion with adversarial motion priors.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: robot description, physics state and the observation layouts.
//! - [`gait`]: periodic gait clock and Von Mises phase indicators.
//! - [`rewards`]: command, periodic, swing-shaping and regularization terms.
//! - [`netcore`]: dense networks with hand-written reverse-mode gradients.
//! - [`amp`]: least-squares discriminator, gradient penalty, imitation reward.
//! - [`sim`]: planar biped dynamics, contact, episodes, domain randomization.
//! - [`mocap`]: reference clip format, resampling and a synthetic gait generator.
//! - [`ppo`]: Gaussian policy, GAE, clipped surrogate and the training loop.
//! - [`config`]: the single structured config file covering all of the above.

// Negated comparisons are how validation rejects NaN alongside out-of-range
// values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod amp;
pub mod config;
pub mod error;
pub mod gait;
pub mod mocap;
pub mod model;
pub mod netcore;
pub mod ppo;
pub mod rewards;
pub mod sim;

pub use error::{Error, Result};
