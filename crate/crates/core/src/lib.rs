//! Demonstration-guided actor-critic visual tracking, pure core.
//!
//! Box geometry, the tracking MDP, scripted experts, a small policy-value
//! network with hand-written reverse-mode gradients, the imitation and
//! reinforcement updates, the curriculum controller, the two test-time
//! trackers and one-pass evaluation metrics. Nothing here touches the file
//! system or spawns threads; see the `demotrack` crate for that.

#![cfg_attr(not(test), no_std)]
// Index loops mirror the tensor layouts and read better than iterator chains here.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod error;
pub mod evalkit;
pub mod expert;
pub mod geometry;
pub mod mdp;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synthworld;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{ActionDelta, BBox};
