//! Audio-visual-proprioceptive fusion for diffusion-policy manipulation on
//! synthetic pouring and latching tasks.

pub mod analysis;
pub mod autograd;
pub mod config;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod world;

pub use config::{RunConfig, TaskId};
pub use error::{Error, Result};
pub use fusion::FusionMode;
pub use pipeline::{NormStats, Observation};
pub use policy::Policy;
pub use world::{Episode, World, WorldState};
