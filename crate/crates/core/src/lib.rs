//! Spatiotemporal transformer encoders and the visuo-tactile grasping stack
//! built on them: a minimal autodiff tensor engine, two attention
//! factorizations over image sequences, fusion heads for grasp-outcome and
//! fruit classification, slip detection, safe-force-threshold inference, and
//! attention-rollout analysis. Everything runs on CPU in f32 and is
//! deterministic for a fixed seed.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod force;
pub mod heads;
pub mod imageio;
pub mod models;
pub mod params;
pub mod rollout;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};
pub use params::{Bindings, ParamStore};
pub use tensor::{Tape, Tensor, TensorId};
