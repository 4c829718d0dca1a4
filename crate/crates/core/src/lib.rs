//! Skeleton-based gait recognition with gait graph convolution, joints
//! relationship pyramid mapping and a triplet/arcface fusion loss.

pub mod datapipe;
pub mod error;
pub mod evalproto;
pub mod exec;
pub mod gcn;
pub mod jrpm;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod skeleton;

pub use error::{Error, Result};
pub use exec::Execution;
