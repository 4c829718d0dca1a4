//! Joints relationship pyramid pooling and per-strip mapping.

mod head;
mod pyramid;

pub use head::{flatten_normalize, jrpp_pool, jrpp_pool_with, map_strips, Jrpm, JrpmOutput, StripHead};
pub use pyramid::{build_pyramid, default_groups, PoolMode, PyramidSpec, DEFAULT_SCALES, MAX_SCALE};
