//! Joint layouts, skeleton clips and the partitioned gait graph.

mod graph;
pub mod io;
mod layout;
mod sequence;

pub use graph::{normalize_adjacency, partition, PartitionedGraph, DEFAULT_ALPHA, PARTITION_SUBSETS};
pub use layout::{
    build_layout, build_layout_named, JointLayout, LayoutName, KINECT20_TO_16, KINECT2D16_JOINTS,
    OPENPOSE18_JOINTS,
};
pub use sequence::{normalize_sequence, Condition, SkeletonSequence, CONFIDENCE_THRESHOLD};
