//! Spatio-temporal graph convolution backbone.

mod backbone;
mod block;
mod norm;
mod spatial;
mod temporal;

pub use backbone::{
    backbone_forward, Backbone, BackboneCache, BackboneConfig, DEFAULT_CHANNELS, DEFAULT_KT, DEFAULT_STRIDES,
    INPUT_CHANNELS,
};
pub use block::{GcnBlock, Residual};
pub use norm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use spatial::{spatial_graph_conv, spatial_graph_conv_with, SpatialConv};
pub use temporal::{output_frames, temporal_conv, temporal_conv_with, TemporalConv};
