//! Dataset indexing, PK batches, frame sampling and synthetic walkers.

mod dataset;
mod sampling;
mod synth;

pub use dataset::{
    load_dataset, parse_condition_seq, ClipEntry, ClipMeta, ClipSource, DataFormat, DatasetIndex, Protocol, Split,
    CASIAB_FIRST_TEST_SUBJECT, CASIAB_VIEWS, KINECT_FOLDS, KINECT_SUBJECTS,
};
pub use sampling::{frame_indices, pk_sample, sample_frames, PkBatch, DEFAULT_FRAMES};
pub use synth::{clip_id, synth_walker, SynthConfig, WalkerParams};
