use std::collections::BTreeMap;

use super::dataset::{DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::skeleton::SkeletonSequence;

pub const DEFAULT_FRAMES: usize = 120;

/// One P x K batch: entry indices into the dataset and their dense labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    pub entries: Vec<usize>,
    pub labels: Vec<usize>,
}

/// P distinct training identities, K clips each. Clips are drawn without
/// replacement when an identity has at least K of them.
pub fn pk_sample(index: &DatasetIndex, p: usize, k: usize, rng: &mut Rng) -> Result<PkBatch> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in index.entries().iter().enumerate() {
        if e.split == Split::Train {
            by_label.entry(e.label).or_default().push(i);
        }
    }
    if p == 0 || k == 0 {
        return Err(Error::Sampling(format!("P and K must be positive, got P={p} K={k}")));
    }
    if by_label.len() < p {
        return Err(Error::Sampling(format!(
            "P={p} identities requested but the training split has {}",
            by_label.len()
        )));
    }
    let groups: Vec<(usize, Vec<usize>)> = by_label.into_iter().collect();
    let mut batch = PkBatch {
        entries: Vec::with_capacity(p * k),
        labels: Vec::with_capacity(p * k),
    };
    for g in rng.sample_indices(groups.len(), p) {
        let (label, clips) = &groups[g];
        let picks: Vec<usize> = if clips.len() >= k {
            rng.sample_indices(clips.len(), k)
        } else {
            (0..k).map(|_| rng.below(clips.len())).collect()
        };
        for c in picks {
            batch.entries.push(clips[c]);
            batch.labels.push(*label);
        }
    }
    Ok(batch)
}

/// Frame indices for a clip of `frames` frames: a sorted random subset when
/// the clip is long enough, cyclic repetition otherwise.
pub fn frame_indices(frames: usize, target: usize, rng: &mut Rng) -> Vec<usize> {
    if frames >= target {
        let mut idx = rng.sample_indices(frames, target);
        idx.sort_unstable();
        idx
    } else {
        (0..target).map(|i| i % frames.max(1)).collect()
    }
}

pub fn sample_frames(seq: &SkeletonSequence, target: usize, rng: &mut Rng) -> SkeletonSequence {
    seq.select_frames(&frame_indices(seq.frame_count(), target, rng))
}
