use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::skeleton::{JointLayout, LayoutName};

pub const MAX_SCALE: usize = 6;
pub const DEFAULT_SCALES: [usize; 3] = [1, 2, 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolMode {
    /// One `[J, T'']` kernel per strip, shared across channels.
    #[default]
    LearnedKernel,
    /// Mean plus max over the strip's frames and joints.
    MeanPlusMax,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::LearnedKernel => "learned_kernel",
            PoolMode::MeanPlusMax => "mean_plus_max",
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned_kernel" => Ok(PoolMode::LearnedKernel),
            "mean_plus_max" => Ok(PoolMode::MeanPlusMax),
            other => Err(Error::Config(format!(
                "unknown pool mode `{other}` (expected learned_kernel or mean_plus_max)"
            ))),
        }
    }
}

type Table = [&'static [usize]];

const OPENPOSE18_G2: &Table = &[&[0, 1, 2, 3, 4, 5, 6, 7, 14, 15, 16, 17], &[8, 9, 10, 11, 12, 13]];
const OPENPOSE18_G3: &Table = &[&[5, 6, 7, 8, 9, 10], &[2, 3, 4, 11, 12, 13], &[0, 1, 14, 15, 16, 17]];
const OPENPOSE18_G4: &Table = &[&[0, 1, 14, 15, 16, 17], &[2, 3, 4], &[5, 6, 7], &[8, 9, 10], &[11, 12, 13]];
const OPENPOSE18_G5: &Table = &[
    &[2, 3],
    &[3, 4],
    &[5, 6],
    &[6, 7],
    &[8, 9],
    &[9, 10],
    &[11, 12],
    &[12, 13],
    &[0, 14, 15, 16, 17],
    &[1],
    &[2, 8],
    &[5, 11],
];

// kinect2d16: 0 hip centre, 1 spine, 2 shoulder centre, 3 head, 4-6 left arm,
// 7-9 right arm, 10-12 left leg, 13-15 right leg
const KINECT16_G2: &Table = &[&[1, 2, 3, 4, 5, 6, 7, 8, 9], &[0, 10, 11, 12, 13, 14, 15]];
const KINECT16_G3: &Table = &[&[4, 5, 6, 13, 14, 15], &[7, 8, 9, 10, 11, 12], &[0, 1, 2, 3]];
const KINECT16_G4: &Table = &[&[0, 1, 2, 3], &[7, 8, 9], &[4, 5, 6], &[13, 14, 15], &[10, 11, 12]];
const KINECT16_G5: &Table = &[
    &[7, 8],
    &[8, 9],
    &[4, 5],
    &[5, 6],
    &[13, 14],
    &[14, 15],
    &[10, 11],
    &[11, 12],
    &[2, 3],
    &[0, 1],
    &[7, 13],
    &[4, 10],
];

/// Joint groups of one scale for a built-in layout.
pub fn default_groups(kind: LayoutName, scale: usize) -> Result<Vec<Vec<usize>>> {
    let joints = match kind {
        LayoutName::OpenPose18 => 18,
        LayoutName::Kinect2d16 => 16,
    };
    let table: &Table = match (kind, scale) {
        (_, 1) => return Ok(vec![(0..joints).collect()]),
        (_, 6) => return Ok((0..joints).map(|j| vec![j]).collect()),
        (LayoutName::OpenPose18, 2) => OPENPOSE18_G2,
        (LayoutName::OpenPose18, 3) => OPENPOSE18_G3,
        (LayoutName::OpenPose18, 4) => OPENPOSE18_G4,
        (LayoutName::OpenPose18, 5) => OPENPOSE18_G5,
        (LayoutName::Kinect2d16, 2) => KINECT16_G2,
        (LayoutName::Kinect2d16, 3) => KINECT16_G3,
        (LayoutName::Kinect2d16, 4) => KINECT16_G4,
        (LayoutName::Kinect2d16, 5) => KINECT16_G5,
        (_, s) => return Err(Error::Config(format!("pyramid scale {s} is outside 1..={MAX_SCALE}"))),
    };
    Ok(table.iter().map(|g| g.to_vec()).collect())
}

/// Scales and joint groups of the pyramid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidSpec {
    joints: usize,
    scales: Vec<usize>,
    groups: Vec<Vec<Vec<usize>>>,
    pool_mode: PoolMode,
}

impl PyramidSpec {
    /// `groups[i]` belongs to `scales[i]`.
    pub fn new(joints: usize, scales: Vec<usize>, groups: Vec<Vec<Vec<usize>>>, pool_mode: PoolMode) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("pyramid needs at least one scale".into()));
        }
        if scales.len() != groups.len() {
            return Err(Error::Spec(format!(
                "{} scales but {} group tables",
                scales.len(),
                groups.len()
            )));
        }
        for (s, table) in scales.iter().zip(&groups) {
            if !(1..=MAX_SCALE).contains(s) {
                return Err(Error::Config(format!("pyramid scale {s} is outside 1..={MAX_SCALE}")));
            }
            if scales.iter().filter(|x| *x == s).count() > 1 {
                return Err(Error::Config(format!("pyramid scale {s} listed twice")));
            }
            if table.is_empty() {
                return Err(Error::Spec(format!("scale {s} has no groups")));
            }
            let mut covered = vec![false; joints];
            for g in table {
                if g.is_empty() {
                    return Err(Error::Spec(format!("scale {s} has an empty group")));
                }
                for &j in g {
                    if j >= joints {
                        return Err(Error::Spec(format!(
                            "scale {s} group {g:?} references joint {j}, layout has {joints}"
                        )));
                    }
                    covered[j] = true;
                }
            }
            if let Some(j) = covered.iter().position(|c| !c) {
                return Err(Error::Spec(format!("scale {s} does not cover joint {j}")));
            }
        }
        Ok(Self {
            joints,
            scales,
            groups,
            pool_mode,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn pool_mode(&self) -> PoolMode {
        self.pool_mode
    }

    pub fn with_pool_mode(mut self, mode: PoolMode) -> Self {
        self.pool_mode = mode;
        self
    }

    /// Groups of a selected scale.
    pub fn groups(&self, scale: usize) -> Option<&[Vec<usize>]> {
        self.scales
            .iter()
            .position(|&s| s == scale)
            .map(|i| self.groups[i].as_slice())
    }

    /// Every strip in order: scales as listed, groups within a scale as listed.
    pub fn strips(&self) -> impl Iterator<Item = &[usize]> {
        self.groups.iter().flatten().map(Vec::as_slice)
    }

    /// `B`, the total strip count.
    pub fn strip_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Grouping tables of a built-in layout for the given scales.
pub fn build_pyramid(layout: &JointLayout, scales: &[usize]) -> Result<PyramidSpec> {
    let kind = layout.kind().ok_or_else(|| {
        Error::Config(format!(
            "layout `{}` has no built-in pyramid tables; supply the groups explicitly",
            layout.name()
        ))
    })?;
    let groups = scales
        .iter()
        .map(|&s| default_groups(kind, s))
        .collect::<Result<Vec<_>>>()?;
    PyramidSpec::new(layout.joint_count(), scales.to_vec(), groups, PoolMode::default())
}
