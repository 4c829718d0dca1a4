use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayoutName {
    OpenPose18,
    Kinect2d16,
}

impl LayoutName {
    pub const ALL: [LayoutName; 2] = [LayoutName::OpenPose18, LayoutName::Kinect2d16];

    pub fn as_str(self) -> &'static str {
        match self {
            LayoutName::OpenPose18 => "openpose18",
            LayoutName::Kinect2d16 => "kinect2d16",
        }
    }
}

impl fmt::Display for LayoutName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayoutName::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown joint layout `{s}`; supported layouts: openpose18, kinect2d16"
                ))
            })
    }
}

/// OpenPose COCO-18 joint order.
pub const OPENPOSE18_JOINTS: [&str; 18] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

const OPENPOSE18_BONES: [(usize, usize); 17] = [
    (4, 3),
    (3, 2),
    (7, 6),
    (6, 5),
    (13, 12),
    (12, 11),
    (10, 9),
    (9, 8),
    (11, 5),
    (8, 2),
    (5, 1),
    (2, 1),
    (0, 1),
    (15, 0),
    (14, 0),
    (17, 15),
    (16, 14),
];

/// Kinect V1 joints kept after dropping both hands and both feet.
pub const KINECT2D16_JOINTS: [&str; 16] = [
    "hip_center",
    "spine",
    "shoulder_center",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

/// For each kept joint, its index in the 20-joint Kinect V1 skeleton.
/// Dropped: 7 hand_left, 11 hand_right, 15 foot_left, 19 foot_right.
pub const KINECT20_TO_16: [usize; 16] = [0, 1, 2, 3, 4, 5, 6, 8, 9, 10, 12, 13, 14, 16, 17, 18];

const KINECT2D16_BONES: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (4, 5),
    (5, 6),
    (2, 7),
    (7, 8),
    (8, 9),
    (0, 10),
    (10, 11),
    (11, 12),
    (0, 13),
    (13, 14),
    (14, 15),
];

#[derive(Clone, Debug, PartialEq)]
pub struct JointLayout {
    name: String,
    kind: Option<LayoutName>,
    joint_names: Vec<String>,
    bones: Vec<(usize, usize)>,
    center_joint: usize,
    /// Joints whose mean is the far end of the torso (mid-hip).
    torso_far: Vec<usize>,
}

impl JointLayout {
    /// Validating constructor for custom layouts.
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        bones: Vec<(usize, usize)>,
        center_joint: usize,
        torso_far: Vec<usize>,
    ) -> Result<Self> {
        let v = joint_names.len();
        let name = name.into();
        if v == 0 {
            return Err(Error::Construction(format!("layout `{name}` has no joints")));
        }
        if center_joint >= v || torso_far.iter().any(|&j| j >= v) {
            return Err(Error::Construction(format!(
                "layout `{name}` references a joint outside 0..{v}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &bones {
            if a >= v || b >= v {
                return Err(Error::Construction(format!(
                    "bone ({a},{b}) outside 0..{v} in layout `{name}`"
                )));
            }
            if a == b {
                return Err(Error::Construction(format!("self-loop bone ({a},{a})")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Construction(format!("duplicate bone ({a},{b})")));
            }
        }
        Ok(Self {
            name,
            kind: None,
            joint_names,
            bones,
            center_joint,
            torso_far,
        })
    }

    pub fn openpose18() -> Self {
        build_layout(LayoutName::OpenPose18)
    }

    pub fn kinect2d16() -> Self {
        build_layout(LayoutName::Kinect2d16)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The built-in layout this was created from, if any.
    pub fn kind(&self) -> Option<LayoutName> {
        self.kind
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_name(&self, j: usize) -> &str {
        &self.joint_names[j]
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn center_joint(&self) -> usize {
        self.center_joint
    }

    pub fn torso_far(&self) -> &[usize] {
        &self.torso_far
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joint_count()];
        for &(a, b) in &self.bones {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first hop distance of every joint to `from`; `None` when unreachable.
    pub fn hop_distances(&self, from: usize) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.joint_count()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued joints have a distance");
            for &w in &adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances(0).iter().all(Option::is_some)
    }
}

pub fn build_layout(name: LayoutName) -> JointLayout {
    let (joints, bones, center, torso): (&[&str], &[(usize, usize)], usize, Vec<usize>) = match name {
        LayoutName::OpenPose18 => (&OPENPOSE18_JOINTS, &OPENPOSE18_BONES, 1, vec![8, 11]),
        LayoutName::Kinect2d16 => (&KINECT2D16_JOINTS, &KINECT2D16_BONES, 2, vec![0]),
    };
    let mut layout = JointLayout::new(
        name.as_str(),
        joints.iter().map(|s| s.to_string()).collect(),
        bones.to_vec(),
        center,
        torso,
    )
    .expect("built-in layouts are valid");
    layout.kind = Some(name);
    layout
}

/// [`build_layout`] from a configuration string.
pub fn build_layout_named(name: &str) -> Result<JointLayout> {
    Ok(build_layout(name.parse()?))
}
