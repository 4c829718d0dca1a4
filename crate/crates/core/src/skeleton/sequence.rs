use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::layout::JointLayout;
use crate::error::{Error, Result};

/// Joints below this confidence are treated as missing.
pub const CONFIDENCE_THRESHOLD: f64 = 0.1;

/// Walking condition of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Nm,
    Bg,
    Cl,
    Unknown,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Nm, Condition::Bg, Condition::Cl, Condition::Unknown];

    pub fn code(self) -> u8 {
        match self {
            Condition::Nm => 0,
            Condition::Bg => 1,
            Condition::Cl => 2,
            Condition::Unknown => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Condition::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Nm => "NM",
            Condition::Bg => "BG",
            Condition::Cl => "CL",
            Condition::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nm" => Ok(Condition::Nm),
            "bg" => Ok(Condition::Bg),
            "cl" => Ok(Condition::Cl),
            "unknown" => Ok(Condition::Unknown),
            _ => Err(Error::Config(format!("unknown walking condition `{s}`"))),
        }
    }
}

/// One clip of 2-D joints.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    layout: Arc<JointLayout>,
    frames: usize,
    /// `frames x joints x 2`
    coords: Vec<f64>,
    /// `frames x joints`
    confidence: Vec<f64>,
    pub identity: String,
    pub view_deg: i32,
    pub condition: Condition,
}

impl SkeletonSequence {
    pub fn new(
        layout: Arc<JointLayout>,
        coords: Vec<f64>,
        confidence: Vec<f64>,
        identity: impl Into<String>,
        view_deg: i32,
        condition: Condition,
    ) -> Result<Self> {
        let v = layout.joint_count();
        if confidence.is_empty() || confidence.len() % v != 0 {
            return Err(Error::Dimension(format!(
                "{} confidences do not form whole frames of {v} joints",
                confidence.len()
            )));
        }
        let frames = confidence.len() / v;
        if coords.len() != frames * v * 2 {
            return Err(Error::Dimension(format!(
                "expected {} coordinates for {frames} frames, got {}",
                frames * v * 2,
                coords.len()
            )));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("confidence outside [0, 1]".into()));
        }
        Ok(Self {
            layout,
            frames,
            coords,
            confidence,
            identity: identity.into(),
            view_deg,
            condition,
        })
    }

    /// Fully confident sequence.
    pub fn from_coords(
        layout: Arc<JointLayout>,
        coords: Vec<f64>,
        identity: impl Into<String>,
        view_deg: i32,
        condition: Condition,
    ) -> Result<Self> {
        let n = coords.len() / 2;
        Self::new(layout, coords, vec![1.0; n], identity, view_deg, condition)
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        &self.layout
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.layout.joint_count()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 2] {
        let o = (t * self.joint_count() + j) * 2;
        [self.coords[o], self.coords[o + 1]]
    }

    pub fn joint_confidence(&self, t: usize, j: usize) -> f64 {
        self.confidence[t * self.joint_count() + j]
    }

    /// New sequence made of the given frames, in the given order.
    pub fn select_frames(&self, indices: &[usize]) -> Self {
        let v = self.joint_count();
        let mut coords = Vec::with_capacity(indices.len() * v * 2);
        let mut confidence = Vec::with_capacity(indices.len() * v);
        for &t in indices {
            coords.extend_from_slice(&self.coords[t * v * 2..(t + 1) * v * 2]);
            confidence.extend_from_slice(&self.confidence[t * v..(t + 1) * v]);
        }
        Self {
            layout: self.layout.clone(),
            frames: indices.len(),
            coords,
            confidence,
            identity: self.identity.clone(),
            view_deg: self.view_deg,
            condition: self.condition,
        }
    }

    /// Channel-major model input: `2 x frames x joints` (x plane, then y plane).
    pub fn to_channels(&self) -> Vec<f64> {
        let (t, v) = (self.frames, self.joint_count());
        let mut out = vec![0.0; 2 * t * v];
        for f in 0..t {
            for j in 0..v {
                let [x, y] = self.joint(f, j);
                out[f * v + j] = x;
                out[t * v + f * v + j] = y;
            }
        }
        out
    }

    /// Mean over frames of the root-to-mid-hip distance.
    pub fn mean_torso_length(&self) -> f64 {
        let root = self.layout.center_joint();
        let far = self.layout.torso_far();
        let total: f64 = (0..self.frames)
            .map(|t| {
                let [rx, ry] = self.joint(t, root);
                let (mut mx, mut my) = (0.0, 0.0);
                for &j in far {
                    let [x, y] = self.joint(t, j);
                    mx += x;
                    my += y;
                }
                mx /= far.len() as f64;
                my /= far.len() as f64;
                ((mx - rx).powi(2) + (my - ry).powi(2)).sqrt()
            })
            .sum();
        total / self.frames as f64
    }

    /// Fills missing joints, centers the root joint and scales to unit mean torso length.
    pub fn normalized(&self) -> Result<Self> {
        normalize_sequence(self)
    }
}

/// Fill low-confidence joints by linear interpolation over time (holding the
/// nearest confident value past either end), move the center joint to the origin
/// in every frame and divide by the clip-mean torso length.
///
/// Confidences are passed through unchanged.
pub fn normalize_sequence(raw: &SkeletonSequence) -> Result<SkeletonSequence> {
    let (t_len, v) = (raw.frame_count(), raw.joint_count());
    let mut out = raw.clone();

    for j in 0..v {
        let confident: Vec<usize> = (0..t_len)
            .filter(|&t| raw.joint_confidence(t, j) >= CONFIDENCE_THRESHOLD)
            .collect();
        if confident.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "joint `{}` is not confidently detected in any frame",
                raw.layout().joint_name(j)
            )));
        }
        if confident.len() == t_len {
            continue;
        }
        let mut next = 0;
        for t in 0..t_len {
            while next < confident.len() && confident[next] < t {
                next += 1;
            }
            if next < confident.len() && confident[next] == t {
                continue;
            }
            let before = next.checked_sub(1).map(|i| confident[i]);
            let after = confident.get(next).copied();
            let value = match (before, after) {
                (Some(a), Some(b)) => {
                    let w = (t - a) as f64 / (b - a) as f64;
                    let [ax, ay] = raw.joint(a, j);
                    let [bx, by] = raw.joint(b, j);
                    [ax + w * (bx - ax), ay + w * (by - ay)]
                }
                (Some(a), None) => raw.joint(a, j),
                (None, Some(b)) => raw.joint(b, j),
                (None, None) => unreachable!("joint has at least one confident frame"),
            };
            let o = (t * v + j) * 2;
            out.coords[o] = value[0];
            out.coords[o + 1] = value[1];
        }
    }

    let root = raw.layout().center_joint();
    for t in 0..t_len {
        let [rx, ry] = out.joint(t, root);
        for j in 0..v {
            let o = (t * v + j) * 2;
            out.coords[o] -= rx;
            out.coords[o + 1] -= ry;
        }
    }
    let torso = out.mean_torso_length();
    if !(torso > 1e-12 && torso.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "mean torso length {torso} is degenerate"
        )));
    }
    out.coords.iter_mut().for_each(|c| *c /= torso);
    Ok(out)
}
