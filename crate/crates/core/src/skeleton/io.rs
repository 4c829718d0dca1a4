//! Keypoint file readers and writers.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{JointLayout, LayoutName, KINECT20_TO_16};
use super::sequence::{Condition, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct OpenPoseFrame {
    #[serde(default)]
    version: Option<f64>,
    people: Vec<OpenPosePerson>,
}

#[derive(Debug, Deserialize, Serialize)]
struct OpenPosePerson {
    pose_keypoints_2d: Vec<f64>,
}

/// Per-frame `(x, y, confidence)` triples from one OpenPose JSON document.
/// A frame without people yields all-zero confidences.
pub fn parse_openpose_frame(json: &str, joints: usize) -> std::result::Result<Vec<[f64; 3]>, String> {
    let frame: OpenPoseFrame = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let Some(person) = frame.people.first() else {
        return Ok(vec![[0.0; 3]; joints]);
    };
    let kp = &person.pose_keypoints_2d;
    if kp.len() != joints * 3 {
        return Err(format!(
            "pose_keypoints_2d has {} values, expected {}",
            kp.len(),
            joints * 3
        ));
    }
    Ok(kp
        .chunks(3)
        .map(|c| [c[0], c[1], c[2].clamp(0.0, 1.0)])
        .collect())
}

pub fn openpose_frame_json(joints: &[[f64; 3]]) -> String {
    let frame = OpenPoseFrame {
        version: Some(1.3),
        people: vec![OpenPosePerson {
            pose_keypoints_2d: joints.iter().flatten().copied().collect(),
        }],
    };
    serde_json::to_string(&frame).expect("frame serialises")
}

/// JSON frame files of a clip directory in lexicographic order.
pub fn clip_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a clip directory of OpenPose frames (openpose18 layout).
pub fn load_openpose_clip(
    dir: &Path,
    layout: Arc<JointLayout>,
    identity: &str,
    view_deg: i32,
    condition: Condition,
) -> Result<SkeletonSequence> {
    let v = layout.joint_count();
    let files = clip_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::ingestion(dir, "clip directory has no frame files"));
    }
    let mut coords = Vec::with_capacity(files.len() * v * 2);
    let mut confidence = Vec::with_capacity(files.len() * v);
    for file in &files {
        let text = fs::read_to_string(file).map_err(|e| Error::ingestion(file, e.to_string()))?;
        let joints = parse_openpose_frame(&text, v).map_err(|e| Error::ingestion(file, e))?;
        for [x, y, c] in joints {
            coords.extend([x, y]);
            confidence.push(c);
        }
    }
    SkeletonSequence::new(layout, coords, confidence, identity, view_deg, condition)
        .map_err(|e| Error::ingestion(dir, e.to_string()))
}

/// Writes one JSON file per frame (`frame_00000.json`, ...) into `dir`.
pub fn write_openpose_clip(dir: &Path, seq: &SkeletonSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let v = seq.joint_count();
    for t in 0..seq.frame_count() {
        let joints: Vec<[f64; 3]> = (0..v)
            .map(|j| {
                let [x, y] = seq.joint(t, j);
                [x, y, seq.joint_confidence(t, j)]
            })
            .collect();
        let path = dir.join(format!("frame_{t:05}.json"));
        fs::write(&path, openpose_frame_json(&joints)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parses Kinect V1 text: one line per frame with 20 `(x, y, z)` triples.
/// Depth and the hand/foot joints are discarded.
pub fn parse_kinect_text(text: &str) -> std::result::Result<(Vec<f64>, usize), String> {
    let mut coords = Vec::new();
    let mut frames = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: {e}", line_no + 1)))
            .collect::<std::result::Result<_, _>>()?;
        if values.len() != 60 {
            return Err(format!(
                "line {}: expected 60 values (20 joints x 3), got {}",
                line_no + 1,
                values.len()
            ));
        }
        for &src in &KINECT20_TO_16 {
            coords.extend([values[src * 3], values[src * 3 + 1]]);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err("no frames".into());
    }
    Ok((coords, frames))
}

pub fn load_kinect_clip(path: &Path, identity: &str) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    let (coords, _) = parse_kinect_text(&text).map_err(|e| Error::ingestion(path, e))?;
    let layout = Arc::new(super::build_layout(LayoutName::Kinect2d16));
    SkeletonSequence::from_coords(layout, coords, identity, 0, Condition::Nm)
        .map_err(|e| Error::ingestion(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_without_people_is_undetected() {
        let j = parse_openpose_frame(r#"{"version":1.3,"people":[]}"#, 18).unwrap();
        assert!(j.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn first_person_is_taken() {
        let a: Vec<String> = (0..54).map(|i| i.to_string()).collect();
        let b = vec!["9".to_string(); 54];
        let json = format!(
            r#"{{"people":[{{"pose_keypoints_2d":[{}]}},{{"pose_keypoints_2d":[{}]}}]}}"#,
            a.join(","),
            b.join(",")
        );
        let j = parse_openpose_frame(&json, 18).unwrap();
        assert_eq!(j[1], [3.0, 4.0, 1.0]);
    }

    #[test]
    fn wrong_keypoint_count_is_reported() {
        let err = parse_openpose_frame(r#"{"people":[{"pose_keypoints_2d":[1,2,3]}]}"#, 18).unwrap_err();
        assert!(err.contains("expected 54"));
    }

    #[test]
    fn clip_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Arc::new(JointLayout::openpose18());
        let coords: Vec<f64> = (0..3 * 36).map(|i| i as f64 * 0.25).collect();
        let seq = SkeletonSequence::from_coords(layout.clone(), coords, "7", 36, Condition::Bg).unwrap();
        write_openpose_clip(dir.path(), &seq).unwrap();
        let back = load_openpose_clip(dir.path(), layout, "7", 36, Condition::Bg).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn kinect_drops_depth_and_four_joints() {
        let line: Vec<String> = (0..60).map(|i| i.to_string()).collect();
        let text = format!("{}\n\n{}\n", line.join(" "), line.join(","));
        let (coords, frames) = parse_kinect_text(&text).unwrap();
        assert_eq!(frames, 2);
        assert_eq!(coords.len(), 2 * 16 * 2);
        // kept joint 7 is kinect joint 8: x = 24, y = 25
        assert_eq!(&coords[14..16], &[24.0, 25.0]);
    }

    #[test]
    fn kinect_short_line_is_an_error() {
        assert!(parse_kinect_text("1 2 3").unwrap_err().contains("expected 60"));
    }
}
