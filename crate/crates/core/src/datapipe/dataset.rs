use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::skeleton::io::{load_kinect_clip, load_openpose_clip};
use crate::skeleton::{Condition, JointLayout, LayoutName, SkeletonSequence};

/// CASIA-B subjects numbered below this are training identities.
pub const CASIAB_FIRST_TEST_SUBJECT: u32 = 63;
pub const CASIAB_VIEWS: [i32; 11] = [0, 18, 36, 54, 72, 90, 108, 126, 144, 162, 180];
pub const KINECT_FOLDS: usize = 10;
pub const KINECT_SUBJECTS: usize = 140;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    OpenposeJson,
    KinectTxt,
}

impl DataFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DataFormat::OpenposeJson => "openpose_json",
            DataFormat::KinectTxt => "kinect_txt",
        }
    }

    pub fn layout(self) -> LayoutName {
        match self {
            DataFormat::OpenposeJson => LayoutName::OpenPose18,
            DataFormat::KinectTxt => LayoutName::Kinect2d16,
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openpose_json" => Ok(DataFormat::OpenposeJson),
            "kinect_txt" => Ok(DataFormat::KinectTxt),
            other => Err(Error::Config(format!(
                "unknown data format `{other}` (expected openpose_json or kinect_txt)"
            ))),
        }
    }
}

/// How clips are split into train, gallery and probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Subjects below 63 train; test gallery NM#1-4, probes NM#5-6, BG#1-2, CL#1-2.
    CasiaB,
    /// Ten subject-disjoint folds over the first 140 subjects; `fold` is the test fold.
    KinectGait { fold: usize },
    /// Closed set: for every identity, view and condition, the last clip is a probe,
    /// the one before it gallery, the rest train.
    Synthetic,
}

impl Protocol {
    /// Views the cross-view matrix is built over; `None` means "whatever the data has".
    pub fn views(self) -> Option<&'static [i32]> {
        match self {
            Protocol::CasiaB => Some(&CASIAB_VIEWS),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::CasiaB => f.write_str("casiab"),
            Protocol::KinectGait { fold } => write!(f, "kinectgait:{fold}"),
            Protocol::Synthetic => f.write_str("synthetic"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        match (name, arg) {
            ("casiab", None) => Ok(Protocol::CasiaB),
            ("synthetic", None) => Ok(Protocol::Synthetic),
            ("kinectgait", None) => Ok(Protocol::KinectGait { fold: 0 }),
            ("kinectgait", Some(f)) => match f.parse::<usize>() {
                Ok(fold) if fold < KINECT_FOLDS => Ok(Protocol::KinectGait { fold }),
                _ => Err(Error::Config(format!("kinectgait fold must be 0..{KINECT_FOLDS}, got `{f}`"))),
            },
            _ => Err(Error::Config(format!(
                "unknown protocol `{s}` (expected casiab, kinectgait[:fold] or synthetic)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Gallery,
    Probe,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::Probe => "probe",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "gallery" => Ok(Split::Gallery),
            "probe" => Ok(Split::Probe),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, gallery or probe)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ClipSource {
    Path(PathBuf),
    Memory(Arc<SkeletonSequence>),
}

/// Labels of one clip before splitting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipMeta {
    /// Subject number as it appears on disk.
    pub subject: u32,
    pub view_deg: i32,
    pub condition: Condition,
    /// 1-based clip number within the subject and condition.
    pub seq: u32,
}

#[derive(Clone, Debug)]
pub struct ClipEntry {
    /// Stable clip name, e.g. `001/nm-01/090`.
    pub id: String,
    pub source: ClipSource,
    pub meta: ClipMeta,
    pub split: Split,
    /// Dense label: among training identities for `Train`, among test identities otherwise.
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    layout: Arc<JointLayout>,
    protocol: Protocol,
    entries: Vec<ClipEntry>,
}

impl DatasetIndex {
    /// Splits and labels clips under `protocol`. Clips the protocol does not use are dropped.
    pub fn from_clips(
        layout: Arc<JointLayout>,
        protocol: Protocol,
        clips: Vec<(String, ClipSource, ClipMeta)>,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::EmptyIndex("no clips found".into()));
        }
        let splits = assign_splits(protocol, &clips.iter().map(|c| c.2.clone()).collect::<Vec<_>>())?;
        let mut train_ids = BTreeMap::new();
        let mut test_ids = BTreeMap::new();
        for (meta, split) in clips.iter().map(|c| &c.2).zip(&splits) {
            match split {
                Some(Split::Train) => train_ids.insert(meta.subject, 0),
                Some(_) => test_ids.insert(meta.subject, 0),
                None => None,
            };
        }
        for ids in [&mut train_ids, &mut test_ids] {
            for (i, v) in ids.values_mut().enumerate() {
                *v = i;
            }
        }
        let entries: Vec<ClipEntry> = clips
            .into_iter()
            .zip(splits)
            .filter_map(|((id, source, meta), split)| {
                let split = split?;
                let label = match split {
                    Split::Train => train_ids[&meta.subject],
                    _ => test_ids[&meta.subject],
                };
                Some(ClipEntry {
                    id,
                    source,
                    meta,
                    split,
                    label,
                })
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyIndex(format!("protocol {protocol} selected no clips")));
        }
        Ok(Self {
            layout,
            protocol,
            entries,
        })
    }

    pub fn layout(&self) -> &Arc<JointLayout> {
        &self.layout
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn entries(&self) -> &[ClipEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    /// Number of distinct training identities; the arcface class count.
    pub fn train_classes(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Distinct subjects of a split, ascending.
    pub fn subjects(&self, split: Split) -> Vec<u32> {
        let mut s: Vec<u32> = self
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.meta.subject)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Raw (unnormalised) clip.
    pub fn load(&self, entry: &ClipEntry) -> Result<SkeletonSequence> {
        match &entry.source {
            ClipSource::Memory(seq) => Ok((**seq).clone()),
            ClipSource::Path(p) => {
                let identity = format!("{:03}", entry.meta.subject);
                let seq = match self.layout.kind() {
                    Some(LayoutName::Kinect2d16) => load_kinect_clip(p, &identity)?,
                    _ => load_openpose_clip(
                        p,
                        self.layout.clone(),
                        &identity,
                        entry.meta.view_deg,
                        entry.meta.condition,
                    )?,
                };
                if seq.joint_count() != self.layout.joint_count() {
                    return Err(Error::ingestion(p, "joint count does not match the dataset layout"));
                }
                Ok(seq)
            }
        }
    }
}

fn assign_splits(protocol: Protocol, metas: &[ClipMeta]) -> Result<Vec<Option<Split>>> {
    Ok(match protocol {
        Protocol::CasiaB => metas
            .iter()
            .map(|m| {
                if m.subject < CASIAB_FIRST_TEST_SUBJECT {
                    return Some(Split::Train);
                }
                match (m.condition, m.seq) {
                    (Condition::Nm, 1..=4) => Some(Split::Gallery),
                    (Condition::Nm, 5..=6) | (Condition::Bg, 1..=2) | (Condition::Cl, 1..=2) => Some(Split::Probe),
                    _ => None,
                }
            })
            .collect(),
        Protocol::KinectGait { fold } => {
            let mut subjects: Vec<u32> = metas.iter().map(|m| m.subject).collect();
            subjects.sort_unstable();
            subjects.dedup();
            subjects.truncate(KINECT_SUBJECTS);
            let first_seq: BTreeMap<u32, u32> = metas.iter().fold(BTreeMap::new(), |mut acc, m| {
                let e = acc.entry(m.subject).or_insert(m.seq);
                *e = (*e).min(m.seq);
                acc
            });
            metas
                .iter()
                .map(|m| {
                    let rank = subjects.binary_search(&m.subject).ok()?;
                    Some(if rank % KINECT_FOLDS != fold {
                        Split::Train
                    } else if m.seq == first_seq[&m.subject] {
                        Split::Gallery
                    } else {
                        Split::Probe
                    })
                })
                .collect()
        }
        Protocol::Synthetic => {
            let mut last: BTreeMap<(u32, i32, Condition), u32> = BTreeMap::new();
            for m in metas {
                let e = last.entry((m.subject, m.view_deg, m.condition)).or_insert(m.seq);
                *e = (*e).max(m.seq);
            }
            if let Some(((s, v, _), n)) = last.iter().find(|(_, n)| **n < 3) {
                return Err(Error::Protocol(format!(
                    "synthetic protocol needs at least 3 clips per identity and view; subject {s} view {v} has {n}"
                )));
            }
            metas
                .iter()
                .map(|m| {
                    let n = last[&(m.subject, m.view_deg, m.condition)];
                    Some(if m.seq == n {
                        Split::Probe
                    } else if m.seq + 1 == n {
                        Split::Gallery
                    } else {
                        Split::Train
                    })
                })
                .collect()
        }
    })
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::ingestion(dir, e.to_string()))? {
        out.push(entry.map_err(|e| Error::ingestion(dir, e.to_string()))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|s| s.to_str()).unwrap_or("")
}

fn parse_subject(p: &Path) -> Result<u32> {
    file_name(p)
        .parse()
        .map_err(|_| Error::ingestion(p, "subject directory name is not a number"))
}

/// `nm-01` -> (NM, 1)
pub fn parse_condition_seq(name: &str) -> Option<(Condition, u32)> {
    let (c, s) = name.split_once('-')?;
    Some((c.parse().ok()?, s.parse().ok()?))
}

/// Indexes `<root>/<subject>/<condition>-<seq>/<view>/frame_*.json` (openpose) or
/// `<root>/<subject>/<seq>.txt` (kinect) and splits it under `protocol`.
pub fn load_dataset(root: &Path, format: DataFormat, protocol: Protocol) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::ingestion(root, "dataset root is not a directory"));
    }
    let mut clips = Vec::new();
    for subject_dir in sorted_children(root)?.into_iter().filter(|p| p.is_dir()) {
        let subject = parse_subject(&subject_dir)?;
        let sname = file_name(&subject_dir).to_string();
        match format {
            DataFormat::OpenposeJson => {
                for cond_dir in sorted_children(&subject_dir)?.into_iter().filter(|p| p.is_dir()) {
                    let (condition, seq) = parse_condition_seq(file_name(&cond_dir))
                        .ok_or_else(|| Error::ingestion(&cond_dir, "expected <condition>-<seq>, e.g. nm-01"))?;
                    for view_dir in sorted_children(&cond_dir)?.into_iter().filter(|p| p.is_dir()) {
                        let view_deg: i32 = file_name(&view_dir)
                            .parse()
                            .map_err(|_| Error::ingestion(&view_dir, "view directory name is not an angle"))?;
                        let id = format!("{sname}/{}/{}", file_name(&cond_dir), file_name(&view_dir));
                        let meta = ClipMeta {
                            subject,
                            view_deg,
                            condition,
                            seq,
                        };
                        clips.push((id, ClipSource::Path(view_dir), meta));
                    }
                }
            }
            DataFormat::KinectTxt => {
                for file in sorted_children(&subject_dir)?
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|e| e == "txt"))
                {
                    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    let seq = stem
                        .parse()
                        .map_err(|_| Error::ingestion(&file, "sequence file name is not a number"))?;
                    let meta = ClipMeta {
                        subject,
                        view_deg: 0,
                        condition: Condition::Nm,
                        seq,
                    };
                    clips.push((format!("{sname}/{stem}"), ClipSource::Path(file), meta));
                }
            }
        }
    }
    if clips.is_empty() {
        return Err(Error::EmptyIndex(format!("no clips under {}", root.display())));
    }
    let layout = Arc::new(crate::skeleton::build_layout(format.layout()));
    DatasetIndex::from_clips(layout, protocol, clips)
}
