use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::dataset::{ClipMeta, ClipSource, DatasetIndex, Protocol};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::skeleton::io::write_openpose_clip;
use crate::skeleton::{Condition, JointLayout, SkeletonSequence};

/// Body and gait of one synthetic identity. Lengths are in torso units.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkerParams {
    pub identity_seed: u64,
    /// upper arm, forearm, thigh, shin
    pub limb_lengths: [f64; 4],
    pub shoulder_width: f64,
    pub hip_width: f64,
    pub head_size: f64,
    /// cycles per frame
    pub stride_frequency: f64,
    pub leg_amplitude: f64,
    pub knee_amplitude: f64,
    pub arm_amplitude: f64,
    /// constant forward bend of the forearm
    pub elbow_bend: f64,
    /// phase of the arms relative to the leg on the same side
    pub arm_phase_offset: f64,
    pub noise_sigma: f64,
}

impl WalkerParams {
    /// Identity-specific body and gait drawn from `identity_seed`.
    pub fn from_seed(identity_seed: u64, noise_sigma: f64) -> Self {
        let mut rng = Rng::with_stream(identity_seed, 0x5743_414c_4b45_52);
        Self {
            identity_seed,
            limb_lengths: [
                rng.uniform(0.45, 0.75),
                rng.uniform(0.4, 0.7),
                rng.uniform(0.75, 1.15),
                rng.uniform(0.75, 1.15),
            ],
            shoulder_width: rng.uniform(0.5, 0.95),
            hip_width: rng.uniform(0.3, 0.6),
            head_size: rng.uniform(0.2, 0.4),
            stride_frequency: rng.uniform(0.02, 0.045),
            leg_amplitude: rng.uniform(0.25, 0.6),
            knee_amplitude: rng.uniform(0.2, 0.9),
            arm_amplitude: rng.uniform(0.15, 0.7),
            elbow_bend: rng.uniform(0.05, 0.6),
            arm_phase_offset: PI,
            noise_sigma,
        }
    }

    /// A walker that never moves.
    pub fn frozen(mut self) -> Self {
        self.leg_amplitude = 0.0;
        self.knee_amplitude = 0.0;
        self.arm_amplitude = 0.0;
        self
    }
}

type P3 = [f64; 3];

fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Segment of length `len` hanging down, swung forward by `angle` in the sagittal plane.
fn swing(len: f64, angle: f64) -> P3 {
    [0.0, -len * angle.cos(), len * angle.sin()]
}

/// 3-D pose at phase `phase`: x lateral (left positive), y up, z walking direction.
fn pose(p: &WalkerParams, phase: f64) -> [P3; 18] {
    let [upper, fore, thigh, shin] = p.limb_lengths;
    let neck = [0.0, 1.0, 0.0];
    let r_sh = [-p.shoulder_width / 2.0, 1.0, 0.0];
    let l_sh = [p.shoulder_width / 2.0, 1.0, 0.0];
    let r_hip = [-p.hip_width / 2.0, 0.0, 0.0];
    let l_hip = [p.hip_width / 2.0, 0.0, 0.0];

    let leg = |hip: P3, ph: f64| {
        let a = p.leg_amplitude * ph.sin();
        let knee = add(hip, swing(thigh, a));
        let bend = p.knee_amplitude * (0.5 - 0.5 * ph.cos());
        (knee, add(knee, swing(shin, a - bend)))
    };
    let arm = |sh: P3, ph: f64| {
        let a = p.arm_amplitude * ph.sin();
        let elbow = add(sh, swing(upper, a));
        (elbow, add(elbow, swing(fore, a + p.elbow_bend)))
    };
    let (r_knee, r_ankle) = leg(r_hip, phase);
    let (l_knee, l_ankle) = leg(l_hip, phase + PI);
    let (r_elbow, r_wrist) = arm(r_sh, phase + p.arm_phase_offset);
    let (l_elbow, l_wrist) = arm(l_sh, phase + PI + p.arm_phase_offset);

    let h = p.head_size;
    [
        [0.0, 1.0 + 0.6 * h, 0.35 * h],
        neck,
        r_sh,
        r_elbow,
        r_wrist,
        l_sh,
        l_elbow,
        l_wrist,
        r_hip,
        r_knee,
        r_ankle,
        l_hip,
        l_knee,
        l_ankle,
        [-0.15 * h, 1.0 + 0.75 * h, 0.3 * h],
        [0.15 * h, 1.0 + 0.75 * h, 0.3 * h],
        [-0.3 * h, 1.0 + 0.7 * h, 0.0],
        [0.3 * h, 1.0 + 0.7 * h, 0.0],
    ]
}

/// Openpose18 walker seen from `view_deg` (rotation about the vertical axis,
/// orthographic projection, image y pointing down). The clip starts at a random
/// gait phase; coordinates get Gaussian noise of `params.noise_sigma`.
pub fn synth_walker(params: &WalkerParams, view_deg: i32, frames: usize, rng: &mut Rng) -> SkeletonSequence {
    let layout = Arc::new(JointLayout::openpose18());
    let theta = f64::from(view_deg).to_radians();
    let (s, c) = theta.sin_cos();
    let start = rng.uniform(0.0, TAU);
    let mut coords = Vec::with_capacity(frames * 18 * 2);
    for t in 0..frames {
        let phase = start + TAU * params.stride_frequency * t as f64;
        for [x, y, z] in pose(params, phase) {
            coords.push(x * c + z * s);
            coords.push(-y);
        }
    }
    if params.noise_sigma > 0.0 {
        for v in &mut coords {
            *v += rng.normal(0.0, params.noise_sigma);
        }
    }
    SkeletonSequence::from_coords(
        layout,
        coords,
        params.identity_seed.to_string(),
        view_deg,
        Condition::Nm,
    )
    .expect("walker produces whole frames")
}

/// A synthetic dataset: identities x views x clips, all NM.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthConfig {
    pub identities: usize,
    pub views: Vec<i32>,
    pub clips: usize,
    pub frames: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 8,
            views: vec![0, 54, 90, 180],
            clips: 4,
            frames: 120,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.views.is_empty() || self.clips == 0 || self.frames == 0 {
            return Err(Error::Config(
                "synthetic identities, views, clips and frames must all be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    pub fn walker(&self, identity: usize) -> WalkerParams {
        WalkerParams::from_seed(self.seed.wrapping_mul(1_000_003).wrapping_add(identity as u64), self.noise)
    }

    /// Applies `synth.<field> = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: String| Error::Config(format!("line {}: {what}", n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("`{k}`: cannot parse `{v}`")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("`{k}`: cannot parse `{v}`")));
            match k {
                "synth.identities" => self.identities = int(v)? as usize,
                "synth.views" => {
                    self.views = v
                        .split(',')
                        .map(|x| x.trim().parse::<i32>().map_err(|_| bad(format!("`{k}`: cannot parse `{x}`"))))
                        .collect::<Result<_>>()?
                }
                "synth.clips" => self.clips = int(v)? as usize,
                "synth.frames" => self.frames = int(v)? as usize,
                "synth.noise" => self.noise = num(v)?,
                "synth.seed" => self.seed = int(v)?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let views: Vec<String> = self.views.iter().map(ToString::to_string).collect();
        format!(
            "synth.identities = {}\nsynth.views = {}\nsynth.clips = {}\nsynth.frames = {}\nsynth.noise = {}\nsynth.seed = {}\n",
            self.identities,
            views.join(","),
            self.clips,
            self.frames,
            self.noise,
            self.seed
        )
    }

    /// Every clip with its meta, in subject, view, clip order.
    pub fn generate(&self) -> Result<Vec<(String, SkeletonSequence, ClipMeta)>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.identities * self.views.len() * self.clips);
        for id in 0..self.identities {
            let params = self.walker(id);
            let subject = id as u32 + 1;
            for (vi, &view) in self.views.iter().enumerate() {
                for seq in 1..=self.clips as u32 {
                    let stream = ((id * self.views.len() + vi) * self.clips) as u64 + u64::from(seq);
                    let mut rng = Rng::with_stream(self.seed, stream);
                    let mut clip = synth_walker(&params, view, self.frames, &mut rng);
                    clip.identity = format!("{subject:03}");
                    let meta = ClipMeta {
                        subject,
                        view_deg: view,
                        condition: Condition::Nm,
                        seq,
                    };
                    out.push((clip_id(&meta), clip, meta));
                }
            }
        }
        Ok(out)
    }

    /// In-memory dataset under `protocol`.
    pub fn index(&self, protocol: Protocol) -> Result<DatasetIndex> {
        let clips = self
            .generate()?
            .into_iter()
            .map(|(id, seq, meta)| (id, ClipSource::Memory(Arc::new(seq)), meta))
            .collect();
        DatasetIndex::from_clips(Arc::new(JointLayout::openpose18()), protocol, clips)
    }

    /// Writes the clips as OpenPose frame files plus `manifest.json`; returns the clip count.
    pub fn write(&self, root: &Path) -> Result<usize> {
        let clips = self.generate()?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for (id, seq, _) in &clips {
            write_openpose_clip(&root.join(id), seq)?;
        }
        let manifest = Manifest {
            generator: "synthetic-walker",
            rng: Rng::ALGORITHM,
            config: self,
            clips: clips.iter().map(|(id, _, _)| id.as_str()).collect(),
        };
        let path = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(clips.len())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    rng: &'static str,
    config: &'a SynthConfig,
    clips: Vec<&'a str>,
}

/// `001/nm-02/090`
pub fn clip_id(meta: &ClipMeta) -> String {
    format!(
        "{:03}/{}-{:02}/{:03}",
        meta.subject,
        meta.condition.as_str().to_ascii_lowercase(),
        meta.seq,
        meta.view_deg
    )
}
