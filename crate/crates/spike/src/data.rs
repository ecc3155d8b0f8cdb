//! Dataset handling: the native on-disk sequence format, ITOP-style
//! ingestion through the same interchange layout, temporal window sampling,
//! and a synthetic articulated-rig generator for desk-scale experiments.

use crate::cloud::{Point3, PointCloud, PointCloudSequence};
use crate::eval::{SkeletonFrame, NUM_JOINTS};
use crate::model::{HyperParams, WindowMode};
use crate::preprocess::resample;
use crate::scalar::Scalar;
use crate::{Result, SpikeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const POINT_FILE_MAGIC: &[u8; 4] = b"SPPC";

/// Subjects 00-04 form the test split.
pub fn is_test_subject(subject: u32) -> bool {
    subject <= 4
}

#[derive(Debug, Clone)]
pub struct FrameRecord<S: Scalar> {
    pub frame_id: String,
    pub cloud: PointCloud<S>,
    pub labels: SkeletonFrame<S>,
}

#[derive(Debug, Clone)]
pub struct Recording<S: Scalar> {
    pub subject: u32,
    pub recording: u32,
    pub frames: Vec<FrameRecord<S>>,
}

#[derive(Debug, Clone)]
pub struct SequenceDataset<S: Scalar> {
    pub recordings: Vec<Recording<S>>,
}

/// One trainable/evaluable sample: a recording index and target frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub recording: usize,
    pub t_index: usize,
}

impl<S: Scalar> SequenceDataset<S> {
    pub fn frame_count(&self) -> usize {
        self.recordings.iter().map(|r| r.frames.len()).sum()
    }

    /// Samples whose target frame has at least one valid joint. Frames with
    /// no valid joints still appear inside windows as context, but are never
    /// targets.
    pub fn samples(&self, final_frame_only: bool) -> Vec<Sample> {
        let mut out = Vec::new();
        for (ri, rec) in self.recordings.iter().enumerate() {
            for (ti, f) in rec.frames.iter().enumerate() {
                if !f.labels.any_valid() {
                    continue;
                }
                if final_frame_only && ti + 1 != rec.frames.len() {
                    continue;
                }
                out.push(Sample { recording: ri, t_index: ti });
            }
        }
        out
    }

    pub fn split(&self) -> (SequenceDataset<S>, SequenceDataset<S>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for r in &self.recordings {
            if is_test_subject(r.subject) {
                test.push(r.clone());
            } else {
                train.push(r.clone());
            }
        }
        (SequenceDataset { recordings: train }, SequenceDataset { recordings: test })
    }
}

/// Frame indices for a window ending at (past-only) or centered on
/// (past-future) `t_index`. Recording edges are handled by replication.
pub fn window_indices(n_frames: usize, t_index: usize, t_len: usize, mode: WindowMode) -> Vec<usize> {
    let t = t_index as isize;
    let t_len_i = t_len as isize;
    let range = match mode {
        WindowMode::PastOnly => (t - t_len_i + 1)..=t,
        WindowMode::PastFuture => {
            let lo = t - t_len_i / 2;
            lo..=(lo + t_len_i - 1)
        }
    };
    range.map(|i| i.clamp(0, n_frames as isize - 1) as usize).collect()
}

/// Builds the model input for one sample: window frames resampled to N
/// points each, plus the target labels at the current frame.
pub fn make_sequence<S: Scalar>(
    rec: &Recording<S>,
    t_index: usize,
    hp: &HyperParams<S>,
    seed: u64,
) -> Result<(PointCloudSequence<S>, SkeletonFrame<S>)> {
    let idx = window_indices(rec.frames.len(), t_index, hp.t, hp.window_mode);
    let mut frames = Vec::with_capacity(idx.len());
    for (k, fi) in idx.iter().enumerate() {
        frames.push(resample(&rec.frames[*fi].cloud, hp.n, seed.wrapping_add(k as u64))?);
    }
    Ok((PointCloudSequence::new(frames)?, rec.frames[t_index].labels.clone()))
}

fn rec_dir_name(subject: u32, recording: u32) -> String {
    format!("rec_{subject:02}_{recording:02}")
}

pub fn save_native<S: Scalar>(ds: &SequenceDataset<S>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for rec in &ds.recordings {
        let rdir = dir.join(rec_dir_name(rec.subject, rec.recording));
        std::fs::create_dir_all(&rdir)?;
        std::fs::write(
            rdir.join("manifest.txt"),
            format!("subject={} recording={} frames={}\n", rec.subject, rec.recording, rec.frames.len()),
        )?;
        let mut labels = String::new();
        for f in &rec.frames {
            let joints: Vec<String> = f
                .labels
                .joints
                .iter()
                .flat_map(|p| p.iter().map(|v| format!("{}", v.as_f64() as f32)))
                .collect();
            let valid: String = f.labels.valid.iter().map(|v| if *v { '1' } else { '0' }).collect();
            labels.push_str(&format!("frame={} joints={} valid={}\n", f.frame_id, joints.join(","), valid));
            let mut w = std::io::BufWriter::new(std::fs::File::create(rdir.join(format!("{}.sppc", f.frame_id)))?);
            w.write_all(POINT_FILE_MAGIC)?;
            w.write_all(&(f.cloud.len() as u32).to_le_bytes())?;
            for p in &f.cloud.points {
                for k in 0..3 {
                    w.write_all(&(p[k].as_f64() as f32).to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::write(rdir.join("labels.txt"), labels)?;
    }
    Ok(())
}

fn read_point_file<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| SpikeError::Data(format!("cannot open point file {}: {e}", path.display())))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[0..4] != POINT_FILE_MAGIC {
        return Err(SpikeError::Data(format!("{}: bad point file header", path.display())));
    }
    let count = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    if buf.len() != 8 + count * 12 {
        return Err(SpikeError::Data(format!(
            "{}: point count field says {count} points but file holds {} payload bytes",
            path.display(),
            buf.len() - 8
        )));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let mut p = [S::zero(); 3];
        for k in 0..3 {
            let off = 8 + i * 12 + k * 4;
            let v = f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]);
            p[k] = S::from_f64(v as f64);
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

fn parse_kv<'a>(line: &'a str, key: &str, file: &Path) -> Result<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")).map(|v| v))
        .ok_or_else(|| SpikeError::Data(format!("{}: missing {key}= field in '{line}'", file.display())))
}

fn load_recording<S: Scalar>(rdir: &Path) -> Result<Recording<S>> {
    let mpath = rdir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&mpath)
        .map_err(|e| SpikeError::Data(format!("cannot read {}: {e}", mpath.display())))?;
    let line = manifest.lines().next().unwrap_or("");
    let subject: u32 = parse_kv(line, "subject", &mpath)?
        .parse()
        .map_err(|_| SpikeError::Data(format!("{}: bad subject id", mpath.display())))?;
    let recording: u32 = parse_kv(line, "recording", &mpath)?
        .parse()
        .map_err(|_| SpikeError::Data(format!("{}: bad recording id", mpath.display())))?;
    let expected: usize = parse_kv(line, "frames", &mpath)?
        .parse()
        .map_err(|_| SpikeError::Data(format!("{}: bad frame count", mpath.display())))?;

    let lpath = rdir.join("labels.txt");
    let labels_txt = std::fs::read_to_string(&lpath)
        .map_err(|e| SpikeError::Data(format!("cannot read {}: {e}", lpath.display())))?;
    let mut frames = Vec::new();
    for (lineno, line) in labels_txt.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = |msg: String| SpikeError::Data(format!("{}:{}: {msg}", lpath.display(), lineno + 1));
        let frame_id = parse_kv(line, "frame", &lpath)?.to_string();
        let joints_str = parse_kv(line, "joints", &lpath)?;
        let valid_str = parse_kv(line, "valid", &lpath)?;
        let vals: Vec<f64> = joints_str
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ctx("unparsable joint coordinate".into()))?;
        if vals.len() != NUM_JOINTS * 3 {
            return Err(ctx(format!("expected {} joint floats, got {}", NUM_JOINTS * 3, vals.len())));
        }
        if valid_str.len() != NUM_JOINTS {
            return Err(ctx(format!("expected {NUM_JOINTS} validity bits, got {}", valid_str.len())));
        }
        let joints: Vec<Point3<S>> = (0..NUM_JOINTS)
            .map(|j| [S::from_f64(vals[j * 3]), S::from_f64(vals[j * 3 + 1]), S::from_f64(vals[j * 3 + 2])])
            .collect();
        let valid: Vec<bool> = valid_str.chars().map(|c| c == '1').collect();
        let cloud = read_point_file(&rdir.join(format!("{frame_id}.sppc")))?;
        frames.push(FrameRecord { frame_id, cloud, labels: SkeletonFrame::new(joints, valid)? });
    }
    if frames.len() != expected {
        return Err(SpikeError::Data(format!(
            "{}: manifest promises {expected} frames, labels file holds {}",
            mpath.display(),
            frames.len()
        )));
    }
    Ok(Recording { subject, recording, frames })
}

/// Loads a dataset in the native layout: one directory per recording holding
/// manifest.txt, labels.txt, and one .sppc point file per frame.
pub fn load_native<S: Scalar>(dir: &Path) -> Result<SequenceDataset<S>> {
    let mut rec_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SpikeError::Data(format!("cannot read dataset dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    rec_dirs.sort();
    if rec_dirs.is_empty() {
        return Err(SpikeError::Data(format!("no recordings found under {}", dir.display())));
    }
    let recordings = rec_dirs.iter().map(|d| load_recording(d)).collect::<Result<Vec<_>>>()?;
    Ok(SequenceDataset { recordings })
}

/// ITOP ingestion: the original archives are converted into the native
/// interchange layout by scripts/itop_to_native.py; from there loading is
/// identical, with the fixed subject split applied via [`is_test_subject`].
pub fn load_itop<S: Scalar>(dir: &Path) -> Result<SequenceDataset<S>> {
    load_native(dir)
}

/// Occlusion behaviour of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionMode {
    None,
    /// Deletes one arm's surface points in the final frame of each recording
    /// while keeping its joint labels valid.
    HideArmCurrentFrame,
}

/// Index of the hand joint hidden by [`OcclusionMode::HideArmCurrentFrame`].
pub const HIDDEN_HAND_JOINT: usize = 6; // l_hand

#[derive(Debug, Clone)]
pub struct SyntheticRigConfig<S: Scalar> {
    pub capsule_radius_m: S,
    pub motion_amplitude_m: S,
    pub motion_frequency_hz: S,
    pub points_per_frame: usize,
    pub noise_sigma_m: S,
    pub frames_per_recording: usize,
    pub occlusion: OcclusionMode,
}

impl<S: Scalar> Default for SyntheticRigConfig<S> {
    fn default() -> Self {
        SyntheticRigConfig {
            capsule_radius_m: S::from_f64(0.04),
            motion_amplitude_m: S::from_f64(0.25),
            motion_frequency_hz: S::from_f64(0.05),
            points_per_frame: 512,
            noise_sigma_m: S::from_f64(0.005),
            frames_per_recording: 4,
            occlusion: OcclusionMode::None,
        }
    }
}

impl<S: Scalar> SyntheticRigConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.capsule_radius_m <= S::zero()
            || self.motion_amplitude_m <= S::zero()
            || self.motion_frequency_hz <= S::zero()
            || self.points_per_frame == 0
            || self.frames_per_recording == 0
            || self.noise_sigma_m < S::zero()
        {
            return Err(SpikeError::Config("synthetic rig parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Bone tree over the 15-joint skeleton (14 edges).
pub const BONES: [(usize, usize); 14] = [
    (0, 1),   // head-neck
    (1, 2),   // neck-l_shoulder
    (1, 3),   // neck-r_shoulder
    (2, 4),   // l_shoulder-l_elbow
    (4, 6),   // l_elbow-l_hand
    (3, 5),   // r_shoulder-r_elbow
    (5, 7),   // r_elbow-r_hand
    (1, 8),   // neck-torso
    (8, 9),   // torso-l_hip
    (8, 10),  // torso-r_hip
    (9, 11),  // l_hip-l_knee
    (11, 13), // l_knee-l_foot
    (10, 12), // r_hip-r_knee
    (12, 14), // r_knee-r_foot
];

const LEFT_ARM_BONES: [usize; 3] = [1, 3, 4]; // neck-l_shoulder, l_shoulder-l_elbow, l_elbow-l_hand

fn base_pose(y_down: f64) -> [[f64; 3]; NUM_JOINTS] {
    let s = y_down;
    [
        [0.00, -0.55 * s, 0.0],  // head
        [0.00, -0.40 * s, 0.0],  // neck
        [0.20, -0.35 * s, 0.0],  // l_shoulder
        [-0.20, -0.35 * s, 0.0], // r_shoulder
        [0.35, -0.15 * s, 0.0],  // l_elbow
        [-0.35, -0.15 * s, 0.0], // r_elbow
        [0.45, 0.05 * s, 0.0],   // l_hand
        [-0.45, 0.05 * s, 0.0],  // r_hand
        [0.00, 0.00, 0.0],       // torso
        [0.12, 0.25 * s, 0.0],   // l_hip
        [-0.12, 0.25 * s, 0.0],  // r_hip
        [0.14, 0.60 * s, 0.0],   // l_knee
        [-0.14, 0.60 * s, 0.0],  // r_knee
        [0.15, 0.95 * s, 0.0],   // l_foot
        [-0.15, 0.95 * s, 0.0],  // r_foot
    ]
}

fn rig_joints<S: Scalar>(
    cfg: &SyntheticRigConfig<S>,
    t: usize,
    phase: f64,
    body_shift: [f64; 3],
) -> Vec<Point3<S>> {
    let base = base_pose(1.0);
    let amp = cfg.motion_amplitude_m.as_f64();
    let omega = 2.0 * std::f64::consts::PI * cfg.motion_frequency_hz.as_f64();
    let swing = amp * (omega * t as f64 + phase).sin();
    (0..NUM_JOINTS)
        .map(|j| {
            let mut p = base[j];
            // arms swing forward/back in z, opposite phases; elbows at half
            // the hand amplitude
            match j {
                6 => p[2] += swing,
                4 => p[2] += 0.5 * swing,
                7 => p[2] -= swing,
                5 => p[2] -= 0.5 * swing,
                _ => p[2] += 0.05 * swing,
            }
            [
                S::from_f64(p[0] + body_shift[0]),
                S::from_f64(p[1] + body_shift[1]),
                S::from_f64(p[2] + body_shift[2] + 2.0),
            ]
        })
        .collect()
}

/// Animated 15-joint stick figure: surface points sampled on bone capsules
/// with Gaussian noise, sinusoidal arm motion, deterministic under seed.
pub fn generate_synthetic<S: Scalar>(
    cfg: &SyntheticRigConfig<S>,
    n_sequences: usize,
    seed: u64,
) -> Result<SequenceDataset<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recordings = Vec::with_capacity(n_sequences);
    for si in 0..n_sequences {
        let subject = (si % 20) as u32;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let body_shift = [
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.3..0.3),
        ];
        let mut frames = Vec::with_capacity(cfg.frames_per_recording);
        for t in 0..cfg.frames_per_recording {
            let joints = rig_joints(cfg, t, phase, body_shift);
            let is_final = t + 1 == cfg.frames_per_recording;
            let hide_left_arm =
                cfg.occlusion == OcclusionMode::HideArmCurrentFrame && is_final;
            let mut points = Vec::with_capacity(cfg.points_per_frame);
            while points.len() < cfg.points_per_frame {
                let b = rng.gen_range(0..BONES.len());
                // gaussian offsets via Box-Muller
                let gauss = |rng: &mut ChaCha8Rng| {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                let u: f64 = rng.gen_range(0.0..1.0);
                let dir = {
                    let v = [gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                    [v[0] / n, v[1] / n, v[2] / n]
                };
                let noise = [
                    gauss(&mut rng) * cfg.noise_sigma_m.as_f64(),
                    gauss(&mut rng) * cfg.noise_sigma_m.as_f64(),
                    gauss(&mut rng) * cfg.noise_sigma_m.as_f64(),
                ];
                if hide_left_arm && LEFT_ARM_BONES.contains(&b) {
                    continue;
                }
                let (a, bj) = BONES[b];
                let (pa, pb) = (joints[a], joints[bj]);
                let r = cfg.capsule_radius_m.as_f64();
                let p: Point3<S> = [
                    S::from_f64(pa[0].as_f64() + (pb[0].as_f64() - pa[0].as_f64()) * u + dir[0] * r + noise[0]),
                    S::from_f64(pa[1].as_f64() + (pb[1].as_f64() - pa[1].as_f64()) * u + dir[1] * r + noise[1]),
                    S::from_f64(pa[2].as_f64() + (pb[2].as_f64() - pa[2].as_f64()) * u + dir[2] * r + noise[2]),
                ];
                points.push(p);
            }
            frames.push(FrameRecord {
                frame_id: format!("{subject}_{:05}", si * 1000 + t),
                cloud: PointCloud::new(points),
                labels: SkeletonFrame::new(joints, vec![true; NUM_JOINTS])?,
            });
        }
        recordings.push(Recording { subject, recording: si as u32, frames });
    }
    Ok(SequenceDataset { recordings })
}

/// Aligned prediction/target pairs for evaluation. Targets with no valid
/// joints are skipped (they remain usable as window context).
pub fn eval_pairs<S: Scalar>(ds: &SequenceDataset<S>, final_frame_only: bool) -> Vec<Sample> {
    ds.samples(final_frame_only)
}
