//! Keypoint evaluation: mAP at a Euclidean distance threshold with per-joint
//! and grouped reports, plus an inference latency benchmark.

use crate::cloud::{dist, Point3};
use crate::scalar::Scalar;
use crate::{Result, SpikeError};
use std::time::Instant;

pub const NUM_JOINTS: usize = 15;

/// Fixed joint order for 15-joint skeletons.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_hand", "r_hand",
    "torso", "l_hip", "r_hip", "l_knee", "r_knee", "l_foot", "r_foot",
];

/// Table rows pooling paired left/right joints.
pub const GROUPS: [(&str, &[usize]); 9] = [
    ("Head", &[0]),
    ("Neck", &[1]),
    ("Shoulders", &[2, 3]),
    ("Elbows", &[4, 5]),
    ("Hands", &[6, 7]),
    ("Torso", &[8]),
    ("Hips", &[9, 10]),
    ("Knees", &[11, 12]),
    ("Feet", &[13, 14]),
];

pub const UPPER_BODY: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
pub const LOWER_BODY: [usize; 6] = [9, 10, 11, 12, 13, 14];

/// Joint coordinates plus per-joint validity flags for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame<S: Scalar> {
    pub joints: Vec<Point3<S>>,
    pub valid: Vec<bool>,
}

impl<S: Scalar> SkeletonFrame<S> {
    pub fn new(joints: Vec<Point3<S>>, valid: Vec<bool>) -> Result<Self> {
        if joints.len() != NUM_JOINTS || valid.len() != NUM_JOINTS {
            return Err(SpikeError::Data(format!(
                "skeleton frame needs {NUM_JOINTS} joints, got {} joints / {} flags",
                joints.len(),
                valid.len()
            )));
        }
        Ok(SkeletonFrame { joints, valid })
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_joint_ap: Vec<(String, f64)>,
    pub group_ap: Vec<(String, f64)>,
    pub upper_body_ap: f64,
    pub lower_body_ap: f64,
    /// Percentage over all valid joints pooled.
    pub mean_ap: f64,
    /// Unweighted mean of per-joint APs, reported alongside the pooled mean.
    pub mean_of_joint_aps: f64,
    pub threshold_m: f64,
}

impl EvalReport {
    /// Human-readable table in head-to-feet row order.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("mAP @ {:.2} m\n", self.threshold_m));
        for (name, ap) in &self.group_ap {
            s.push_str(&format!("{name:<10} {ap:6.2}\n"));
        }
        s.push_str(&format!("{:<10} {:6.2}\n", "Upper B.", self.upper_body_ap));
        s.push_str(&format!("{:<10} {:6.2}\n", "Lower B.", self.lower_body_ap));
        s.push_str(&format!("{:<10} {:6.2}\n", "Mean", self.mean_ap));
        s.push_str(&format!("{:<10} {:6.2}\n", "Mean/joint", self.mean_of_joint_aps));
        s
    }

    /// Line-delimited structured form: `joint=<name> ap=<float>`.
    pub fn structured(&self) -> String {
        let mut s = String::new();
        for (name, ap) in &self.per_joint_ap {
            s.push_str(&format!("joint={name} ap={ap}\n"));
        }
        s.push_str(&format!("joint=mean ap={}\n", self.mean_ap));
        s
    }
}

/// Fraction of valid predicted joints within `threshold_m` of ground truth
/// (strict inequality), as percentages. Only valid target joints are scored.
pub fn map_at_threshold<S: Scalar>(
    preds: &[SkeletonFrame<S>],
    targets: &[SkeletonFrame<S>],
    threshold_m: f64,
) -> Result<EvalReport> {
    if preds.len() != targets.len() {
        return Err(SpikeError::Dimension(format!(
            "map_at_threshold: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut hits = [0u64; NUM_JOINTS];
    let mut counts = [0u64; NUM_JOINTS];
    for (p, t) in preds.iter().zip(targets) {
        for j in 0..NUM_JOINTS {
            if !t.valid[j] {
                continue;
            }
            counts[j] += 1;
            if dist(&p.joints[j], &t.joints[j]).as_f64() < threshold_m {
                hits[j] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(SpikeError::Data("map_at_threshold: no valid joints anywhere".into()));
    }
    let pct = |h: u64, c: u64| if c == 0 { 0.0 } else { 100.0 * h as f64 / c as f64 };
    let per_joint_ap: Vec<(String, f64)> = (0..NUM_JOINTS)
        .map(|j| (JOINT_NAMES[j].to_string(), pct(hits[j], counts[j])))
        .collect();
    let pool = |idx: &[usize]| {
        let h: u64 = idx.iter().map(|&j| hits[j]).sum();
        let c: u64 = idx.iter().map(|&j| counts[j]).sum();
        pct(h, c)
    };
    let group_ap = GROUPS.iter().map(|(n, idx)| (n.to_string(), pool(idx))).collect();
    let scored = (0..NUM_JOINTS).filter(|&j| counts[j] > 0).count();
    let mean_of_joint_aps = (0..NUM_JOINTS)
        .filter(|&j| counts[j] > 0)
        .map(|j| pct(hits[j], counts[j]))
        .sum::<f64>()
        / scored as f64;
    Ok(EvalReport {
        per_joint_ap,
        group_ap,
        upper_body_ap: pool(&UPPER_BODY),
        lower_body_ap: pool(&LOWER_BODY),
        mean_ap: pct(hits.iter().sum(), total),
        mean_of_joint_aps,
        threshold_m,
    })
}

#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyReport {
    pub fn structured(&self) -> String {
        format!("median_ms={} p95_ms={}", self.median_ms, self.p95_ms)
    }
}

/// Times `iters` runs of `f` (per-frame work, tokenization included by the
/// caller's closure), dropping `warmup` leading runs.
pub fn benchmark_inference(
    mut f: impl FnMut(),
    warmup: usize,
    iters: usize,
    frames_per_call: usize,
) -> Result<LatencyReport> {
    if iters < 1 {
        return Err(SpikeError::Config("benchmark_inference: iters must be >= 1".into()));
    }
    for _ in 0..warmup {
        f();
    }
    let mut samples_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        f();
        samples_ms.push(t0.elapsed().as_secs_f64() * 1e3 / frames_per_call.max(1) as f64);
    }
    let mut sorted = samples_ms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median_ms = sorted[sorted.len() / 2];
    let p95_idx = ((sorted.len() as f64 * 0.95).ceil() as usize).min(sorted.len()) - 1;
    let p95_ms = sorted[p95_idx];
    Ok(LatencyReport { samples_ms, median_ms, p95_ms })
}
