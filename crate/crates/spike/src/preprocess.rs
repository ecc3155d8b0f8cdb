//! Depth frame to human-only point cloud conversion plus training
//! augmentation: back-projection, background thresholding, floor removal via
//! y-histogram, DBSCAN clustering, human cluster selection, resampling,
//! per-sequence centering, and rotation/mirror augmentation.

use crate::cloud::{dist2, Point3, PointCloud, PointCloudSequence};
use crate::eval::SkeletonFrame;
use crate::scalar::Scalar;
use crate::{Result, SpikeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A raw depth frame with pinhole intrinsics; depth 0 marks invalid pixels.
#[derive(Debug, Clone)]
pub struct DepthFrame<S: Scalar> {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<S>,
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
}

#[derive(Debug, Clone)]
pub struct SegmentationConfig<S: Scalar> {
    pub depth_threshold_m: S,
    pub floor_bins_discard: usize,
    pub histogram_bins: usize,
    pub dbscan_eps_m: S,
    pub dbscan_min_pts: usize,
    pub cluster_offset_m: S,
    /// Camera convention: when true the floor sits at the largest y
    /// (y pointing down); when false at the smallest.
    pub floor_at_max_y: bool,
}

impl<S: Scalar> Default for SegmentationConfig<S> {
    fn default() -> Self {
        SegmentationConfig {
            depth_threshold_m: S::from_f64(3.0),
            floor_bins_discard: 10,
            histogram_bins: 100,
            dbscan_eps_m: S::from_f64(0.15),
            dbscan_min_pts: 10,
            cluster_offset_m: S::from_f64(0.20),
            floor_at_max_y: true,
        }
    }
}

impl<S: Scalar> SegmentationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.depth_threshold_m <= S::zero()
            || self.dbscan_eps_m <= S::zero()
            || self.cluster_offset_m <= S::zero()
        {
            return Err(SpikeError::Config("segmentation thresholds must be positive".into()));
        }
        if self.floor_bins_discard >= self.histogram_bins {
            return Err(SpikeError::Config(format!(
                "floor_bins_discard ({}) must be < histogram_bins ({})",
                self.floor_bins_discard, self.histogram_bins
            )));
        }
        Ok(())
    }
}

/// Pinhole back-projection; pixels with depth 0 are skipped.
pub fn depth_to_points<S: Scalar>(frame: &DepthFrame<S>) -> Result<PointCloud<S>> {
    if frame.fx <= S::zero() || frame.fy <= S::zero() {
        return Err(SpikeError::Config("depth_to_points: fx and fy must be positive".into()));
    }
    let mut points = Vec::new();
    for v in 0..frame.height {
        for u in 0..frame.width {
            let d = frame.depth[v * frame.width + u];
            if d <= S::zero() {
                continue;
            }
            let x = (S::from_usize_(u) - frame.cx) * d / frame.fx;
            let y = (S::from_usize_(v) - frame.cy) * d / frame.fy;
            points.push([x, y, d]);
        }
    }
    Ok(PointCloud::new(points))
}

/// Retains points nearer than the depth threshold.
pub fn threshold_background<S: Scalar>(
    pc: &PointCloud<S>,
    cfg: &SegmentationConfig<S>,
) -> PointCloud<S> {
    PointCloud::new(
        pc.points.iter().filter(|p| p[2] < cfg.depth_threshold_m).cloned().collect(),
    )
}

/// Drops points falling in the floor-most bins of the y histogram.
pub fn remove_floor<S: Scalar>(pc: &PointCloud<S>, cfg: &SegmentationConfig<S>) -> Result<PointCloud<S>> {
    if pc.is_empty() {
        return Err(SpikeError::Data("remove_floor: empty point cloud".into()));
    }
    let mut y_min = S::infinity();
    let mut y_max = S::neg_infinity();
    for p in &pc.points {
        y_min = y_min.min(p[1]);
        y_max = y_max.max(p[1]);
    }
    let range = y_max - y_min;
    if range <= S::zero() {
        // degenerate flat cloud: everything sits in one bin
        return Ok(pc.clone());
    }
    let bins = S::from_usize_(cfg.histogram_bins);
    let kept = pc
        .points
        .iter()
        .filter(|p| {
            let mut bin = ((p[1] - y_min) / range * bins).as_f64() as usize;
            if bin >= cfg.histogram_bins {
                bin = cfg.histogram_bins - 1;
            }
            let floor_bin = if cfg.floor_at_max_y {
                cfg.histogram_bins - 1 - bin
            } else {
                bin
            };
            floor_bin >= cfg.floor_bins_discard
        })
        .cloned()
        .collect();
    Ok(PointCloud::new(kept))
}

pub const DBSCAN_NOISE: isize = -1;

/// Standard DBSCAN over Euclidean distance. Labels are deterministic given
/// point order: clusters are numbered in order of first core point visited.
pub fn dbscan<S: Scalar>(pc: &PointCloud<S>, cfg: &SegmentationConfig<S>) -> Vec<isize> {
    let n = pc.len();
    let eps2 = cfg.dbscan_eps_m * cfg.dbscan_eps_m;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| dist2(&pc.points[i], &pc.points[j]) <= eps2).collect()
    };
    const UNVISITED: isize = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0isize;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < cfg.dbscan_min_pts {
            labels[i] = DBSCAN_NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: Vec<usize> = nbrs;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if labels[j] == DBSCAN_NOISE {
                labels[j] = cluster; // border point
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let jn = neighbors(j);
            if jn.len() >= cfg.dbscan_min_pts {
                queue.extend(jn);
            }
        }
        cluster += 1;
    }
    labels
}

/// Groups labelled points into clusters (noise dropped).
pub fn clusters_from_labels<S: Scalar>(pc: &PointCloud<S>, labels: &[isize]) -> Vec<PointCloud<S>> {
    let k = labels.iter().cloned().max().unwrap_or(-1);
    let mut out = vec![Vec::new(); (k + 1).max(0) as usize];
    for (p, l) in pc.points.iter().zip(labels) {
        if *l >= 0 {
            out[*l as usize].push(*p);
        }
    }
    out.into_iter().map(PointCloud::new).collect()
}

#[derive(Debug, Clone, Copy)]
struct Aabb<S: Scalar> {
    min: Point3<S>,
    max: Point3<S>,
}

impl<S: Scalar> Aabb<S> {
    fn of(pc: &PointCloud<S>) -> Self {
        let mut min = [S::infinity(); 3];
        let mut max = [S::neg_infinity(); 3];
        for p in &pc.points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Aabb { min, max }
    }

    fn overlaps_axis(&self, other: &Aabb<S>, k: usize, pad: S) -> bool {
        self.min[k] - pad <= other.max[k] && other.min[k] <= self.max[k] + pad
    }
}

/// Unions the largest cluster with clusters directly above/below it or lying
/// between it and the sensor, using bounding boxes padded by the configured
/// offset.
pub fn select_human<S: Scalar>(
    clusters: &[PointCloud<S>],
    cfg: &SegmentationConfig<S>,
) -> Result<PointCloud<S>> {
    let non_empty: Vec<&PointCloud<S>> = clusters.iter().filter(|c| !c.is_empty()).collect();
    if non_empty.is_empty() {
        return Err(SpikeError::Data("select_human: empty scene, no clusters".into()));
    }
    let largest_idx = non_empty
        .iter()
        .enumerate()
        .max_by_key(|(_, c)| c.len())
        .map(|(i, _)| i)
        .unwrap();
    let largest = non_empty[largest_idx];
    let lbox = Aabb::of(largest);
    let off = cfg.cluster_offset_m;
    let mut points = largest.points.clone();
    for (i, c) in non_empty.iter().enumerate() {
        if i == largest_idx {
            continue;
        }
        let cbox = Aabb::of(c);
        // above/below: same vertical column as the largest cluster
        let column = lbox.overlaps_axis(&cbox, 0, off) && lbox.overlaps_axis(&cbox, 2, off);
        // between the largest cluster and the sensor (sensor at z = 0)
        let between = lbox.overlaps_axis(&cbox, 0, off)
            && lbox.overlaps_axis(&cbox, 1, off)
            && cbox.min[2] < lbox.min[2] + off;
        if column || between {
            points.extend_from_slice(&c.points);
        }
    }
    Ok(PointCloud::new(points))
}

/// Uniform random resample to exactly `n` points: without replacement when
/// enough points exist, with replacement otherwise.
pub fn resample<S: Scalar>(pc: &PointCloud<S>, n: usize, seed: u64) -> Result<PointCloud<S>> {
    if pc.is_empty() {
        return Err(SpikeError::Data("resample: empty point cloud".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = pc.len();
    let points = if m >= n {
        // partial Fisher-Yates for the first n slots
        let mut idx: Vec<usize> = (0..m).collect();
        for i in 0..n {
            let j = rng.gen_range(i..m);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| pc.points[i]).collect()
    } else {
        (0..n).map(|_| pc.points[rng.gen_range(0..m)]).collect()
    };
    Ok(PointCloud::new(points))
}

/// Subtracts one centroid, computed over all points of all frames, from every
/// point. Returns the centroid so predictions can be un-centered.
pub fn center_sequence<S: Scalar>(
    seq: &PointCloudSequence<S>,
) -> Result<(PointCloudSequence<S>, Point3<S>)> {
    let total: usize = seq.frames.iter().map(|f| f.len()).sum();
    if total == 0 {
        return Err(SpikeError::Data("center_sequence: no points".into()));
    }
    let mut c = [S::zero(); 3];
    for f in &seq.frames {
        for p in &f.points {
            for k in 0..3 {
                c[k] = c[k] + p[k];
            }
        }
    }
    let n = S::from_usize_(total);
    for v in &mut c {
        *v = *v / n;
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            PointCloud::new(
                f.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect(),
            )
        })
        .collect();
    Ok((
        PointCloudSequence { frames, timestamps: seq.timestamps.clone() },
        c,
    ))
}

/// Joint index pairs swapped under x mirroring (left, right).
pub const MIRROR_PAIRS: [(usize, usize); 6] = [(2, 3), (4, 5), (6, 7), (9, 10), (11, 12), (13, 14)];

fn rotate_y<S: Scalar>(p: &Point3<S>, cos: S, sin: S) -> Point3<S> {
    // right-handed rotation about y: (1,0,0) -> (0,0,-1) at 90 degrees
    [p[0] * cos + p[2] * sin, p[1], -(p[0] * sin) + p[2] * cos]
}

/// One y-axis rotation in [-90, 90] degrees plus x mirroring with
/// probability 0.5, applied to every frame and to the joint labels.
/// Mirroring swaps left/right joint identities.
pub fn augment<S: Scalar>(
    seq: &PointCloudSequence<S>,
    joints: &SkeletonFrame<S>,
    seed: u64,
) -> (PointCloudSequence<S>, SkeletonFrame<S>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.gen_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2);
    let mirror = rng.gen_bool(0.5);
    apply_augment(seq, joints, S::from_f64(theta), mirror)
}

/// Deterministic core of [`augment`], exposed for tests.
pub fn apply_augment<S: Scalar>(
    seq: &PointCloudSequence<S>,
    joints: &SkeletonFrame<S>,
    theta: S,
    mirror: bool,
) -> (PointCloudSequence<S>, SkeletonFrame<S>) {
    let (cos, sin) = (theta.cos(), theta.sin());
    let xform = |p: &Point3<S>| -> Point3<S> {
        let mut q = rotate_y(p, cos, sin);
        if mirror {
            q[0] = -q[0];
        }
        q
    };
    let frames = seq
        .frames
        .iter()
        .map(|f| PointCloud::new(f.points.iter().map(&xform).collect()))
        .collect();
    let mut out_joints = joints.clone();
    for (j, p) in joints.joints.iter().enumerate() {
        out_joints.joints[j] = xform(p);
    }
    if mirror {
        for (l, r) in MIRROR_PAIRS {
            out_joints.joints.swap(l, r);
            out_joints.valid.swap(l, r);
        }
    }
    (
        PointCloudSequence { frames, timestamps: seq.timestamps.clone() },
        out_joints,
    )
}

/// Full raw-frame pipeline: back-project, threshold, de-floor, cluster,
/// select human, resample to `n`.
pub fn segment_human<S: Scalar>(
    frame: &DepthFrame<S>,
    cfg: &SegmentationConfig<S>,
    n: usize,
    seed: u64,
) -> Result<PointCloud<S>> {
    cfg.validate()?;
    let pc = depth_to_points(frame)?;
    let pc = threshold_background(&pc, cfg);
    let pc = remove_floor(&pc, cfg)?;
    let labels = dbscan(&pc, cfg);
    let clusters = clusters_from_labels(&pc, &labels);
    let human = select_human(&clusters, cfg)?;
    resample(&human, n, seed)
}
