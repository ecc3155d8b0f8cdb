//! Local-volume tokenization: farthest point sampling picks reference points
//! per frame, and a radius-limited ball query gathers fixed-size neighbor
//! displacements around each reference.

use crate::cloud::{dist2, Point3, PointCloud, PointCloudSequence};
use crate::model::HyperParams;
use crate::scalar::Scalar;
use crate::{Result, SpikeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One token: a reference point (with frame index) and its neighbor
/// displacements, each of norm <= r.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVolume<S: Scalar> {
    pub reference: Point3<S>,
    pub frame: usize,
    pub displacements: Vec<Point3<S>>,
}

/// T * N_v volumes in frame-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch<S: Scalar> {
    pub volumes: Vec<LocalVolume<S>>,
    pub volumes_per_frame: usize,
}

/// Greedy farthest point sampling. The first index is drawn uniformly under
/// `seed`; every later pick maximizes the minimum distance to the chosen set,
/// ties broken by lowest index. When k exceeds the cloud size, indices repeat
/// cyclically after exhaustion.
pub fn farthest_point_sampling<S: Scalar>(
    pc: &PointCloud<S>,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if pc.is_empty() {
        return Err(SpikeError::Data("farthest_point_sampling: empty point cloud".into()));
    }
    if k == 0 {
        return Err(SpikeError::Config("farthest_point_sampling: k must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..pc.len());
    Ok(fps_from_start(pc, k, start))
}

/// FPS with an explicit start index (deterministic core).
pub fn fps_from_start<S: Scalar>(pc: &PointCloud<S>, k: usize, start: usize) -> Vec<usize> {
    let n = pc.len();
    let mut chosen = Vec::with_capacity(k);
    let mut min_d2 = vec![S::infinity(); n];
    let mut current = start;
    for step in 0..k.min(n) {
        chosen.push(current);
        for j in 0..n {
            let d = dist2(&pc.points[current], &pc.points[j]);
            if d < min_d2[j] {
                min_d2[j] = d;
            }
        }
        if step + 1 == k.min(n) {
            break;
        }
        let mut best = S::neg_infinity();
        let mut best_j = 0usize;
        for (j, d) in min_d2.iter().enumerate() {
            if *d > best {
                best = *d;
                best_j = j;
            }
        }
        current = best_j;
    }
    // cyclic repetition once every point is used
    let base = chosen.clone();
    while chosen.len() < k {
        chosen.push(base[(chosen.len() - n) % n]);
    }
    chosen
}

/// Gathers up to `n_s` neighbors within radius `r` of `center`, stored as
/// displacements. When more than `n_s` candidates exist, FPS started at the
/// candidate nearest the center selects the subset; when fewer exist the
/// nearest candidate is duplicated; an isolated center yields all-zero
/// displacements.
pub fn ball_group<S: Scalar>(
    pc: &PointCloud<S>,
    center: &Point3<S>,
    frame: usize,
    r: S,
    n_s: usize,
) -> LocalVolume<S> {
    let r2 = r * r;
    let candidates: Vec<usize> =
        (0..pc.len()).filter(|&i| dist2(&pc.points[i], center) <= r2).collect();
    let displacements: Vec<Point3<S>> = if candidates.is_empty() {
        vec![[S::zero(); 3]; n_s]
    } else {
        let nearest_pos = candidates
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                dist2(&pc.points[a], center)
                    .partial_cmp(&dist2(&pc.points[b], center))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(pos, _)| pos)
            .unwrap();
        let cand_cloud = PointCloud::new(candidates.iter().map(|&i| pc.points[i]).collect());
        let picked: Vec<usize> = if candidates.len() > n_s {
            fps_from_start(&cand_cloud, n_s, nearest_pos)
        } else {
            let mut v: Vec<usize> = (0..candidates.len()).collect();
            while v.len() < n_s {
                v.push(nearest_pos);
            }
            v
        };
        picked
            .into_iter()
            .map(|pos| {
                let p = cand_cloud.points[pos];
                [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
            })
            .collect()
    };
    LocalVolume { reference: *center, frame, displacements }
}

/// Splits each frame into N_v volumes around FPS references. Grouping never
/// crosses frames.
pub fn tokenize<S: Scalar>(
    seq: &PointCloudSequence<S>,
    hp: &HyperParams<S>,
    seed: u64,
) -> Result<TokenBatch<S>> {
    let mut volumes = Vec::with_capacity(seq.t_len() * hp.n_v);
    for (t, frame) in seq.frames.iter().enumerate() {
        let refs = farthest_point_sampling(frame, hp.n_v, seed.wrapping_add(t as u64))?;
        for idx in refs {
            let center = frame.points[idx];
            volumes.push(ball_group(frame, &center, t, hp.r, hp.n_s));
        }
    }
    Ok(TokenBatch { volumes, volumes_per_frame: hp.n_v })
}
