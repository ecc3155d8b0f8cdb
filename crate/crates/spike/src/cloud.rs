//! Point cloud and sequence containers shared by the preprocessing,
//! tokenization, and data modules.

use crate::scalar::Scalar;
use crate::{Result, SpikeError};

/// A 3D point in camera coordinates (meters).
pub type Point3<S> = [S; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S: Scalar> {
    pub points: Vec<Point3<S>>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn new(points: Vec<Point3<S>>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Result<Point3<S>> {
        if self.points.is_empty() {
            return Err(SpikeError::Data("centroid of empty point cloud".into()));
        }
        let n = S::from_usize_(self.points.len());
        let mut c = [S::zero(); 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] = c[k] + p[k];
            }
        }
        for v in &mut c {
            *v = *v / n;
        }
        Ok(c)
    }
}

pub fn dist2<S: Scalar>(a: &Point3<S>, b: &Point3<S>) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn dist<S: Scalar>(a: &Point3<S>, b: &Point3<S>) -> S {
    dist2(a, b).sqrt()
}

/// T frames of equally sized point clouds; timestamps are frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSequence<S: Scalar> {
    pub frames: Vec<PointCloud<S>>,
    pub timestamps: Vec<usize>,
}

impl<S: Scalar> PointCloudSequence<S> {
    pub fn new(frames: Vec<PointCloud<S>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(SpikeError::Data("empty point cloud sequence".into()));
        }
        let n = frames[0].len();
        if frames.iter().any(|f| f.len() != n) {
            return Err(SpikeError::Data("all frames of a sequence must have the same point count".into()));
        }
        let timestamps = (0..frames.len()).collect();
        Ok(PointCloudSequence { frames, timestamps })
    }

    pub fn t_len(&self) -> usize {
        self.frames.len()
    }

    pub fn points_per_frame(&self) -> usize {
        self.frames[0].len()
    }
}
