//! Minimal SVG rendering: orthographic x/y projection of a point cloud with
//! skeleton overlays, used by the predict subcommand for quick inspection.

use crate::cloud::PointCloud;
use crate::data::BONES;
use crate::eval::SkeletonFrame;
use crate::scalar::Scalar;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 24.0;

struct Mapper {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Mapper {
    fn fit(xs: &[f64], ys: &[f64]) -> Mapper {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&x, &y) in xs.iter().zip(ys) {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            (min_x, max_x, min_y, max_y) = (0.0, 1.0, 0.0, 1.0);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-6);
        Mapper { min_x, min_y, scale: (WIDTH - 2.0 * MARGIN) / span }
    }

    // camera y grows downward, matching SVG's coordinate system
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN + (x - self.min_x) * self.scale, MARGIN + (y - self.min_y) * self.scale)
    }
}

fn skeleton_paths<S: Scalar>(svg: &mut String, m: &Mapper, sk: &SkeletonFrame<S>, color: &str, dashed: bool) {
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    for (a, b) in BONES {
        if !sk.valid[a] || !sk.valid[b] {
            continue;
        }
        let (x1, y1) = m.map(sk.joints[a][0].as_f64(), sk.joints[a][1].as_f64());
        let (x2, y2) = m.map(sk.joints[b][0].as_f64(), sk.joints[b][1].as_f64());
        svg.push_str(&format!(
            "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\n"
        ));
    }
    for (j, p) in sk.joints.iter().enumerate() {
        if !sk.valid[j] {
            continue;
        }
        let (cx, cy) = m.map(p[0].as_f64(), p[1].as_f64());
        svg.push_str(&format!("<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"4\" fill=\"{color}\"/>\n"));
    }
}

/// Renders the cloud (gray dots), prediction (blue), and optional ground
/// truth (green, dashed) as a standalone SVG document.
pub fn render_svg<S: Scalar>(
    cloud: &PointCloud<S>,
    pred: &SkeletonFrame<S>,
    target: Option<&SkeletonFrame<S>>,
) -> String {
    let mut xs: Vec<f64> = cloud.points.iter().map(|p| p[0].as_f64()).collect();
    let mut ys: Vec<f64> = cloud.points.iter().map(|p| p[1].as_f64()).collect();
    for sk in std::iter::once(pred).chain(target) {
        for (j, p) in sk.joints.iter().enumerate() {
            if sk.valid[j] {
                xs.push(p[0].as_f64());
                ys.push(p[1].as_f64());
            }
        }
    }
    let m = Mapper::fit(&xs, &ys);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for p in &cloud.points {
        let (cx, cy) = m.map(p[0].as_f64(), p[1].as_f64());
        svg.push_str(&format!("<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"1\" fill=\"#bbbbbb\"/>\n"));
    }
    if let Some(t) = target {
        skeleton_paths(&mut svg, &m, t, "#2a9d2a", true);
    }
    skeleton_paths(&mut svg, &m, pred, "#1f5fbf", false);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::NUM_JOINTS;

    fn frame(valid: Vec<bool>) -> SkeletonFrame<f64> {
        let joints = (0..NUM_JOINTS).map(|j| [j as f64 * 0.1, 0.2, 1.0]).collect();
        SkeletonFrame::new(joints, valid).unwrap()
    }

    #[test]
    fn produces_wellformed_svg_with_all_bones() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        let pred = frame(vec![true; NUM_JOINTS]);
        let svg = render_svg(&cloud, &pred, Some(&pred));
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        // 14 bones per skeleton, two skeletons drawn
        assert_eq!(svg.matches("<line").count(), 28);
        assert_eq!(svg.matches("stroke-dasharray").count(), 14);
    }

    #[test]
    fn invalid_joints_are_omitted() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 1.0]]);
        let mut valid = vec![true; NUM_JOINTS];
        valid[0] = false; // head: drops the head-neck bone and one circle
        let pred = frame(valid);
        let svg = render_svg(&cloud, &pred, None);
        assert_eq!(svg.matches("<line").count(), 13);
        // 1 cloud point + 14 valid joints
        assert_eq!(svg.matches("<circle").count(), 15);
    }

    #[test]
    fn degenerate_extent_does_not_panic() {
        let cloud = PointCloud::new(vec![[0.5, 0.5, 1.0]; 3]);
        let sk = SkeletonFrame::new(vec![[0.5, 0.5, 1.0]; NUM_JOINTS], vec![true; NUM_JOINTS]).unwrap();
        let svg = render_svg(&cloud, &sk, None);
        assert!(svg.contains("<circle"));
    }
}
