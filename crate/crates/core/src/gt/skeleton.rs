//! Medial-axis extraction from binary masks.
//!
//! Ridge pixels of the Euclidean distance transform are found from the
//! feature transform: two 4-adjacent foreground pixels whose nearest
//! background points lie far apart straddle the medial axis, and the one
//! closer to the bisector of those points is marked. Pairs whose feature
//! points are close together (boundary noise) or subtend a small angle
//! (shallow convex corners) are pruned. The marked set is then thinned to
//! unit width by removing simple points in order of increasing distance.

use super::distance::feature_transform;
use crate::grid::{connectivity_number, neighbor_bits, BinaryMask, Grid, ScaleMap, SkeletonMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonParams {
    /// Minimum distance between the feature points of an adjacent pair.
    pub min_feature_gap: f64,
    /// Minimum angle (degrees) the two feature points subtend at the pair's
    /// midpoint.
    pub min_angle_deg: f64,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        SkeletonParams {
            min_feature_gap: 3.0,
            min_angle_deg: 75.0,
        }
    }
}

/// Skeleton and scale map (2 × distance to the nearest background pixel
/// center on skeleton pixels, zero elsewhere).
pub fn skeletonize(mask: &BinaryMask) -> (SkeletonMap, ScaleMap) {
    skeletonize_with(mask, &SkeletonParams::default())
}

pub fn skeletonize_with(mask: &BinaryMask, params: &SkeletonParams) -> (SkeletonMap, ScaleMap) {
    let (w, h) = (mask.width, mask.height);
    let mut skel = Grid::new(w, h, false);
    let mut scale = Grid::new(w, h, 0.0f32);
    if mask.count() == 0 {
        return (skel, scale);
    }
    let ft = feature_transform(mask);
    let gap2 = params.min_feature_gap * params.min_feature_gap;
    let cos_max = params.min_angle_deg.to_radians().cos();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for (dx, dy) in [(1usize, 0usize), (0, 1)] {
                let (qx, qy) = (x + dx, y + dy);
                if qx >= w || qy >= h || !mask.get(qx, qy) {
                    continue;
                }
                let fp = ft.nearest.get(x, y);
                let fq = ft.nearest.get(qx, qy);
                let (ex, ey) = ((fp.0 - fq.0) as f64, (fp.1 - fq.1) as f64);
                if ex * ex + ey * ey <= gap2 {
                    continue;
                }
                let (mx, my) = (x as f64 + dx as f64 * 0.5, y as f64 + dy as f64 * 0.5);
                let (ax, ay) = (fp.0 as f64 - mx, fp.1 as f64 - my);
                let (bx, by) = (fq.0 as f64 - mx, fq.1 as f64 - my);
                let norm = ((ax * ax + ay * ay) * (bx * bx + by * by)).sqrt();
                if norm == 0.0 || (ax * bx + ay * by) / norm > cos_max {
                    continue;
                }
                // Sign of the bisector function at the midpoint decides
                // which pixel of the pair is closer to the axis.
                let sx = (fp.0 + fq.0) as f64 - (x + qx) as f64;
                let sy = (fp.1 + fq.1) as f64 - (y + qy) as f64;
                let crit = ex * sx + ey * sy;
                if crit >= 0.0 {
                    skel.set(x, y, true);
                }
                if crit <= 0.0 {
                    skel.set(qx, qy, true);
                }
            }
        }
    }

    let dist = ft.sq_dist.map(|&d| d.sqrt());
    thin(&mut skel, &dist);
    for (i, on) in skel.data.iter().enumerate() {
        if *on {
            scale.data[i] = (2.0 * dist.data[i]) as f32;
        }
    }
    (skel, scale)
}

/// Removes simple, non-end pixels in order of increasing `priority` until
/// none remain.
fn thin(s: &mut Grid<bool>, priority: &Grid<f64>) {
    let mut order: Vec<(usize, usize)> = s.points();
    order.sort_by(|a, b| {
        priority
            .get(a.0, a.1)
            .total_cmp(&priority.get(b.0, b.1))
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    loop {
        let mut changed = false;
        for &(x, y) in &order {
            if !s.get(x, y) {
                continue;
            }
            let n = neighbor_bits(s, x, y);
            let count = n.iter().filter(|&&v| v).count();
            if count >= 2 && connectivity_number(&n) == 1 {
                s.set(x, y, false);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}
