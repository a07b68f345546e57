//! Downstream uses of skeletons with scales: object masks rebuilt as disk
//! unions, and objectness rescoring of box proposals.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, BinaryMask, Grid, ScaleMap, SkeletonMap};
use crate::tensor::Tensor;

/// One 8-connected skeleton component with its per-pixel scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSegment {
    pub id: usize,
    pub pixels: Vec<(usize, usize)>,
    pub scales: Vec<f32>,
}

pub fn group_segments(skeleton: &SkeletonMap, scale: &ScaleMap) -> Result<Vec<SkeletonSegment>> {
    if !skeleton.same_size(scale) {
        return Err(Error::shape(
            "group_segments",
            format!(
                "skeleton {}x{} vs scale {}x{}",
                skeleton.width, skeleton.height, scale.width, scale.height
            ),
        ));
    }
    Ok(connected_components(skeleton)
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| {
            let scales = pixels.iter().map(|&(x, y)| scale.get(x, y)).collect();
            SkeletonSegment { id, pixels, scales }
        })
        .collect())
}

/// Membership rule for a rasterized disk of diameter `s` centered on a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskRule {
    /// dist < s/2. With scale = 2 × distance to the nearest background pixel
    /// center, this disk never reaches that background pixel.
    #[default]
    Strict,
    /// dist ≤ s/2.
    Inclusive,
}

/// Squared pixel distances are integers; scales stored as f32 may sit a few
/// ulps off the exact radius, which must not flip membership.
const RADIUS_SLACK: f64 = 1e-3;

impl DiskRule {
    #[inline]
    fn contains(self, d2: f64, radius: f64) -> bool {
        match self {
            DiskRule::Strict => d2 < radius * radius - RADIUS_SLACK,
            DiskRule::Inclusive => d2 <= radius * radius + RADIUS_SLACK,
        }
    }
}

/// Adds the disk of diameter `scale` centered at (cx, cy) to `mask`.
pub fn stamp_disk(mask: &mut BinaryMask, cx: usize, cy: usize, scale: f32, rule: DiskRule) {
    if !(scale > 0.0) {
        return;
    }
    let r = scale as f64 / 2.0;
    let reach = r.floor() as isize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if mask.contains(x, y) && rule.contains((dx * dx + dy * dy) as f64, r) {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
}

/// Union of the disks of one segment.
pub fn reconstruct_mask(
    segment: &SkeletonSegment,
    width: usize,
    height: usize,
    rule: DiskRule,
) -> BinaryMask {
    let mut mask = Grid::new(width, height, false);
    for (&(x, y), &s) in segment.pixels.iter().zip(&segment.scales) {
        stamp_disk(&mut mask, x, y, s, rule);
    }
    mask
}

/// Union of disks over every skeleton pixel.
pub fn reconstruct_all(skeleton: &SkeletonMap, scale: &ScaleMap, rule: DiskRule) -> BinaryMask {
    let mut mask = Grid::new(skeleton.width, skeleton.height, false);
    for (x, y) in skeleton.points() {
        stamp_disk(&mut mask, x, y, scale.get(x, y), rule);
    }
    mask
}

/// Expected receptive field under the fused skeleton classes:
/// ŝ_j = Σ_{i≥1} r_i Pr(z_j = i).
pub fn fsds_scale_estimate(fused_probs: &Tensor, receptive_fields: &[u32]) -> Result<ScaleMap> {
    let [b, c, h, w] = fused_probs.shape();
    if b != 1 || c != receptive_fields.len() + 1 {
        return Err(Error::shape(
            "fsds_scale_estimate",
            format!(
                "probabilities {:?} for {} receptive fields",
                fused_probs.shape(),
                receptive_fields.len()
            ),
        ));
    }
    let mut acc = vec![0.0f64; h * w];
    for (i, &r) in receptive_fields.iter().enumerate() {
        for (a, &p) in acc.iter_mut().zip(fused_probs.plane(0, i + 1)) {
            *a += r as f64 * p as f64;
        }
    }
    Grid::from_vec(w, h, acc.into_iter().map(|v| v as f32).collect())
}

/// Axis-aligned box covering pixels x..x+w by y..y+h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl PixelBox {
    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    #[inline]
    pub fn contains(&self, px: i64, py: i64) -> bool {
        px >= self.x && py >= self.y && px < self.x + self.w && py < self.y + self.h
    }

    /// Smallest box containing every set pixel, `None` for an empty mask.
    pub fn bounding(mask: &BinaryMask) -> Option<PixelBox> {
        let pts = mask.points();
        let (x0, x1) = pts
            .iter()
            .map(|p| p.0)
            .fold((usize::MAX, 0), |(a, b), v| (a.min(v), b.max(v)));
        let (y0, y1) = pts
            .iter()
            .map(|p| p.1)
            .fold((usize::MAX, 0), |(a, b), v| (a.min(v), b.max(v)));
        (!pts.is_empty()).then(|| PixelBox {
            x: x0 as i64,
            y: y0 as i64,
            w: (x1 - x0 + 1) as i64,
            h: (y1 - y0 + 1) as i64,
        })
    }

    pub fn intersection(&self, other: &PixelBox) -> i64 {
        let w = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let h = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        w.max(0) * h.max(0)
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: PixelBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: PixelBox,
    pub base_score: f64,
    /// Coverage ratio in [0, 1].
    pub ratio: f64,
    pub score: f64,
}

/// Coverage ratio of box `b` by the bounding boxes of the part masks that
/// intersect it: |∪(B_M ∩ B)| / |(∪B_M) ∪ B|.
pub fn coverage_ratio(b: &PixelBox, parts: &[(PixelBox, &BinaryMask)]) -> f64 {
    if b.area() <= 0 {
        return 0.0;
    }
    let hits: Vec<PixelBox> = parts
        .iter()
        .filter(|(pb, m)| {
            pb.intersection(b) > 0
                && m.points()
                    .iter()
                    .any(|&(x, y)| b.contains(x as i64, y as i64))
        })
        .map(|(pb, _)| *pb)
        .collect();
    if hits.is_empty() {
        return 0.0;
    }
    let x0 = hits
        .iter()
        .map(|h| h.x)
        .chain([b.x])
        .min()
        .expect("nonempty");
    let y0 = hits
        .iter()
        .map(|h| h.y)
        .chain([b.y])
        .min()
        .expect("nonempty");
    let x1 = hits
        .iter()
        .map(|h| h.x + h.w)
        .chain([b.x + b.w])
        .max()
        .expect("nonempty");
    let y1 = hits
        .iter()
        .map(|h| h.y + h.h)
        .chain([b.y + b.h])
        .max()
        .expect("nonempty");
    let (mut num, mut den) = (0u64, 0u64);
    for py in y0..y1 {
        for px in x0..x1 {
            let in_b = b.contains(px, py);
            let in_parts = hits.iter().any(|h| h.contains(px, py));
            num += (in_b && in_parts) as u64;
            den += (in_b || in_parts) as u64;
        }
    }
    num as f64 / den as f64
}

/// h_B = coverage ratio × base score, for every proposal.
pub fn rescore_proposals(proposals: &[Proposal], masks: &[BinaryMask]) -> Vec<ScoredBox> {
    let parts: Vec<(PixelBox, &BinaryMask)> = masks
        .iter()
        .filter_map(|m| PixelBox::bounding(m).map(|b| (b, m)))
        .collect();
    proposals
        .par_iter()
        .map(|p| {
            let ratio = coverage_ratio(&p.bbox, &parts);
            ScoredBox {
                bbox: p.bbox,
                base_score: p.score,
                ratio,
                score: ratio * p.score,
            }
        })
        .collect()
}

/// Fraction of ground-truth boxes matched at IoU ≥ `iou` by the top-N
/// proposals of their image, for each N in `counts`. `ranked[i]` must be
/// sorted by descending score.
pub fn detection_rate_curve(
    ranked: &[Vec<PixelBox>],
    ground_truth: &[Vec<PixelBox>],
    iou: f64,
    counts: &[usize],
) -> Vec<(usize, f64)> {
    let total: usize = ground_truth.iter().map(Vec::len).sum();
    counts
        .iter()
        .map(|&n| {
            let hit: usize = ranked
                .iter()
                .zip(ground_truth)
                .map(|(props, gts)| {
                    gts.iter()
                        .filter(|g| props.iter().take(n).any(|p| p.iou(g) >= iou))
                        .count()
                })
                .sum();
            (
                n,
                if total == 0 {
                    0.0
                } else {
                    hit as f64 / total as f64
                },
            )
        })
        .collect()
}

/// Label image with gray level k + 1 for mask k; later masks win where
/// masks overlap. At most 255 masks.
pub fn encode_labels(masks: &[BinaryMask], width: usize, height: usize) -> Result<Grid<u8>> {
    if masks.len() > 255 {
        return Err(Error::InvalidArgument(format!(
            "{} segments exceed the 255 gray levels",
            masks.len()
        )));
    }
    let mut out = Grid::new(width, height, 0u8);
    for (k, m) in masks.iter().enumerate() {
        if !m.same_size(&out) {
            return Err(Error::shape(
                "encode_labels",
                format!("mask {}x{} vs {width}x{height}", m.width, m.height),
            ));
        }
        for (o, &v) in out.data.iter_mut().zip(&m.data) {
            if v {
                *o = (k + 1) as u8;
            }
        }
    }
    Ok(out)
}

/// One mask per nonzero gray level present, in increasing level order.
pub fn decode_labels(labels: &Grid<u8>) -> Vec<BinaryMask> {
    let mut present = [false; 256];
    for &v in &labels.data {
        present[v as usize] = true;
    }
    (1..256)
        .filter(|&l| present[l])
        .map(|l| labels.map(|&v| v as usize == l))
        .collect()
}

#[derive(Deserialize)]
struct ProposalRow {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    score: f64,
}

#[derive(Serialize)]
struct ScoredRow {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    score: f64,
    ratio: f64,
    h_b: f64,
}

/// Proposals from a CSV with header `x,y,w,h,score`; scores must lie in [0, 1].
pub fn read_proposals(path: &Path) -> Result<Vec<Proposal>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize::<ProposalRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            if !(0.0..=1.0).contains(&row.score) {
                return Err(Error::format(
                    path,
                    format!("row {}: score {} outside [0, 1]", i + 1, row.score),
                ));
            }
            Ok(Proposal {
                bbox: PixelBox {
                    x: row.x,
                    y: row.y,
                    w: row.w,
                    h: row.h,
                },
                score: row.score,
            })
        })
        .collect()
}

/// Detection-rate curve as CSV `proposals,detection_rate`.
pub fn write_detection_rate(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut text = String::from("proposals,detection_rate\n");
    for (n, rate) in curve {
        text.push_str(&format!("{n},{rate}\n"));
    }
    crate::tensor::io::atomic_write(path, text.as_bytes())
}

/// Boxes from a CSV with header `x,y,w,h` (extra columns ignored).
pub fn read_boxes(path: &Path) -> Result<Vec<PixelBox>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize::<PixelBox>()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Rescored boxes as CSV `x,y,w,h,score,ratio,h_b`.
pub fn write_scored(path: &Path, boxes: &[ScoredBox]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in boxes {
        w.serialize(ScoredRow {
            x: b.bbox.x,
            y: b.bbox.y,
            w: b.bbox.w,
            h: b.bbox.h,
            score: b.base_score,
            ratio: b.ratio,
            h_b: b.score,
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    crate::tensor::io::atomic_write(path, &bytes)
}
