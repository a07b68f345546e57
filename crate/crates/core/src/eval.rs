//! Skeleton localization metrics (tolerance-matched precision/recall and
//! maximum F-measure) and segmentation metrics (best-match F, Covering).

use std::ops::{Add, AddAssign};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, ScaleMap, SkeletonMap};
use crate::inference::{threshold_binarize, ThinnedSkeleton};

/// Default match tolerance as a fraction of the image diagonal.
pub const DEFAULT_KAPPA: f64 = 0.0075;

/// How predicted and ground-truth pixels within tolerance are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Nearest pairs first, each accepted when both ends are still free.
    #[default]
    Greedy,
    /// Maximum-cardinality matching: the greedy result extended along
    /// augmenting paths.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    pub kappa: f64,
    #[serde(default)]
    pub matcher: Matcher,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        MatchTolerance {
            kappa: DEFAULT_KAPPA,
            matcher: Matcher::Greedy,
        }
    }
}

impl MatchTolerance {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be >= 0, got {kappa}"
            )));
        }
        Ok(MatchTolerance {
            kappa,
            matcher: Matcher::Greedy,
        })
    }

    pub fn with_matcher(self, matcher: Matcher) -> Self {
        MatchTolerance { matcher, ..self }
    }

    /// Maximum match distance in pixels for a width × height image.
    pub fn max_distance(&self, width: usize, height: usize) -> f64 {
        self.kappa * ((width * width + height * height) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-to-one matching of predicted to ground-truth skeleton pixels: all
/// pairs within `max_distance` are taken in order of increasing distance
/// (ties by predicted then ground-truth raster index) and accepted when
/// both ends are still free. Returns matched `(predicted, ground_truth)`
/// coordinates.
pub fn match_pairs(
    pred: &Grid<bool>,
    gt: &SkeletonMap,
    max_distance: f64,
) -> Result<Vec<((usize, usize), (usize, usize))>> {
    match_pairs_with(pred, gt, max_distance, Matcher::Greedy)
}

pub fn match_pairs_with(
    pred: &Grid<bool>,
    gt: &SkeletonMap,
    max_distance: f64,
    matcher: Matcher,
) -> Result<Vec<((usize, usize), (usize, usize))>> {
    if !pred.same_size(gt) {
        return Err(Error::shape(
            "match_skeletons",
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            ),
        ));
    }
    let reach = max_distance.floor() as isize;
    let limit = max_distance * max_distance;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (x, y, &p) in pred.iter_xy() {
        if !p {
            continue;
        }
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let d2 = (dx * dx + dy * dy) as f64;
                let (gx, gy) = (x as isize + dx, y as isize + dy);
                if d2 <= limit && gt.contains(gx, gy) && gt.get(gx as usize, gy as usize) {
                    pairs.push((d2, pred.idx(x, y), gt.idx(gx as usize, gy as usize)));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n = pred.data.len();
    let mut pred_mate: Vec<Option<usize>> = vec![None; n];
    let mut gt_mate: Vec<Option<usize>> = vec![None; gt.data.len()];
    for &(_, p, g) in &pairs {
        if pred_mate[p].is_none() && gt_mate[g].is_none() {
            pred_mate[p] = Some(g);
            gt_mate[g] = Some(p);
        }
    }
    if matcher == Matcher::Optimal {
        augment(&pairs, &mut pred_mate, &mut gt_mate);
    }
    let w = pred.width;
    Ok(pairs
        .iter()
        .filter(|&&(_, p, g)| pred_mate[p] == Some(g))
        .map(|&(_, p, g)| ((p % w, p / w), (g % w, g / w)))
        .collect())
}

/// Extends a matching to maximum cardinality with augmenting paths
/// (Kuhn's algorithm). Candidates are tried nearest first.
fn augment(
    pairs: &[(f64, usize, usize)],
    pred_mate: &mut [Option<usize>],
    gt_mate: &mut [Option<usize>],
) {
    let mut adjacency: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for &(_, p, g) in pairs {
        adjacency.entry(p).or_default().push(g);
    }
    let mut free: Vec<usize> = adjacency
        .keys()
        .copied()
        .filter(|&p| pred_mate[p].is_none())
        .collect();
    free.sort_unstable();

    fn try_path(
        p: usize,
        adjacency: &std::collections::HashMap<usize, Vec<usize>>,
        visited: &mut std::collections::HashSet<usize>,
        pred_mate: &mut [Option<usize>],
        gt_mate: &mut [Option<usize>],
    ) -> bool {
        for &g in &adjacency[&p] {
            if !visited.insert(g) {
                continue;
            }
            let reroutable = match gt_mate[g] {
                None => true,
                Some(q) => try_path(q, adjacency, visited, pred_mate, gt_mate),
            };
            if reroutable {
                pred_mate[p] = Some(g);
                gt_mate[g] = Some(p);
                return true;
            }
        }
        false
    }

    loop {
        let mut grew = false;
        for &p in &free {
            if pred_mate[p].is_some() {
                continue;
            }
            let mut visited = std::collections::HashSet::new();
            grew |= try_path(p, &adjacency, &mut visited, pred_mate, gt_mate);
        }
        if !grew {
            break;
        }
    }
}

/// Counts from [`match_pairs`]: matched predictions are true positives.
pub fn match_skeletons(
    pred: &Grid<bool>,
    gt: &SkeletonMap,
    max_distance: f64,
) -> Result<MatchCounts> {
    match_skeletons_with(pred, gt, max_distance, Matcher::Greedy)
}

pub fn match_skeletons_with(
    pred: &Grid<bool>,
    gt: &SkeletonMap,
    max_distance: f64,
    matcher: Matcher,
) -> Result<MatchCounts> {
    let tp = match_pairs_with(pred, gt, max_distance, matcher)?.len() as u64;
    Ok(MatchCounts {
        tp,
        fp: pred.count() as u64 - tp,
        fn_: gt.count() as u64 - tp,
    })
}

/// The 99 thresholds 0.01, 0.02, …, 0.99.
pub fn default_thresholds() -> Vec<f32> {
    (1..100).map(|i| (i as f64 / 100.0) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub best_f: f64,
    pub best_threshold: f32,
}

/// Per-threshold match counts for one image.
pub fn image_counts(
    thinned: &ThinnedSkeleton,
    gt: &SkeletonMap,
    thresholds: &[f32],
    tol: &MatchTolerance,
) -> Result<Vec<MatchCounts>> {
    let d = tol.max_distance(gt.width, gt.height);
    thresholds
        .iter()
        .map(|&t| match_skeletons_with(&threshold_binarize(thinned, t), gt, d, tol.matcher))
        .collect()
}

/// Dataset-level curve: counts are summed over images before dividing.
pub fn pr_curve(
    items: &[(ThinnedSkeleton, SkeletonMap)],
    thresholds: &[f32],
    tol: &MatchTolerance,
) -> Result<PrCurve> {
    if thresholds.is_empty()
        || thresholds.windows(2).any(|w| w[0] >= w[1])
        || thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
    {
        return Err(Error::InvalidArgument(
            "thresholds must be strictly increasing in (0, 1)".into(),
        ));
    }
    let per_image: Vec<Vec<MatchCounts>> = items
        .par_iter()
        .map(|(thin, gt)| image_counts(thin, gt, thresholds, tol))
        .collect::<Result<_>>()?;
    Ok(curve_from_counts(thresholds, &per_image))
}

pub fn curve_from_counts(thresholds: &[f32], per_image: &[Vec<MatchCounts>]) -> PrCurve {
    let mut totals = vec![MatchCounts::default(); thresholds.len()];
    for counts in per_image {
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += *c;
        }
    }
    let points: Vec<PrPoint> = thresholds
        .iter()
        .zip(&totals)
        .map(|(&threshold, c)| PrPoint {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            f: c.f_measure(),
            counts: *c,
        })
        .collect();
    let best = points
        .iter()
        .fold(None::<&PrPoint>, |best, p| match best {
            Some(b) if b.f >= p.f => Some(b),
            _ => Some(p),
        })
        .expect("at least one threshold");
    PrCurve {
        best_f: best.f,
        best_threshold: best.threshold,
        points,
    }
}

/// Absolute differences between predicted and ground-truth scales over
/// matched pixel pairs.
pub fn matched_scale_errors(
    pairs: &[((usize, usize), (usize, usize))],
    predicted: &ScaleMap,
    ground_truth: &ScaleMap,
) -> Vec<f64> {
    pairs
        .iter()
        .map(|&((px, py), (gx, gy))| {
            (predicted.get(px, py) as f64 - ground_truth.get(gx, gy) as f64).abs()
        })
        .collect()
}

/// Median (upper median for even counts); `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.get(v.len() / 2).copied()
}

#[derive(Serialize, Deserialize)]
struct PrRow {
    threshold: f32,
    precision: f64,
    recall: f64,
    f: f64,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

pub fn write_pr_csv(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &curve.points {
        w.serialize(PrRow {
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            f: p.f,
            tp: p.counts.tp,
            fp: p.counts.fp,
            fn_: p.counts.fn_,
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    crate::tensor::io::atomic_write(path, &bytes)
}

pub fn read_pr_csv(path: &Path) -> Result<PrCurve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut thresholds = Vec::new();
    let mut counts = Vec::new();
    for row in r.deserialize::<PrRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        thresholds.push(row.threshold);
        counts.push(MatchCounts {
            tp: row.tp,
            fp: row.fp,
            fn_: row.fn_,
        });
    }
    if thresholds.is_empty() {
        return Err(Error::format(path, "no rows"));
    }
    Ok(curve_from_counts(&thresholds, &[counts]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    /// Mean over ground-truth segments of the best F-measure of any generated segment.
    pub f_measure: f64,
    /// Per image, best IoU of each ground-truth segment weighted by its size;
    /// averaged over images, in percent.
    pub covering: f64,
    pub avg_num_segments: f64,
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

/// Scores generated segments against ground-truth segments, one
/// `(generated, ground_truth)` pair of lists per image.
pub fn seg_scores(images: &[(Vec<BinaryMask>, Vec<BinaryMask>)]) -> Result<SegmentationScore> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images to score".into()));
    }
    let per_image: Vec<(f64, usize, f64, usize)> = images
        .par_iter()
        .map(|(generated, truth)| {
            let (mut f_sum, mut cover, mut weight) = (0.0, 0.0, 0usize);
            for g in truth {
                let (mut best_f, mut best_iou) = (0.0f64, 0.0f64);
                for s in generated {
                    if !s.same_size(g) {
                        return Err(Error::shape(
                            "seg_scores",
                            format!(
                                "segment {}x{} vs ground truth {}x{}",
                                s.width, s.height, g.width, g.height
                            ),
                        ));
                    }
                    let (inter, ns, ng) = overlap(s, g);
                    if ns + ng > 0 {
                        best_f = best_f.max(2.0 * inter as f64 / (ns + ng) as f64);
                        best_iou = best_iou.max(inter as f64 / (ns + ng - inter) as f64);
                    }
                }
                let size = g.count();
                f_sum += best_f;
                cover += best_iou * size as f64;
                weight += size;
            }
            let covering = if weight == 0 {
                0.0
            } else {
                cover / weight as f64
            };
            Ok((f_sum, truth.len(), covering, generated.len()))
        })
        .collect::<Result<_>>()?;
    let gt_total: usize = per_image.iter().map(|r| r.1).sum();
    let f_total: f64 = per_image.iter().map(|r| r.0).sum();
    let n = images.len() as f64;
    Ok(SegmentationScore {
        f_measure: if gt_total == 0 {
            0.0
        } else {
            f_total / gt_total as f64
        },
        covering: 100.0 * per_image.iter().map(|r| r.2).sum::<f64>() / n,
        avg_num_segments: per_image.iter().map(|r| r.3).sum::<usize>() as f64 / n,
    })
}
