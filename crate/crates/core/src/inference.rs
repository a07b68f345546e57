//! From network activations to skeleton responses, scales and thinned
//! binary skeletons.

use crate::error::{Error, Result};
use crate::grid::{connectivity_number, neighbor_bits, Grid, ScaleMap};
use crate::network::{crop, forward, NetworkParams, SsoActivations};
use crate::tensor::Tensor;

/// Per-pixel skeleton probability, most likely stage and predicted scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonResponse {
    /// 1 − Pr(z = 0).
    pub response: Grid<f32>,
    /// argmax over stages 1..=M of Pr(z = i); ties go to the smaller stage.
    pub stage: Grid<u8>,
    /// Predicted diameter in pixels, within [1, r_stage].
    pub scale: ScaleMap,
}

/// Decodes fused probabilities and stage-wise scale regressions. The
/// normalized scale is clamped to [−1, 1] and the decoded scale to at least
/// one pixel.
pub fn predict(act: &SsoActivations, receptive_fields: &[u32]) -> Result<SkeletonResponse> {
    let m = act.scales.len();
    let probs = &act.fused_probs;
    let [b, c, h, w] = probs.shape();
    if b != 1 || c != m + 1 || receptive_fields.len() != m {
        return Err(Error::shape(
            "predict",
            format!(
                "fused {:?}, {m} side outputs, {} receptive fields",
                probs.shape(),
                receptive_fields.len()
            ),
        ));
    }
    let mut response = Grid::new(w, h, 0.0f32);
    let mut stage = Grid::new(w, h, 1u8);
    let mut scale = Grid::new(w, h, 0.0f32);
    let bg = probs.plane(0, 0);
    for j in 0..h * w {
        response.data[j] = (1.0 - bg[j] as f64).clamp(0.0, 1.0) as f32;
        let mut best = 1;
        let mut best_p = probs.plane(0, 1)[j];
        for i in 2..=m {
            let p = probs.plane(0, i)[j];
            if p > best_p {
                best = i;
                best_p = p;
            }
        }
        stage.data[j] = best as u8;
        let r = receptive_fields[best - 1] as f32;
        let norm = act.scales[best - 1].data()[j].clamp(-1.0, 1.0);
        scale.data[j] = ((norm + 1.0) / 2.0 * r).clamp(1.0, r);
    }
    Ok(SkeletonResponse {
        response,
        stage,
        scale,
    })
}

/// Activations and decoded response for a gray image in [0, 1] of any
/// size; the image is zero-padded for the network and outputs are cropped
/// back.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub fused_probs: Tensor,
    pub response: SkeletonResponse,
}

pub fn predict_image(params: &NetworkParams, image: &Grid<f32>) -> Result<Prediction> {
    let (input, (h, w)) = crate::network::prepare_input(image, params.spec.input_multiple());
    let act = forward(params, &input)?;
    let act = SsoActivations {
        logits: act.logits.iter().map(|t| crop(t, h, w)).collect(),
        stage_probs: act.stage_probs.iter().map(|t| crop(t, h, w)).collect(),
        scales: act.scales.iter().map(|t| crop(t, h, w)).collect(),
        fused_scores: crop(&act.fused_scores, h, w),
        fused_probs: crop(&act.fused_probs, h, w),
    };
    let response = predict(&act, &params.receptive_fields())?;
    Ok(Prediction {
        fused_probs: act.fused_probs,
        response,
    })
}

/// Thinned response: nonzero only on surviving skeleton pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinnedSkeleton {
    pub response: Grid<f32>,
}

impl ThinnedSkeleton {
    pub fn mask(&self) -> Grid<bool> {
        self.response.map(|&v| v > 0.0)
    }
}

pub const DEFAULT_NMS_RADIUS: usize = 2;
const TIE_EPS: f32 = 1e-6;

fn bilinear(g: &Grid<f32>, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (g.width - 1) as f64);
    let y = y.clamp(0.0, (g.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(g.width - 1), (y0 + 1).min(g.height - 1));
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let top = g.get(x0, y0) * (1.0 - fx) + g.get(x1, y0) * fx;
    let bottom = g.get(x0, y1) * (1.0 - fx) + g.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mirrors an out-of-range coordinate back into 0..n.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Unit normal to the local curve (minor axis of the response-weighted
/// second moments in the window, mirrored at the image border) and the
/// offset of the window centroid from the pixel along it. The normal's sign
/// is canonical: positive y, or positive x when horizontal.
fn local_normal(g: &Grid<f32>, x: usize, y: usize, radius: usize) -> ((f64, f64), f64) {
    let r = radius as isize;
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    let mut pts = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            let nx = reflect(x as isize + dx, g.width);
            let ny = reflect(y as isize + dy, g.height);
            let v = g.get(nx, ny) as f64;
            if v > 0.0 {
                sw += v;
                sx += v * dx as f64;
                sy += v * dy as f64;
                pts.push((dx as f64, dy as f64, v));
            }
        }
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for (dx, dy, v) in pts {
        let (ax, ay) = (dx - mx, dy - my);
        cxx += v * ax * ax;
        cxy += v * ax * ay;
        cyy += v * ay * ay;
    }
    // Minor eigenvector of [[cxx, cxy], [cxy, cyy]].
    let tr = cxx + cyy;
    let det = cxx * cyy - cxy * cxy;
    let lmin = tr / 2.0 - ((tr * tr / 4.0 - det).max(0.0)).sqrt();
    let (mut nx, mut ny) = if cxy.abs() > 1e-12 {
        (cxy, lmin - cxx)
    } else if cxx <= cyy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let len = (nx * nx + ny * ny).sqrt();
    nx /= len;
    ny /= len;
    if ny < 0.0 || (ny == 0.0 && nx < 0.0) {
        nx = -nx;
        ny = -ny;
    }
    ((nx, ny), mx * nx + my * ny)
}

/// Non-maximal suppression along the local normal direction, followed by
/// removal of 2×2 blocks so the result is unit width.
pub fn nms_thin(response: &Grid<f32>, radius: usize) -> ThinnedSkeleton {
    let radius = radius.max(1);
    let mut keep = Grid::new(response.width, response.height, false);
    for (x, y, &v) in response.iter_xy() {
        if v <= 0.0 {
            continue;
        }
        let ((nx, ny), offset) = local_normal(response, x, y, radius);
        let a = bilinear(response, x as f64 + nx, y as f64 + ny);
        let b = bilinear(response, x as f64 - nx, y as f64 - ny);
        let peak = a.max(b);
        let survives = if v > peak + TIE_EPS {
            true
        } else if v < peak - TIE_EPS {
            false
        } else {
            // Plateau: keep the pixel nearest the plateau's centroid.
            offset > -0.5 && offset <= 0.5
        };
        keep.set(x, y, survives);
    }
    break_blocks(&mut keep, response);
    ThinnedSkeleton {
        response: Grid {
            width: response.width,
            height: response.height,
            data: keep
                .data
                .iter()
                .zip(&response.data)
                .map(|(&k, &v)| if k { v } else { 0.0 })
                .collect(),
        },
    }
}

/// Removes pixels from every fully set 2×2 block, preferring simple pixels
/// with the lowest response.
fn break_blocks(keep: &mut Grid<bool>, response: &Grid<f32>) {
    if keep.width < 2 || keep.height < 2 {
        return;
    }
    loop {
        let mut changed = false;
        for y in 0..keep.height - 1 {
            for x in 0..keep.width - 1 {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
                if !block.iter().all(|&(bx, by)| keep.get(bx, by)) {
                    continue;
                }
                let simple = |&&(bx, by): &&(usize, usize)| {
                    connectivity_number(&neighbor_bits(keep, bx, by)) == 1
                };
                let weakest = |a: &&(usize, usize), b: &&(usize, usize)| {
                    response.get(a.0, a.1).total_cmp(&response.get(b.0, b.1))
                };
                let victim = *block
                    .iter()
                    .filter(simple)
                    .min_by(weakest)
                    .or_else(|| block.iter().min_by(weakest))
                    .expect("block is nonempty");
                keep.set(victim.0, victim.1, false);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Pixels whose retained response is at least `threshold`.
pub fn threshold_binarize(thinned: &ThinnedSkeleton, threshold: f32) -> Grid<bool> {
    thinned.response.map(|&v| v > 0.0 && v >= threshold)
}
