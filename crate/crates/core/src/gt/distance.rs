//! Exact Euclidean distance transform with nearest-background feature
//! transform, using the separable lower-envelope-of-parabolas algorithm
//! (Felzenszwalb and Huttenlocher).

use crate::grid::{BinaryMask, Grid};

/// Squared distance and nearest background pixel for every pixel.
#[derive(Debug, Clone)]
pub struct FeatureTransform {
    /// Squared distance to the nearest background pixel center.
    pub sq_dist: Grid<f64>,
    /// Coordinates of that background pixel. Outside the image when the
    /// mask has no background at all (see [`feature_transform`]).
    pub nearest: Grid<(isize, isize)>,
}

/// One-dimensional transform of `f` with argmin. Infinite samples never
/// enter the envelope; if every sample is infinite the output is infinite.
fn transform_1d(
    f: &[f64],
    out: &mut [f64],
    arg: &mut [usize],
    v: &mut Vec<usize>,
    z: &mut Vec<f64>,
) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + (p * p) as f64;
                    let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                    if s <= *z.last().expect("parallel to v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, (o, a)) in out.iter_mut().zip(arg.iter_mut()).enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let d = p as f64 - q as f64;
        *o = d * d + f[q];
        *a = q;
    }
}

/// Exact squared EDT plus feature transform. A mask without any background
/// pixel is treated as if surrounded by a one-pixel background frame.
pub fn feature_transform(mask: &BinaryMask) -> FeatureTransform {
    let has_background = mask.data.iter().any(|&v| !v);
    if !has_background && !mask.data.is_empty() {
        let (w, h) = (mask.width + 2, mask.height + 2);
        let mut framed = Grid::new(w, h, false);
        for y in 0..mask.height {
            for x in 0..mask.width {
                framed.set(x + 1, y + 1, true);
            }
        }
        let ft = feature_transform(&framed);
        let mut sq = Grid::new(mask.width, mask.height, 0.0);
        let mut nearest = Grid::new(mask.width, mask.height, (0, 0));
        for y in 0..mask.height {
            for x in 0..mask.width {
                sq.set(x, y, ft.sq_dist.get(x + 1, y + 1));
                let (nx, ny) = ft.nearest.get(x + 1, y + 1);
                nearest.set(x, y, (nx - 1, ny - 1));
            }
        }
        return FeatureTransform {
            sq_dist: sq,
            nearest,
        };
    }

    let (w, h) = (mask.width, mask.height);
    let mut v = Vec::new();
    let mut z = Vec::new();

    // Columns.
    let mut col_sq = Grid::new(w, h, f64::INFINITY);
    let mut col_arg = Grid::new(w, h, 0usize);
    let mut f = vec![0.0; h];
    let mut out = vec![0.0; h];
    let mut arg = vec![0usize; h];
    for x in 0..w {
        for y in 0..h {
            f[y] = if mask.get(x, y) { f64::INFINITY } else { 0.0 };
        }
        transform_1d(&f, &mut out, &mut arg, &mut v, &mut z);
        for y in 0..h {
            col_sq.set(x, y, out[y]);
            col_arg.set(x, y, arg[y]);
        }
    }

    // Rows.
    let mut sq_dist = Grid::new(w, h, 0.0);
    let mut nearest = Grid::new(w, h, (0isize, 0isize));
    let mut f = vec![0.0; w];
    let mut out = vec![0.0; w];
    let mut arg = vec![0usize; w];
    for y in 0..h {
        f.copy_from_slice(&col_sq.data[y * w..(y + 1) * w]);
        transform_1d(&f, &mut out, &mut arg, &mut v, &mut z);
        for x in 0..w {
            sq_dist.set(x, y, out[x]);
            let qx = arg[x];
            nearest.set(x, y, (qx as isize, col_arg.get(qx, y) as isize));
        }
    }
    FeatureTransform { sq_dist, nearest }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel center; zero on background.
pub fn distance_transform(mask: &BinaryMask) -> Grid<f32> {
    feature_transform(mask).sq_dist.map(|&d| d.sqrt() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All-pairs brute force.
    fn brute(mask: &BinaryMask) -> Grid<f32> {
        let bg: Vec<(usize, usize)> = mask
            .iter_xy()
            .filter(|(_, _, &v)| !v)
            .map(|(x, y, _)| (x, y))
            .collect();
        let mut out = Grid::new(mask.width, mask.height, 0.0f32);
        for y in 0..mask.height {
            for x in 0..mask.width {
                let d = bg
                    .iter()
                    .map(|&(bx, by)| {
                        let (dx, dy) = (x as f64 - bx as f64, y as f64 - by as f64);
                        (dx * dx + dy * dy).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                out.set(x, y, d as f32);
            }
        }
        out
    }

    #[test]
    fn all_background_is_zero() {
        let m = Grid::new(6, 4, false);
        assert!(distance_transform(&m).data.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_pixel_is_one() {
        let mut m = Grid::new(5, 5, false);
        m.set(2, 2, true);
        let d = distance_transform(&m);
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn stripe_center_row() {
        // 9 rows of foreground spanning the full width, background above and below.
        let mut m = Grid::new(20, 13, false);
        for y in 2..11 {
            for x in 0..20 {
                m.set(x, y, true);
            }
        }
        let d = distance_transform(&m);
        let b = brute(&m);
        assert_eq!(d.get(10, 6), 5.0);
        assert_eq!(d.data, b.data);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(1..14), rng.gen_range(1..14));
            let mut m = Grid::new(w, h, false);
            for v in m.data.iter_mut() {
                *v = rng.gen_bool(0.7);
            }
            if m.data.iter().all(|&v| v) {
                continue;
            }
            let ft = feature_transform(&m);
            let b = brute(&m);
            for (x, y, &sq) in ft.sq_dist.iter_xy() {
                assert!((sq.sqrt() as f32 - b.get(x, y)).abs() < 1e-5);
                let (nx, ny) = ft.nearest.get(x, y);
                assert!(!m.get(nx as usize, ny as usize));
                let (dx, dy) = (x as f64 - nx as f64, y as f64 - ny as f64);
                assert_eq!(dx * dx + dy * dy, sq);
            }
        }
    }

    #[test]
    fn all_foreground_uses_frame() {
        let m = Grid::new(5, 3, true);
        let d = distance_transform(&m);
        assert_eq!(d.get(2, 1), 2.0);
        assert_eq!(d.get(0, 0), 1.0);
    }
}
