//! Geometric augmentation of (image, skeleton, scale) triples.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, ScaleMap, SkeletonMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flip {
    None,
    UpDown,
    LeftRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Rotation,
    pub flip: Flip,
    pub resize: f32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotation: Rotation::R0,
        flip: Flip::None,
        resize: 1.0,
    };
}

/// Which transforms training draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub rotations: bool,
    pub flips: bool,
    pub resize_factors: Vec<f32>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotations: true,
            flips: true,
            resize_factors: vec![0.8, 1.0, 1.2],
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        AugmentationSpec {
            rotations: false,
            flips: false,
            resize_factors: vec![1.0],
        }
    }

    /// Every enabled transform; 4 × 3 × 3 = 36 with everything enabled.
    pub fn transforms(&self) -> Vec<Transform> {
        let rotations: &[Rotation] = if self.rotations {
            &[Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270]
        } else {
            &[Rotation::R0]
        };
        let flips: &[Flip] = if self.flips {
            &[Flip::None, Flip::UpDown, Flip::LeftRight]
        } else {
            &[Flip::None]
        };
        let factors: &[f32] = if self.resize_factors.is_empty() {
            &[1.0]
        } else {
            &self.resize_factors
        };
        let mut out = Vec::new();
        for &rotation in rotations {
            for &flip in flips {
                for &resize in factors {
                    out.push(Transform {
                        rotation,
                        flip,
                        resize,
                    });
                }
            }
        }
        out
    }
}

/// Rotates a grid clockwise by the given multiple of 90°.
pub fn rotate<T: Copy>(g: &Grid<T>, rotation: Rotation) -> Grid<T> {
    let (w, h) = (g.width, g.height);
    match rotation {
        Rotation::R0 => g.clone(),
        Rotation::R180 => {
            let mut data = g.data.clone();
            data.reverse();
            Grid {
                width: w,
                height: h,
                data,
            }
        }
        Rotation::R90 | Rotation::R270 => {
            let mut data = Vec::with_capacity(w * h);
            for ny in 0..w {
                for nx in 0..h {
                    let (x, y) = if rotation == Rotation::R90 {
                        (ny, h - 1 - nx)
                    } else {
                        (w - 1 - ny, nx)
                    };
                    data.push(g.get(x, y));
                }
            }
            Grid {
                width: h,
                height: w,
                data,
            }
        }
    }
}

pub fn flip<T: Copy>(g: &Grid<T>, flip: Flip) -> Grid<T> {
    let (w, h) = (g.width, g.height);
    match flip {
        Flip::None => g.clone(),
        Flip::UpDown => {
            let mut data = Vec::with_capacity(w * h);
            for y in (0..h).rev() {
                data.extend_from_slice(&g.data[y * w..(y + 1) * w]);
            }
            Grid {
                width: w,
                height: h,
                data,
            }
        }
        Flip::LeftRight => {
            let mut data = g.data.clone();
            data.chunks_mut(w.max(1)).for_each(|row| row.reverse());
            Grid {
                width: w,
                height: h,
                data,
            }
        }
    }
}

fn resized_dims(w: usize, h: usize, factor: f32) -> (usize, usize) {
    let s = |v: usize| ((v as f64 * factor as f64).round() as usize).max(1);
    (s(w), s(h))
}

/// Bilinear (triangle-filter) resize of a gray image.
pub fn resize_image(img: &Grid<f32>, factor: f32) -> Grid<f32> {
    let (nw, nh) = resized_dims(img.width, img.height, factor);
    if (nw, nh) == (img.width, img.height) {
        return img.clone();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .expect("buffer sized from grid");
    let out = imageops::resize(&buf, nw as u32, nh as u32, FilterType::Triangle);
    Grid {
        width: nw,
        height: nh,
        data: out.into_raw(),
    }
}

/// Resizes a scale map by nearest-pixel remapping: each output pixel takes
/// its nearest source pixel, and each source skeleton pixel is also pushed
/// forward so downscaling cannot drop it. Scales are multiplied by `factor`.
pub fn resize_scale_map(scale: &ScaleMap, factor: f32) -> ScaleMap {
    let (nw, nh) = resized_dims(scale.width, scale.height, factor);
    if (nw, nh) == (scale.width, scale.height) && factor == 1.0 {
        return scale.clone();
    }
    let fx = nw as f64 / scale.width as f64;
    let fy = nh as f64 / scale.height as f64;
    let mut out = Grid::new(nw, nh, 0.0f32);
    for y in 0..nh {
        let sy = (((y as f64 + 0.5) / fy) as usize).min(scale.height - 1);
        for x in 0..nw {
            let sx = (((x as f64 + 0.5) / fx) as usize).min(scale.width - 1);
            let s = scale.get(sx, sy);
            if s > 0.0 {
                out.set(x, y, s * factor);
            }
        }
    }
    for (x, y, &s) in scale.iter_xy() {
        if s > 0.0 {
            let nx = (((x as f64 + 0.5) * fx) as usize).min(nw - 1);
            let ny = (((y as f64 + 0.5) * fy) as usize).min(nh - 1);
            if out.get(nx, ny) == 0.0 {
                out.set(nx, ny, s * factor);
            }
        }
    }
    out
}

/// Applies the transform to an image and its scale map (the skeleton is
/// implied by nonzero scales). Resizing happens first, then rotation, then
/// flipping.
pub fn augment_pair(image: &Grid<f32>, scale: &ScaleMap, t: &Transform) -> (Grid<f32>, ScaleMap) {
    let (img, sc) = if t.resize == 1.0 {
        (image.clone(), scale.clone())
    } else {
        (
            resize_image(image, t.resize),
            resize_scale_map(scale, t.resize),
        )
    };
    let img = flip(&rotate(&img, t.rotation), t.flip);
    let sc = flip(&rotate(&sc, t.rotation), t.flip);
    (img, sc)
}

/// Transformed (image, skeleton, scale) triple.
pub fn augment(
    image: &Grid<f32>,
    _skeleton: &SkeletonMap,
    scale: &ScaleMap,
    t: &Transform,
) -> (Grid<f32>, SkeletonMap, ScaleMap) {
    let (img, sc) = augment_pair(image, scale, t);
    let skel = sc.map(|&s| s > 0.0);
    (img, skel, sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Grid<f32> {
        Grid::from_vec(w, h, (0..w * h).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn thirty_six_transforms() {
        assert_eq!(AugmentationSpec::default().transforms().len(), 36);
        assert_eq!(
            AugmentationSpec::none().transforms(),
            vec![Transform::IDENTITY]
        );
    }

    #[test]
    fn rotations_compose() {
        let g = ramp(3, 2);
        let r90 = rotate(&g, Rotation::R90);
        assert_eq!((r90.width, r90.height), (2, 3));
        // Clockwise: the bottom-left pixel moves to the top-left.
        assert_eq!(r90.get(0, 0), g.get(0, 1));
        assert_eq!(rotate(&r90, Rotation::R90), rotate(&g, Rotation::R180));
        assert_eq!(rotate(&rotate(&g, Rotation::R270), Rotation::R90), g);
    }

    #[test]
    fn flips_are_involutions() {
        let g = ramp(4, 3);
        for f in [Flip::UpDown, Flip::LeftRight] {
            assert_eq!(flip(&flip(&g, f), f), g);
        }
        assert_eq!(flip(&g, Flip::LeftRight).get(0, 0), 3.0);
        assert_eq!(flip(&g, Flip::UpDown).get(0, 0), 8.0);
    }

    #[test]
    fn identity_is_unchanged() {
        let img = ramp(5, 4);
        let mut sc = Grid::new(5, 4, 0.0f32);
        sc.set(2, 1, 3.0);
        let skel = sc.map(|&s| s > 0.0);
        let (i2, k2, s2) = augment(&img, &skel, &sc, &Transform::IDENTITY);
        assert_eq!((i2, k2, s2), (img, skel, sc));
    }

    #[test]
    fn rotation_keeps_scale_histogram() {
        let mut sc = Grid::new(7, 5, 0.0f32);
        sc.set(1, 1, 3.0);
        sc.set(4, 2, 8.0);
        let t = Transform {
            rotation: Rotation::R90,
            flip: Flip::LeftRight,
            resize: 1.0,
        };
        let (_, out) = augment_pair(&Grid::new(7, 5, 0.0), &sc, &t);
        let mut a: Vec<f32> = sc.data.iter().copied().filter(|&v| v > 0.0).collect();
        let mut b: Vec<f32> = out.data.iter().copied().filter(|&v| v > 0.0).collect();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn resize_multiplies_scales() {
        let mut sc = Grid::new(20, 20, 0.0f32);
        for x in 2..18 {
            sc.set(x, 10, 6.0);
        }
        let out = resize_scale_map(&sc, 0.8);
        assert_eq!((out.width, out.height), (16, 16));
        assert!(out.data.iter().all(|&v| v == 0.0 || (v - 4.8).abs() < 1e-6));
        assert!(out.data.iter().any(|&v| v > 0.0));
        let img = resize_image(&Grid::new(20, 20, 0.5), 1.2);
        assert_eq!((img.width, img.height), (24, 24));
        assert!(img.data.iter().all(|&v| (v - 0.5).abs() < 1e-5));
    }
}
