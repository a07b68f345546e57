use crate::error::{Error, Result};

/// A row-major 2-D map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "Grid::from_vec",
                format!(
                    "{width}x{height} needs {} values, got {}",
                    width * height,
                    data.len()
                ),
            ));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// (x, y, value) for every cell.
    pub fn iter_xy(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = y * self.width + x;
        self.data[i] = v;
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Coordinates of set cells in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.iter_xy()
            .filter(|(_, _, &v)| v)
            .map(|(x, y, _)| (x, y))
            .collect()
    }
}

/// Binary object mask (true = foreground).
pub type BinaryMask = Grid<bool>;
/// Binary skeleton map.
pub type SkeletonMap = Grid<bool>;
/// Per-pixel skeleton scale (disk diameter in pixels), zero off the skeleton.
pub type ScaleMap = Grid<f32>;

/// The eight neighbor offsets in clockwise order starting north.
pub const NEIGHBORS8: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// Intersection over union of two masks.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 8-connected components of the set cells, each in row-major discovery
/// order of its first pixel followed by breadth-first order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let mut seen = Grid::new(mask.width, mask.height, false);
    let mut out = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) || seen.get(x, y) {
                continue;
            }
            let mut comp = vec![(x, y)];
            seen.set(x, y, true);
            let mut head = 0;
            while head < comp.len() {
                let (cx, cy) = comp[head];
                head += 1;
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if mask.contains(nx, ny) {
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen.get(nx, ny) {
                            seen.set(nx, ny, true);
                            comp.push((nx, ny));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Set/unset state of the eight neighbors, in [`NEIGHBORS8`] order.
pub(crate) fn neighbor_bits(s: &Grid<bool>, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in NEIGHBORS8.iter().enumerate() {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        n[k] = s.contains(nx, ny) && s.get(nx as usize, ny as usize);
    }
    n
}

/// Yokoi 8-connectivity number; a pixel is simple iff it equals one.
pub(crate) fn connectivity_number(n: &[bool; 8]) -> i32 {
    // NEIGHBORS8 starts north and runs clockwise; even indices are the
    // 4-neighbors.
    let bg = |k: usize| !n[k % 8] as i32;
    [0usize, 2, 4, 6]
        .iter()
        .map(|&k| bg(k) - bg(k) * bg(k + 1) * bg(k + 2))
        .sum()
}
