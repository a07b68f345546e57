//! On-disk datasets: a JSON manifest, 8-bit PNG images and masks, and
//! cached scale maps and stage targets.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/NNNN.png
//! <dir>/masks/NNNN.png
//! <dir>/cache/NNNN.scale.skt     scale map, rank 2
//! <dir>/cache/NNNN.targets.skt   [M+1, h, w]: Z, then S̄^(1..M)
//! ```

use std::collections::HashSet;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, ScaleMap};
use crate::gt::{generate_synthetic, skeletonize, OverflowPolicy, SynthConfig, TrainingTargets};
use crate::tensor::io::{atomic_write, load_raw, save_raw};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    Synthetic { seed: u64, config: SynthConfig },
    External { note: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Paths relative to the dataset directory.
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub provenance: Provenance,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        m.validate(dir)?;
        Ok(m)
    }

    pub fn validate(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        if self.version != MANIFEST_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported manifest version {}", self.version),
            ));
        }
        let mut seen = HashSet::new();
        let mut missing = Vec::new();
        for s in &self.samples {
            if !seen.insert(&s.id) {
                return Err(Error::format(
                    &path,
                    format!("duplicate sample id {}", s.id),
                ));
            }
            for f in [&s.image, &s.mask] {
                if !dir.join(f).is_file() {
                    missing.push(f.clone());
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::format(
                &path,
                format!("missing files: {}", missing.join(", ")),
            ));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

pub fn read_gray_png(path: &Path) -> Result<Grid<u8>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Grid::from_vec(w as usize, h as usize, img.into_raw())
}

pub fn write_gray_png(path: &Path, img: &Grid<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::shape("write_gray_png", format!("{}x{}", img.width, img.height)))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    atomic_write(path, &bytes)
}

/// Row-major RGB bytes, three per pixel.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let buf = RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::shape("write_rgb_png", format!("{width}x{height}")))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    atomic_write(path, &bytes)
}

/// Foreground is any value above 127.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    Ok(read_gray_png(path)?.map(|&v| v > 127))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray_png(path, &mask.map(|&v| if v { 255 } else { 0 }))
}

/// Gray image as intensities in [0, 1].
pub fn to_unit(img: &Grid<u8>) -> Grid<f32> {
    img.map(|&v| v as f32 / 255.0)
}

pub fn scale_cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("cache").join(format!("{id}.scale.skt"))
}

pub fn targets_cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("cache").join(format!("{id}.targets.skt"))
}

fn save_targets(path: &Path, t: &TrainingTargets) -> Result<()> {
    let (w, h) = (t.width(), t.height());
    let mut data: Vec<f32> = t.z.labels.data.iter().map(|&z| z as f32).collect();
    for s in &t.stages {
        data.extend_from_slice(&s.regression.data);
    }
    save_raw(path, &[t.stages.len() + 1, h, w], &data)
}

/// Target-caching parameters for dataset generation.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCache {
    pub receptive_fields: Vec<u32>,
    pub rho: f64,
    pub overflow: OverflowPolicy,
}

/// Writes `train + test` synthetic samples, their cached targets and the
/// manifest. Refuses to touch an existing dataset unless `force`.
pub fn write_synthetic_dataset(
    dir: &Path,
    seed: u64,
    train: usize,
    test: usize,
    cfg: &SynthConfig,
    cache: Option<&TargetCache>,
    force: bool,
) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::AlreadyExists(manifest_path));
    }
    let samples = generate_synthetic(seed, train + test, cfg)?;
    for sub in ["images", "masks", "cache"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let entries: Vec<ManifestEntry> = (0..samples.len())
        .map(|i| {
            let id = format!("{i:04}");
            ManifestEntry {
                split: if i < train { Split::Train } else { Split::Test },
                image: format!("images/{id}.png"),
                mask: format!("masks/{id}.png"),
                id,
            }
        })
        .collect();
    samples
        .par_iter()
        .zip(&entries)
        .try_for_each(|(s, e)| -> Result<()> {
            write_gray_png(&dir.join(&e.image), &s.image)?;
            write_mask_png(&dir.join(&e.mask), &s.mask)?;
            let (_, scale) = skeletonize(&s.mask);
            save_raw(
                &scale_cache_path(dir, &e.id),
                &[scale.height, scale.width],
                &scale.data,
            )?;
            if let Some(c) = cache {
                let t = TrainingTargets::build(&scale, &c.receptive_fields, c.rho, c.overflow)?;
                save_targets(&targets_cache_path(dir, &e.id), &t)?;
            }
            Ok(())
        })?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        provenance: Provenance::Synthetic {
            seed,
            config: cfg.clone(),
        },
        samples: entries,
    };
    manifest.save(dir)?;
    info!(
        "wrote {} samples ({train} train, {test} test) to {}",
        samples.len(),
        dir.display()
    );
    Ok(manifest)
}

/// A loaded sample with its ground-truth scale map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Grid<u8>,
    pub mask: BinaryMask,
    pub scale: ScaleMap,
}

impl Sample {
    pub fn skeleton(&self) -> BinaryMask {
        self.scale.map(|&s| s > 0.0)
    }
}

fn load_scale(dir: &Path, id: &str, mask: &BinaryMask) -> Result<ScaleMap> {
    let path = scale_cache_path(dir, id);
    if path.is_file() {
        let (dims, data) = load_raw(&path)?;
        if dims == [mask.height, mask.width] {
            return Grid::from_vec(mask.width, mask.height, data);
        }
        return Err(Error::format(
            &path,
            format!(
                "cached dims {dims:?} vs mask {}x{}",
                mask.width, mask.height
            ),
        ));
    }
    Ok(skeletonize(mask).1)
}

pub fn load_entry(dir: &Path, e: &ManifestEntry) -> Result<Sample> {
    let image = read_gray_png(&dir.join(&e.image))?;
    let mask = read_mask_png(&dir.join(&e.mask))?;
    if !image.same_size(&mask) {
        return Err(Error::format(
            dir.join(&e.mask),
            format!(
                "mask {}x{} vs image {}x{}",
                mask.width, mask.height, image.width, image.height
            ),
        ));
    }
    let scale = load_scale(dir, &e.id, &mask)?;
    Ok(Sample {
        id: e.id.clone(),
        image,
        mask,
        scale,
    })
}

pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries.par_iter().map(|e| load_entry(dir, e)).collect()
}
