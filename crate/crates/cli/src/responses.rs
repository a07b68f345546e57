//! Inference outputs on disk: one `[3, h, w]` SKT1 tensor per image
//! (response, regressed scale, expected-scale estimate) and an index.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skelnet::grid::{Grid, ScaleMap};
use skelnet::tensor::io::{atomic_write, load_raw, save_raw};

pub const INDEX_FILE: &str = "responses.json";
pub const CHANNELS: [&str; 3] = ["response", "scale", "expected_scale"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseIndex {
    pub version: u32,
    pub checkpoint: PathBuf,
    pub iteration: u64,
    pub fsds_mode: bool,
    pub receptive_fields: Vec<u32>,
    pub channels: Vec<String>,
    pub ids: Vec<String>,
}

impl ResponseIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let index: ResponseIndex =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if index.channels != CHANNELS {
            bail!(
                "{}: unexpected channels {:?}",
                path.display(),
                index.channels
            );
        }
        Ok(index)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        atomic_write(
            &dir.join(INDEX_FILE),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredResponse {
    pub response: Grid<f32>,
    pub scale: ScaleMap,
    pub expected_scale: ScaleMap,
}

/// Which scale channel feeds disk reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScaleSource {
    /// Regressed scale, or the expected scale for classification-only models.
    Auto,
    Regression,
    Expected,
}

impl StoredResponse {
    pub fn scale_for(&self, source: ScaleSource, fsds_mode: bool) -> &ScaleMap {
        match source {
            ScaleSource::Regression => &self.scale,
            ScaleSource::Expected => &self.expected_scale,
            ScaleSource::Auto if fsds_mode => &self.expected_scale,
            ScaleSource::Auto => &self.scale,
        }
    }
}

pub fn response_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.skt"))
}

pub fn save_response(dir: &Path, id: &str, r: &StoredResponse) -> Result<()> {
    let (w, h) = (r.response.width, r.response.height);
    let mut data = Vec::with_capacity(3 * w * h);
    data.extend_from_slice(&r.response.data);
    data.extend_from_slice(&r.scale.data);
    data.extend_from_slice(&r.expected_scale.data);
    save_raw(&response_path(dir, id), &[3, h, w], &data)?;
    Ok(())
}

pub fn load_response(dir: &Path, id: &str) -> Result<StoredResponse> {
    let path = response_path(dir, id);
    let (dims, data) = load_raw(&path)?;
    let &[3, h, w] = dims.as_slice() else {
        bail!("{}: expected dims [3, h, w], got {dims:?}", path.display());
    };
    let plane = |k: usize| Grid::from_vec(w, h, data[k * w * h..(k + 1) * w * h].to_vec());
    Ok(StoredResponse {
        response: plane(0)?,
        scale: plane(1)?,
        expected_scale: plane(2)?,
    })
}

/// Ids without a response file.
pub fn missing_ids<'a>(dir: &Path, ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    ids.into_iter()
        .filter(|id| !response_path(dir, id).is_file())
        .map(str::to_string)
        .collect()
}
