//! Scale quantization and per-stage training targets.

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScaleMap};

/// Default ratio between receptive field and skeleton scale.
pub const DEFAULT_RHO: f64 = 1.2;

/// What to do with a scale too large for the deepest receptive field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Fail with [`Error::ScaleOverflow`].
    Error,
    /// Assign the deepest stage and clamp its regression target.
    #[default]
    Clip,
}

fn check_fields(receptive_fields: &[u32], rho: f64) -> Result<()> {
    if receptive_fields.is_empty() || receptive_fields.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "need 1..=255 receptive fields, got {}",
            receptive_fields.len()
        )));
    }
    if receptive_fields.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "receptive fields {receptive_fields:?} not strictly increasing"
        )));
    }
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rho must be > 1, got {rho}"
        )));
    }
    Ok(())
}

fn quantize_unchecked(s: f32, receptive_fields: &[u32], rho: f64) -> Option<u8> {
    if s == 0.0 {
        return Some(0);
    }
    let need = rho * s as f64;
    receptive_fields
        .iter()
        .position(|&r| r as f64 > need)
        .map(|i| (i + 1) as u8)
}

/// 0 for s = 0, otherwise the least 1-based stage i with r_i > ρ·s.
pub fn quantize_scale(s: f32, receptive_fields: &[u32], rho: f64) -> Result<u8> {
    check_fields(receptive_fields, rho)?;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be finite and >= 0, got {s}"
        )));
    }
    quantize_unchecked(s, receptive_fields, rho).ok_or(Error::ScaleOverflow {
        pixel: None,
        scale: s,
        max_field: *receptive_fields.last().expect("checked nonempty"),
    })
}

/// Per-pixel quantized scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedScaleMap {
    pub labels: Grid<u8>,
    pub receptive_fields: Vec<u32>,
    pub rho: f64,
}

impl QuantizedScaleMap {
    pub fn stage_count(&self) -> usize {
        self.receptive_fields.len()
    }
}

/// Quantizes a whole scale map. Returns the map and the number of pixels
/// clipped under [`OverflowPolicy::Clip`].
pub fn quantize_map(
    scale: &ScaleMap,
    receptive_fields: &[u32],
    rho: f64,
    policy: OverflowPolicy,
) -> Result<(QuantizedScaleMap, usize)> {
    check_fields(receptive_fields, rho)?;
    let m = receptive_fields.len() as u8;
    let max_field = *receptive_fields.last().expect("checked nonempty");
    let mut labels = Grid::new(scale.width, scale.height, 0u8);
    let mut clipped = 0;
    for (x, y, &s) in scale.iter_xy() {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale {s} at pixel ({x}, {y})"
            )));
        }
        let z = match quantize_unchecked(s, receptive_fields, rho) {
            Some(z) => z,
            None if policy == OverflowPolicy::Clip => {
                clipped += 1;
                m
            }
            None => {
                return Err(Error::ScaleOverflow {
                    pixel: Some((x, y)),
                    scale: s,
                    max_field,
                })
            }
        };
        labels.set(x, y, z);
    }
    if clipped > 0 {
        warn!("{clipped} skeleton pixels exceed the deepest receptive field {max_field}; clipped to stage {m}");
    }
    Ok((
        QuantizedScaleMap {
            labels,
            receptive_fields: receptive_fields.to_vec(),
            rho,
        },
        clipped,
    ))
}

/// Targets for one side output.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTargets {
    /// 1-based stage index.
    pub stage: usize,
    /// Z^(i): the quantized label where it is ≤ i, else 0.
    pub classes: Grid<u8>,
    /// Normalized scale 2s/r_i − 1 on valid pixels, −1 elsewhere.
    pub regression: Grid<f32>,
    pub valid: Grid<bool>,
}

/// Largest valid regression target for a given ρ.
pub fn max_regression_target(rho: f64) -> f32 {
    (2.0 / rho - 1.0) as f32
}

pub fn stage_targets(
    z: &QuantizedScaleMap,
    scale: &ScaleMap,
    stage: usize,
) -> Result<StageTargets> {
    let m = z.stage_count();
    if stage == 0 || stage > m {
        return Err(Error::InvalidArgument(format!(
            "stage {stage} outside 1..={m}"
        )));
    }
    if !z.labels.same_size(scale) {
        return Err(Error::shape(
            "stage_targets",
            format!(
                "labels {}x{} vs scales {}x{}",
                z.labels.width, z.labels.height, scale.width, scale.height
            ),
        ));
    }
    let r = z.receptive_fields[stage - 1] as f64;
    let hi = max_regression_target(z.rho);
    let classes = z.labels.map(|&l| if l as usize <= stage { l } else { 0 });
    let valid = classes.map(|&l| l > 0);
    let mut regression = Grid::new(scale.width, scale.height, -1.0f32);
    for (i, &ok) in valid.data.iter().enumerate() {
        if ok {
            let t = (2.0 * scale.data[i] as f64 / r - 1.0) as f32;
            regression.data[i] = t.clamp(-1.0, hi);
        }
    }
    Ok(StageTargets {
        stage,
        classes,
        regression,
        valid,
    })
}

/// Full-resolution labels plus the targets of every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets {
    pub z: QuantizedScaleMap,
    pub stages: Vec<StageTargets>,
}

impl TrainingTargets {
    pub fn build(
        scale: &ScaleMap,
        receptive_fields: &[u32],
        rho: f64,
        policy: OverflowPolicy,
    ) -> Result<Self> {
        let (z, _) = quantize_map(scale, receptive_fields, rho, policy)?;
        let stages = (1..=z.stage_count())
            .map(|i| stage_targets(&z, scale, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingTargets { z, stages })
    }

    pub fn width(&self) -> usize {
        self.z.labels.width
    }

    pub fn height(&self) -> usize {
        self.z.labels.height
    }
}
