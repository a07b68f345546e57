//! Single-image SGD training with momentum.
//!
//! The sample and augmentation used at iteration `t` depend only on the
//! shuffle seed and `t`, so a run resumed from a checkpoint continues
//! exactly as the uninterrupted run would have.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::pad_to_multiple;
use super::objective::{total_objective, LossBreakdown};
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScaleMap};
use crate::gt::{
    augment_pair, AugmentationSpec, OverflowPolicy, TrainingTargets, Transform, DEFAULT_RHO,
};
use crate::tensor::{SgdMomentum, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the scale regression loss; 0 trains classification only.
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iterations: u64,
    /// Learning-rate multiplier of the fusion weights.
    pub fusion_lr_mult: f32,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub rho: f64,
    pub overflow: OverflowPolicy,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Schedule for training the small backbone from scratch.
    pub fn desk() -> Self {
        TrainConfig {
            lambda: 1.0,
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 2e-4,
            max_iterations: 20_000,
            fusion_lr_mult: 5.0,
            checkpoint_every: 1000,
            rho: DEFAULT_RHO,
            overflow: OverflowPolicy::Clip,
            augmentation: AugmentationSpec::default(),
        }
    }

    /// Fine-tuning schedule for a pretrained VGG-16 backbone.
    pub fn fine_tune() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            ..Self::desk()
        }
    }

    pub fn fsds_mode(&self) -> bool {
        self.lambda == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        if !(self.fusion_lr_mult >= 0.0 && self.fusion_lr_mult.is_finite()) {
            return bad(format!("fusion lr multiplier {}", self.fusion_lr_mult));
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad(format!("rho {}", self.rho));
        }
        Ok(())
    }
}

/// A training image (intensities in [0, 1]) with its ground-truth scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Grid<f32>,
    pub scale: ScaleMap,
}

/// Network input for a gray image: intensities centered at zero, one
/// channel, zero-padded to a multiple of `multiple`.
pub fn prepare_input(image: &Grid<f32>, multiple: usize) -> (Tensor, (usize, usize)) {
    let t = Tensor::from_plane(
        image.width,
        image.height,
        image.data.iter().map(|v| v - 0.5).collect(),
    )
    .expect("plane sized from grid");
    pad_to_multiple(&t, multiple)
}

fn pad_grid<T: Copy>(g: &Grid<T>, width: usize, height: usize, fill: T) -> Grid<T> {
    if (g.width, g.height) == (width, height) {
        return g.clone();
    }
    let mut out = Grid::new(width, height, fill);
    for y in 0..g.height {
        out.data[y * width..y * width + g.width]
            .copy_from_slice(&g.data[y * g.width..(y + 1) * g.width]);
    }
    out
}

/// Builds the padded network input and the matching targets.
pub fn training_pair(
    image: &Grid<f32>,
    scale: &ScaleMap,
    params: &NetworkParams,
    config: &TrainConfig,
) -> Result<(Tensor, TrainingTargets)> {
    let (input, _) = prepare_input(image, params.spec.input_multiple());
    let scale = pad_grid(scale, input.width(), input.height(), 0.0);
    let targets = TrainingTargets::build(
        &scale,
        &params.receptive_fields(),
        config.rho,
        config.overflow,
    )?;
    Ok((input, targets))
}

pub struct Trainer {
    pub params: NetworkParams,
    pub optimizer: SgdMomentum,
    /// Number of completed iterations.
    pub iteration: u64,
    pub config: TrainConfig,
    seed: u64,
    transforms: Vec<Transform>,
}

impl Trainer {
    pub fn new(params: NetworkParams, config: TrainConfig, seed: u64) -> Result<Self> {
        Self::resume(params, SgdMomentum::new(), 0, config, seed)
    }

    pub fn resume(
        mut params: NetworkParams,
        optimizer: SgdMomentum,
        iteration: u64,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        params.set_fusion_lr_mult(config.fusion_lr_mult);
        let transforms = config.augmentation.transforms();
        Ok(Trainer {
            params,
            optimizer,
            iteration,
            config,
            seed,
            transforms,
        })
    }

    /// Sample index and augmentation used at `iteration`: epochs visit every
    /// sample once in a seeded random order.
    pub fn schedule(&self, iteration: u64, sample_count: usize) -> (usize, Transform) {
        let n = sample_count as u64;
        let epoch = iteration / n;
        let mut order: Vec<usize> = (0..sample_count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        let mut aug = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_a06e_u64);
        aug.set_stream(iteration);
        let t = self.transforms[aug.gen_range(0..self.transforms.len())];
        (order[(iteration % n) as usize], t)
    }

    /// Runs one iteration and returns its loss.
    pub fn step(&mut self, samples: &[TrainSample]) -> Result<LossBreakdown> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let (index, transform) = self.schedule(self.iteration, samples.len());
        let sample = &samples[index];
        let (image, scale) = augment_pair(&sample.image, &sample.scale, &transform);
        let (input, targets) = training_pair(&image, &scale, &self.params, &self.config)?;
        let diverged = |detail: String, it: u64| Error::Diverged {
            iteration: it,
            detail,
        };

        self.params.zero_grads();
        let (loss, grads) = total_objective(&self.params, &input, &targets, self.config.lambda)
            .map_err(|e| match e {
                Error::NonFinite(d) => diverged(d, self.iteration),
                other => other,
            })?;
        self.params.accumulate(&grads)?;
        let c = &self.config;
        self.optimizer
            .step(
                self.params.parameters_mut(),
                c.learning_rate as f32,
                c.momentum as f32,
                c.weight_decay as f32,
            )
            .map_err(|e| diverged(e.to_string(), self.iteration))?;
        if let Some(p) = self
            .params
            .parameters()
            .iter()
            .find(|p| !p.value.is_finite())
        {
            return Err(diverged(
                format!("parameter {} became non-finite", p.id),
                self.iteration,
            ));
        }
        self.iteration += 1;
        Ok(loss)
    }

    /// Trains until `config.max_iterations`, calling `on_step` after every
    /// iteration.
    pub fn run(
        &mut self,
        samples: &[TrainSample],
        mut on_step: impl FnMut(&Trainer, &LossBreakdown) -> Result<()>,
    ) -> Result<()> {
        while self.iteration < self.config.max_iterations {
            let loss = self.step(samples)?;
            on_step(self, &loss)?;
        }
        Ok(())
    }
}

/// CSV loss log: iteration, per-stage cls and reg, fusion, total.
pub struct LossLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> LossLog<W> {
    /// Creates a log; writes the header row unless appending to an existing log.
    pub fn new(out: W, side_count: usize, write_header: bool) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        if write_header {
            let mut header = vec!["iteration".to_string()];
            header.extend((1..=side_count).map(|i| format!("cls{i}")));
            header.extend((1..=side_count).map(|i| format!("reg{i}")));
            header.extend(["fusion".to_string(), "total".to_string()]);
            writer.write_record(&header).map_err(csv_err)?;
        }
        Ok(LossLog { writer })
    }

    pub fn record(&mut self, iteration: u64, loss: &LossBreakdown) -> Result<()> {
        let mut row = vec![iteration.to_string()];
        row.extend(loss.stages.iter().map(|s| s.cls.to_string()));
        row.extend(loss.stages.iter().map(|s| s.reg.to_string()));
        row.extend([loss.fusion.to_string(), loss.total.to_string()]);
        self.writer.write_record(&row).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(Error::Io)
    }
}

/// `(iteration, total)` rows of a loss log.
pub fn read_loss_totals(path: &std::path::Path) -> Result<Vec<(u64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("no {name} column")))
    };
    let (it, total) = (col("iteration")?, col("total")?);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = |e: String| Error::format(path, e);
            Ok((
                rec[it].parse::<u64>().map_err(|e| bad(e.to_string()))?,
                rec[total].parse::<f64>().map_err(|e| bad(e.to_string()))?,
            ))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BackboneSpec;

    fn sample() -> TrainSample {
        let mut image = Grid::new(16, 16, 0.2f32);
        let mut scale = Grid::new(16, 16, 0.0f32);
        for x in 3..13 {
            for y in 6..11 {
                image.set(x, y, 0.8);
            }
            scale.set(x, 8, 6.0);
        }
        TrainSample { image, scale }
    }

    #[test]
    fn zero_iterations_returns_init() {
        let params = NetworkParams::init(&BackboneSpec::desk(1), 4).unwrap();
        let config = TrainConfig {
            max_iterations: 0,
            ..TrainConfig::desk()
        };
        let mut t = Trainer::new(params.clone(), config, 1).unwrap();
        t.run(&[sample()], |_, _| Ok(())).unwrap();
        assert_eq!(t.params.parameters().len(), params.parameters().len());
        for (a, b) in t.params.parameters().iter().zip(params.parameters()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn schedule_visits_every_sample_per_epoch() {
        let params = NetworkParams::init(&BackboneSpec::desk(1), 4).unwrap();
        let t = Trainer::new(params, TrainConfig::desk(), 9).unwrap();
        let mut seen: Vec<usize> = (0..7).map(|i| t.schedule(7 + i, 7).0).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        assert_eq!(t.schedule(3, 7), t.schedule(3, 7));
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let params = NetworkParams::init(&BackboneSpec::desk(1), 4).unwrap();
        let config = TrainConfig {
            max_iterations: 4,
            ..TrainConfig::desk()
        };
        let samples = [sample(), sample()];
        let mut full = Trainer::new(params.clone(), config.clone(), 2).unwrap();
        full.run(&samples, |_, _| Ok(())).unwrap();

        let half = TrainConfig {
            max_iterations: 2,
            ..config.clone()
        };
        let mut a = Trainer::new(params, half, 2).unwrap();
        a.run(&samples, |_, _| Ok(())).unwrap();
        let mut b = Trainer::resume(a.params, a.optimizer, a.iteration, config, 2).unwrap();
        b.run(&samples, |_, _| Ok(())).unwrap();
        assert_eq!(b.params, full.params);
    }

    #[test]
    fn divergence_is_reported() {
        let params = NetworkParams::init(&BackboneSpec::desk(1), 4).unwrap();
        let config = TrainConfig {
            learning_rate: 1e30,
            max_iterations: 50,
            ..TrainConfig::desk()
        };
        let mut t = Trainer::new(params, config, 1).unwrap();
        let err = t.run(&[sample()], |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn loss_log_columns() {
        let mut buf = Vec::new();
        {
            let mut log = LossLog::new(&mut buf, 2, true).unwrap();
            let loss = LossBreakdown {
                stages: vec![Default::default(); 2],
                side_total: 0.0,
                fusion: 0.5,
                total: 0.5,
            };
            log.record(3, &loss).unwrap();
            log.flush().unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "iteration,cls1,cls2,reg1,reg2,fusion,total"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "3,0,0,0,0,0.5,0.5");
    }
}
