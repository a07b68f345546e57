use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{BackboneSpec, Parameter, Tensor};

/// One backbone convolution (followed by ReLU).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub pad: usize,
}

/// A 1×1 convolution head on a side-output stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Parameter,
    pub bias: Parameter,
}

/// All trainable state: backbone convolutions, per-stage classifier and
/// regressor heads, and the class-specific fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: BackboneSpec,
    /// Convolutions of every evaluated stage.
    pub convs: Vec<Vec<ConvLayer>>,
    /// Classifier of side output i (1-based) emits i+1 channels.
    pub classifiers: Vec<Head>,
    /// Regressor of each side output emits one channel.
    pub regressors: Vec<Head>,
    /// `fusion[k]` holds h_k^(i) for i = max(k,1)..=M.
    pub fusion: Vec<Parameter>,
}

/// First side-output index (1-based) that contributes to fused class `k`.
pub fn first_stage_for_class(k: usize) -> usize {
    k.max(1)
}

impl NetworkParams {
    /// He-initialized backbone, zero heads and uniform fusion weights.
    pub fn init(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active = spec.active_stage_count();
        let mut convs = Vec::with_capacity(active);
        let mut in_ch = spec.in_channels;
        for (s, stage) in spec.stages.iter().take(active).enumerate() {
            let mut layers = Vec::with_capacity(stage.convs.len());
            for (c, conv) in stage.convs.iter().enumerate() {
                let fan_in = in_ch * conv.kernel * conv.kernel;
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let shape = [conv.channels, in_ch, conv.kernel, conv.kernel];
                let n: usize = shape.iter().product();
                let values = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
                layers.push(ConvLayer {
                    weight: Parameter::new(
                        format!("stage{}.conv{}.weight", s + 1, c + 1),
                        Tensor::from_vec(shape, values)?,
                    ),
                    bias: Parameter::new(
                        format!("stage{}.conv{}.bias", s + 1, c + 1),
                        Tensor::zeros([1, 1, 1, conv.channels]),
                    ),
                    stride: conv.stride,
                    pad: conv.kernel / 2,
                });
                in_ch = conv.channels;
            }
            convs.push(layers);
        }

        let m = spec.side_count();
        let mut classifiers = Vec::with_capacity(m);
        let mut regressors = Vec::with_capacity(m);
        for (i, &stage) in spec.side_stage_indices().iter().enumerate() {
            let ch = spec.stage_channels(stage);
            let side = i + 1;
            classifiers.push(Head {
                weight: Parameter::new(
                    format!("side{side}.cls.weight"),
                    Tensor::zeros([side + 1, ch, 1, 1]),
                ),
                bias: Parameter::new(
                    format!("side{side}.cls.bias"),
                    Tensor::zeros([1, 1, 1, side + 1]),
                ),
            });
            regressors.push(Head {
                weight: Parameter::new(
                    format!("side{side}.reg.weight"),
                    Tensor::zeros([1, ch, 1, 1]),
                ),
                bias: Parameter::new(format!("side{side}.reg.bias"), Tensor::zeros([1, 1, 1, 1])),
            });
        }
        let fusion = (0..=m)
            .map(|k| {
                let n = m - first_stage_for_class(k) + 1;
                Parameter::new(
                    format!("fuse{k}"),
                    Tensor::full([1, 1, 1, n], 1.0 / n as f32),
                )
            })
            .collect();
        Ok(NetworkParams {
            spec: spec.clone(),
            convs,
            classifiers,
            regressors,
            fusion,
        })
    }

    /// Number of side outputs, M.
    pub fn side_count(&self) -> usize {
        self.classifiers.len()
    }

    pub fn receptive_fields(&self) -> Vec<u32> {
        self.spec.receptive_fields()
    }

    /// Parameters in canonical order: backbone, classifiers, regressors, fusion.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for layer in self.convs.iter().flatten() {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        for head in self.classifiers.iter().chain(&self.regressors) {
            out.push(&head.weight);
            out.push(&head.bias);
        }
        out.extend(self.fusion.iter());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for layer in self.convs.iter_mut().flatten() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        for head in self
            .classifiers
            .iter_mut()
            .chain(self.regressors.iter_mut())
        {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out.extend(self.fusion.iter_mut());
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn set_fusion_lr_mult(&mut self, mult: f32) {
        for p in &mut self.fusion {
            p.lr_mult = mult;
        }
    }

    /// Adds gradients (in canonical parameter order) into the parameters.
    pub fn accumulate(&mut self, grads: &[Tensor]) -> Result<()> {
        let params = self.parameters_mut();
        if params.len() != grads.len() {
            return Err(Error::shape(
                "NetworkParams::accumulate",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (p, g) in params.into_iter().zip(grads) {
            p.accumulate(g)?;
        }
        Ok(())
    }

    /// Largest |Σ_i h_k^(i) - 1| over all fused classes.
    pub fn fusion_constraint_deviation(&self) -> f32 {
        self.fusion
            .iter()
            .map(|h| (h.value.data().iter().sum::<f32>() - 1.0).abs())
            .fold(0.0, f32::max)
    }

    pub fn num_scalars(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_weight_counts_and_init() {
        let p = NetworkParams::init(&BackboneSpec::desk(1), 0).unwrap();
        let counts: Vec<usize> = p.fusion.iter().map(|h| h.value.len()).collect();
        assert_eq!(counts, vec![4, 4, 3, 2, 1]);
        for h in &p.fusion {
            let n = h.value.len() as f32;
            assert!(h.value.data().iter().all(|&v| v == 1.0 / n));
        }
        assert!(p.fusion_constraint_deviation() < 1e-6);
    }

    #[test]
    fn heads_start_at_zero_with_stage_channels() {
        let p = NetworkParams::init(&BackboneSpec::desk(1), 0).unwrap();
        for (i, head) in p.classifiers.iter().enumerate() {
            assert_eq!(head.weight.value.shape()[0], i + 2);
            assert!(head.weight.value.data().iter().all(|&v| v == 0.0));
        }
        assert!(p
            .regressors
            .iter()
            .all(|h| h.weight.value.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_is_seeded() {
        let spec = BackboneSpec::desk(1);
        assert_eq!(
            NetworkParams::init(&spec, 5).unwrap(),
            NetworkParams::init(&spec, 5).unwrap()
        );
        assert_ne!(
            NetworkParams::init(&spec, 5).unwrap(),
            NetworkParams::init(&spec, 6).unwrap()
        );
    }
}
