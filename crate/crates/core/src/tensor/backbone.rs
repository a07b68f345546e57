use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

/// A run of convolutions (each followed by ReLU) and an optional max-pool.
/// Side-output heads attach to the last convolution, before pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub convs: Vec<ConvSpec>,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
    #[serde(default = "default_true")]
    pub side_output: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub stages: Vec<StageSpec>,
}

/// Receptive field and cumulative stride at one point of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    field: usize,
    jump: usize,
}

impl Geometry {
    fn through(self, kernel: usize, stride: usize) -> Self {
        Geometry {
            field: self.field + (kernel - 1) * self.jump,
            jump: self.jump * stride,
        }
    }
}

impl BackboneSpec {
    /// Four stages of two 3×3 convolutions with 16/32/64/128 channels, each
    /// followed by 2×2 max-pooling, with a side output on every stage.
    pub fn desk(in_channels: usize) -> Self {
        let stages = [16, 32, 64, 128]
            .into_iter()
            .map(|ch| StageSpec {
                convs: vec![
                    ConvSpec {
                        kernel: 3,
                        channels: ch,
                        stride: 1
                    };
                    2
                ],
                pool: Some(PoolSpec {
                    window: 2,
                    stride: 2,
                }),
                side_output: true,
            })
            .collect();
        BackboneSpec {
            in_channels,
            stages,
        }
    }

    /// The VGG-16 convolutional trunk with side outputs on conv2_2, conv3_3,
    /// conv4_3 and conv5_3.
    pub fn vgg16() -> Self {
        let stage = |n: usize, ch: usize, side: bool, pool: bool| StageSpec {
            convs: vec![
                ConvSpec {
                    kernel: 3,
                    channels: ch,
                    stride: 1
                };
                n
            ],
            pool: pool.then_some(PoolSpec {
                window: 2,
                stride: 2,
            }),
            side_output: side,
        };
        BackboneSpec {
            in_channels: 3,
            stages: vec![
                stage(2, 64, false, true),
                stage(2, 128, true, true),
                stage(3, 256, true, true),
                stage(3, 512, true, true),
                stage(3, 512, true, false),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("backbone: {msg}")));
        if self.in_channels == 0 {
            return bad("zero input channels".into());
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.convs.is_empty() {
                return bad(format!("stage {} has no convolutions", i + 1));
            }
            for c in &s.convs {
                if c.kernel == 0 || c.kernel % 2 == 0 || c.channels == 0 || c.stride == 0 {
                    return bad(format!("stage {} has invalid conv {c:?}", i + 1));
                }
            }
            if let Some(p) = s.pool {
                if p.window == 0 || p.stride == 0 {
                    return bad(format!("stage {} has invalid pool {p:?}", i + 1));
                }
            }
        }
        if self.side_stage_indices().is_empty() {
            return bad("no side-output stages".into());
        }
        for stride in self.side_strides() {
            if !stride.is_power_of_two() {
                return bad(format!("side-output stride {stride} is not a power of two"));
            }
        }
        let fields = self.receptive_fields();
        if fields.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!(
                "receptive fields {fields:?} are not strictly increasing"
            ));
        }
        Ok(())
    }

    /// Geometry at the last convolution of every stage.
    fn stage_geometry(&self) -> Vec<Geometry> {
        let mut g = Geometry { field: 1, jump: 1 };
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for conv in &stage.convs {
                g = g.through(conv.kernel, conv.stride);
            }
            out.push(g);
            if let Some(p) = stage.pool {
                g = g.through(p.window, p.stride);
            }
        }
        out
    }

    /// Indices (0-based) of the stages carrying side outputs.
    pub fn side_stage_indices(&self) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .filter(|(_, s)| s.side_output)
            .map(|(i, _)| i)
            .collect()
    }

    /// Receptive field sizes r_1..r_M of the side-output stages.
    pub fn receptive_fields(&self) -> Vec<u32> {
        let geometry = self.stage_geometry();
        self.side_stage_indices()
            .into_iter()
            .map(|i| geometry[i].field as u32)
            .collect()
    }

    /// Total stride of each side-output stage relative to the input.
    pub fn side_strides(&self) -> Vec<usize> {
        let geometry = self.stage_geometry();
        self.side_stage_indices()
            .into_iter()
            .map(|i| geometry[i].jump)
            .collect()
    }

    /// Number of side-output stages, M.
    pub fn side_count(&self) -> usize {
        self.stages.iter().filter(|s| s.side_output).count()
    }

    /// Number of stages the forward pass has to evaluate.
    pub(crate) fn active_stage_count(&self) -> usize {
        self.side_stage_indices().last().map_or(0, |&i| i + 1)
    }

    /// Required divisor of input height and width.
    pub fn input_multiple(&self) -> usize {
        self.side_strides().into_iter().max().unwrap_or(1)
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.stages[stage].convs.last().map_or(0, |c| c.channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_fields() {
        let spec = BackboneSpec::vgg16();
        spec.validate().unwrap();
        assert_eq!(spec.receptive_fields(), vec![14, 40, 92, 196]);
        assert_eq!(spec.side_strides(), vec![2, 4, 8, 16]);
    }

    #[test]
    fn single_conv_stage() {
        let spec = BackboneSpec {
            in_channels: 1,
            stages: vec![StageSpec {
                convs: vec![ConvSpec {
                    kernel: 3,
                    channels: 4,
                    stride: 1,
                }],
                pool: None,
                side_output: true,
            }],
        };
        assert_eq!(spec.receptive_fields(), vec![3]);
    }

    #[test]
    fn desk_fields_and_strides() {
        let spec = BackboneSpec::desk(1);
        spec.validate().unwrap();
        assert_eq!(spec.receptive_fields(), vec![5, 14, 32, 68]);
        assert_eq!(spec.side_strides(), vec![1, 2, 4, 8]);
        assert_eq!(spec.input_multiple(), 8);
    }

    #[test]
    fn rejects_even_kernel() {
        let mut spec = BackboneSpec::desk(1);
        spec.stages[0].convs[0].kernel = 2;
        assert!(spec.validate().is_err());
    }
}
