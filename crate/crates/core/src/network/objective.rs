//! The full training objective: side-output classification and regression
//! losses plus the fused classification loss.

use serde::{Deserialize, Serialize};

use super::forward::{backward, forward_trace, ActivationGrads};
use super::loss::{class_balance_weights, loc_loss, scale_loss};
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::gt::TrainingTargets;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLoss {
    pub cls: f64,
    pub reg: f64,
    /// cls + λ·reg.
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub stages: Vec<StageLoss>,
    pub side_total: f64,
    pub fusion: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.fusion.is_finite()
            && self
                .stages
                .iter()
                .all(|s| s.cls.is_finite() && s.reg.is_finite())
    }
}

/// Evaluates the objective for one image and returns its gradient for every
/// parameter in canonical order. With `lambda == 0` the regression branch is
/// skipped entirely, so regression losses are exactly zero.
pub fn total_objective(
    params: &NetworkParams,
    image: &Tensor,
    targets: &TrainingTargets,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let m = params.side_count();
    if targets.stages.len() != m {
        return Err(Error::shape(
            "total_objective",
            format!(
                "{} stage targets for {m} side outputs",
                targets.stages.len()
            ),
        ));
    }
    if image.batch() != 1 || image.height() != targets.height() || image.width() != targets.width()
    {
        return Err(Error::shape(
            "total_objective",
            format!(
                "image {:?} vs targets {}x{}",
                image.shape(),
                targets.width(),
                targets.height()
            ),
        ));
    }

    let trace = forward_trace(params, image)?;
    let act = &trace.activations;
    let mut grads = ActivationGrads::empty(m);
    let mut breakdown = LossBreakdown::default();

    for (i, t) in targets.stages.iter().enumerate() {
        let beta = class_balance_weights(&t.classes.data, i + 2);
        let (cls, g_cls) = loc_loss(&act.logits[i], &t.classes.data, &beta)?;
        grads.logits[i] = Some(g_cls);
        let reg = if lambda > 0.0 {
            let (reg, mut g_reg) = scale_loss(&act.scales[i], &t.regression.data, &t.valid.data)?;
            g_reg
                .data_mut()
                .iter_mut()
                .for_each(|g| *g *= lambda as f32);
            grads.scales[i] = Some(g_reg);
            reg
        } else {
            0.0
        };
        let side = cls + lambda * reg;
        breakdown.side_total += side;
        breakdown.stages.push(StageLoss { cls, reg, side });
    }

    let beta = class_balance_weights(&targets.z.labels.data, m + 1);
    let (fusion, g_fused) = loc_loss(&act.fused_scores, &targets.z.labels.data, &beta)?;
    grads.fused_scores = Some(g_fused);
    breakdown.fusion = fusion;
    breakdown.total = breakdown.side_total + fusion;
    if !breakdown.is_finite() {
        return Err(Error::NonFinite(format!("loss {breakdown:?}")));
    }

    let param_grads = backward(params, &trace, &grads)?;
    Ok((breakdown, param_grads))
}
