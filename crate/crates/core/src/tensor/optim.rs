use std::collections::BTreeMap;

use super::{Parameter, Tensor};
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum and L2 weight decay:
///
/// ```text
/// v <- momentum * v - lr * lr_mult * (g + weight_decay * w)
/// w <- w + v
/// ```
#[derive(Debug, Clone, Default)]
pub struct SgdMomentum {
    velocity: BTreeMap<String, Tensor>,
}

impl SgdMomentum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self, id: &str) -> Option<&Tensor> {
        self.velocity.get(id)
    }

    pub fn set_velocity(&mut self, id: impl Into<String>, v: Tensor) {
        self.velocity.insert(id.into(), v);
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.velocity.iter()
    }

    /// Applies one update to every parameter. Gradients are left untouched;
    /// the caller zeroes them before the next accumulation.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
        lr: f32,
        momentum: f32,
        weight_decay: f32,
    ) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.id)));
        }
        for p in params {
            let v = self
                .velocity
                .entry(p.id.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            if v.shape() != p.value.shape() {
                return Err(Error::shape(
                    "sgd_momentum_step",
                    format!(
                        "velocity {:?} for {} {:?}",
                        v.shape(),
                        p.id,
                        p.value.shape()
                    ),
                ));
            }
            let rate = lr * p.lr_mult;
            for ((w, g), vel) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut())
            {
                *vel = momentum * *vel - rate * (g + weight_decay * *w);
                *w += *vel;
            }
        }
        Ok(())
    }
}
