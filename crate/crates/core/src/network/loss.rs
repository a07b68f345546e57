//! Class-balanced softmax cross-entropy and masked regression losses.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities inside the logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Per-class loss weights β_k ∝ 1/count(k), normalized to sum to one.
/// Classes that do not occur get weight zero and are left out of the
/// normalization.
pub fn class_balance_weights(labels: &[u8], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &z in labels {
        if let Some(c) = counts.get_mut(z as usize) {
            *c += 1;
        }
    }
    let inv: Vec<f64> = counts
        .iter()
        .map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 })
        .collect();
    let total: f64 = inv.iter().sum();
    if total == 0.0 {
        return inv;
    }
    inv.into_iter().map(|v| v / total).collect()
}

/// Softmax over the channel axis, computed per pixel in f64.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let [batch, c, h, w] = logits.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(logits.shape());
    let mut row = vec![0.0f64; c];
    for b in 0..batch {
        let base = b * c * hw;
        for j in 0..hw {
            let mut max = f64::NEG_INFINITY;
            for (k, r) in row.iter_mut().enumerate() {
                *r = logits.data()[base + k * hw + j] as f64;
                max = max.max(*r);
            }
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            for (k, r) in row.iter().enumerate() {
                out.data_mut()[base + k * hw + j] = (r / sum) as f32;
            }
        }
    }
    out
}

/// Largest |Σ_k p_k − 1| over all pixels of a channel distribution.
pub fn simplex_deviation(probs: &Tensor) -> f64 {
    let [batch, c, h, w] = probs.shape();
    let hw = h * w;
    let mut worst = 0.0f64;
    for b in 0..batch {
        let base = b * c * hw;
        for j in 0..hw {
            let sum: f64 = (0..c).map(|k| probs.data()[base + k * hw + j] as f64).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    worst
}

fn check_labels(op: &'static str, logits: &Tensor, labels: &[u8], beta: &[f64]) -> Result<()> {
    let [batch, c, h, w] = logits.shape();
    if labels.len() != batch * h * w {
        return Err(Error::shape(
            op,
            format!("{} labels for logits {:?}", labels.len(), logits.shape()),
        ));
    }
    if beta.len() != c {
        return Err(Error::shape(
            op,
            format!("{} class weights for {c} classes", beta.len()),
        ));
    }
    if let Some(&z) = labels.iter().find(|&&z| z as usize >= c) {
        return Err(Error::shape(
            op,
            format!("label {z} out of range for {c} classes"),
        ));
    }
    Ok(())
}

/// Class-balanced softmax loss
///
/// ```text
/// l = -1/|X| Σ_j Σ_k β_k 1(z_j = k) log Pr(z_j = k)
/// ```
///
/// with its gradient with respect to the logits,
///
/// ```text
/// ∂l/∂a_jl = -1/|X| (β_l 1(z_j = l) - Σ_k β_k 1(z_j = k) Pr(z_j = l)).
/// ```
///
/// `labels` holds one class per pixel in (batch, height, width) order.
pub fn loc_loss(logits: &Tensor, labels: &[u8], beta: &[f64]) -> Result<(f64, Tensor)> {
    check_labels("loc_loss", logits, labels, beta)?;
    let [batch, c, h, w] = logits.shape();
    let hw = h * w;
    let inv_n = 1.0 / labels.len() as f64;
    let log_eps = LOG_EPS.ln();
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut row = vec![0.0f64; c];
    for b in 0..batch {
        let base = b * c * hw;
        for j in 0..hw {
            let z = labels[b * hw + j] as usize;
            let mut max = f64::NEG_INFINITY;
            for (k, r) in row.iter_mut().enumerate() {
                *r = logits.data()[base + k * hw + j] as f64;
                max = max.max(*r);
            }
            let mut sum = 0.0;
            for r in &row {
                sum += (r - max).exp();
            }
            let log_sum = sum.ln() + max;
            let weight = beta[z];
            if weight != 0.0 {
                loss -= weight * (row[z] - log_sum).max(log_eps);
            }
            for (l, r) in row.iter().enumerate() {
                let p = (r - log_sum).exp();
                let target = if l == z { weight } else { 0.0 };
                grad.data_mut()[base + l * hw + j] = (-inv_n * (target - weight * p)) as f32;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Squared error over valid pixels, normalized by the number of valid
/// pixels. Returns zero loss and zero gradient when nothing is valid.
pub fn scale_loss(pred: &Tensor, target: &[f32], valid: &[bool]) -> Result<(f64, Tensor)> {
    if pred.channels() != 1 || target.len() != pred.len() || valid.len() != pred.len() {
        return Err(Error::shape(
            "scale_loss",
            format!(
                "prediction {:?}, {} targets, {} mask entries",
                pred.shape(),
                target.len(),
                valid.len()
            ),
        ));
    }
    let mut grad = Tensor::zeros(pred.shape());
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0f64;
    for (j, (&p, (&t, &v))) in pred.data().iter().zip(target.iter().zip(valid)).enumerate() {
        if v {
            let d = p as f64 - t as f64;
            sum += d * d;
            grad.data_mut()[j] = (2.0 * d * inv) as f32;
        }
    }
    Ok((sum * inv, grad))
}
