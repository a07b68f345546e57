use super::loss::{simplex_deviation, softmax_channels};
use super::params::{first_stage_for_class, NetworkParams};
use crate::error::{Error, Result};
use crate::tensor::{
    bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward, maxpool,
    maxpool_backward, relu, relu_backward, PoolIndices, Tensor,
};

/// Side-output activations at input resolution.
#[derive(Debug, Clone)]
pub struct SsoActivations {
    /// Per side output i: logits a^(i) with i+1 channels.
    pub logits: Vec<Tensor>,
    /// Per side output i: softmax of `logits[i]`.
    pub stage_probs: Vec<Tensor>,
    /// Per side output i: normalized scale prediction, one channel.
    pub scales: Vec<Tensor>,
    /// Fused scores f_jk, M+1 channels.
    pub fused_scores: Tensor,
    /// Softmax of the fused scores.
    pub fused_probs: Tensor,
}

impl SsoActivations {
    pub fn side_count(&self) -> usize {
        self.logits.len()
    }
}

#[derive(Debug, Clone)]
struct StageTrace {
    input: Tensor,
    /// ReLU outputs of each convolution.
    outputs: Vec<Tensor>,
    pool: Option<PoolIndices>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stages: Vec<StageTrace>,
    pub activations: SsoActivations,
}

impl ForwardTrace {
    /// ReLU on/off states and max-pool selections. Two traces with equal
    /// patterns lie in the same piecewise-linear region of the backbone.
    pub fn switch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for st in &self.stages {
            for t in &st.outputs {
                out.extend(t.data().iter().map(|&v| (v > 0.0) as usize));
            }
            if let Some(p) = &st.pool {
                out.extend(p.argmax.iter().map(|&i| i as usize));
            }
        }
        out
    }
}

/// Gradients of a scalar objective with respect to the activations.
#[derive(Debug, Clone, Default)]
pub struct ActivationGrads {
    pub logits: Vec<Option<Tensor>>,
    pub scales: Vec<Option<Tensor>>,
    pub fused_scores: Option<Tensor>,
}

impl ActivationGrads {
    pub fn empty(side_count: usize) -> Self {
        ActivationGrads {
            logits: vec![None; side_count],
            scales: vec![None; side_count],
            fused_scores: None,
        }
    }
}

fn check(name: &str, t: &Tensor) -> Result<()> {
    t.check_finite(name)
}

/// Runs the backbone, the side-output heads and the scale-specific fusion.
pub fn forward(params: &NetworkParams, image: &Tensor) -> Result<SsoActivations> {
    forward_trace(params, image).map(|t| t.activations)
}

pub fn forward_trace(params: &NetworkParams, image: &Tensor) -> Result<ForwardTrace> {
    let spec = &params.spec;
    let multiple = spec.input_multiple();
    if image.channels() != spec.in_channels {
        return Err(Error::shape(
            "forward",
            format!(
                "image {:?} for {} input channels",
                image.shape(),
                spec.in_channels
            ),
        ));
    }
    if image.height() % multiple != 0
        || image.width() % multiple != 0
        || image.height() == 0
        || image.width() == 0
    {
        return Err(Error::shape(
            "forward",
            format!(
                "image {:?} not divisible by stride {multiple}",
                image.shape()
            ),
        ));
    }
    let sides = spec.side_stage_indices();
    let strides = spec.side_strides();
    let last = params.convs.len() - 1;

    let mut stages = Vec::with_capacity(params.convs.len());
    let mut features = Vec::with_capacity(sides.len());
    let mut x = image.clone();
    for (s, layers) in params.convs.iter().enumerate() {
        let input = x;
        let mut outputs = Vec::with_capacity(layers.len());
        for (c, layer) in layers.iter().enumerate() {
            let src = outputs.last().unwrap_or(&input);
            let y = relu(&conv2d(
                src,
                &layer.weight.value,
                &layer.bias.value,
                layer.stride,
                layer.pad,
            )?);
            check(&format!("stage{}.conv{}", s + 1, c + 1), &y)?;
            outputs.push(y);
        }
        let out = outputs.last().expect("stage has convolutions");
        if sides.contains(&s) {
            features.push(out.clone());
        }
        let (next, pool) = match (spec.stages[s].pool, s < last) {
            (Some(p), true) => {
                let (t, idx) = maxpool(out, p.window, p.stride)?;
                (t, Some(idx))
            }
            _ => (out.clone(), None),
        };
        stages.push(StageTrace {
            input,
            outputs,
            pool,
        });
        x = next;
    }

    let mut logits = Vec::with_capacity(sides.len());
    let mut stage_probs = Vec::with_capacity(sides.len());
    let mut scales = Vec::with_capacity(sides.len());
    for (i, feat) in features.iter().enumerate() {
        let cls = &params.classifiers[i];
        let reg = &params.regressors[i];
        let a = bilinear_upsample(
            &conv2d(feat, &cls.weight.value, &cls.bias.value, 1, 0)?,
            strides[i],
        )?;
        let s = bilinear_upsample(
            &conv2d(feat, &reg.weight.value, &reg.bias.value, 1, 0)?,
            strides[i],
        )?;
        check(&format!("side{}.cls", i + 1), &a)?;
        check(&format!("side{}.reg", i + 1), &s)?;
        if a.shape()[2..] != image.shape()[2..] {
            return Err(Error::shape(
                "forward",
                format!(
                    "side {} upsampled to {:?}, image {:?}",
                    i + 1,
                    a.shape(),
                    image.shape()
                ),
            ));
        }
        stage_probs.push(softmax_channels(&a));
        logits.push(a);
        scales.push(s);
    }

    let fused_scores = fuse(params, &stage_probs)?;
    check("fusion", &fused_scores)?;
    let fused_probs = softmax_channels(&fused_scores);
    debug_assert!(
        stage_probs
            .iter()
            .chain([&fused_probs])
            .all(|p| simplex_deviation(p) <= 1e-6),
        "class distributions off the simplex"
    );
    Ok(ForwardTrace {
        stages,
        activations: SsoActivations {
            logits,
            stage_probs,
            scales,
            fused_scores,
            fused_probs,
        },
    })
}

/// f_jk = Σ_{i=max(k,1)}^{M} h_k^(i) Pr(z_j^(i) = k).
fn fuse(params: &NetworkParams, stage_probs: &[Tensor]) -> Result<Tensor> {
    let m = stage_probs.len();
    let [batch, _, h, w] = stage_probs[0].shape();
    let mut fused = Tensor::zeros([batch, m + 1, h, w]);
    for b in 0..batch {
        for k in 0..=m {
            let weights = params.fusion[k].value.data();
            let first = first_stage_for_class(k);
            let mut acc = vec![0.0f64; h * w];
            for i in first..=m {
                let hk = weights[i - first] as f64;
                for (a, &p) in acc.iter_mut().zip(stage_probs[i - 1].plane(b, k)) {
                    *a += hk * p as f64;
                }
            }
            for (d, a) in fused.plane_mut(b, k).iter_mut().zip(acc) {
                *d = a as f32;
            }
        }
    }
    Ok(fused)
}

/// Gradient through a per-pixel channel softmax: g_a = p ⊙ (g_p − Σ_k p_k g_pk).
fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Tensor {
    let [batch, c, h, w] = probs.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(probs.shape());
    for b in 0..batch {
        let base = b * c * hw;
        for j in 0..hw {
            let dot: f64 = (0..c)
                .map(|k| {
                    probs.data()[base + k * hw + j] as f64
                        * grad_probs.data()[base + k * hw + j] as f64
                })
                .sum();
            for k in 0..c {
                let i = base + k * hw + j;
                out.data_mut()[i] =
                    (probs.data()[i] as f64 * (grad_probs.data()[i] as f64 - dot)) as f32;
            }
        }
    }
    out
}

/// Back-propagates activation gradients to every parameter. The result is
/// in the canonical order of [`NetworkParams::parameters`].
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    grads: &ActivationGrads,
) -> Result<Vec<Tensor>> {
    let act = &trace.activations;
    let m = act.side_count();
    if grads.logits.len() != m || grads.scales.len() != m {
        return Err(Error::shape(
            "backward",
            format!(
                "{} logit / {} scale grads for {m} side outputs",
                grads.logits.len(),
                grads.scales.len()
            ),
        ));
    }

    // Fusion layer.
    let mut fusion_grads: Vec<Tensor> = params
        .fusion
        .iter()
        .map(|h| Tensor::zeros(h.value.shape()))
        .collect();
    let mut prob_grads: Vec<Option<Tensor>> = vec![None; m];
    if let Some(gf) = &grads.fused_scores {
        if gf.shape() != act.fused_scores.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "fused grad {:?} vs {:?}",
                    gf.shape(),
                    act.fused_scores.shape()
                ),
            ));
        }
        let batch = gf.batch();
        for k in 0..=m {
            let first = first_stage_for_class(k);
            let weights = params.fusion[k].value.data();
            for i in first..=m {
                let probs = &act.stage_probs[i - 1];
                let gp = prob_grads[i - 1].get_or_insert_with(|| Tensor::zeros(probs.shape()));
                let hk = weights[i - first];
                let mut dh = 0.0f64;
                for b in 0..batch {
                    let g = gf.plane(b, k);
                    dh += g
                        .iter()
                        .zip(probs.plane(b, k))
                        .map(|(&g, &p)| g as f64 * p as f64)
                        .sum::<f64>();
                    for (d, &g) in gp.plane_mut(b, k).iter_mut().zip(g) {
                        *d += hk * g;
                    }
                }
                fusion_grads[k].data_mut()[i - first] = dh as f32;
            }
        }
    }

    let strides = params.spec.side_strides();
    let sides = params.spec.side_stage_indices();
    let mut cls_grads = Vec::with_capacity(m);
    let mut reg_grads = Vec::with_capacity(m);
    let mut feature_grads: Vec<Option<Tensor>> = vec![None; params.convs.len()];
    for i in 0..m {
        let stage = sides[i];
        let feat = trace.stages[stage]
            .outputs
            .last()
            .expect("stage has convolutions");
        let mut g_logits = grads.logits[i].clone();
        if let Some(gp) = &prob_grads[i] {
            let via_fusion = softmax_backward(&act.stage_probs[i], gp);
            match &mut g_logits {
                Some(g) => g.add_assign(&via_fusion)?,
                None => g_logits = Some(via_fusion),
            }
        }
        let cls = &params.classifiers[i];
        let reg = &params.regressors[i];
        let cls_g = match g_logits {
            Some(g) => {
                let low = bilinear_upsample_backward(&g, strides[i])?;
                let cg = conv2d_backward(feat, &cls.weight.value, &low, 1, 0)?;
                add_feature_grad(&mut feature_grads[stage], cg.input)?;
                (cg.weight, cg.bias)
            }
            None => (
                Tensor::zeros(cls.weight.value.shape()),
                Tensor::zeros(cls.bias.value.shape()),
            ),
        };
        let reg_g = match &grads.scales[i] {
            Some(g) => {
                let low = bilinear_upsample_backward(g, strides[i])?;
                let rg = conv2d_backward(feat, &reg.weight.value, &low, 1, 0)?;
                add_feature_grad(&mut feature_grads[stage], rg.input)?;
                (rg.weight, rg.bias)
            }
            None => (
                Tensor::zeros(reg.weight.value.shape()),
                Tensor::zeros(reg.bias.value.shape()),
            ),
        };
        cls_grads.push(cls_g);
        reg_grads.push(reg_g);
    }

    // Backbone, deepest stage first.
    let mut conv_grads: Vec<Vec<(Tensor, Tensor)>> = vec![Vec::new(); params.convs.len()];
    let mut carry: Option<Tensor> = None;
    for s in (0..params.convs.len()).rev() {
        let st = &trace.stages[s];
        let mut g = feature_grads[s].take();
        if let (Some(gc), Some(pool)) = (carry.take(), &st.pool) {
            let back = maxpool_backward(&gc, pool)?;
            add_feature_grad(&mut g, back)?;
        }
        let layers = &params.convs[s];
        let mut stage_grads = Vec::with_capacity(layers.len());
        match g {
            None => {
                for layer in layers.iter().rev() {
                    stage_grads.push((
                        Tensor::zeros(layer.weight.value.shape()),
                        Tensor::zeros(layer.bias.value.shape()),
                    ));
                }
                carry = None;
            }
            Some(mut g) => {
                for c in (0..layers.len()).rev() {
                    let layer = &layers[c];
                    let pre = relu_backward(&st.outputs[c], &g)?;
                    let input = if c == 0 {
                        &st.input
                    } else {
                        &st.outputs[c - 1]
                    };
                    let cg =
                        conv2d_backward(input, &layer.weight.value, &pre, layer.stride, layer.pad)?;
                    stage_grads.push((cg.weight, cg.bias));
                    g = cg.input;
                }
                carry = Some(g);
            }
        }
        stage_grads.reverse();
        conv_grads[s] = stage_grads;
    }

    let mut out = Vec::new();
    for (w, b) in conv_grads.into_iter().flatten() {
        out.push(w);
        out.push(b);
    }
    for (w, b) in cls_grads.into_iter().chain(reg_grads) {
        out.push(w);
        out.push(b);
    }
    out.extend(fusion_grads);
    for (p, g) in params.parameters().iter().zip(&out) {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.id)));
        }
    }
    Ok(out)
}

fn add_feature_grad(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Zero-pads an image on the bottom and right so both sides are multiples
/// of `multiple`. Returns the padded tensor and the original (height, width).
pub fn pad_to_multiple(image: &Tensor, multiple: usize) -> (Tensor, (usize, usize)) {
    let [b, c, h, w] = image.shape();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return (image.clone(), (h, w));
    }
    let mut out = Tensor::zeros([b, c, ph, pw]);
    for n in 0..b {
        for ci in 0..c {
            let src = image.plane(n, ci);
            let dst = out.plane_mut(n, ci);
            for y in 0..h {
                dst[y * pw..y * pw + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    (out, (h, w))
}

/// Crops the top-left (height, width) window of every plane.
pub fn crop(t: &Tensor, height: usize, width: usize) -> Tensor {
    let [b, c, h, w] = t.shape();
    if (h, w) == (height, width) {
        return t.clone();
    }
    let mut out = Tensor::zeros([b, c, height, width]);
    for n in 0..b {
        for ci in 0..c {
            let src = t.plane(n, ci);
            let dst = out.plane_mut(n, ci);
            for y in 0..height {
                dst[y * width..(y + 1) * width].copy_from_slice(&src[y * w..y * w + width]);
            }
        }
    }
    out
}
