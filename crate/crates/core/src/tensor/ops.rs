use super::Tensor;
use crate::error::{Error, Result};

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

fn check_conv(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let [_, c, h, w] = input.shape();
    let [oc, ic, kh, kw] = weight.shape();
    if ic != c || kh != kw {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} vs kernel {:?}", input.shape(), weight.shape()),
        ));
    }
    if bias.len() != oc {
        return Err(Error::shape(
            "conv2d",
            format!("bias {:?} for {oc} output channels", bias.shape()),
        ));
    }
    match (
        conv_out_size(h, kh, stride, pad),
        conv_out_size(w, kw, stride, pad),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(
            "conv2d",
            format!(
                "input {:?} too small for kernel {:?} (stride {stride}, pad {pad})",
                input.shape(),
                weight.shape()
            ),
        )),
    }
}

/// Unrolls one image into a (C·k·k) × (oh·ow) column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    plane: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let n = oh * ow;
    for ci in 0..c {
        let src = &plane[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let line = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            line[ix as usize] as f64
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    plane: &mut [f64],
) {
    let n = oh * ow;
    for ci in 0..c {
        let dst = &mut plane[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a · b` (or `c += a · b` when `accumulate`), with `a` given
/// as (m × k) and `b` as (k × n) through explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller's strides address only elements inside `a` and `b`,
    // and `c` holds m·n contiguous row-major values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

/// 2-D cross-correlation with zero padding. Accumulates in `f64`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (oh, ow) = check_conv(input, weight, bias, stride, pad)?;
    let [batch, c, h, w] = input.shape();
    let [oc, _, k, _] = weight.shape();
    let ckk = c * k * k;
    let n = oh * ow;
    let wd = to_f64(weight.data());
    let mut out = Tensor::zeros([batch, oc, oh, ow]);
    let mut acc = vec![0.0f64; oc * n];
    let direct = k == 1 && stride == 1 && pad == 0;
    let mut cols = if direct {
        Vec::new()
    } else {
        vec![0.0f64; ckk * n]
    };
    for b in 0..batch {
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        if direct {
            cols = to_f64(src);
        } else {
            im2col(src, c, h, w, k, stride, pad, oh, ow, &mut cols);
        }
        gemm(
            oc,
            ckk,
            n,
            &wd,
            (ckk as isize, 1),
            &cols,
            (n as isize, 1),
            &mut acc,
            false,
        );
        let dst = &mut out.data_mut()[b * oc * n..(b + 1) * oc * n];
        for o in 0..oc {
            let bo = bias.data()[o] as f64;
            for (d, a) in dst[o * n..(o + 1) * n]
                .iter_mut()
                .zip(&acc[o * n..(o + 1) * n])
            {
                *d = (a + bo) as f32;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Conv2dGrads> {
    let [oc, _, k, _] = weight.shape();
    let bias_shape = Tensor::zeros([1, 1, 1, oc]);
    let (oh, ow) = check_conv(input, weight, &bias_shape, stride, pad)?;
    let [batch, c, h, w] = input.shape();
    if grad_out.shape() != [batch, oc, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad {:?}, expected {:?}",
                grad_out.shape(),
                [batch, oc, oh, ow]
            ),
        ));
    }
    let ckk = c * k * k;
    let n = oh * ow;
    let wd = to_f64(weight.data());
    let mut gw = vec![0.0f64; oc * ckk];
    let mut gb = vec![0.0f64; oc];
    let mut gin = Tensor::zeros(input.shape());
    let direct = k == 1 && stride == 1 && pad == 0;
    let mut cols = if direct {
        Vec::new()
    } else {
        vec![0.0f64; ckk * n]
    };
    let mut gcols = vec![0.0f64; ckk * n];
    for b in 0..batch {
        let src = &input.data()[b * c * h * w..(b + 1) * c * h * w];
        if direct {
            cols = to_f64(src);
        } else {
            im2col(src, c, h, w, k, stride, pad, oh, ow, &mut cols);
        }
        let go = to_f64(&grad_out.data()[b * oc * n..(b + 1) * oc * n]);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += go[o * n..(o + 1) * n].iter().sum::<f64>();
        }
        // dW += dOut · colsᵀ
        gemm(
            oc,
            n,
            ckk,
            &go,
            (n as isize, 1),
            &cols,
            (1, n as isize),
            &mut gw,
            true,
        );
        // dCols = Wᵀ · dOut
        gemm(
            ckk,
            oc,
            n,
            &wd,
            (1, ckk as isize),
            &go,
            (n as isize, 1),
            &mut gcols,
            false,
        );
        let dst = &mut gin.data_mut()[b * c * h * w..(b + 1) * c * h * w];
        if direct {
            for (d, g) in dst.iter_mut().zip(&gcols) {
                *d = *g as f32;
            }
        } else {
            let mut plane = vec![0.0f64; c * h * w];
            col2im(&gcols, c, h, w, k, stride, pad, oh, ow, &mut plane);
            for (d, g) in dst.iter_mut().zip(&plane) {
                *d = *g as f32;
            }
        }
    }
    Ok(Conv2dGrads {
        input: gin,
        weight: Tensor::from_vec(weight.shape(), gw.into_iter().map(|v| v as f32).collect())?,
        bias: Tensor::from_vec([1, 1, 1, oc], gb.into_iter().map(|v| v as f32).collect())?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Gradient of [`relu`]; `output` is the forward result.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", output.shape(), grad_out.shape()),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Flat input index of the maximum for each pooled output value.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    pub input_shape: [usize; 4],
    pub argmax: Vec<usize>,
}

/// Max pooling without padding. Ties resolve to the first maximum in
/// row-major window order.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let [batch, c, h, w] = input.shape();
    if window == 0 || stride == 0 || h < window || w < window {
        return Err(Error::shape(
            "maxpool",
            format!(
                "input {:?}, window {window}, stride {stride}",
                input.shape()
            ),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros([batch, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.len());
    let src = input.data();
    let mut o = 0;
    for b in 0..batch {
        for ci in 0..c {
            let base = (b * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base + oy * stride * w + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax.push(best_i);
                    o += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape(),
            argmax,
        },
    ))
}

pub fn maxpool_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool_backward",
            format!(
                "grad {:?} vs {} pooled values",
                grad_out.shape(),
                indices.argmax.len()
            ),
        ));
    }
    let mut gin = Tensor::zeros(indices.input_shape);
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gin.data_mut()[i] += g;
    }
    Ok(gin)
}

/// Per-output-coordinate (low index, high index, weight of high index).
fn bilinear_taps(in_size: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    let scale = 1.0 / factor as f64;
    (0..in_size * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_size - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_size - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

fn check_factor(op: &'static str, factor: usize) -> Result<()> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::shape(
            op,
            format!("factor {factor} is not a positive power of two"),
        ));
    }
    Ok(())
}

/// Fixed (non-learned) bilinear interpolation by an integer factor, using
/// half-pixel centers.
pub fn bilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    check_factor("bilinear_upsample", factor)?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let [batch, c, h, w] = input.shape();
    let rows = bilinear_taps(h, factor);
    let cols = bilinear_taps(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros([batch, c, oh, ow]);
    for b in 0..batch {
        for ci in 0..c {
            let src = input.plane(b, ci);
            let dst = out.plane_mut(b, ci);
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    dst[oy * ow + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_upsample`].
pub fn bilinear_upsample_backward(grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    check_factor("bilinear_upsample_backward", factor)?;
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let [batch, c, oh, ow] = grad_out.shape();
    if oh % factor != 0 || ow % factor != 0 {
        return Err(Error::shape(
            "bilinear_upsample_backward",
            format!(
                "grad {:?} not divisible by factor {factor}",
                grad_out.shape()
            ),
        ));
    }
    let (h, w) = (oh / factor, ow / factor);
    let rows = bilinear_taps(h, factor);
    let cols = bilinear_taps(w, factor);
    let mut gin = Tensor::zeros([batch, c, h, w]);
    for b in 0..batch {
        for ci in 0..c {
            let src = grad_out.plane(b, ci);
            let mut acc = vec![0.0f64; h * w];
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                let (wy0, wy1) = ((1.0 - wy) as f64, wy as f64);
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let g = src[oy * ow + ox] as f64;
                    let (wx0, wx1) = ((1.0 - wx) as f64, wx as f64);
                    acc[y0 * w + x0] += g * wy0 * wx0;
                    acc[y0 * w + x1] += g * wy0 * wx1;
                    acc[y1 * w + x0] += g * wy1 * wx0;
                    acc[y1 * w + x1] += g * wy1 * wx1;
                }
            }
            for (d, a) in gin.plane_mut(b, ci).iter_mut().zip(acc) {
                *d = a as f32;
            }
        }
    }
    Ok(gin)
}

/// Stacks tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let [batch, _, h, w] = first.shape();
    for p in parts {
        let [pb, _, ph, pw] = p.shape();
        if (pb, ph, pw) != (batch, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut out = Tensor::zeros([batch, total, h, w]);
    for b in 0..batch {
        let mut c0 = 0;
        for p in parts {
            for ci in 0..p.channels() {
                out.plane_mut(b, c0 + ci).copy_from_slice(p.plane(b, ci));
            }
            c0 += p.channels();
        }
    }
    Ok(out)
}

pub fn slice_channel(input: &Tensor, k: usize) -> Result<Tensor> {
    let [batch, c, h, w] = input.shape();
    if k >= c {
        return Err(Error::shape(
            "slice_channel",
            format!("channel {k} out of range for {:?}", input.shape()),
        ));
    }
    let mut out = Tensor::zeros([batch, 1, h, w]);
    for b in 0..batch {
        out.plane_mut(b, 0).copy_from_slice(input.plane(b, k));
    }
    Ok(out)
}

/// Scatters a single-channel gradient back into a `channels`-wide zero tensor.
pub fn slice_channel_backward(grad_out: &Tensor, k: usize, channels: usize) -> Result<Tensor> {
    let [batch, c, h, w] = grad_out.shape();
    if c != 1 || k >= channels {
        return Err(Error::shape(
            "slice_channel_backward",
            format!("grad {:?}, channel {k} of {channels}", grad_out.shape()),
        ));
    }
    let mut out = Tensor::zeros([batch, channels, h, w]);
    for b in 0..batch {
        out.plane_mut(b, k).copy_from_slice(grad_out.plane(b, 0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-loop cross-correlation in f64.
    fn naive_conv(
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let [b, c, h, w] = input.shape();
        let [oc, _, k, _] = weight.shape();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * oc * oh * ow];
        for n in 0..b {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.data()[o] as f64;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += input.get(n, ci, iy as usize, ix as usize) as f64
                                            * weight.get(o, ci, ky, kx) as f64;
                                    }
                                }
                            }
                        }
                        out[((n * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let input = Tensor::zeros([1, 1, 3, 3]);
        let weight = Tensor::full([2, 1, 3, 3], 0.7);
        let bias = Tensor::zeros([1, 1, 1, 2]);
        let out = conv2d(&input, &weight, &bias, 1, 1).unwrap();
        assert_eq!(out.shape(), [1, 2, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random([1, 1, 5, 4], &mut rng);
        let weight = Tensor::full([1, 1, 1, 1], 1.0);
        let bias = Tensor::zeros([1, 1, 1, 1]);
        assert_eq!(conv2d(&input, &weight, &bias, 1, 0).unwrap(), input);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random([1, 2, 5, 5], &mut rng);
        let weight = random([3, 2, 3, 3], &mut rng);
        let bias = random([1, 1, 1, 3], &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let out = conv2d(&input, &weight, &bias, stride, pad).unwrap();
            let reference = naive_conv(&input, &weight, &bias, stride, pad);
            assert_eq!(out.len(), reference.len());
            for (a, b) in out.data().iter().zip(&reference) {
                assert!(
                    (*a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0),
                    "{a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn conv_output_size_formula() {
        let input = Tensor::zeros([1, 1, 7, 9]);
        let weight = Tensor::zeros([1, 1, 3, 3]);
        let bias = Tensor::zeros([1, 1, 1, 1]);
        let out = conv2d(&input, &weight, &bias, 2, 1).unwrap();
        assert_eq!(
            out.shape(),
            [1, 1, (7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1]
        );
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros([1, 2, 4, 4]);
        let weight = Tensor::zeros([1, 3, 3, 3]);
        let bias = Tensor::zeros([1, 1, 1, 1]);
        let err = conv2d(&input, &weight, &bias, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn relu_values() {
        let t = Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 2.0]);
    }

    #[test]
    fn upsample_preserves_constants() {
        let t = Tensor::full([1, 2, 3, 5], 0.37);
        for factor in [1, 2, 4, 8] {
            let up = bilinear_upsample(&t, factor).unwrap();
            assert_eq!(up.shape(), [1, 2, 3 * factor, 5 * factor]);
            assert!(up.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
        assert!(bilinear_upsample(&t, 3).is_err());
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        // <up(x), g> == <x, up_backward(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([1, 2, 3, 4], &mut rng);
        let g = random([1, 2, 12, 16], &mut rng);
        let up = bilinear_upsample(&x, 4).unwrap();
        let back = bilinear_upsample_backward(&g, 4).unwrap();
        let lhs: f64 = up
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random([1, 2, 3, 3], &mut rng);
        let b = random([1, 1, 3, 3], &mut rng);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(
            slice_channel(&cat, 0).unwrap(),
            slice_channel(&a, 0).unwrap()
        );
        assert_eq!(slice_channel(&cat, 2).unwrap(), b);
        assert!(slice_channel(&cat, 3).is_err());
        let c = Tensor::zeros([1, 1, 4, 3]);
        assert!(concat_channels(&[&a, &c]).is_err());
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let t =
            Tensor::from_vec([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]).unwrap();
        let (out, idx) = maxpool(&t, 2, 2).unwrap();
        assert_eq!(out.data(), &[5.0, 7.0]);
        let g = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let back = maxpool_backward(&g, &idx).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
