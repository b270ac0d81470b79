//! 2-D convolution (cross-correlation), its adjoint, and batch normalization.
//!
//! All three are fused graph ops with hand-derived backward passes; the
//! finite-difference suite in `tests/gradients.rs` checks every one.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub pad_mode: PadMode,
}

impl ConvSpec {
    pub fn same(kernel: usize, pad_mode: PadMode) -> ConvSpec {
        ConvSpec {
            stride: 1,
            pad: kernel / 2,
            dilation: 1,
            pad_mode,
        }
    }

    pub fn effective_kernel(&self, k: usize) -> usize {
        (k - 1) * self.dilation + 1
    }

    pub fn out_extent(&self, n: usize, k: usize) -> Result<usize> {
        let padded = n + 2 * self.pad;
        let keff = self.effective_kernel(k);
        if keff > padded {
            return Err(Error::KernelTooLarge {
                kernel: keff,
                padded,
            });
        }
        Ok((padded - keff) / self.stride + 1)
    }
}

/// Mirror index without edge repetition (numpy 'reflect'); requires pad < n.
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * n - 2 - j;
    }
    debug_assert!(j >= 0 && j < n);
    j as usize
}

fn pad_plane(src: &[f64], h: usize, w: usize, pad: usize, mode: PadMode) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; hp * wp];
    for i in 0..hp {
        for j in 0..wp {
            let (si, sj) = (i as isize - pad as isize, j as isize - pad as isize);
            out[i * wp + j] = match mode {
                PadMode::Zero => {
                    if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        src[si as usize * w + sj as usize]
                    } else {
                        0.0
                    }
                }
                PadMode::Reflect => src[reflect_index(si, h) * w + reflect_index(sj, w)],
            };
        }
    }
    out
}

/// Fold a gradient over the padded plane back onto the source plane.
fn unpad_plane_accumulate(gpad: &[f64], h: usize, w: usize, pad: usize, mode: PadMode) -> Vec<f64> {
    let wp = w + 2 * pad;
    let hp = h + 2 * pad;
    let mut out = vec![0.0; h * w];
    for i in 0..hp {
        for j in 0..wp {
            let (si, sj) = (i as isize - pad as isize, j as isize - pad as isize);
            match mode {
                PadMode::Zero => {
                    if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        out[si as usize * w + sj as usize] += gpad[i * wp + j];
                    }
                }
                PadMode::Reflect => {
                    out[reflect_index(si, h) * w + reflect_index(sj, w)] += gpad[i * wp + j];
                }
            }
        }
    }
    out
}

struct ConvDims {
    b: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(input_shape: &[usize], weight_shape: &[usize], spec: &ConvSpec) -> Result<ConvDims> {
    let [b, ic, h, w] = *input_shape else {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be 4-D, got {input_shape:?}"
        )));
    };
    let [oc, wic, kh, kw] = *weight_shape else {
        return Err(Error::ShapeMismatch(format!(
            "conv2d weight must be 4-D, got {weight_shape:?}"
        )));
    };
    if wic != ic {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input has {ic} channels, weight expects {wic}"
        )));
    }
    if spec.pad_mode == PadMode::Reflect && spec.pad > 0 && (spec.pad >= h || spec.pad >= w) {
        return Err(Error::BadReflectPad {
            pad: spec.pad,
            extent: h.min(w),
        });
    }
    let oh = spec.out_extent(h, kh)?;
    let ow = spec.out_extent(w, kw)?;
    Ok(ConvDims {
        b,
        ic,
        h,
        w,
        oc,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Raw forward: cross-correlation of padded input with the kernel.
fn raw_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims, spec: &ConvSpec) -> Vec<f64> {
    let (_hp, wp) = (d.h + 2 * spec.pad, d.w + 2 * spec.pad);
    // pad every (b, ic) plane once
    let padded: Vec<Vec<f64>> = (0..d.b * d.ic)
        .map(|bc| pad_plane(&x[bc * d.h * d.w..(bc + 1) * d.h * d.w], d.h, d.w, spec.pad, spec.pad_mode))
        .collect();
    let mut out = vec![0.0; d.b * d.oc * d.oh * d.ow];
    out.par_chunks_mut(d.oh * d.ow)
        .enumerate()
        .for_each(|(boc, plane)| {
            let (bi, oc) = (boc / d.oc, boc % d.oc);
            let b0 = bias.map(|bv| bv[oc]).unwrap_or(0.0);
            for oi in 0..d.oh {
                for oj in 0..d.ow {
                    let mut acc = b0;
                    for ic in 0..d.ic {
                        let xp = &padded[bi * d.ic + ic];
                        let wbase = ((oc * d.ic + ic) * d.kh) * d.kw;
                        for ki in 0..d.kh {
                            let ii = oi * spec.stride + ki * spec.dilation;
                            let row = ii * wp + oj * spec.stride;
                            for kj in 0..d.kw {
                                acc += w[wbase + ki * d.kw + kj] * xp[row + kj * spec.dilation];
                            }
                        }
                    }
                    plane[oi * d.ow + oj] = acc;
                }
            }
        });
    out
}

/// Raw adjoint w.r.t. the input: scatter output-gradient through the kernel
/// into the padded plane, then fold padding back.
fn raw_dinput(gout: &[f64], w: &[f64], d: &ConvDims, spec: &ConvSpec) -> Vec<f64> {
    let (hp, wp) = (d.h + 2 * spec.pad, d.w + 2 * spec.pad);
    let mut gx = vec![0.0; d.b * d.ic * d.h * d.w];
    gx.par_chunks_mut(d.ic * d.h * d.w)
        .enumerate()
        .for_each(|(bi, gslice)| {
            let mut gpad = vec![0.0; d.ic * hp * wp];
            for oc in 0..d.oc {
                let gplane = &gout[(bi * d.oc + oc) * d.oh * d.ow..];
                for oi in 0..d.oh {
                    for oj in 0..d.ow {
                        let g = gplane[oi * d.ow + oj];
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..d.ic {
                            let wbase = ((oc * d.ic + ic) * d.kh) * d.kw;
                            let pbase = ic * hp * wp;
                            for ki in 0..d.kh {
                                let ii = oi * spec.stride + ki * spec.dilation;
                                let row = pbase + ii * wp + oj * spec.stride;
                                for kj in 0..d.kw {
                                    gpad[row + kj * spec.dilation] += w[wbase + ki * d.kw + kj] * g;
                                }
                            }
                        }
                    }
                }
            }
            for ic in 0..d.ic {
                let folded = unpad_plane_accumulate(
                    &gpad[ic * hp * wp..(ic + 1) * hp * wp],
                    d.h,
                    d.w,
                    spec.pad,
                    spec.pad_mode,
                );
                gslice[ic * d.h * d.w..(ic + 1) * d.h * d.w].copy_from_slice(&folded);
            }
        });
    gx
}

/// Raw adjoint w.r.t. the weight.
fn raw_dweight(x: &[f64], gout: &[f64], d: &ConvDims, spec: &ConvSpec) -> Vec<f64> {
    let (_hp, wp) = (d.h + 2 * spec.pad, d.w + 2 * spec.pad);
    let padded: Vec<Vec<f64>> = (0..d.b * d.ic)
        .map(|bc| pad_plane(&x[bc * d.h * d.w..(bc + 1) * d.h * d.w], d.h, d.w, spec.pad, spec.pad_mode))
        .collect();
    let mut gw = vec![0.0; d.oc * d.ic * d.kh * d.kw];
    gw.par_chunks_mut(d.ic * d.kh * d.kw)
        .enumerate()
        .for_each(|(oc, wslice)| {
            for bi in 0..d.b {
                let gplane = &gout[(bi * d.oc + oc) * d.oh * d.ow..];
                for ic in 0..d.ic {
                    let xp = &padded[bi * d.ic + ic];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let mut acc = 0.0;
                            for oi in 0..d.oh {
                                let ii = oi * spec.stride + ki * spec.dilation;
                                let row = ii * wp + kj * spec.dilation;
                                for oj in 0..d.ow {
                                    acc += gplane[oi * d.ow + oj] * xp[row + oj * spec.stride];
                                }
                            }
                            wslice[(ic * d.kh + ki) * d.kw + kj] += acc;
                        }
                    }
                }
            }
        });
    gw
}

/// 2-D convolution over BxCxHxW with stride, symmetric padding, dilation and
/// zero/reflect padding. Bias is per output channel.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let d = conv_dims(input.shape(), weight.shape(), &spec)?;
    if let Some(bv) = bias {
        if bv.shape() != [d.oc] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias shape {:?} != [{}]",
                bv.shape(),
                d.oc
            )));
        }
    }
    let out = raw_forward(input.data(), weight.data(), bias.map(|t| t.data()), &d, &spec);
    let shape = vec![d.b, d.oc, d.oh, d.ow];
    let (xi, wi) = (input.clone(), weight.clone());
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(bv) = bias {
        parents.push(bv.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        "conv2d",
        shape,
        out,
        parents,
        Box::new(move |g| {
            let d = conv_dims(xi.shape(), wi.shape(), &spec).expect("checked at forward");
            let gx = raw_dinput(g, wi.data(), &d, &spec);
            let gw = raw_dweight(xi.data(), g, &d, &spec);
            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                let mut gb = vec![0.0; d.oc];
                for bi in 0..d.b {
                    for oc in 0..d.oc {
                        gb[oc] += g[(bi * d.oc + oc) * d.oh * d.ow..(bi * d.oc + oc + 1) * d.oh * d.ow]
                            .iter()
                            .sum::<f64>();
                    }
                }
                grads.push(Some(gb));
            }
            grads
        }),
    )
}

/// Adjoint of [`conv2d`] w.r.t. its input, exposed as a graph op (used to
/// build the discriminator input-gradient graph for the R1 penalty).
///
/// `g` plays the role of an output gradient with shape BxOCxOHxOW; the result
/// has the given input shape. Linear in both `g` and `weight`.
pub fn conv2d_input_adjoint(
    g: &Tensor,
    weight: &Tensor,
    input_shape: &[usize],
    spec: ConvSpec,
) -> Result<Tensor> {
    let d = conv_dims(input_shape, weight.shape(), &spec)?;
    let expect = [d.b, d.oc, d.oh, d.ow];
    if g.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_input_adjoint: gradient shape {:?} != {:?}",
            g.shape(),
            expect
        )));
    }
    let out = raw_dinput(g.data(), weight.data(), &d, &spec);
    let (gi, wi) = (g.clone(), weight.clone());
    let in_shape = input_shape.to_vec();
    Tensor::from_op(
        "conv2d_input_adjoint",
        in_shape.clone(),
        out,
        vec![g.clone(), weight.clone()],
        Box::new(move |u| {
            let d = conv_dims(&in_shape, wi.shape(), &spec).expect("checked at forward");
            // <u, A(g; w)> = <conv(u; w), g>  =>  d/dg = conv(u; w), d/dw = dweight(u, g)
            let gg = raw_forward(u, wi.data(), None, &d, &spec);
            let gw = raw_dweight(u, gi.data(), &d, &spec);
            vec![Some(gg), Some(gw)]
        }),
    )
}

/// Per-channel statistics over batch and spatial axes.
pub fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, c, h, w) = x.dims4()?;
    let n = (b * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            mean[ci] += plane.iter().sum::<f64>();
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for bi in 0..b {
        for ci in 0..c {
            let plane = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            var[ci] += plane.iter().map(|&v| (v - mean[ci]).powi(2)).sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    Ok((mean, var))
}

/// Batch normalization over a BxCxHxW tensor.
///
/// Train mode normalizes with (biased) batch statistics; eval mode uses the
/// supplied running statistics as constants. Running-stat bookkeeping lives
/// in the layer that owns them, not here.
pub fn batchnorm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    mode: Mode,
) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm2d: affine/stat size must be [{c}]"
        )));
    }
    let (mean, var) = match mode {
        Mode::Train => channel_stats(x)?,
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let hw = h * w;
    let n = (b * hw) as f64;
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for k in 0..hw {
                let xh = (x.data()[base + k] - mean[ci]) * inv_std[ci];
                xhat[base + k] = xh;
                out[base + k] = gamma.data()[ci] * xh + beta.data()[ci];
            }
        }
    }
    let (xi, gi) = (x.clone(), gamma.clone());
    Tensor::from_op(
        "batchnorm2d",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let _ = &xi;
            let mut gx = vec![0.0; xhat.len()];
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for ci in 0..c {
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * hw;
                    for k in 0..hw {
                        sum_g += g[base + k];
                        sum_gx += g[base + k] * xhat[base + k];
                    }
                }
                ggamma[ci] = sum_gx;
                gbeta[ci] = sum_g;
                let gam = gi.data()[ci];
                match mode {
                    Mode::Train => {
                        // standard fused backward through batch statistics
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for k in 0..hw {
                                gx[base + k] = gam * inv_std[ci] / n
                                    * (n * g[base + k] - sum_g - xhat[base + k] * sum_gx);
                            }
                        }
                    }
                    Mode::Eval => {
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for k in 0..hw {
                                gx[base + k] = gam * inv_std[ci] * g[base + k];
                            }
                        }
                    }
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], grad: bool) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data, grad).unwrap()
    }

    /// Naive nested-loop convolution oracle (zero or reflect padding).
    pub fn naive_conv(
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        spec: ConvSpec,
    ) -> Vec<f64> {
        let [b, ic, h, wd] = *x.shape() else { panic!() };
        let [oc, _, kh, kw] = *w.shape() else { panic!() };
        let oh = spec.out_extent(h, kh).unwrap();
        let ow = spec.out_extent(wd, kw).unwrap();
        let mut out = vec![0.0; b * oc * oh * ow];
        for bi in 0..b {
            for o in 0..oc {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = bias.map(|t| t.data()[o]).unwrap_or(0.0);
                        for c in 0..ic {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (oi * spec.stride + ki * spec.dilation) as isize
                                        - spec.pad as isize;
                                    let jj = (oj * spec.stride + kj * spec.dilation) as isize
                                        - spec.pad as isize;
                                    let xv = match spec.pad_mode {
                                        PadMode::Zero => {
                                            if ii >= 0
                                                && jj >= 0
                                                && (ii as usize) < h
                                                && (jj as usize) < wd
                                            {
                                                x.data()[((bi * ic + c) * h + ii as usize) * wd
                                                    + jj as usize]
                                            } else {
                                                0.0
                                            }
                                        }
                                        PadMode::Reflect => {
                                            x.data()[((bi * ic + c) * h + reflect_index(ii, h)) * wd
                                                + reflect_index(jj, wd)]
                                        }
                                    };
                                    acc += w.data()[((o * ic + c) * kh + ki) * kw + kj] * xv;
                                }
                            }
                        }
                        out[((bi * oc + o) * oh + oi) * ow + oj] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[1, 3, 4, 4], false);
        // identity matrix over channels
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = Tensor::new(&[3, 3, 1, 1], w, false).unwrap();
        let y = conv2d(&x, &w, None, ConvSpec::same(1, PadMode::Zero)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn reflect_padding_preserves_constants() {
        let x = Tensor::full(&[1, 1, 5, 5], 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d(&x, &w, None, ConvSpec::same(3, PadMode::Reflect)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &stride in &[1usize, 2] {
            for &mode in &[PadMode::Zero, PadMode::Reflect] {
                for &dil in &[1usize, 2] {
                    let x = rand_tensor(&mut rng, &[1, 2, 5, 5], false);
                    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], false);
                    let bias = rand_tensor(&mut rng, &[3], false);
                    let spec = ConvSpec {
                        stride,
                        pad: dil, // "same"-style pad for a 3x3 kernel at this dilation
                        dilation: dil,
                        pad_mode: mode,
                    };
                    if mode == PadMode::Reflect && spec.pad >= 5 {
                        continue;
                    }
                    let y = conv2d(&x, &w, Some(&bias), spec).unwrap();
                    let oracle = naive_conv(&x, &w, Some(&bias), spec);
                    for (a, b) in y.data().iter().zip(&oracle) {
                        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_too_large_rejected() {
        let x = Tensor::full(&[1, 1, 2, 2], 0.5).unwrap();
        let w = Tensor::full(&[1, 1, 5, 5], 1.0).unwrap();
        let spec = ConvSpec {
            stride: 1,
            pad: 0,
            dilation: 1,
            pad_mode: PadMode::Zero,
        };
        assert!(conv2d(&x, &w, None, spec).is_err());
    }

    #[test]
    fn batchnorm_standardizes() {
        // channel values {1,2,3}: analytic standardization
        let x = Tensor::new(&[3, 1, 1, 1], vec![1.0, 2.0, 3.0], false).unwrap();
        let gamma = Tensor::full(&[1], 1.0).unwrap();
        let beta = Tensor::full(&[1], 0.0).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &[0.0], &[1.0], 1e-5, Mode::Train).unwrap();
        let expect = [-1.2247, 0.0, 1.2247];
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn batchnorm_train_mode_zero_mean_unit_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 4], false);
        let gamma = Tensor::full(&[3], 1.0).unwrap();
        let beta = Tensor::full(&[3], 0.0).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &[0.0; 3], &[1.0; 3], 1e-9, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&y).unwrap();
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-8);
            assert!((var[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_zero_variance_channel_is_safe() {
        let x = Tensor::full(&[2, 1, 2, 2], 5.0).unwrap();
        let gamma = Tensor::full(&[1], 1.0).unwrap();
        let beta = Tensor::full(&[1], 0.0).unwrap();
        let y = batchnorm2d(&x, &gamma, &beta, &[0.0], &[1.0], 1e-5, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adjoint_identity() {
        // <conv(x), g> == <x, adjoint(g)> for random x, g
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec {
            stride: 2,
            pad: 1,
            dilation: 1,
            pad_mode: PadMode::Reflect,
        };
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6], false);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], false);
        let y = conv2d(&x, &w, None, spec).unwrap();
        let g = rand_tensor(&mut rng, y.shape(), false);
        let adj = conv2d_input_adjoint(&g, &w, x.shape(), spec).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradients_flow_to_all_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 4], true);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3], true);
        let bias = rand_tensor(&mut rng, &[2], true);
        let y = conv2d(&x, &w, Some(&bias), ConvSpec::same(3, PadMode::Zero)).unwrap();
        let loss = y.square().unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&x).is_some());
        assert!(grads.get(&w).is_some());
        assert!(grads.get(&bias).is_some());
    }
}
