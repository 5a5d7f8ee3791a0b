//! Forward and backward implementations of the supported operators.
//!
//! Convolution goes through im2col and a single-threaded GEMM
//! (`matrixmultiply`), which keeps summation order fixed and therefore
//! results bit-reproducible.

use super::{Shape, Tape, Tensor};
use crate::{PxfrError, Result};

/// Row-major C[m x n] = alpha * A[m x k] * B[k x n] + beta * C.
fn gemm_rm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one image (c,h,w) into a (c*kh*kw) x (oh*ow) column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column matrix back into one image (c,h,w).
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dst: &mut [f32],
) {
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let plane_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2D convolution with bias. Kernel layout is (out, in, kh, kw); bias is
/// (1, out, 1, 1). Output spatial dims follow the usual arithmetic
/// `(h + 2*pad - kh) / stride + 1`.
pub fn conv2d(
    tape: &Tape,
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ish = input.shape();
    let ksh = kernel.shape();
    if ksh.c != ish.c {
        return Err(PxfrError::ShapeMismatch(format!(
            "conv2d: kernel expects {} input channels, input has {} (input {}, kernel {})",
            ksh.c, ish.c, ish, ksh
        )));
    }
    if bias.shape().len() != ksh.n {
        return Err(PxfrError::ShapeMismatch(format!(
            "conv2d: bias has {} entries for {} output channels",
            bias.shape().len(),
            ksh.n
        )));
    }
    if stride == 0 {
        return Err(PxfrError::InvalidInput("conv2d: stride must be >= 1".into()));
    }
    let (h, w, kh, kw) = (ish.h, ish.w, ksh.h, ksh.w);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(PxfrError::ShapeMismatch(format!(
            "conv2d: kernel {}x{} larger than padded input {}x{}",
            kh,
            kw,
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let (n, cin, cout) = (ish.n, ish.c, ksh.n);
    let k = cin * kh * kw;
    let p = oh * ow;

    let mut out = vec![0.0f32; n * cout * p];
    {
        let idata = input.data();
        let kdata = kernel.data();
        let bdata = bias.data();
        let mut cols = vec![0.0f32; k * p];
        for ni in 0..n {
            let src = &idata[ni * cin * h * w..(ni + 1) * cin * h * w];
            im2col(src, cin, h, w, kh, kw, stride, padding, oh, ow, &mut cols);
            let dst = &mut out[ni * cout * p..(ni + 1) * cout * p];
            gemm_rm(
                cout, k, p, 1.0, &kdata, k as isize, 1, &cols, p as isize, 1, 0.0, dst,
            );
            for oc in 0..cout {
                let b = bdata[oc];
                for v in &mut dst[oc * p..(oc + 1) * p] {
                    *v += b;
                }
            }
        }
    }
    let out = Tensor::from_vec(Shape::new(n, cout, oh, ow), out)?;

    if input.requires_grad() || kernel.requires_grad() || bias.requires_grad() {
        let out = out.with_grad();
        let (input, kernel, bias, out_c) =
            (input.clone(), kernel.clone(), bias.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            if bias.requires_grad() {
                let mut gb = vec![0.0f32; cout];
                for ni in 0..n {
                    for oc in 0..cout {
                        let base = (ni * cout + oc) * p;
                        gb[oc] += go[base..base + p].iter().sum::<f32>();
                    }
                }
                bias.accumulate_grad(&gb);
            }
            let need_input = input.requires_grad();
            let need_kernel = kernel.requires_grad();
            if !need_input && !need_kernel {
                return;
            }
            let idata = input.data();
            let kdata = kernel.data();
            let mut cols = vec![0.0f32; k * p];
            let mut gk = if need_kernel {
                vec![0.0f32; cout * k]
            } else {
                Vec::new()
            };
            let mut gi = if need_input {
                vec![0.0f32; n * cin * h * w]
            } else {
                Vec::new()
            };
            let mut gcols = if need_input {
                vec![0.0f32; k * p]
            } else {
                Vec::new()
            };
            for ni in 0..n {
                let go_item = &go[ni * cout * p..(ni + 1) * cout * p];
                if need_kernel {
                    let src = &idata[ni * cin * h * w..(ni + 1) * cin * h * w];
                    im2col(src, cin, h, w, kh, kw, stride, padding, oh, ow, &mut cols);
                    // gk += go_item (cout x p) * cols^T (p x k)
                    gemm_rm(
                        cout, p, k, 1.0, go_item, p as isize, 1, &cols, 1, p as isize, 1.0,
                        &mut gk,
                    );
                }
                if need_input {
                    // gcols = kernel^T (k x cout) * go_item (cout x p)
                    gemm_rm(
                        k,
                        cout,
                        p,
                        1.0,
                        &kdata,
                        1,
                        k as isize,
                        go_item,
                        p as isize,
                        1,
                        0.0,
                        &mut gcols,
                    );
                    col2im(
                        &gcols,
                        cin,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        padding,
                        oh,
                        ow,
                        &mut gi[ni * cin * h * w..(ni + 1) * cin * h * w],
                    );
                }
            }
            drop(idata);
            drop(kdata);
            if need_kernel {
                kernel.accumulate_grad(&gk);
            }
            if need_input {
                input.accumulate_grad(&gi);
            }
        }));
        return Ok(out);
    }
    Ok(out)
}

/// Elementwise max(x, slope * x) for slope in [0, 1).
pub fn leaky_relu(tape: &Tape, input: &Tensor, slope: f32) -> Tensor {
    debug_assert!((0.0..1.0).contains(&slope));
    let out: Vec<f32> = input
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect();
    let out = Tensor::from_vec(input.shape(), out).expect("leaky_relu: same shape");
    if input.requires_grad() {
        let out = out.with_grad();
        let (input_c, out_c) = (input.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            let idata = input_c.data();
            let gi: Vec<f32> = idata
                .iter()
                .zip(go)
                .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
                .collect();
            drop(idata);
            input_c.accumulate_grad(&gi);
        }));
        return out;
    }
    out
}

/// Nearest-neighbor 2x upsampling; each pixel is replicated into a 2x2 block.
pub fn upsample2x_nearest(tape: &Tape, input: &Tensor) -> Tensor {
    let sh = input.shape();
    let (oh, ow) = (sh.h * 2, sh.w * 2);
    let mut out = vec![0.0f32; sh.n * sh.c * oh * ow];
    {
        let idata = input.data();
        for nc in 0..sh.n * sh.c {
            let src = &idata[nc * sh.h * sh.w..(nc + 1) * sh.h * sh.w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..sh.h {
                for x in 0..sh.w {
                    let v = src[y * sh.w + x];
                    let base = 2 * y * ow + 2 * x;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + ow] = v;
                    dst[base + ow + 1] = v;
                }
            }
        }
    }
    let out = Tensor::from_vec(Shape::new(sh.n, sh.c, oh, ow), out).expect("upsample shape");
    if input.requires_grad() {
        let out = out.with_grad();
        let (input_c, out_c) = (input.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            let mut gi = vec![0.0f32; sh.len()];
            for nc in 0..sh.n * sh.c {
                let src = &go[nc * oh * ow..(nc + 1) * oh * ow];
                let dst = &mut gi[nc * sh.h * sh.w..(nc + 1) * sh.h * sh.w];
                for y in 0..sh.h {
                    for x in 0..sh.w {
                        let base = 2 * y * ow + 2 * x;
                        dst[y * sh.w + x] =
                            src[base] + src[base + 1] + src[base + ow] + src[base + ow + 1];
                    }
                }
            }
            input_c.accumulate_grad(&gi);
        }));
        return out;
    }
    out
}

/// Concatenates along the channel axis; batch and spatial dims must agree.
pub fn concat_channels(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(PxfrError::ShapeMismatch(format!(
            "concat_channels: {} vs {}",
            sa, sb
        )));
    }
    let plane = sa.h * sa.w;
    let cout = sa.c + sb.c;
    let mut out = vec![0.0f32; sa.n * cout * plane];
    {
        let da = a.data();
        let db = b.data();
        for ni in 0..sa.n {
            let dst = &mut out[ni * cout * plane..(ni + 1) * cout * plane];
            dst[..sa.c * plane]
                .copy_from_slice(&da[ni * sa.c * plane..(ni + 1) * sa.c * plane]);
            dst[sa.c * plane..]
                .copy_from_slice(&db[ni * sb.c * plane..(ni + 1) * sb.c * plane]);
        }
    }
    let out = Tensor::from_vec(Shape::new(sa.n, cout, sa.h, sa.w), out)?;
    if a.requires_grad() || b.requires_grad() {
        let out = out.with_grad();
        let (a_c, b_c, out_c) = (a.clone(), b.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            if a_c.requires_grad() {
                let mut ga = vec![0.0f32; sa.len()];
                for ni in 0..sa.n {
                    ga[ni * sa.c * plane..(ni + 1) * sa.c * plane].copy_from_slice(
                        &go[ni * cout * plane..ni * cout * plane + sa.c * plane],
                    );
                }
                a_c.accumulate_grad(&ga);
            }
            if b_c.requires_grad() {
                let mut gb = vec![0.0f32; sb.len()];
                for ni in 0..sb.n {
                    gb[ni * sb.c * plane..(ni + 1) * sb.c * plane].copy_from_slice(
                        &go[ni * cout * plane + sa.c * plane..(ni + 1) * cout * plane],
                    );
                }
                b_c.accumulate_grad(&gb);
            }
        }));
        return Ok(out);
    }
    Ok(out)
}

/// Mean absolute difference; subgradient 0 at ties.
pub fn l1_loss(tape: &Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(PxfrError::ShapeMismatch(format!(
            "l1_loss: {} vs {}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.shape().len() as f32;
    let loss = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(&p, &t)| (p - t).abs())
        .sum::<f32>()
        / n;
    let out = Tensor::scalar(loss);
    if pred.requires_grad() {
        let out = out.with_grad();
        let (pred_c, target_c, out_c) = (pred.clone(), target.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            let scale = go[0] / n;
            let gp: Vec<f32> = pred_c
                .data()
                .iter()
                .zip(target_c.data().iter())
                .map(|(&p, &t)| {
                    if p > t {
                        scale
                    } else if p < t {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            pred_c.accumulate_grad(&gp);
        }));
        return Ok(out);
    }
    Ok(out)
}

/// Mean binary cross-entropy from raw logits, in the overflow-safe
/// `max(z,0) - z*t + ln(1 + exp(-|z|))` form.
pub fn bce_with_logits_loss(tape: &Tape, logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    if logits.shape() != target.shape() {
        return Err(PxfrError::ShapeMismatch(format!(
            "bce_with_logits_loss: {} vs {}",
            logits.shape(),
            target.shape()
        )));
    }
    if target.data().iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(PxfrError::InvalidInput(
            "bce_with_logits_loss: targets must lie in [0,1]".into(),
        ));
    }
    let n = logits.shape().len() as f32;
    let loss = logits
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f32>()
        / n;
    let out = Tensor::scalar(loss);
    if logits.requires_grad() {
        let out = out.with_grad();
        let (logits_c, target_c, out_c) = (logits.clone(), target.clone(), out.clone());
        tape.record(Box::new(move || {
            let guard = out_c.grad();
            let Some(go) = guard.as_ref() else { return };
            let scale = go[0] / n;
            let gz: Vec<f32> = logits_c
                .data()
                .iter()
                .zip(target_c.data().iter())
                .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                .collect();
            logits_c.accumulate_grad(&gz);
        }));
        return Ok(out);
    }
    Ok(out)
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standardizes each channel to zero mean and unit variance over the whole
/// image, with the standard deviation clamped at 1e-6 so flat channels come
/// out as zeros. Returns the output and the per-channel (mean, std) used.
pub fn standardize(image: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let sh = image.shape();
    let per = sh.n * sh.h * sh.w;
    let data = image.data();
    let mut means = vec![0.0f32; sh.c];
    let mut stds = vec![0.0f32; sh.c];
    for c in 0..sh.c {
        let mut sum = 0.0f64;
        for ni in 0..sh.n {
            let base = (ni * sh.c + c) * sh.h * sh.w;
            sum += data[base..base + sh.h * sh.w]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        let mean = sum / per as f64;
        let mut var = 0.0f64;
        for ni in 0..sh.n {
            let base = (ni * sh.c + c) * sh.h * sh.w;
            var += data[base..base + sh.h * sh.w]
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>();
        }
        means[c] = mean as f32;
        stds[c] = ((var / per as f64).sqrt() as f32).max(1e-6);
    }
    let mut out = vec![0.0f32; sh.len()];
    for ni in 0..sh.n {
        for c in 0..sh.c {
            let base = (ni * sh.c + c) * sh.h * sh.w;
            let (m, s) = (means[c], stds[c]);
            for i in base..base + sh.h * sh.w {
                out[i] = (data[i] - m) / s;
            }
        }
    }
    drop(data);
    let out = Tensor::from_vec(sh, out).expect("standardize: same shape");
    (out, means, stds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tape, Tensor};

    fn t(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Tensor {
        Tensor::from_vec(Shape::new(n, c, h, w), data).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        let tape = Tape::new();
        let input = t(1, 1, 3, 3, vec![1.0; 9]);
        let kernel = t(1, 1, 1, 1, vec![1.0]);
        let bias = t(1, 1, 1, 1, vec![0.0]);
        let out = conv2d(&tape, &input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), input.shape());
        assert_eq!(*out.data(), *input.data());
    }

    #[test]
    fn conv2d_all_ones_kernel_sums() {
        let tape = Tape::new();
        let input = t(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let kernel = t(1, 1, 2, 2, vec![1.0; 4]);
        let bias = t(1, 1, 1, 1, vec![0.0]);
        let out = conv2d(&tape, &input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(out.item(), 10.0);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let tape = Tape::new();
        let input = t(1, 2, 3, 3, vec![0.0; 18]);
        let kernel = t(1, 3, 1, 1, vec![0.0; 3]);
        let bias = t(1, 1, 1, 1, vec![0.0]);
        let err = conv2d(&tape, &input, &kernel, &bias, 1, 0).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn conv2d_stride_two_halves_output() {
        let tape = Tape::new();
        let input = t(1, 1, 4, 4, (0..16).map(|v| v as f32).collect());
        let kernel = t(1, 1, 3, 3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let bias = t(1, 1, 1, 1, vec![0.5]);
        let out = conv2d(&tape, &input, &kernel, &bias, 2, 1).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(*out.data(), vec![0.5, 2.5, 8.5, 10.5]);
    }

    #[test]
    fn leaky_relu_matches_definition() {
        let tape = Tape::new();
        let x = t(1, 1, 1, 3, vec![-2.0, 0.0, 3.0]);
        let y = leaky_relu(&tape, &x, 0.2);
        assert_eq!(*y.data(), vec![-0.4, 0.0, 3.0]);
    }

    #[test]
    fn leaky_relu_gradient_on_negative_side() {
        let tape = Tape::new();
        let x = t(1, 1, 1, 1, vec![-1.0]).with_grad();
        let y = leaky_relu(&tape, &x, 0.2);
        tape.backward(&y).unwrap();
        assert!((x.grad().as_ref().unwrap()[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let tape = Tape::new();
        let x = t(1, 1, 1, 1, vec![5.0]);
        let y = upsample2x_nearest(&tape, &x);
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(*y.data(), vec![5.0; 4]);
    }

    #[test]
    fn upsample_then_average_pool_is_identity() {
        let tape = Tape::new();
        let x = t(1, 2, 3, 3, (0..18).map(|v| v as f32 * 0.3).collect());
        let y = upsample2x_nearest(&tape, &x);
        let sh = x.shape();
        let yd = y.data();
        for nc in 0..sh.n * sh.c {
            for iy in 0..sh.h {
                for ix in 0..sh.w {
                    let base = nc * sh.h * 2 * sh.w * 2 + 2 * iy * sh.w * 2 + 2 * ix;
                    let avg = (yd[base] + yd[base + 1] + yd[base + sh.w * 2] + yd[base + sh.w * 2 + 1]) / 4.0;
                    assert_eq!(avg, x.data()[nc * sh.h * sh.w + iy * sh.w + ix]);
                }
            }
        }
    }

    #[test]
    fn concat_shapes_and_empty_identity() {
        let tape = Tape::new();
        let a = t(1, 2, 4, 4, vec![1.0; 32]);
        let b = t(1, 3, 4, 4, vec![2.0; 48]);
        let c = concat_channels(&tape, &a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));

        let empty = t(1, 0, 4, 4, vec![]);
        let same = concat_channels(&tape, &a, &empty).unwrap();
        assert_eq!(*same.data(), *a.data());

        let mismatched = t(1, 1, 3, 4, vec![0.0; 12]);
        assert!(concat_channels(&tape, &a, &mismatched).is_err());
    }

    #[test]
    fn concat_gradient_splits_linearly() {
        let tape = Tape::new();
        let a = t(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).with_grad();
        let b = t(1, 1, 2, 2, vec![5.0, 6.0, 7.0, 8.0]).with_grad();
        let c = concat_channels(&tape, &a, &b).unwrap();
        // Sum via l1 against a target far below: d(sum)/dx = 1/N each.
        let target = Tensor::full(c.shape(), -100.0);
        let loss = l1_loss(&tape, &c, &target).unwrap();
        tape.backward(&loss).unwrap();
        for g in a.grad().as_ref().unwrap().iter().chain(b.grad().as_ref().unwrap()) {
            assert!((g - 1.0 / 8.0).abs() < 1e-7);
        }
    }

    #[test]
    fn l1_loss_examples() {
        let tape = Tape::new();
        let p = t(1, 1, 1, 2, vec![1.0, 1.0]);
        assert_eq!(l1_loss(&tape, &p, &p.detached()).unwrap().item(), 0.0);
        let q = t(1, 1, 1, 2, vec![0.0, 2.0]);
        assert_eq!(l1_loss(&tape, &p, &q).unwrap().item(), 1.0);
        let bad = t(1, 1, 1, 3, vec![0.0; 3]);
        assert!(l1_loss(&tape, &p, &bad).is_err());
    }

    #[test]
    fn bce_examples() {
        let tape = Tape::new();
        let z = t(1, 1, 1, 1, vec![0.0]);
        let half = t(1, 1, 1, 1, vec![0.5]);
        let loss = bce_with_logits_loss(&tape, &z, &half).unwrap().item();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);

        let big = t(1, 1, 1, 1, vec![40.0]);
        let one = t(1, 1, 1, 1, vec![1.0]);
        let sat = bce_with_logits_loss(&tape, &big, &one).unwrap().item();
        assert!(sat.is_finite() && sat < 1e-6, "sat = {sat}");

        let out_of_range = t(1, 1, 1, 1, vec![1.5]);
        assert!(bce_with_logits_loss(&tape, &z, &out_of_range).is_err());
    }

    #[test]
    fn standardize_constant_image_is_zero() {
        let x = t(1, 2, 4, 4, vec![0.7; 32]);
        let (y, _means, stds) = standardize(&x);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stds, vec![1e-6, 1e-6]);
    }

    #[test]
    fn standardize_zero_mean_unit_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = t(1, 3, 16, 16, data);
        let (y, _, _) = standardize(&x);
        let sh = y.shape();
        for c in 0..3 {
            let plane = &y.data()[c * 256..(c + 1) * 256];
            let mean: f32 = plane.iter().sum::<f32>() / 256.0;
            let var: f32 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 256.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        let _ = sh;
    }

    #[test]
    fn standardize_is_affine_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = t(1, 1, 8, 8, data.clone());
        let scaled = t(1, 1, 8, 8, data.iter().map(|v| 3.0 * v + 0.25).collect());
        let (a, _, _) = standardize(&x);
        let (b, _, _) = standardize(&scaled);
        for (u, v) in a.data().iter().zip(b.data().iter()) {
            assert!((u - v).abs() < 1e-4, "{u} vs {v}");
        }
    }
}
