//! Shared test-only helpers: the central finite-difference gradient oracle.
//!
//! Each operator has an independent naive double-precision reference
//! forward here. Numeric gradients are central finite differences of the
//! reference; they are compared against the tape's analytic gradients.

#![allow(dead_code)]

use pxfr_core::tensor::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

// ---- naive f64 reference forwards (independent of the implementation) ----

pub fn conv2d_ref(
    input: &[f64],
    ish: Shape,
    kernel: &[f64],
    ksh: Shape,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (ish.h + 2 * pad - ksh.h) / stride + 1;
    let ow = (ish.w + 2 * pad - ksh.w) / stride + 1;
    let mut out = vec![0.0; ish.n * ksh.n * oh * ow];
    for n in 0..ish.n {
        for oc in 0..ksh.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..ish.c {
                        for ky in 0..ksh.h {
                            for kx in 0..ksh.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= ish.h as isize || ix >= ish.w as isize
                                {
                                    continue;
                                }
                                acc += input[ish.idx(n, ic, iy as usize, ix as usize)]
                                    * kernel[ksh.idx(oc, ic, ky, kx)];
                            }
                        }
                    }
                    out[((n * ksh.n + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn leaky_relu_ref(input: &[f64], slope: f64) -> Vec<f64> {
    input
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect()
}

pub fn upsample2x_ref(input: &[f64], sh: Shape) -> Vec<f64> {
    let (oh, ow) = (sh.h * 2, sh.w * 2);
    let mut out = vec![0.0; sh.n * sh.c * oh * ow];
    for nc in 0..sh.n * sh.c {
        for y in 0..oh {
            for x in 0..ow {
                out[nc * oh * ow + y * ow + x] = input[nc * sh.h * sh.w + (y / 2) * sh.w + x / 2];
            }
        }
    }
    out
}

pub fn concat_ref(a: &[f64], sa: Shape, b: &[f64], sb: Shape) -> Vec<f64> {
    let plane = sa.h * sa.w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        out.extend_from_slice(&a[n * sa.c * plane..(n + 1) * sa.c * plane]);
        out.extend_from_slice(&b[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    out
}

pub fn l1_ref(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let loss = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64;
    vec![loss]
}

pub fn bce_ref(logits: &[f64], target: &[f64]) -> Vec<f64> {
    let loss = logits
        .iter()
        .zip(target)
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / logits.len() as f64;
    vec![loss]
}

// ---- the oracle harness ----

/// Worst relative error between the implementation's analytic gradients of
/// `r . f(x)` and central finite differences of the f64 reference forward,
/// over every entry of every input marked `with_grad`.
pub fn max_vjp_rel_error(
    inputs: &[Tensor],
    forward_impl: &dyn Fn(&Tape, &[Tensor]) -> Tensor,
    forward_ref: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    cotangent_seed: u64,
) -> f32 {
    let tape = Tape::new();
    let out = forward_impl(&tape, inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(cotangent_seed);
    let cotangent: Vec<f64> = (0..out.shape().len())
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    for t in inputs {
        t.zero_grad();
    }
    out.zero_grad();
    let cot32: Vec<f32> = cotangent.iter().map(|&v| v as f32).collect();
    tape.backward_seeded(&out, &cot32).unwrap();

    let mut ref_inputs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();

    let mut worst = 0.0f32;
    for (ti, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let grads = t
            .grad()
            .as_ref()
            .expect("input should receive a gradient")
            .clone();
        for i in 0..t.shape().len() {
            let orig = ref_inputs[ti][i];
            ref_inputs[ti][i] = orig + FD_STEP;
            let up = forward_ref(&ref_inputs);
            ref_inputs[ti][i] = orig - FD_STEP;
            let down = forward_ref(&ref_inputs);
            ref_inputs[ti][i] = orig;
            let numeric = up
                .iter()
                .zip(down.iter())
                .zip(cotangent.iter())
                .map(|((&u, &d), &r)| r * (u - d))
                .sum::<f64>()
                / (2.0 * FD_STEP);
            let numeric = numeric as f32;
            let analytic = grads[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Runs the per-op finite-difference checks once for one seed and returns
/// the worst relative error seen across all ops.
pub fn gradcheck_all_ops(seed: u64) -> f32 {
    use pxfr_core::tensor as tn;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f32;

    // conv2d: gradients for input, kernel and bias at once.
    let ish = Shape::new(2, 3, 8, 8);
    let ksh = Shape::new(4, 3, 3, 3);
    let input = random_tensor(&mut rng, ish, -1.0, 1.0).with_grad();
    let kernel = random_tensor(&mut rng, ksh, -0.5, 0.5).with_grad();
    let bias = random_tensor(&mut rng, Shape::new(1, 4, 1, 1), -0.1, 0.1).with_grad();
    let err = max_vjp_rel_error(
        &[input, kernel, bias],
        &|tape, xs| tn::conv2d(tape, &xs[0], &xs[1], &xs[2], 1, 1).unwrap(),
        &|xs| conv2d_ref(&xs[0], ish, &xs[1], ksh, &xs[2], 1, 1),
        seed ^ 0x11,
    );
    worst = worst.max(err);

    // conv2d with stride 2 and no padding.
    let ish = Shape::new(1, 2, 8, 8);
    let ksh = Shape::new(3, 2, 3, 3);
    let input = random_tensor(&mut rng, ish, -1.0, 1.0).with_grad();
    let kernel = random_tensor(&mut rng, ksh, -0.5, 0.5).with_grad();
    let bias = random_tensor(&mut rng, Shape::new(1, 3, 1, 1), -0.1, 0.1).with_grad();
    let err = max_vjp_rel_error(
        &[input, kernel, bias],
        &|tape, xs| tn::conv2d(tape, &xs[0], &xs[1], &xs[2], 2, 0).unwrap(),
        &|xs| conv2d_ref(&xs[0], ish, &xs[1], ksh, &xs[2], 2, 0),
        seed ^ 0x12,
    );
    worst = worst.max(err);

    // leaky_relu, away from the kink at 0.
    let x = {
        let raw = random_tensor(&mut rng, Shape::new(1, 2, 4, 4), 0.1, 1.0);
        let signs: Vec<f32> = raw
            .data()
            .iter()
            .map(|&v| if rng.gen_bool(0.5) { v } else { -v })
            .collect();
        Tensor::from_vec(raw.shape(), signs).unwrap().with_grad()
    };
    let err = max_vjp_rel_error(
        &[x],
        &|tape, xs| tn::leaky_relu(tape, &xs[0], 0.2),
        &|xs| leaky_relu_ref(&xs[0], 0.2),
        seed ^ 0x13,
    );
    worst = worst.max(err);

    // upsample2x_nearest.
    let sh = Shape::new(1, 2, 3, 3);
    let x = random_tensor(&mut rng, sh, -1.0, 1.0).with_grad();
    let err = max_vjp_rel_error(
        &[x],
        &|tape, xs| tn::upsample2x_nearest(tape, &xs[0]),
        &|xs| upsample2x_ref(&xs[0], sh),
        seed ^ 0x14,
    );
    worst = worst.max(err);

    // concat_channels.
    let sa = Shape::new(1, 2, 4, 4);
    let sb = Shape::new(1, 3, 4, 4);
    let a = random_tensor(&mut rng, sa, -1.0, 1.0).with_grad();
    let b = random_tensor(&mut rng, sb, -1.0, 1.0).with_grad();
    let err = max_vjp_rel_error(
        &[a, b],
        &|tape, xs| tn::concat_channels(tape, &xs[0], &xs[1]).unwrap(),
        &|xs| concat_ref(&xs[0], sa, &xs[1], sb),
        seed ^ 0x15,
    );
    worst = worst.max(err);

    // l1_loss directly as a scalar, targets at least 0.4 from predictions.
    let pred = random_tensor(&mut rng, Shape::new(1, 1, 4, 4), -1.0, 1.0).with_grad();
    let target = {
        let off: Vec<f32> = pred
            .data()
            .iter()
            .map(|&p| p + if rng.gen_bool(0.5) { 0.5 } else { -0.5 })
            .collect();
        Tensor::from_vec(pred.shape(), off).unwrap()
    };
    let err = max_vjp_rel_error(
        &[pred, target],
        &|tape, xs| tn::l1_loss(tape, &xs[0], &xs[1]).unwrap(),
        &|xs| l1_ref(&xs[0], &xs[1]),
        seed ^ 0x16,
    );
    worst = worst.max(err);

    // bce_with_logits_loss on random logits and soft targets.
    let logits = random_tensor(&mut rng, Shape::new(1, 1, 4, 4), -2.0, 2.0).with_grad();
    let target = random_tensor(&mut rng, Shape::new(1, 1, 4, 4), 0.0, 1.0);
    let err = max_vjp_rel_error(
        &[logits, target],
        &|tape, xs| tn::bce_with_logits_loss(tape, &xs[0], &xs[1]).unwrap(),
        &|xs| bce_ref(&xs[0], &xs[1]),
        seed ^ 0x17,
    );
    worst = worst.max(err);

    worst
}
