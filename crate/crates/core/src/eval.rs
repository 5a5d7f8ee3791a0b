//! Tiled inference for guidance images of any size, the attribute metrics,
//! the equivariance harness and the degradation harness.
//!
//! Tiles overlap by at least the receptive-field radius and only their
//! interiors are kept, so tiled and whole-image inference agree away from
//! the image border. Out-of-frame context comes from reflection.

use crate::augment::{transform_normal_field, warp_image, Affine2D, AttributeKind, AttributeMap};
use crate::tensor::{sigmoid, standardize, Shape, Tape, Tensor};
use crate::trainer::Checkpoint;
use crate::{PxfrError, Result};
use rand::Rng;
use std::path::Path;

/// How a large guidance image is cut for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlan {
    pub tile: usize,
    /// Context margin read around each tile; only the tile interior is kept.
    pub overlap: usize,
}

impl TilePlan {
    /// Smallest safe plan for the model: overlap is the receptive-field
    /// radius rounded up to the spatial multiple, tile defaults to 128.
    pub fn for_model(model: &crate::unet::UNetModel) -> TilePlan {
        let m = model.config().spatial_multiple();
        let radius = model.receptive_field_radius();
        TilePlan {
            tile: 128.max(m),
            overlap: radius.div_ceil(m) * m,
        }
    }

    pub fn validate(&self, model: &crate::unet::UNetModel) -> Result<()> {
        let m = model.config().spatial_multiple();
        if self.tile == 0 || self.tile % m != 0 {
            return Err(PxfrError::InvalidInput(format!(
                "tile plan: tile {} must be a positive multiple of {m}",
                self.tile
            )));
        }
        if self.overlap % m != 0 {
            return Err(PxfrError::InvalidInput(format!(
                "tile plan: overlap {} must be a multiple of {m}",
                self.overlap
            )));
        }
        let radius = model.receptive_field_radius();
        if self.overlap < radius {
            return Err(PxfrError::InvalidInput(format!(
                "tile plan: overlap {} is below the receptive-field radius {radius}",
                self.overlap
            )));
        }
        Ok(())
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Copies a (possibly out-of-frame) window from a (1,c,h,w) tensor, using
/// reflection for samples outside the frame.
fn extract_window(src: &Tensor, y0: isize, x0: isize, wh: usize, ww: usize) -> Tensor {
    let sh = src.shape();
    let data = src.data();
    let mut out = vec![0.0f32; sh.c * wh * ww];
    for c in 0..sh.c {
        for y in 0..wh {
            let sy = reflect(y0 + y as isize, sh.h);
            for x in 0..ww {
                let sx = reflect(x0 + x as isize, sh.w);
                out[(c * wh + y) * ww + x] = data[sh.idx(0, c, sy, sx)];
            }
        }
    }
    drop(data);
    Tensor::from_vec(Shape::new(1, sh.c, wh, ww), out).expect("window: consistent")
}

fn decode(raw: Vec<f32>, shape: Shape, kind: AttributeKind) -> Result<AttributeMap> {
    let plane = shape.h * shape.w;
    let mut data = raw;
    match kind {
        AttributeKind::Segmentation => {
            for v in &mut data {
                *v = sigmoid(*v);
            }
        }
        AttributeKind::Normals => {
            for p in 0..plane {
                let n = [data[p], data[plane + p], data[2 * plane + p]];
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if norm < 1e-6 {
                    data[p] = 0.0;
                    data[plane + p] = 0.0;
                    data[2 * plane + p] = 1.0;
                } else {
                    data[p] = n[0] / norm;
                    data[plane + p] = n[1] / norm;
                    data[2 * plane + p] = n[2] / norm;
                }
            }
        }
        _ => {}
    }
    AttributeMap::new(Tensor::from_vec(shape, data)?, kind)
}

/// Predicts the attribute map for a 3-channel guidance of any size. The
/// guidance is standardized with its own statistics; a guidance no larger
/// than one tile is padded and predicted in one piece.
pub fn infer(checkpoint: &Checkpoint, guidance: &Tensor, plan: &TilePlan) -> Result<AttributeMap> {
    let sh = guidance.shape();
    if sh.n != 1 || sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "infer expects a (1,3,h,w) guidance, got {sh}"
        )));
    }
    let model = &checkpoint.model;
    plan.validate(model)?;
    let kind = checkpoint.kind;
    let m = model.config().spatial_multiple();
    let (standardized, _, _) = standardize(guidance);
    let out_shape = Shape::new(1, kind.dims(), sh.h, sh.w);

    if sh.h <= plan.tile && sh.w <= plan.tile {
        // Whole-image path: reflect-pad up to the spatial multiple.
        let ph = sh.h.div_ceil(m) * m;
        let pw = sh.w.div_ceil(m) * m;
        let input = extract_window(&standardized, 0, 0, ph, pw);
        let tape = Tape::new();
        let pred = model.forward(&tape, &input)?;
        let pdata = pred.data();
        let psh = pred.shape();
        let mut raw = vec![0.0f32; out_shape.len()];
        for c in 0..kind.dims() {
            for y in 0..sh.h {
                for x in 0..sh.w {
                    raw[out_shape.idx(0, c, y, x)] = pdata[psh.idx(0, c, y, x)];
                }
            }
        }
        drop(pdata);
        return decode(raw, out_shape, kind);
    }

    let ov = plan.overlap;
    let mut raw = vec![0.0f32; out_shape.len()];
    let tiles_y = sh.h.div_ceil(plan.tile);
    let tiles_x = sh.w.div_ceil(plan.tile);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let y0 = ty * plan.tile;
            let x0 = tx * plan.tile;
            let input = extract_window(
                &standardized,
                y0 as isize - ov as isize,
                x0 as isize - ov as isize,
                plan.tile + 2 * ov,
                plan.tile + 2 * ov,
            );
            let tape = Tape::new();
            let pred = model.forward(&tape, &input)?;
            let pdata = pred.data();
            let psh = pred.shape();
            for c in 0..kind.dims() {
                for y in 0..plan.tile.min(sh.h - y0) {
                    for x in 0..plan.tile.min(sh.w - x0) {
                        raw[out_shape.idx(0, c, y0 + y, x0 + x)] =
                            pdata[psh.idx(0, c, ov + y, ov + x)];
                    }
                }
            }
        }
    }
    decode(raw, out_shape, kind)
}

/// Mean cosine distance `1 - p.g` between unit normal fields over pixels
/// where `mask` (if given) is nonzero.
pub fn metric_cosine(pred: &Tensor, gt: &Tensor, mask: Option<&Tensor>) -> Result<f32> {
    let sh = pred.shape();
    if sh != gt.shape() || sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "metric_cosine: {} vs {}",
            sh,
            gt.shape()
        )));
    }
    let plane = sh.h * sh.w;
    let dp = pred.data();
    let dg = gt.data();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for p in 0..plane {
        if let Some(m) = mask {
            if m.data()[p] == 0.0 {
                continue;
            }
        }
        let dot = dp[p] * dg[p] + dp[plane + p] * dg[plane + p] + dp[2 * plane + p] * dg[2 * plane + p];
        sum += (1.0 - dot) as f64;
        count += 1;
    }
    if count == 0 {
        return Err(PxfrError::InvalidInput(
            "metric_cosine: mask selects no pixel".into(),
        ));
    }
    Ok((sum / count as f64) as f32)
}

/// Jaccard coefficient of the two masks after thresholding at 0.5; two
/// empty masks count as identical (1).
pub fn metric_iou(pred: &Tensor, gt: &Tensor, mask: Option<&Tensor>) -> Result<f32> {
    let sh = pred.shape();
    if sh != gt.shape() || sh.c != 1 {
        return Err(PxfrError::ShapeMismatch(format!(
            "metric_iou: {} vs {}",
            sh,
            gt.shape()
        )));
    }
    let dp = pred.data();
    let dg = gt.data();
    let mut inter = 0usize;
    let mut union = 0usize;
    for p in 0..sh.len() {
        if let Some(m) = mask {
            if m.data()[p] == 0.0 {
                continue;
            }
        }
        let a = dp[p] >= 0.5;
        let b = dg[p] >= 0.5;
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f32 / union as f32
    })
}

/// The image metrics of Table 1 plus mean absolute error, on [0,1] images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub mse: f32,
    pub psnr: f32,
    pub ssim: f32,
    pub l1: f32,
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const PSNR_CAP: f32 = 100.0;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn ssim_channel(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        // Degenerate sizes: global-statistics SSIM over the whole channel.
        let n = (h * w) as f64;
        let (mut ma, mut mb) = (0.0f64, 0.0f64);
        for i in 0..h * w {
            ma += a[i] as f64;
            mb += b[i] as f64;
        }
        ma /= n;
        mb /= n;
        let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..h * w {
            let da = a[i] as f64 - ma;
            let db = b[i] as f64 - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
        va /= n;
        vb /= n;
        cov /= n;
        return ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    let k = ssim_kernel();
    let half = SSIM_WINDOW / 2;
    // Separable Gaussian filtering of the five moment images.
    let filt = |src: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut tmp = vec![0.0f64; h * w];
        for y in 0..h {
            for x in half..w - half {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * src(y * w + x + i - half);
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0f64; h * w];
        for y in half..h - half {
            for x in half..w - half {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * tmp[(y + i - half) * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let mu_a = filt(&|i| a[i] as f64);
    let mu_b = filt(&|i| b[i] as f64);
    let m_aa = filt(&|i| (a[i] as f64) * (a[i] as f64));
    let m_bb = filt(&|i| (b[i] as f64) * (b[i] as f64));
    let m_ab = filt(&|i| (a[i] as f64) * (b[i] as f64));
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for y in half..h - half {
        for x in half..w - half {
            let i = y * w + x;
            let va = m_aa[i] - mu_a[i] * mu_a[i];
            let vb = m_bb[i] - mu_b[i] * mu_b[i];
            let cov = m_ab[i] - mu_a[i] * mu_b[i];
            sum += ((2.0 * mu_a[i] * mu_b[i] + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn metric_image(pred: &Tensor, gt: &Tensor) -> Result<ImageMetrics> {
    let sh = pred.shape();
    if sh != gt.shape() {
        return Err(PxfrError::ShapeMismatch(format!(
            "metric_image: {} vs {}",
            sh,
            gt.shape()
        )));
    }
    let dp = pred.data();
    let dg = gt.data();
    let n = sh.len() as f64;
    let mut se = 0.0f64;
    let mut ae = 0.0f64;
    for i in 0..sh.len() {
        let d = (dp[i] - dg[i]) as f64;
        se += d * d;
        ae += d.abs();
    }
    let mse = se / n;
    let psnr = if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP as f64) as f32
    };
    let plane = sh.h * sh.w;
    let mut ssim = 0.0f64;
    for nc in 0..sh.n * sh.c {
        ssim += ssim_channel(
            &dp[nc * plane..(nc + 1) * plane],
            &dg[nc * plane..(nc + 1) * plane],
            sh.h,
            sh.w,
        );
    }
    ssim /= (sh.n * sh.c) as f64;
    Ok(ImageMetrics {
        mse: mse as f32,
        psnr,
        ssim: ssim as f32,
        l1: (ae / n) as f32,
    })
}

fn erode(mask: &Tensor, radius: usize) -> Tensor {
    let sh = mask.shape();
    let data = mask.data();
    let mut out = vec![0.0f32; data.len()];
    let r = radius as isize;
    for y in 0..sh.h {
        for x in 0..sh.w {
            let mut keep = true;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let sy = y as isize + dy;
                    let sx = x as isize + dx;
                    if sy < 0 || sy >= sh.h as isize || sx < 0 || sx >= sh.w as isize {
                        keep = false;
                        break 'scan;
                    }
                    if data[sy as usize * sh.w + sx as usize] == 0.0 {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            if keep {
                out[y * sh.w + x] = 1.0;
            }
        }
    }
    drop(data);
    Tensor::from_vec(sh, out).expect("erode: same shape")
}

/// Pixels valid under both warps, shrunk to exclude resampling borders.
const EQUIVARIANCE_ERODE: usize = 3;

/// Kind-aware distance between predict-then-warp and warp-then-predict,
/// over the jointly valid region: cosine distance for normals, one minus
/// IoU for segmentation, mean absolute error otherwise.
pub fn equivariance_error_with(
    predict: &dyn Fn(&Tensor) -> Result<AttributeMap>,
    guidance: &Tensor,
    transform: &Affine2D,
    kind: AttributeKind,
) -> Result<f32> {
    let (warped_guidance, validity_in) = warp_image(guidance, transform, AttributeKind::Color)?;
    let pred_of_warped = predict(&warped_guidance)?;
    let pred = predict(guidance)?;
    let (warped_pred, validity_out) = match kind {
        AttributeKind::Normals => transform_normal_field(&pred.map, transform)?,
        _ => warp_image(&pred.map, transform, kind)?,
    };
    if pred_of_warped.kind != kind {
        return Err(PxfrError::InvalidInput(format!(
            "prediction kind {:?} does not match requested {:?}",
            pred_of_warped.kind, kind
        )));
    }
    let mut joint = {
        let a = validity_in.data();
        let b = validity_out.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        Tensor::from_vec(validity_in.shape(), data)?
    };
    if !transform.is_identity() {
        joint = erode(&joint, EQUIVARIANCE_ERODE);
    }
    if joint.data().iter().all(|&v| v == 0.0) {
        return Err(PxfrError::InvalidInput(
            "equivariance: no jointly valid pixel".into(),
        ));
    }
    // Bit-identical maps (the identity transform in particular) are a
    // distance of exactly zero regardless of the kind's metric.
    if *pred_of_warped.map.data() == *warped_pred.data() {
        return Ok(0.0);
    }
    match kind {
        AttributeKind::Normals => metric_cosine(&pred_of_warped.map, &warped_pred, Some(&joint)),
        AttributeKind::Segmentation => Ok(1.0
            - metric_iou(&pred_of_warped.map, &warped_pred, Some(&joint))?),
        _ => {
            let sh = warped_pred.shape();
            let a = pred_of_warped.map.data();
            let b = warped_pred.data();
            let m = joint.data();
            let plane = sh.h * sh.w;
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for p in 0..plane {
                if m[p] == 0.0 {
                    continue;
                }
                for c in 0..sh.c {
                    sum += (a[c * plane + p] - b[c * plane + p]).abs() as f64;
                    count += 1;
                }
            }
            Ok((sum / count as f64) as f32)
        }
    }
}

/// [`equivariance_error_with`] using tiled inference of the checkpoint.
pub fn equivariance_error(
    checkpoint: &Checkpoint,
    guidance: &Tensor,
    transform: &Affine2D,
    plan: &TilePlan,
) -> Result<f32> {
    let predict = |g: &Tensor| infer(checkpoint, g, plan);
    equivariance_error_with(&predict, guidance, transform, checkpoint.kind)
}

/// Guidance degradations of the robustness study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegradeOp {
    /// Blend each pixel with its luminance; 0 is grayscale, 1 identity.
    Saturation(f32),
    /// Blend with the global mean intensity; 1 is identity.
    Contrast(f32),
    /// Zero-mean Gaussian noise with the given variance on the 0..255
    /// scale, then clipping.
    GaussianNoise { variance_255: f32 },
}

impl DegradeOp {
    pub fn descriptor(&self) -> String {
        match self {
            DegradeOp::Saturation(f) => format!("saturation_{f}"),
            DegradeOp::Contrast(f) => format!("contrast_{f}"),
            DegradeOp::GaussianNoise { variance_255 } => {
                format!("gaussian_noise_{variance_255}")
            }
        }
    }
}

pub fn degrade(guidance: &Tensor, op: DegradeOp, rng: &mut impl Rng) -> Result<Tensor> {
    let sh = guidance.shape();
    if sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "degrade expects a 3-channel image, got {sh}"
        )));
    }
    let plane = sh.h * sh.w;
    let data = guidance.data();
    let mut out = data.clone();
    drop(data);
    match op {
        DegradeOp::Saturation(f) => {
            for n in 0..sh.n {
                let base = n * 3 * plane;
                for p in 0..plane {
                    let luma = crate::photometry::luminance([
                        out[base + p],
                        out[base + plane + p],
                        out[base + 2 * plane + p],
                    ]);
                    for c in 0..3 {
                        let v = out[base + c * plane + p];
                        out[base + c * plane + p] = (luma + f * (v - luma)).clamp(0.0, 1.0);
                    }
                }
            }
        }
        DegradeOp::Contrast(f) => {
            let mean = (out.iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64) as f32;
            for v in &mut out {
                *v = (mean + f * (*v - mean)).clamp(0.0, 1.0);
            }
        }
        DegradeOp::GaussianNoise { variance_255 } => {
            if variance_255 < 0.0 {
                return Err(PxfrError::InvalidInput(format!(
                    "degrade: negative noise variance {variance_255}"
                )));
            }
            if variance_255 > 0.0 {
                use rand_distr::{Distribution, Normal};
                let sigma = variance_255.sqrt() / 255.0;
                let normal = Normal::new(0.0f32, sigma).expect("sigma > 0");
                for v in &mut out {
                    *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
                }
            }
        }
    }
    Tensor::from_vec(sh, out)
}

pub const METRIC_NAMES: [&str; 6] = ["cosine", "iou", "mse", "psnr", "ssim", "l1"];

/// One measurement row of an evaluation study.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub guidance: String,
    pub descriptor: String,
    pub metric: String,
    pub value: f32,
}

/// Collected measurements, serialized as `guidance,descriptor,metric,value`.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(
        &mut self,
        guidance: impl Into<String>,
        descriptor: impl Into<String>,
        metric: &str,
        value: f32,
    ) -> Result<()> {
        if !METRIC_NAMES.contains(&metric) {
            return Err(PxfrError::InvalidInput(format!(
                "eval report: unknown metric '{metric}'"
            )));
        }
        if !value.is_finite() {
            return Err(PxfrError::NonFinite(format!(
                "eval report: metric {metric} is {value}"
            )));
        }
        self.rows.push(EvalRow {
            guidance: guidance.into(),
            descriptor: descriptor.into(),
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("guidance,descriptor,metric,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.guidance, row.descriptor, row.metric, row.value
            ));
        }
        std::fs::write(path, out).map_err(|e| PxfrError::io(path.display().to_string(), e))
    }
}
