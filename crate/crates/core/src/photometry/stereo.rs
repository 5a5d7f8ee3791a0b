//! Per-pixel photometric stereo: least squares for albedo-scaled normals.

use super::{luminance, LightKind, MaterialSample, PhotometricStack};
use crate::tensor::{Shape, Tensor};
use crate::{PxfrError, Result};
use nalgebra::{DMatrix, Matrix3, Vector3};

/// Observed intensities below this are treated as shadowed and excluded
/// from the per-pixel solve.
pub const SHADOW_THRESHOLD: f32 = 0.02;

const MAX_CONDITION: f64 = 1e4;

/// Recovered maps plus a per-pixel validity mask (1 where the solve used
/// at least 3 unshadowed samples, 0 where the pixel fell back to (0,0,1)).
#[derive(Debug, Clone)]
pub struct StereoResult {
    pub material: MaterialSample,
    pub validity: Tensor,
}

impl StereoResult {
    pub fn valid_fraction(&self) -> f32 {
        let d = self.validity.data();
        d.iter().sum::<f32>() / d.len() as f32
    }
}

/// Solves `L g = I` per pixel over the directional lights of the stack,
/// using luminance for the normal solve and per-channel residual scaling
/// for albedo. Requires at least 3 non-coplanar directional lights.
pub fn photometric_stereo(stack: &PhotometricStack) -> Result<StereoResult> {
    stack.validate()?;
    let directional: Vec<usize> = stack
        .rig
        .lights
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LightKind::Directional)
        .map(|(i, _)| i)
        .collect();
    if directional.len() < 3 {
        return Err(PxfrError::InvalidInput(format!(
            "photometric stereo needs >= 3 directional lights, rig has {}",
            directional.len()
        )));
    }
    let rows: Vec<[f64; 3]> = directional
        .iter()
        .map(|&i| {
            let l = &stack.rig.lights[i];
            [
                (l.direction[0] * l.intensity) as f64,
                (l.direction[1] * l.intensity) as f64,
                (l.direction[2] * l.intensity) as f64,
            ]
        })
        .collect();
    let light_matrix = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
    let svd = light_matrix.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin >= MAX_CONDITION {
        return Err(PxfrError::InvalidInput(format!(
            "light rig is ill-conditioned for stereo (condition number {:.1e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }

    let sh = stack.shape();
    let plane = sh.h * sh.w;
    let images: Vec<_> = directional.iter().map(|&i| stack.images[i].data()).collect();
    let mut normals = vec![0.0f32; 3 * plane];
    let mut albedo = vec![0.0f32; 3 * plane];
    let mut validity = vec![0.0f32; plane];

    for p in 0..plane {
        let lums: Vec<f32> = images
            .iter()
            .map(|img| luminance([img[p], img[plane + p], img[2 * plane + p]]))
            .collect();
        let usable: Vec<usize> = (0..rows.len())
            .filter(|&i| lums[i] >= SHADOW_THRESHOLD)
            .collect();
        if usable.len() < 3 {
            normals[2 * plane + p] = 1.0;
            continue;
        }
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        for &i in &usable {
            let row = Vector3::new(rows[i][0], rows[i][1], rows[i][2]);
            ata += row * row.transpose();
            atb += row * lums[i] as f64;
        }
        let Some(inv) = ata.try_inverse() else {
            normals[2 * plane + p] = 1.0;
            continue;
        };
        let g = inv * atb;
        let norm = g.norm();
        if norm < 1e-9 || g[2] <= 0.0 {
            normals[2 * plane + p] = 1.0;
            continue;
        }
        let n = g / norm;
        normals[p] = n[0] as f32;
        normals[plane + p] = n[1] as f32;
        normals[2 * plane + p] = n[2] as f32;
        validity[p] = 1.0;

        // Per-channel albedo from residual scaling against the shading the
        // recovered normal predicts.
        let mut denom = 0.0f64;
        let mut num = [0.0f64; 3];
        for &i in &usable {
            let s = (rows[i][0] * n[0] + rows[i][1] * n[1] + rows[i][2] * n[2]).max(0.0);
            denom += s * s;
            for c in 0..3 {
                num[c] += images[i][c * plane + p] as f64 * s;
            }
        }
        if denom > 1e-12 {
            for c in 0..3 {
                albedo[c * plane + p] = (num[c] / denom).clamp(0.0, 1.0) as f32;
            }
        }
    }

    Ok(StereoResult {
        material: MaterialSample {
            albedo: Tensor::from_vec(Shape::new(1, 3, sh.h, sh.w), albedo)?,
            normals: Tensor::from_vec(Shape::new(1, 3, sh.h, sh.w), normals)?,
        },
        validity: Tensor::from_vec(Shape::new(1, 1, sh.h, sh.w), validity)?,
    })
}

/// Mean angle in degrees between matching unit normals, over pixels where
/// `mask` (if given) is nonzero.
pub fn mean_angular_error_deg(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> f32 {
    let sh = a.shape();
    let plane = sh.h * sh.w;
    let da = a.data();
    let db = b.data();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for p in 0..plane {
        if let Some(m) = mask {
            if m.data()[p] == 0.0 {
                continue;
            }
        }
        let dot = da[p] * db[p]
            + da[plane + p] * db[plane + p]
            + da[2 * plane + p] * db[2 * plane + p];
        sum += (dot.clamp(-1.0, 1.0) as f64).acos().to_degrees();
        count += 1;
    }
    (sum / count.max(1) as f64) as f32
}
