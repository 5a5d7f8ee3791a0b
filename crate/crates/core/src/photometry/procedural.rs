//! Procedural stand-ins for captured fabric materials.
//!
//! All three kinds derive their normals from a height field by wraparound
//! central differences, so the maps tile and symmetric patterns average to
//! a vertical mean normal.

use super::MaterialSample;
use crate::tensor::{Shape, Tensor};
use crate::{PxfrError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    /// Interleaved sinusoidal yarns with two-tone albedo per yarn direction.
    Woven,
    /// Smoothed random height field, single-tone albedo with height tint.
    Bumps,
    /// Piecewise-constant albedo stripes over the woven height field.
    Stripes,
}

impl std::str::FromStr for MaterialKind {
    type Err = PxfrError;
    fn from_str(s: &str) -> Result<MaterialKind> {
        match s {
            "woven" => Ok(MaterialKind::Woven),
            "bumps" => Ok(MaterialKind::Bumps),
            "stripes" => Ok(MaterialKind::Stripes),
            other => Err(PxfrError::InvalidInput(format!(
                "unknown material kind '{other}' (expected woven, bumps or stripes)"
            ))),
        }
    }
}

const YARN_PERIOD: usize = 8;
const HEIGHT_AMPLITUDE: f32 = 1.2;

struct Pattern {
    height: Vec<f32>,
    albedo: Vec<f32>, // 3 planes
    mask: Vec<f32>,   // binary
}

fn build_pattern(kind: MaterialKind, h: usize, w: usize, seed: u64) -> Pattern {
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut height = vec![0.0f32; plane];
    let mut albedo = vec![0.0f32; 3 * plane];
    let mut mask = vec![0.0f32; plane];
    let tau = std::f32::consts::TAU;
    match kind {
        MaterialKind::Woven | MaterialKind::Stripes => {
            // Interleaved x/y sinusoids for the yarn relief; a checkerboard
            // of yarn cells carries the two-tone albedo.
            let tone_a = jitter_tone(&mut rng, [0.18, 0.28, 0.55]);
            let tone_b = jitter_tone(&mut rng, [0.78, 0.72, 0.62]);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let warp = ((x / YARN_PERIOD) + (y / YARN_PERIOD)) % 2 == 0;
                    let phase_x = tau * x as f32 / YARN_PERIOD as f32;
                    let phase_y = tau * y as f32 / YARN_PERIOD as f32;
                    height[i] = 0.5 * HEIGHT_AMPLITUDE * (phase_x.sin() + phase_y.sin());
                    let tone = if warp { tone_a } else { tone_b };
                    for c in 0..3 {
                        albedo[c * plane + i] = tone[c];
                    }
                    mask[i] = if warp { 1.0 } else { 0.0 };
                }
            }
            if kind == MaterialKind::Stripes {
                // Overwrite albedo and mask with x-stripes; keep the weave height.
                let tone_a = jitter_tone(&mut rng, [0.75, 0.2, 0.2]);
                let tone_b = jitter_tone(&mut rng, [0.88, 0.85, 0.8]);
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        let on = (x / YARN_PERIOD) % 2 == 0;
                        let tone = if on { tone_a } else { tone_b };
                        for c in 0..3 {
                            albedo[c * plane + i] = tone[c];
                        }
                        mask[i] = if on { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        MaterialKind::Bumps => {
            let mut noise = vec![0.0f32; plane];
            for v in &mut noise {
                *v = rng.gen_range(-1.0..1.0);
            }
            // Separable wraparound box blur, a few passes for smoothness.
            let radius = 2usize;
            for _ in 0..3 {
                noise = blur_pass(&noise, h, w, radius, true);
                noise = blur_pass(&noise, h, w, radius, false);
            }
            let peak = noise.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
            for (hv, nv) in height.iter_mut().zip(&noise) {
                *hv = 2.0 * HEIGHT_AMPLITUDE * nv / peak;
            }
            let base = jitter_tone(&mut rng, [0.55, 0.45, 0.35]);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let tint = 1.0 + 0.15 * height[i] / (2.0 * HEIGHT_AMPLITUDE);
                    for c in 0..3 {
                        albedo[c * plane + i] = (base[c] * tint).clamp(0.05, 0.95);
                    }
                    mask[i] = if height[i] > 0.0 { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Pattern {
        height,
        albedo,
        mask,
    }
}

fn jitter_tone(rng: &mut ChaCha8Rng, base: [f32; 3]) -> [f32; 3] {
    let mut out = base;
    for v in &mut out {
        *v = (*v + rng.gen_range(-0.03..0.03)).clamp(0.05, 0.95);
    }
    out
}

fn blur_pass(src: &[f32], h: usize, w: usize, radius: usize, horizontal: bool) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    let norm = 1.0 / (2 * radius + 1) as f32;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for d in -(radius as isize)..=(radius as isize) {
                let (sy, sx) = if horizontal {
                    (y, (x as isize + d).rem_euclid(w as isize) as usize)
                } else {
                    ((y as isize + d).rem_euclid(h as isize) as usize, x)
                };
                acc += src[sy * w + sx];
            }
            out[y * w + x] = acc * norm;
        }
    }
    out
}

fn normals_from_height(height: &[f32], h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut normals = vec![0.0f32; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xp = height[y * w + (x + 1) % w];
            let xm = height[y * w + (x + w - 1) % w];
            let yp = height[((y + 1) % h) * w + x];
            let ym = height[((y + h - 1) % h) * w + x];
            let dx = (xp - xm) / 2.0;
            let dy = (yp - ym) / 2.0;
            let norm = (dx * dx + dy * dy + 1.0).sqrt();
            normals[i] = -dx / norm;
            normals[plane + i] = -dy / norm;
            normals[2 * plane + i] = 1.0 / norm;
        }
    }
    normals
}

/// Deterministic procedural material; `h`, `w` must be at least 32.
pub fn generate_procedural_material(
    kind: MaterialKind,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<MaterialSample> {
    if h < 32 || w < 32 {
        return Err(PxfrError::InvalidInput(format!(
            "procedural material: {h}x{w} is below the 32x32 minimum"
        )));
    }
    let pattern = build_pattern(kind, h, w, seed);
    let normals = normals_from_height(&pattern.height, h, w);
    Ok(MaterialSample {
        albedo: Tensor::from_vec(Shape::new(1, 3, h, w), pattern.albedo)?,
        normals: Tensor::from_vec(Shape::new(1, 3, h, w), normals)?,
    })
}

/// Binary attribute mask aligned with the material of the same kind, size
/// and seed (stripe id for stripes, yarn direction for woven, raised
/// region for bumps). Shape (1,1,h,w), values in {0,1}.
pub fn generate_procedural_mask(
    kind: MaterialKind,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Tensor> {
    if h < 32 || w < 32 {
        return Err(PxfrError::InvalidInput(format!(
            "procedural mask: {h}x{w} is below the 32x32 minimum"
        )));
    }
    let pattern = build_pattern(kind, h, w, seed);
    Tensor::from_vec(Shape::new(1, 1, h, w), pattern.mask)
}
