//! Photometric stacks: light rigs, Lambertian rendering, procedural
//! materials and photometric stereo.
//!
//! Everything here is a pure function of its inputs (plus an explicit rng),
//! so stacks can be rebuilt bit-identically from a seed.

mod dataset;
mod procedural;
mod stereo;

pub use dataset::{
    load_dataset, load_mask, load_normal_map, load_rgb, save_dataset, save_mask, save_normal_map,
    save_rgb16, Dataset, ManifestEntry,
};
pub use procedural::{generate_procedural_material, generate_procedural_mask, MaterialKind};
pub use stereo::{mean_angular_error_deg, photometric_stereo, StereoResult, SHADOW_THRESHOLD};

use crate::tensor::{Shape, Tensor};
use crate::{PxfrError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Rec. 709 luma weights, used wherever a single intensity is needed.
pub const LUMA: [f32; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightKind {
    Directional,
    Diffuse,
}

/// One light: a unit direction from the surface toward the light (z > 0
/// for directional lights) and a scalar intensity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Light {
    pub kind: LightKind,
    pub direction: [f32; 3],
    pub intensity: f32,
}

impl Light {
    pub fn directional(direction: [f32; 3], intensity: f32) -> Light {
        Light {
            kind: LightKind::Directional,
            direction,
            intensity,
        }
    }

    pub fn diffuse(intensity: f32) -> Light {
        Light {
            kind: LightKind::Diffuse,
            direction: [0.0, 0.0, 1.0],
            intensity,
        }
    }

    pub fn zenith_angle(&self) -> f32 {
        self.direction[2].clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LightRig {
    pub lights: Vec<Light>,
}

impl LightRig {
    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.lights.iter().enumerate() {
            if l.kind == LightKind::Directional {
                let norm = (l.direction.iter().map(|v| v * v).sum::<f32>()).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(PxfrError::InvalidInput(format!(
                        "light {i}: direction norm {norm} is not unit"
                    )));
                }
                if l.direction[2] <= 0.0 {
                    return Err(PxfrError::InvalidInput(format!(
                        "light {i}: direction must have z > 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Maximum zenith angle of sampled directional lights.
pub const MAX_ZENITH_DEG: f32 = 70.0;

/// Samples `k` directional lights: the first at the zenith, the second and
/// third at 10 degrees zenith with azimuths 120 degrees apart, and the rest
/// area-uniform on the spherical cap up to 70 degrees. Deterministic in
/// `seed`.
pub fn sample_light_rig(k: usize, seed: u64) -> LightRig {
    use rand::SeedableRng;
    assert!(k >= 1, "sample_light_rig: k must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lights = Vec::with_capacity(k);
    lights.push(Light::directional([0.0, 0.0, 1.0], 1.0));
    if k >= 2 {
        let base_az: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let near = 10.0f32.to_radians();
        for j in 0..(k - 1).min(2) {
            let az = base_az + (j + 1) as f32 * 120.0f32.to_radians();
            lights.push(Light::directional(spherical_dir(near, az), 1.0));
        }
    }
    let cos_max = MAX_ZENITH_DEG.to_radians().cos();
    while lights.len() < k {
        let u: f32 = rng.gen_range(0.0..1.0);
        let cos_t = 1.0 - u * (1.0 - cos_max);
        let az: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        lights.push(Light::directional(spherical_dir(cos_t.acos(), az), 1.0));
    }
    LightRig { lights }
}

fn spherical_dir(zenith: f32, azimuth: f32) -> [f32; 3] {
    let s = zenith.sin();
    let d = [s * azimuth.cos(), s * azimuth.sin(), zenith.cos()];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / norm, d[1] / norm, d[2] / norm]
}

/// Albedo and unit normal maps of one material, both (1,3,h,w).
#[derive(Debug, Clone)]
pub struct MaterialSample {
    pub albedo: Tensor,
    pub normals: Tensor,
}

impl MaterialSample {
    pub fn validate(&self) -> Result<()> {
        let sh = self.normals.shape();
        if sh != self.albedo.shape() || sh.c != 3 {
            return Err(PxfrError::ShapeMismatch(format!(
                "material: albedo {} vs normals {}",
                self.albedo.shape(),
                sh
            )));
        }
        let data = self.normals.data();
        let plane = sh.h * sh.w;
        for i in 0..plane {
            let n = [data[i], data[plane + i], data[2 * plane + i]];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(PxfrError::InvalidInput(format!(
                    "material: normal at pixel {i} has norm {norm}"
                )));
            }
        }
        Ok(())
    }
}

/// Renders one image of the material under one light: Lambertian shading
/// for directional lights, plain albedo scaling for the diffuse light.
/// Gaussian noise of `noise_std` is added before clipping to [0,1].
pub fn render_lambertian(
    material: &MaterialSample,
    light: &Light,
    noise_std: f32,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let sh = material.albedo.shape();
    let plane = sh.h * sh.w;
    let albedo = material.albedo.data();
    let normals = material.normals.data();
    let mut out = vec![0.0f32; sh.len()];
    for i in 0..plane {
        let shade = match light.kind {
            LightKind::Directional => {
                let n = [normals[i], normals[plane + i], normals[2 * plane + i]];
                let d = light.direction;
                (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0) * light.intensity
            }
            LightKind::Diffuse => light.intensity,
        };
        for c in 0..3 {
            out[c * plane + i] = albedo[c * plane + i] * shade;
        }
    }
    if noise_std > 0.0 {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0f32, noise_std).expect("noise_std > 0");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec(sh, out).expect("render: same shape")
}

/// K aligned images of one material plus the rig that produced them.
#[derive(Debug, Clone, Default)]
pub struct PhotometricStack {
    pub images: Vec<Tensor>,
    pub rig: LightRig,
}

impl PhotometricStack {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(PxfrError::InvalidInput("stack: no images".into()));
        }
        if self.images.len() != self.rig.len() {
            return Err(PxfrError::ShapeMismatch(format!(
                "stack: {} images vs {} lights",
                self.images.len(),
                self.rig.len()
            )));
        }
        let sh = self.images[0].shape();
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != sh {
                return Err(PxfrError::ShapeMismatch(format!(
                    "stack: image {i} has shape {}, expected {}",
                    img.shape(),
                    sh
                )));
            }
        }
        self.rig.validate()
    }

    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }

    /// Renders a whole stack of the material under every light of `rig`.
    pub fn render(
        material: &MaterialSample,
        rig: &LightRig,
        noise_std: f32,
        rng: &mut ChaCha8Rng,
    ) -> PhotometricStack {
        let images = rig
            .lights
            .iter()
            .map(|l| render_lambertian(material, l, noise_std, rng))
            .collect();
        PhotometricStack {
            images,
            rig: rig.clone(),
        }
    }
}

pub fn luminance(rgb: [f32; 3]) -> f32 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}
