//! Joint augmentation of a photometric image and its attribute map: random
//! color permutation, then one shared affine warp (rotate, shear, rescale
//! about the image center), then one shared crop that avoids padded pixels.
//!
//! Normal maps get an extra per-pixel vector update so the encoded surface
//! orientation stays consistent with the warped geometry.

use crate::tensor::{Shape, Tensor};
use crate::{PxfrError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// What the attribute map encodes; decides channel count, resampling
/// filter and loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Normals,
    Segmentation,
    Color,
    Scalar,
}

impl AttributeKind {
    pub fn dims(&self) -> usize {
        match self {
            AttributeKind::Normals | AttributeKind::Color => 3,
            AttributeKind::Segmentation | AttributeKind::Scalar => 1,
        }
    }
}

impl std::str::FromStr for AttributeKind {
    type Err = PxfrError;
    fn from_str(s: &str) -> Result<AttributeKind> {
        match s {
            "normals" => Ok(AttributeKind::Normals),
            "segmentation" => Ok(AttributeKind::Segmentation),
            "color" => Ok(AttributeKind::Color),
            "scalar" => Ok(AttributeKind::Scalar),
            other => Err(PxfrError::InvalidInput(format!(
                "unknown attribute kind '{other}' (expected normals, segmentation, color or scalar)"
            ))),
        }
    }
}

/// An attribute map together with the kind that governs its losses,
/// warping and metrics.
#[derive(Debug, Clone)]
pub struct AttributeMap {
    pub map: Tensor,
    pub kind: AttributeKind,
}

impl AttributeMap {
    pub fn new(map: Tensor, kind: AttributeKind) -> Result<AttributeMap> {
        let out = AttributeMap { map, kind };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let sh = self.map.shape();
        if sh.c != self.kind.dims() {
            return Err(PxfrError::ShapeMismatch(format!(
                "attribute map has {} channels but kind {:?} expects {}",
                sh.c,
                self.kind,
                self.kind.dims()
            )));
        }
        if self.kind == AttributeKind::Segmentation
            && self.map.data().iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(PxfrError::InvalidInput(
                "segmentation attribute values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The augmentation pipeline parameters. All draws are uniform over the
/// closed intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub color_permute: bool,
    pub rotation_deg: [f32; 2],
    pub shear_deg: [f32; 2],
    pub scale: [f32; 2],
    pub crop: usize,
}

impl Default for AugmentPolicy {
    fn default() -> AugmentPolicy {
        AugmentPolicy {
            color_permute: true,
            rotation_deg: [-90.0, 90.0],
            shear_deg: [-45.0, 45.0],
            scale: [0.5, 2.0],
            crop: 128,
        }
    }
}

impl AugmentPolicy {
    /// A policy whose every transform draw is the identity; crops still
    /// apply at the given size.
    pub fn identity(crop: usize) -> AugmentPolicy {
        AugmentPolicy {
            color_permute: false,
            rotation_deg: [0.0, 0.0],
            shear_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("rotation_deg", self.rotation_deg),
            ("shear_deg", self.shear_deg),
            ("scale", self.scale),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(PxfrError::InvalidInput(format!(
                    "augment policy: {name} interval [{lo}, {hi}] is empty or non-finite"
                )));
            }
        }
        if self.scale[0] <= 0.0 {
            return Err(PxfrError::InvalidInput(format!(
                "augment policy: scale lower bound {} must be positive",
                self.scale[0]
            )));
        }
        if self.shear_deg[0] <= -90.0 || self.shear_deg[1] >= 90.0 {
            return Err(PxfrError::InvalidInput(
                "augment policy: shear angles must stay inside (-90, 90)".into(),
            ));
        }
        if self.crop < 8 {
            return Err(PxfrError::InvalidInput(format!(
                "augment policy: crop {} is below the minimum of 8",
                self.crop
            )));
        }
        Ok(())
    }
}

/// A 2D affine map `p -> linear * (p - c) + c + translation`, where `c` is
/// the center of whatever image it is applied to. The sampled parameters
/// are kept so normal fields can lift the linear part back to 3D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2D {
    /// Row-major linear part [[a, b], [c, d]] acting on (x, y).
    pub linear: [[f32; 2]; 2],
    pub translation: [f32; 2],
    pub angle_deg: f32,
    pub shear_deg: f32,
    pub scale: f32,
}

impl Affine2D {
    pub fn identity() -> Affine2D {
        Affine2D {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
            angle_deg: 0.0,
            shear_deg: 0.0,
            scale: 1.0,
        }
    }

    /// Rotate by `angle_deg`, then shear x along y by `shear_deg`, then
    /// scale isotropically, all about the image center.
    pub fn from_params(angle_deg: f32, shear_deg: f32, scale: f32) -> Affine2D {
        let th = angle_deg.to_radians();
        let (s, c) = (th.sin(), th.cos());
        let rot = [[c, -s], [s, c]];
        let t = shear_deg.to_radians().tan();
        let shear = [[1.0, t], [0.0, 1.0]];
        let mut linear = mat_mul(shear, rot);
        for row in &mut linear {
            for v in row {
                *v *= scale;
            }
        }
        Affine2D {
            linear,
            translation: [0.0, 0.0],
            angle_deg,
            shear_deg,
            scale,
        }
    }

    pub fn det(&self) -> f32 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Affine2D) -> Affine2D {
        let linear = mat_mul(self.linear, other.linear);
        let t = mat_vec(self.linear, other.translation);
        Affine2D {
            linear,
            translation: [t[0] + self.translation[0], t[1] + self.translation[1]],
            angle_deg: self.angle_deg + other.angle_deg,
            shear_deg: self.shear_deg + other.shear_deg,
            scale: self.scale * other.scale,
        }
    }

    pub fn invert(&self) -> Result<Affine2D> {
        let d = self.det();
        if d.abs() < 1e-12 {
            return Err(PxfrError::InvalidInput(format!(
                "affine transform is singular (det {d})"
            )));
        }
        let inv = [
            [self.linear[1][1] / d, -self.linear[0][1] / d],
            [-self.linear[1][0] / d, self.linear[0][0] / d],
        ];
        let t = mat_vec(inv, self.translation);
        Ok(Affine2D {
            linear: inv,
            translation: [-t[0], -t[1]],
            angle_deg: -self.angle_deg,
            shear_deg: -self.shear_deg,
            scale: 1.0 / self.scale,
        })
    }

    /// Maps a point, taking `center` as the fixed point of the linear part.
    pub fn apply_point(&self, p: [f32; 2], center: [f32; 2]) -> [f32; 2] {
        let rel = [p[0] - center[0], p[1] - center[1]];
        let m = mat_vec(self.linear, rel);
        [
            m[0] + center[0] + self.translation[0],
            m[1] + center[1] + self.translation[1],
        ]
    }

    pub fn is_identity(&self) -> bool {
        self.linear == [[1.0, 0.0], [0.0, 1.0]] && self.translation == [0.0, 0.0]
    }

    /// The 2x2 matrix normal vectors' (x, y) components are multiplied by:
    /// the inverse transpose of the linear part with the isotropic scale
    /// divided out. For pure rotations this equals the rotation itself.
    pub fn normal_vector_matrix(&self) -> Result<[[f32; 2]; 2]> {
        let d = self.det();
        if d <= 1e-12 {
            return Err(PxfrError::InvalidInput(format!(
                "affine transform must preserve orientation for normal maps (det {d})"
            )));
        }
        let s = d.sqrt();
        let unscaled = [
            [self.linear[0][0] / s, self.linear[0][1] / s],
            [self.linear[1][0] / s, self.linear[1][1] / s],
        ];
        // Inverse transpose of a unit-determinant 2x2 matrix.
        Ok([
            [unscaled[1][1], -unscaled[1][0]],
            [-unscaled[0][1], unscaled[0][0]],
        ])
    }
}

fn mat_mul(a: [[f32; 2]; 2], b: [[f32; 2]; 2]) -> [[f32; 2]; 2] {
    let mut out = [[0.0f32; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_vec(a: [[f32; 2]; 2], v: [f32; 2]) -> [f32; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

fn draw(rng: &mut impl Rng, [lo, hi]: [f32; 2]) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws rotation, shear and scale uniformly and composes them in the
/// fixed order rotate, then shear, then scale.
pub fn sample_transform(policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Affine2D> {
    policy.validate()?;
    let angle = draw(rng, policy.rotation_deg);
    let shear = draw(rng, policy.shear_deg);
    let scale = draw(rng, policy.scale);
    Ok(Affine2D::from_params(angle, shear, scale))
}

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Reorders channels so output channel `c` reads input channel `perm[c]`,
/// applied per consecutive RGB triple (channel count must be a multiple
/// of 3).
pub fn apply_color_permutation(image: &Tensor, perm: [usize; 3]) -> Result<Tensor> {
    let sh = image.shape();
    if sh.c == 0 || sh.c % 3 != 0 {
        return Err(PxfrError::ShapeMismatch(format!(
            "color permutation needs a multiple of 3 channels, got {}",
            sh.c
        )));
    }
    let plane = sh.h * sh.w;
    let data = image.data();
    let mut out = vec![0.0f32; data.len()];
    for n in 0..sh.n {
        for triple in 0..sh.c / 3 {
            for c in 0..3 {
                let dst = ((n * sh.c + triple * 3 + c) * plane)..((n * sh.c + triple * 3 + c + 1) * plane);
                let src = (n * sh.c + triple * 3 + perm[c]) * plane;
                out[dst].copy_from_slice(&data[src..src + plane]);
            }
        }
    }
    drop(data);
    Tensor::from_vec(sh, out)
}

/// Applies one of the six channel permutations, drawn uniformly. The input
/// must have exactly 3 channels.
pub fn permute_colors(image: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let sh = image.shape();
    if sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "permute_colors expects a 3-channel image, got {} channels",
            sh.c
        )));
    }
    apply_color_permutation(image, PERMS[rng.gen_range(0..6)])
}

fn reflect(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
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

/// Inverse-mapping warp about the image center: bilinear resampling for
/// normals/color/scalar maps, nearest neighbor for segmentation masks.
/// Out-of-frame samples come from reflection padding; the returned
/// (1,1,h,w) mask is 1 where no padded pixel was touched.
pub fn warp_image(map: &Tensor, transform: &Affine2D, kind: AttributeKind) -> Result<(Tensor, Tensor)> {
    let sh = map.shape();
    if transform.is_identity() {
        return Ok((map.detached(), Tensor::full(Shape::new(1, 1, sh.h, sh.w), 1.0)));
    }
    let inv = transform.invert()?;
    let center = [(sh.w as f32 - 1.0) / 2.0, (sh.h as f32 - 1.0) / 2.0];
    let nearest = kind == AttributeKind::Segmentation;
    let plane = sh.h * sh.w;
    let data = map.data();
    let mut out = vec![0.0f32; data.len()];
    let mut validity = vec![0.0f32; plane];
    for y in 0..sh.h {
        for x in 0..sh.w {
            let src = inv.apply_point([x as f32, y as f32], center);
            if nearest {
                let rx = src[0].round() as isize;
                let ry = src[1].round() as isize;
                let inside =
                    rx >= 0 && rx < sh.w as isize && ry >= 0 && ry < sh.h as isize;
                let sx = reflect(rx, sh.w);
                let sy = reflect(ry, sh.h);
                for n in 0..sh.n {
                    for c in 0..sh.c {
                        out[sh.idx(n, c, y, x)] = data[sh.idx(n, c, sy, sx)];
                    }
                }
                if inside {
                    validity[y * sh.w + x] = 1.0;
                }
            } else {
                let fx = src[0].floor();
                let fy = src[1].floor();
                let wx = src[0] - fx;
                let wy = src[1] - fy;
                let x0 = fx as isize;
                let y0 = fy as isize;
                let inside = src[0] >= 0.0
                    && src[0] <= sh.w as f32 - 1.0
                    && src[1] >= 0.0
                    && src[1] <= sh.h as f32 - 1.0;
                let xs = [reflect(x0, sh.w), reflect(x0 + 1, sh.w)];
                let ys = [reflect(y0, sh.h), reflect(y0 + 1, sh.h)];
                let weights = [
                    (1.0 - wx) * (1.0 - wy),
                    wx * (1.0 - wy),
                    (1.0 - wx) * wy,
                    wx * wy,
                ];
                for n in 0..sh.n {
                    for c in 0..sh.c {
                        let v = weights[0] * data[sh.idx(n, c, ys[0], xs[0])]
                            + weights[1] * data[sh.idx(n, c, ys[0], xs[1])]
                            + weights[2] * data[sh.idx(n, c, ys[1], xs[0])]
                            + weights[3] * data[sh.idx(n, c, ys[1], xs[1])];
                        out[sh.idx(n, c, y, x)] = v;
                    }
                }
                if inside {
                    validity[y * sh.w + x] = 1.0;
                }
            }
        }
    }
    drop(data);
    Ok((
        Tensor::from_vec(sh, out)?,
        Tensor::from_vec(Shape::new(1, 1, sh.h, sh.w), validity)?,
    ))
}

/// Warps a unit-normal map: spatial resampling as in [`warp_image`], then
/// each vector's (x, y) part is multiplied by the lifted inverse-transpose
/// of the rotation and shear (scale drops out) and the vector is brought
/// back to unit length.
pub fn transform_normal_field(normals: &Tensor, transform: &Affine2D) -> Result<(Tensor, Tensor)> {
    let sh = normals.shape();
    if sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "normal field must have 3 channels, got {}",
            sh.c
        )));
    }
    let (warped, validity) = warp_image(normals, transform, AttributeKind::Normals)?;
    if transform.is_identity() {
        return Ok((warped, validity));
    }
    let m = transform.normal_vector_matrix()?;
    let plane = sh.h * sh.w;
    let data = warped.data();
    let mut out = vec![0.0f32; data.len()];
    for n in 0..sh.n {
        let base = n * 3 * plane;
        for p in 0..plane {
            let v = [data[base + p], data[base + plane + p], data[base + 2 * plane + p]];
            let x = m[0][0] * v[0] + m[0][1] * v[1];
            let y = m[1][0] * v[0] + m[1][1] * v[1];
            let z = v[2];
            let norm = (x * x + y * y + z * z).sqrt();
            if norm < 1e-6 {
                out[base + 2 * plane + p] = 1.0;
            } else {
                out[base + p] = x / norm;
                out[base + plane + p] = y / norm;
                out[base + 2 * plane + p] = z / norm;
            }
        }
    }
    drop(data);
    Ok((Tensor::from_vec(sh, out)?, validity))
}

fn crop_tensor(t: &Tensor, x0: usize, y0: usize, size: usize) -> Tensor {
    let sh = t.shape();
    let data = t.data();
    let mut out = vec![0.0f32; sh.n * sh.c * size * size];
    let osh = Shape::new(sh.n, sh.c, size, size);
    for n in 0..sh.n {
        for c in 0..sh.c {
            for y in 0..size {
                let src = sh.idx(n, c, y0 + y, x0);
                let dst = osh.idx(n, c, y, 0);
                out[dst..dst + size].copy_from_slice(&data[src..src + size]);
            }
        }
    }
    drop(data);
    Tensor::from_vec(osh, out).expect("crop: consistent by construction")
}

/// One draw of the full pipeline: optional color permutation of the image,
/// one shared affine warp of image and attribute, one shared crop placed
/// uniformly among the windows free of padded pixels.
pub fn apply_policy(
    image: &Tensor,
    attribute: &Tensor,
    kind: AttributeKind,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    policy.validate()?;
    let ish = image.shape();
    let ash = attribute.shape();
    if ish.h != ash.h || ish.w != ash.w {
        return Err(PxfrError::ShapeMismatch(format!(
            "image {ish} and attribute {ash} are not spatially aligned"
        )));
    }
    if ash.c != kind.dims() {
        return Err(PxfrError::ShapeMismatch(format!(
            "attribute has {} channels but kind {:?} expects {}",
            ash.c,
            kind,
            kind.dims()
        )));
    }
    let image = if policy.color_permute {
        let perm = PERMS[rng.gen_range(0..6)];
        apply_color_permutation(image, perm)?
    } else {
        image.detached()
    };
    let transform = sample_transform(policy, rng)?;
    let (wimg, validity) = warp_image(&image, &transform, AttributeKind::Color)?;
    let (wattr, _) = match kind {
        AttributeKind::Normals => transform_normal_field(attribute, &transform)?,
        _ => warp_image(attribute, &transform, kind)?,
    };

    let crop = policy.crop;
    if crop > ish.h || crop > ish.w {
        return Err(PxfrError::InvalidInput(format!(
            "crop {crop} exceeds the {}x{} warped image; use a smaller crop",
            ish.w, ish.h
        )));
    }
    // Integral image over validity so each window is checked in O(1).
    let (h, w) = (ish.h, ish.w);
    let vdata = validity.data();
    let mut integral = vec![0u32; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x]
                + (vdata[y * w + x] as u32);
        }
    }
    drop(vdata);
    let full = (crop * crop) as i64;
    let mut windows = Vec::new();
    for y0 in 0..=(h - crop) {
        for x0 in 0..=(w - crop) {
            let sum = integral[(y0 + crop) * (w + 1) + (x0 + crop)] as i64
                - integral[y0 * (w + 1) + (x0 + crop)] as i64
                - integral[(y0 + crop) * (w + 1) + x0] as i64
                + integral[y0 * (w + 1) + x0] as i64;
            if sum == full {
                windows.push((x0, y0));
            }
        }
    }
    if windows.is_empty() {
        return Err(PxfrError::InvalidInput(format!(
            "no fully valid {crop}x{crop} crop window after warping; use a smaller crop"
        )));
    }
    let (x0, y0) = windows[rng.gen_range(0..windows.len())];
    Ok((
        crop_tensor(&wimg, x0, y0, crop),
        crop_tensor(&wattr, x0, y0, crop),
    ))
}
