//! Patch-based training: every batch element samples one light image from
//! the stack, runs the augmentation pipeline, standardizes its input patch
//! with the patch's own statistics, and the batch takes one Adam step on
//! the kind-specific loss (ℓ1 for normals/color/scalar, BCE for
//! segmentation).
//!
//! The result is a [`Checkpoint`] bundling weights, configuration, the
//! per-iteration loss curve and summary statistics of the training stack,
//! serialized to a small binary format that round-trips bit-exactly.

use crate::augment::{apply_policy, AttributeKind, AttributeMap, AugmentPolicy};
use crate::photometry::{LightKind, PhotometricStack};
use crate::tensor::{
    bce_with_logits_loss, l1_loss, standardize, AdamState, Shape, Tape, Tensor,
};
use crate::unet::{Head, UNetConfig, UNetModel};
use crate::{derive_seed, seed_stream, PxfrError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Which subset of the captured stack a network trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The diffuse image only.
    Diffuse,
    /// All directional lights.
    Photometric,
    /// Directional plus diffuse, the full stack.
    Diphoto,
    /// The `k` directional lights closest to the zenith.
    Reduced(usize),
}

impl std::str::FromStr for Variant {
    type Err = PxfrError;
    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "diffuseNet" => Ok(Variant::Diffuse),
            "photometricNet" => Ok(Variant::Photometric),
            "diphotoNet" => Ok(Variant::Diphoto),
            other => {
                if let Some(k) = other.strip_prefix("reduced") {
                    let k: usize = k.parse().map_err(|_| {
                        PxfrError::InvalidInput(format!(
                            "variant '{other}': expected reducedK with integer K"
                        ))
                    })?;
                    Ok(Variant::Reduced(k))
                } else {
                    Err(PxfrError::InvalidInput(format!(
                        "unknown variant '{other}' (expected diffuseNet, photometricNet, \
                         diphotoNet or reducedK)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Diffuse => write!(f, "diffuseNet"),
            Variant::Photometric => write!(f, "photometricNet"),
            Variant::Diphoto => write!(f, "diphotoNet"),
            Variant::Reduced(k) => write!(f, "reduced{k}"),
        }
    }
}

/// Filters the stack down to the images the chosen variant trains on.
/// Reduced stacks are ordered near-zenith first.
pub fn make_variant(stack: &PhotometricStack, variant: Variant) -> Result<PhotometricStack> {
    stack.validate()?;
    let mut indices: Vec<usize> = match variant {
        Variant::Diffuse => (0..stack.rig.len())
            .filter(|&i| stack.rig.lights[i].kind == LightKind::Diffuse)
            .collect(),
        Variant::Photometric => (0..stack.rig.len())
            .filter(|&i| stack.rig.lights[i].kind == LightKind::Directional)
            .collect(),
        Variant::Diphoto => {
            let kinds: Vec<_> = stack.rig.lights.iter().map(|l| l.kind).collect();
            if !kinds.contains(&LightKind::Diffuse) || !kinds.contains(&LightKind::Directional) {
                return Err(PxfrError::InvalidInput(
                    "diphotoNet needs both diffuse and directional lights in the stack".into(),
                ));
            }
            (0..stack.rig.len()).collect()
        }
        Variant::Reduced(k) => {
            let mut directional: Vec<usize> = (0..stack.rig.len())
                .filter(|&i| stack.rig.lights[i].kind == LightKind::Directional)
                .collect();
            if k == 0 || k > directional.len() {
                return Err(PxfrError::InvalidInput(format!(
                    "reduced variant wants {k} directional lights, stack has {}",
                    directional.len()
                )));
            }
            directional.sort_by(|&a, &b| {
                stack.rig.lights[a]
                    .zenith_angle()
                    .total_cmp(&stack.rig.lights[b].zenith_angle())
            });
            directional.truncate(k);
            directional
        }
    };
    if indices.is_empty() {
        return Err(PxfrError::InvalidInput(format!(
            "variant {variant} selects no image from this stack"
        )));
    }
    indices.dedup();
    Ok(PhotometricStack {
        images: indices.iter().map(|&i| stack.images[i].detached()).collect(),
        rig: crate::photometry::LightRig {
            lights: indices.iter().map(|&i| stack.rig.lights[i]).collect(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub policy: AugmentPolicy,
    pub unet: UNetConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale training defaults with the network sized for the
    /// attribute kind.
    pub fn for_kind(kind: AttributeKind) -> TrainConfig {
        let head = match kind {
            AttributeKind::Segmentation => Head::Logits,
            _ => Head::Linear,
        };
        TrainConfig {
            iterations: 1000,
            batch_size: 16,
            lr: 0.002,
            policy: AugmentPolicy::default(),
            unet: UNetConfig::new(kind.dims(), head),
            seed: 0,
        }
    }

    pub fn validate(&self, kind: AttributeKind) -> Result<()> {
        if self.iterations < 1 || self.batch_size < 1 {
            return Err(PxfrError::InvalidInput(format!(
                "train config: iterations {} and batch_size {} must both be >= 1",
                self.iterations, self.batch_size
            )));
        }
        if !(self.lr > 0.0) {
            return Err(PxfrError::InvalidInput(format!(
                "train config: learning rate {} must be positive",
                self.lr
            )));
        }
        self.policy.validate()?;
        self.unet.validate()?;
        if self.unet.out_channels != kind.dims() {
            return Err(PxfrError::InvalidInput(format!(
                "train config: network has {} output channels but kind {:?} needs {}",
                self.unet.out_channels,
                kind,
                kind.dims()
            )));
        }
        let want = match kind {
            AttributeKind::Segmentation => Head::Logits,
            _ => Head::Linear,
        };
        if self.unet.head != want {
            return Err(PxfrError::InvalidInput(format!(
                "train config: kind {:?} needs the {:?} head",
                kind, want
            )));
        }
        if self.policy.crop % self.unet.spatial_multiple() != 0 {
            return Err(PxfrError::InvalidInput(format!(
                "train config: crop {} must be a multiple of {} for depth {}",
                self.policy.crop,
                self.unet.spatial_multiple(),
                self.unet.depth
            )));
        }
        Ok(())
    }
}

/// A trained network plus everything needed to reproduce and apply it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNetModel,
    pub train: TrainConfig,
    pub kind: AttributeKind,
    /// Per-channel mean of the full training stack, informational.
    pub input_mean: [f32; 3],
    /// Per-channel standard deviation of the full training stack.
    pub input_std: [f32; 3],
    pub loss_curve: Vec<f32>,
    /// Wall-clock training time. Informational only and deliberately not
    /// serialized, so identical runs produce byte-identical checkpoints.
    pub train_seconds: f32,
}

const MAGIC: &[u8; 4] = b"PXFR";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    unet: UNetConfig,
    train: TrainConfig,
    kind: AttributeKind,
    input_mean: [f32; 3],
    input_std: [f32; 3],
    loss_curve: Vec<f32>,
}

impl Checkpoint {
    /// Binary layout: magic "PXFR", version u16, u32-length JSON metadata
    /// block, u32 tensor count, then per tensor a u32-length name, four
    /// u32 shape fields and the little-endian f32 payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            unet: *self.model.config(),
            train: self.train,
            kind: self.kind,
            input_mean: self.input_mean,
            input_std: self.input_std,
            loss_curve: self.loss_curve.clone(),
        };
        let meta_json =
            serde_json::to_vec(&meta).map_err(|e| PxfrError::Format(e.to_string()))?;
        let mut file = std::fs::File::create(path)
            .map_err(|e| PxfrError::io(path.display().to_string(), e))?;
        let io = |e| PxfrError::io(path.display().to_string(), e);
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta_json);
        let params = self.model.named_parameters();
        buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, tensor) in &params {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let sh = tensor.shape();
            for dim in [sh.n, sh.c, sh.h, sh.w] {
                buf.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in tensor.data().iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&buf).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| PxfrError::io(path.display().to_string(), e))?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(PxfrError::Format(format!(
                    "{}: truncated checkpoint",
                    path.display()
                )));
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        let u32_at = |cursor: &mut usize| -> Result<u32> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        if take(&mut cursor, 4)? != MAGIC {
            return Err(PxfrError::Format(format!(
                "{}: not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(PxfrError::Format(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let meta_len = u32_at(&mut cursor)? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(&mut cursor, meta_len)?)
            .map_err(|e| PxfrError::Format(format!("{}: {e}", path.display())))?;
        let count = u32_at(&mut cursor)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(&mut cursor)? as usize;
            let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
                .map_err(|e| PxfrError::Format(format!("{}: {e}", path.display())))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = u32_at(&mut cursor)? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = take(&mut cursor, 4 * shape.len())?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params.push((name, Tensor::from_vec(shape, data)?));
        }
        let model = UNetModel::from_named_parameters(meta.unet, &params)?;
        Ok(Checkpoint {
            model,
            train: meta.train,
            kind: meta.kind,
            input_mean: meta.input_mean,
            input_std: meta.input_std,
            loss_curve: meta.loss_curve,
            train_seconds: 0.0,
        })
    }

    /// Writes the loss curve as `iteration,loss` CSV.
    pub fn save_loss_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(path, out).map_err(|e| PxfrError::io(path.display().to_string(), e))
    }
}

/// How often one batch element redraws its augmentation when the sampled
/// transform leaves no fully valid crop window.
const CROP_ATTEMPTS: usize = 20;

fn stack_stats(stack: &PhotometricStack) -> ([f32; 3], [f32; 3]) {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut count = 0usize;
    for img in &stack.images {
        let sh = img.shape();
        let plane = sh.h * sh.w;
        let data = img.data();
        for c in 0..3 {
            for p in 0..plane {
                let v = data[c * plane + p] as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += plane;
    }
    let mut mean = [0.0f32; 3];
    let mut std = [0.0f32; 3];
    for c in 0..3 {
        let m = sum[c] / count as f64;
        mean[c] = m as f32;
        std[c] = (sq[c] / count as f64 - m * m).max(0.0).sqrt() as f32;
    }
    (mean, std)
}

/// Runs the full training loop and returns the checkpoint. Deterministic
/// given `config.seed`; aborts with the iteration index if the loss ever
/// turns non-finite.
pub fn train(
    stack: &PhotometricStack,
    attribute: &AttributeMap,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    let start = std::time::Instant::now();
    stack.validate()?;
    attribute.validate()?;
    let kind = attribute.kind;
    config.validate(kind)?;
    let ssh = stack.shape();
    let ash = attribute.map.shape();
    if ssh.h != ash.h || ssh.w != ash.w {
        return Err(PxfrError::ShapeMismatch(format!(
            "stack images {ssh} and attribute {ash} are not aligned"
        )));
    }

    let model = UNetModel::init(config.unet, derive_seed(config.seed, "init"))?;
    let params: Vec<Tensor> = model
        .parameters()
        .into_iter()
        .map(|p| p.with_grad())
        .collect();
    let mut adam = AdamState::new(&params, config.lr);
    let mut rng = seed_stream(config.seed, "augment");
    let crop = config.policy.crop;
    let batch = config.batch_size;
    let in_shape = Shape::new(batch, 3, crop, crop);
    let out_shape = Shape::new(batch, kind.dims(), crop, crop);
    let mut loss_curve = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let mut input = vec![0.0f32; in_shape.len()];
        let mut target = vec![0.0f32; out_shape.len()];
        for b in 0..batch {
            let light = rng.gen_range(0..stack.images.len());
            let mut pair = None;
            let mut last_err = None;
            for _ in 0..CROP_ATTEMPTS {
                match apply_policy(
                    &stack.images[light],
                    &attribute.map,
                    kind,
                    &config.policy,
                    &mut rng,
                ) {
                    Ok(p) => {
                        pair = Some(p);
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            let (patch_in, patch_out) = pair.ok_or_else(|| {
                PxfrError::InvalidInput(format!(
                    "iteration {iteration}: no valid crop after {CROP_ATTEMPTS} draws ({})",
                    last_err.expect("failure recorded")
                ))
            })?;
            let (standardized, _, _) = standardize(&patch_in);
            let elem = 3 * crop * crop;
            input[b * elem..(b + 1) * elem].copy_from_slice(&standardized.data());
            let elem = kind.dims() * crop * crop;
            target[b * elem..(b + 1) * elem].copy_from_slice(&patch_out.data());
        }
        let input = Tensor::from_vec(in_shape, input)?;
        let target = Tensor::from_vec(out_shape, target)?;

        let tape = Tape::new();
        let pred = model.forward(&tape, &input)?;
        let loss = match kind {
            AttributeKind::Segmentation => bce_with_logits_loss(&tape, &pred, &target)?,
            _ => l1_loss(&tape, &pred, &target)?,
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(PxfrError::NonFinite(format!(
                "training loss became {value} at iteration {iteration}"
            )));
        }
        tape.backward(&loss)?;
        adam.step(&params)?;
        for p in &params {
            p.zero_grad();
        }
        tape.clear();
        loss_curve.push(value);
    }

    let (input_mean, input_std) = stack_stats(stack);
    Ok(Checkpoint {
        model,
        train: *config,
        kind,
        input_mean,
        input_std,
        loss_curve,
        train_seconds: start.elapsed().as_secs_f32(),
    })
}
