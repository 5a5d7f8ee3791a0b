//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (run with `-- --nocapture` to see them). The scene
//! fixture is deterministic and cheap, so every test rebuilds it; the one
//! expensive trained model is cached on disk and shared across criteria.

#[allow(dead_code)]
mod common;

use pxfr_core::augment::{Affine2D, AttributeKind, AttributeMap, AugmentPolicy};
use pxfr_core::eval::{degrade, equivariance_error, infer, metric_cosine, metric_iou, DegradeOp, TilePlan};
use pxfr_core::photometry::{
    generate_procedural_mask, generate_procedural_material, mean_angular_error_deg,
    photometric_stereo, render_lambertian, sample_light_rig, Light, LightKind, LightRig,
    MaterialKind, MaterialSample, PhotometricStack,
};
use pxfr_core::tensor::{Shape, Tensor};
use pxfr_core::trainer::{make_variant, train, Checkpoint, TrainConfig, Variant};
use pxfr_core::unet::{Head, UNetConfig, UNetModel};
use pxfr_core::{derive_seed, seed_stream};
use std::sync::OnceLock;
use std::time::Instant;

const SCENE_SEED: u64 = 17;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} {name}: {detail}");
}

/// Center crop of a (1,c,h,w) tensor to `size` x `size`.
fn crop_center(t: &Tensor, size: usize) -> Tensor {
    let sh = t.shape();
    let (y0, x0) = ((sh.h - size) / 2, (sh.w - size) / 2);
    let data = t.data();
    let mut out = Vec::with_capacity(sh.c * size * size);
    for c in 0..sh.c {
        for y in 0..size {
            let row = c * sh.h * sh.w + (y0 + y) * sh.w + x0;
            out.extend_from_slice(&data[row..row + size]);
        }
    }
    Tensor::from_vec(Shape::new(1, sh.c, size, size), out).expect("crop shape")
}

/// A directional light at 35 degrees zenith whose azimuth is as far as
/// possible from every azimuth in the rig.
fn held_out_light(rig: &LightRig) -> Light {
    let azimuths: Vec<f32> = rig
        .lights
        .iter()
        .filter(|l| l.kind == LightKind::Directional)
        .map(|l| l.direction[1].atan2(l.direction[0]))
        .collect();
    let mut best = (0.0f32, -1.0f32);
    for step in 0..360 {
        let az = step as f32 * std::f32::consts::TAU / 360.0;
        let gap = azimuths
            .iter()
            .map(|&a| {
                let mut d = (az - a).rem_euclid(std::f32::consts::TAU);
                if d > std::f32::consts::PI {
                    d = std::f32::consts::TAU - d;
                }
                d
            })
            .fold(f32::INFINITY, f32::min);
        if gap > best.1 {
            best = (az, gap);
        }
    }
    let zen = 35.0f32.to_radians();
    let az = best.0;
    Light::directional(
        [zen.sin() * az.cos(), zen.sin() * az.sin(), zen.cos()],
        1.0,
    )
}

/// Shared woven scene: a 256x256 material, a 27+1 light rig, the central
/// 128x128 training stack with stereo-recovered normals, and a 256x256
/// guidance rendered under a held-out directional light.
struct Scene {
    stack128: PhotometricStack,
    attr_normals: AttributeMap,
    guidance256: Tensor,
    gt256: Tensor,
    guidance128: Tensor,
    gt128: Tensor,
}

fn scene() -> Scene {
    {
        let material = generate_procedural_material(
            MaterialKind::Woven,
            256,
            256,
            derive_seed(SCENE_SEED, "material"),
        )
        .expect("material");
        let mut rig = sample_light_rig(27, derive_seed(SCENE_SEED, "rig"));
        rig.lights.push(Light::diffuse(1.0));
        let mut rng = seed_stream(SCENE_SEED, "render");
        let stack256 = PhotometricStack::render(&material, &rig, 0.0, &mut rng);
        let stack128 = PhotometricStack {
            images: stack256.images.iter().map(|i| crop_center(i, 128)).collect(),
            rig: rig.clone(),
        };
        let stereo = photometric_stereo(&stack128).expect("stereo");
        let attr_normals =
            AttributeMap::new(stereo.material.normals, AttributeKind::Normals).expect("attr");
        let light = held_out_light(&rig);
        let mut dummy = seed_stream(SCENE_SEED, "guidance");
        let guidance256 = render_lambertian(&material, &light, 0.0, &mut dummy);
        let gt256 = material.normals.detached();
        let guidance128 = crop_center(&guidance256, 128);
        let gt128 = crop_center(&gt256, 128);
        Scene {
            stack128,
            attr_normals,
            guidance256,
            gt256,
            guidance128,
            gt128,
        }
    }
}

/// Cheap training configuration shared by the trend criteria.
fn small_config(kind: AttributeKind, policy: AugmentPolicy, seed: u64) -> TrainConfig {
    let head = match kind {
        AttributeKind::Segmentation => Head::Logits,
        _ => Head::Linear,
    };
    let mut unet = UNetConfig::new(kind.dims(), head);
    unet.base_channels = 4;
    unet.depth = 2;
    TrainConfig {
        iterations: 400,
        batch_size: 8,
        lr: 0.002,
        policy,
        unet,
        seed,
    }
}

fn geometry_policy(rotation: [f32; 2], shear: [f32; 2], color_permute: bool) -> AugmentPolicy {
    AugmentPolicy {
        color_permute,
        rotation_deg: rotation,
        shear_deg: shear,
        scale: [0.5, 2.0],
        crop: 32,
    }
}

fn full_small_policy(color_permute: bool) -> AugmentPolicy {
    geometry_policy([-90.0, 90.0], [-45.0, 45.0], color_permute)
}

fn cosine_vs(checkpoint: &Checkpoint, guidance: &Tensor, gt: &Tensor) -> f32 {
    let plan = TilePlan::for_model(&checkpoint.model);
    let pred = infer(checkpoint, guidance, &plan).expect("infer");
    metric_cosine(&pred.map, gt, None).expect("cosine")
}

fn mean_std(values: &[f32]) -> (f32, f32) {
    let n = values.len() as f32;
    let mean = values.iter().sum::<f32>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f32;
    for seed in 0..20u64 {
        worst = worst.max(common::gradcheck_all_ops(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && secs < 60.0;
    report(
        1,
        "gradient correctness",
        pass,
        &format!("worst relative error {worst:.2e} over 20 seeds in {secs:.1}s"),
    );
}

/// A Lambertian sphere bulging from a flat plane, 64x64.
fn sphere_material() -> MaterialSample {
    let (h, w) = (64usize, 64usize);
    let radius = 28.0f32;
    let mut normals = vec![0.0f32; 3 * h * w];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = x as f32 + 0.5 - w as f32 / 2.0;
            let dy = y as f32 + 0.5 - h as f32 / 2.0;
            let r2 = dx * dx + dy * dy;
            let n = if r2 < radius * radius {
                let nz = (1.0 - r2 / (radius * radius)).sqrt();
                [dx / radius, dy / radius, nz]
            } else {
                [0.0, 0.0, 1.0]
            };
            normals[i] = n[0];
            normals[plane + i] = n[1];
            normals[2 * plane + i] = n[2];
        }
    }
    let shape = Shape::new(1, 3, h, w);
    MaterialSample {
        albedo: Tensor::from_vec(shape, vec![0.8; 3 * h * w]).expect("albedo"),
        normals: Tensor::from_vec(shape, normals).expect("normals"),
    }
}

#[test]
fn criterion_02_stereo_round_trip() {
    let start = Instant::now();
    let woven =
        generate_procedural_material(MaterialKind::Woven, 64, 64, derive_seed(2, "material"))
            .expect("woven");
    let rig = sample_light_rig(9, derive_seed(2, "rig"));
    let mut details = Vec::new();
    let mut pass = true;
    for (name, material) in [("sphere", sphere_material()), ("woven", woven)] {
        for (noise, limit) in [(0.0f32, 1.0f32), (0.02, 5.0)] {
            let mut rng = seed_stream(2, "render");
            let stack = PhotometricStack::render(&material, &rig, noise, &mut rng);
            let result = photometric_stereo(&stack).expect("stereo");
            let err = mean_angular_error_deg(
                &result.material.normals,
                &material.normals,
                Some(&result.validity),
            );
            pass &= err < limit;
            details.push(format!("{name} noise {noise}: {err:.2} deg"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 10.0;
    report(
        2,
        "stereo round trip",
        pass,
        &format!("{}; {secs:.1}s", details.join(", ")),
    );
}

/// The criterion-3 model (photometricNet, base 8, crop 64, 1000
/// iterations): checkpoint file path, held-out-guidance cosine error and
/// training wall time. Cached on disk because tensors are not shareable
/// across test threads.
static C3: OnceLock<(std::path::PathBuf, f32, f64)> = OnceLock::new();

fn c3_model() -> &'static (std::path::PathBuf, f32, f64) {
    C3.get_or_init(|| {
        let scene = scene();
        let start = Instant::now();
        let stack = make_variant(&scene.stack128, Variant::Photometric).expect("variant");
        let mut unet = UNetConfig::new(3, Head::Linear);
        unet.base_channels = 8;
        unet.depth = 2;
        let mut policy = AugmentPolicy::default();
        policy.crop = 64;
        let config = TrainConfig {
            iterations: 1000,
            batch_size: 16,
            lr: 0.002,
            policy,
            unet,
            seed: derive_seed(SCENE_SEED, "c3"),
        };
        let checkpoint = train(&stack, &scene.attr_normals, &config).expect("train");
        let cosine = cosine_vs(&checkpoint, &scene.guidance256, &scene.gt256);
        let path =
            std::env::temp_dir().join(format!("pxfr-acceptance-c3-{}.ckpt", std::process::id()));
        checkpoint.save(&path).expect("save");
        (path, cosine, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_03_end_to_end_transfer() {
    let (_, cosine, secs) = c3_model();
    report(
        3,
        "end-to-end transfer",
        *cosine < 0.05,
        &format!("held-out cosine distance {cosine:.4} in {secs:.0}s"),
    );
}

#[test]
fn criterion_04_illumination_variant_ordering() {
    let scene = scene();
    let start = Instant::now();
    let mut photo = Vec::new();
    let mut diffuse = Vec::new();
    for seed in 0..3u64 {
        for (variant, out) in [
            (Variant::Photometric, &mut photo),
            (Variant::Diffuse, &mut diffuse),
        ] {
            let stack = make_variant(&scene.stack128, variant).expect("variant");
            let config =
                small_config(AttributeKind::Normals, full_small_policy(true), seed);
            let c = train(&stack, &scene.attr_normals, &config).expect("train");
            out.push(cosine_vs(&c, &scene.guidance256, &scene.gt256));
        }
    }
    let (photo_mean, _) = mean_std(&photo);
    let (diffuse_mean, _) = mean_std(&diffuse);
    report(
        4,
        "illumination-variant ordering",
        diffuse_mean > photo_mean,
        &format!(
            "diffuseNet {diffuse_mean:.4} > photometricNet {photo_mean:.4}, 3 seeds, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_dataset_size_trend() {
    let scene = scene();
    let start = Instant::now();
    let mut errors = Vec::new();
    for &k in &[1usize, 3, 9] {
        let stack = make_variant(&scene.stack128, Variant::Reduced(k)).expect("variant");
        let per_seed: Vec<f32> = (0..3u64)
            .map(|seed| {
                let mut config =
                    small_config(AttributeKind::Normals, full_small_policy(true), seed);
                // Larger light sets need more steps to converge; give every
                // k the same budget so the comparison is fair.
                config.iterations = 800;
                let c = train(&stack, &scene.attr_normals, &config).expect("train");
                cosine_vs(&c, &scene.guidance256, &scene.gt256)
            })
            .collect();
        errors.push(mean_std(&per_seed));
    }
    let [(m1, s1), (m3, s3), (m9, s9)] = errors[..] else {
        unreachable!()
    };
    let pooled = ((s1 * s1 + s3 * s3 + s9 * s9) / 3.0).sqrt();
    let pass = m1 > m9 && m3 >= m9 - pooled && m3 <= m1 + pooled;
    report(
        5,
        "dataset-size trend",
        pass,
        &format!(
            "mean error k=1 {m1:.4}, k=3 {m3:.4}, k=9 {m9:.4}, pooled std {pooled:.4}, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_equivariance_trend() {
    let scene = scene();
    let start = Instant::now();
    let stack = make_variant(&scene.stack128, Variant::Photometric).expect("variant");
    let transforms = [
        Affine2D::from_params(45.0, 0.0, 1.0),
        Affine2D::from_params(0.0, 30.0, 1.0),
    ];
    let mut means = Vec::new();
    for policy in [
        full_small_policy(false),
        geometry_policy([0.0, 0.0], [0.0, 0.0], false),
    ] {
        let per_seed: Vec<f32> = (0..3u64)
            .map(|seed| {
                let config = small_config(AttributeKind::Normals, policy, seed);
                let c = train(&stack, &scene.attr_normals, &config).expect("train");
                let plan = TilePlan::for_model(&c.model);
                transforms
                    .iter()
                    .map(|t| {
                        equivariance_error(&c, &scene.guidance128, t, &plan).expect("equivariance")
                    })
                    .sum::<f32>()
                    / transforms.len() as f32
            })
            .collect();
        means.push(mean_std(&per_seed).0);
    }
    let (with_aug, without) = (means[0], means[1]);
    report(
        6,
        "equivariance trend",
        with_aug < without,
        &format!(
            "rot+shear aug {with_aug:.4} < crop+scale only {without:.4} at 45 deg rotation and \
             30 deg shear, 3 seeds, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

/// The guidance with red and blue channels exchanged.
fn swap_rb(image: &Tensor) -> Tensor {
    let sh = image.shape();
    let plane = sh.h * sh.w;
    let data = image.data();
    let mut out = data.clone();
    out[..plane].copy_from_slice(&data[2 * plane..3 * plane]);
    out[2 * plane..3 * plane].copy_from_slice(&data[..plane]);
    drop(data);
    Tensor::from_vec(sh, out).expect("swap shape")
}

#[test]
fn criterion_07_color_permutation_benefit() {
    let scene = scene();
    let start = Instant::now();
    let stack = make_variant(&scene.stack128, Variant::Photometric).expect("variant");
    let swapped = swap_rb(&scene.guidance128);
    let mut means = Vec::new();
    for color in [true, false] {
        let per_seed: Vec<f32> = (0..3u64)
            .map(|seed| {
                let config =
                    small_config(AttributeKind::Normals, full_small_policy(color), seed);
                let c = train(&stack, &scene.attr_normals, &config).expect("train");
                cosine_vs(&c, &swapped, &scene.gt128)
            })
            .collect();
        means.push(mean_std(&per_seed).0);
    }
    let (with_color, without) = (means[0], means[1]);
    report(
        7,
        "color-permutation benefit",
        with_color < without,
        &format!(
            "swapped-guidance cosine with {with_color:.4} < without {without:.4}, 3 seeds, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_degradation_robustness() {
    let scene = scene();
    let (path, _, _) = c3_model();
    let checkpoint = &Checkpoint::load(path).expect("load");
    let plan = TilePlan::for_model(&checkpoint.model);
    let clean = infer(checkpoint, &scene.guidance256, &plan).expect("infer");
    let mut rng = seed_stream(SCENE_SEED, "degrade");
    let noised = degrade(
        &scene.guidance256,
        DegradeOp::GaussianNoise { variance_255: 255.0 },
        &mut rng,
    )
    .expect("degrade");
    let pred = infer(checkpoint, &noised, &plan).expect("infer");
    let drift = metric_cosine(&pred.map, &clean.map, None).expect("cosine");
    report(
        8,
        "degradation robustness",
        drift < 0.1,
        &format!("prediction drift under variance-255 noise: cosine {drift:.4}"),
    );
}

#[test]
fn criterion_09_tiling_exactness() {
    let mut unet = UNetConfig::new(3, Head::Linear);
    unet.base_channels = 4;
    unet.depth = 2;
    let model = UNetModel::init(unet, 3).expect("model");
    let mut train_cfg = TrainConfig::for_kind(AttributeKind::Normals);
    train_cfg.unet = unet;
    let checkpoint = Checkpoint {
        model,
        train: train_cfg,
        kind: AttributeKind::Normals,
        input_mean: [0.4, 0.5, 0.6],
        input_std: [0.2, 0.25, 0.3],
        loss_curve: Vec::new(),
        train_seconds: 0.0,
    };
    let shape = Shape::new(1, 3, 250, 190);
    let mut rng = seed_stream(9, "guidance");
    let data = (0..shape.len())
        .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
        .collect();
    let guidance = Tensor::from_vec(shape, data).expect("guidance");
    let whole = infer(
        &checkpoint,
        &guidance,
        &TilePlan { tile: 256, overlap: 28 },
    )
    .expect("whole-image infer");
    let mut worst = 0.0f32;
    let mut pass = true;
    let plans = [(64usize, 28usize), (96, 32), (128, 28)];
    for (tile, overlap) in plans {
        let tiled = infer(&checkpoint, &guidance, &TilePlan { tile, overlap }).expect("tiled");
        let (a, b) = (tiled.map.data(), whole.map.data());
        let margin = overlap;
        let mut diff = 0.0f32;
        for c in 0..3 {
            for y in margin..250 - margin {
                for x in margin..190 - margin {
                    let i = c * 250 * 190 + y * 190 + x;
                    diff = diff.max((a[i] - b[i]).abs());
                }
            }
        }
        worst = worst.max(diff);
        pass &= diff < 1e-5;
    }
    report(
        9,
        "tiling exactness",
        pass,
        &format!("max interior abs diff {worst:.2e} over {} tile configs", plans.len()),
    );
}

#[test]
fn criterion_10_pipeline_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.cfg"),
        "iterations = 5\nbatch_size = 2\ncrop = 16\nbase_channels = 2\ndepth = 1\ntile = 32\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        let out = dir.join(run);
        std::fs::create_dir(&out).unwrap();
        for args in [
            vec!["synth", "--kind", "woven", "--size", "64", "--lights", "4", "--out", "ds"],
            vec!["stereo", "--data", "ds"],
            vec![
                "train", "--config", "../run.cfg", "--data", "ds", "--attribute",
                "ds/normals.png", "--kind", "normals", "--out", "model.ckpt",
            ],
            vec![
                "infer", "--config", "../run.cfg", "--checkpoint", "model.ckpt",
                "--guidance", "ds/albedo_gt.png", "--out", "pred.png",
            ],
            vec![
                "eval", "--config", "../run.cfg", "--checkpoint", "model.ckpt",
                "--guidance", "ds/albedo_gt.png", "--study", "degrade", "--out", "report.csv",
            ],
        ] {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_pxfr"))
                .args(["--seed", "21", "--threads", "1"])
                .args(&args)
                .current_dir(&out)
                .status()
                .expect("spawn pxfr");
            assert!(status.success(), "pxfr {args:?} failed in run {run}");
        }
    }
    let mut pass = true;
    for file in ["model.ckpt", "model.loss.csv", "pred.png", "report.csv"] {
        let a = std::fs::read(dir.join("a").join(file)).unwrap();
        let b = std::fs::read(dir.join("b").join(file)).unwrap();
        pass &= a == b;
    }
    report(
        10,
        "pipeline determinism",
        pass,
        "checkpoint, loss curve, prediction and report byte-identical across two runs",
    );
}

#[test]
fn criterion_11_segmentation_path() {
    let start = Instant::now();
    let seed = derive_seed(11, "scene");
    let material =
        generate_procedural_material(MaterialKind::Stripes, 128, 128, seed).expect("material");
    let mask = generate_procedural_mask(MaterialKind::Stripes, 128, 128, seed).expect("mask");
    let rig = sample_light_rig(9, derive_seed(11, "rig"));
    let mut rng = seed_stream(11, "render");
    let stack = PhotometricStack::render(&material, &rig, 0.0, &mut rng);
    let attribute =
        AttributeMap::new(mask.detached(), AttributeKind::Segmentation).expect("attr");
    let config = small_config(
        AttributeKind::Segmentation,
        geometry_policy([-90.0, 90.0], [-45.0, 45.0], false),
        1,
    );
    let checkpoint = train(&stack, &attribute, &config).expect("train");
    let mut dummy = seed_stream(11, "guidance");
    let guidance = render_lambertian(&material, &held_out_light(&rig), 0.0, &mut dummy);
    let plan = TilePlan::for_model(&checkpoint.model);
    let pred = infer(&checkpoint, &guidance, &plan).expect("infer");
    let iou = metric_iou(&pred.map, &mask, None).expect("iou");
    report(
        11,
        "segmentation path",
        iou > 0.9,
        &format!(
            "held-out-light IoU {iou:.4} in {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}
