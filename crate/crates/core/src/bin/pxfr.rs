//! Command-line surface: dataset synthesis, photometric stereo, training,
//! tiled inference and the evaluation studies.
//!
//! Exit codes: 0 success, 2 usage or precondition failure, 1 internal
//! error. Summaries go to stdout, diagnostics to stderr. All randomness
//! derives from `--seed` through named substreams, so every command is
//! reproducible bit for bit.

use clap::{Parser, Subcommand};
use pxfr_core::augment::{Affine2D, AttributeKind, AttributeMap};
use pxfr_core::config::RunConfig;
use pxfr_core::eval::{
    degrade, equivariance_error, infer, metric_cosine, metric_image, metric_iou, DegradeOp,
    EvalReport,
};
use pxfr_core::photometry::{
    generate_procedural_mask, generate_procedural_material, load_dataset, load_mask,
    load_normal_map, load_rgb, mean_angular_error_deg, photometric_stereo, sample_light_rig,
    save_dataset, save_mask, save_normal_map, save_rgb16, Light, MaterialKind, PhotometricStack,
};
use pxfr_core::tensor::Tensor;
use pxfr_core::trainer::{make_variant, train, Checkpoint, Variant};
use pxfr_core::{derive_seed, seed_stream, PxfrError, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pxfr",
    about = "Per-material visual attribute transfer: synthesize, train, infer, evaluate"
)]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count; 1 guarantees bit-reproducibility (and is also the
    /// only level of parallelism this build uses).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural material into a photometric dataset.
    Synth {
        /// Material kind: woven, bumps or stripes.
        #[arg(long, default_value = "woven")]
        kind: String,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Number of directional lights (a diffuse render is always added).
        #[arg(long, default_value_t = 27)]
        lights: usize,
        /// Gaussian noise standard deviation on the [0,1] scale.
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover normals, albedo and validity from a dataset.
    Stereo {
        /// Dataset directory with manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Output directory; defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network on a dataset plus an aligned attribute map.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Attribute map PNG (encoding depends on --kind).
        #[arg(long)]
        attribute: PathBuf,
        /// Attribute kind: normals, segmentation or color.
        #[arg(long, default_value = "normals")]
        kind: String,
        /// Stack variant: diffuseNet, photometricNet, diphotoNet or reducedK.
        #[arg(long, default_value = "photometricNet")]
        variant: String,
        /// Checkpoint output path; the loss curve lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the attribute map for a guidance image of any size.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        guidance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation study and write a CSV report.
    Eval {
        /// Checkpoint file; repeat the flag for the lights study.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        guidance: PathBuf,
        /// Ground-truth attribute PNG (required by metrics and lights).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Study: metrics, equivariance, lights or degrade.
        #[arg(long)]
        study: String,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            PxfrError::NonFinite(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(PxfrError::InvalidInput("--threads must be >= 1".into()));
        }
        config.threads = threads;
    }
    match cli.command {
        Command::Synth {
            kind,
            size,
            lights,
            noise,
            out,
        } => cmd_synth(&config, &kind, size, lights, noise, &out),
        Command::Stereo { data, out } => cmd_stereo(&data, out.as_deref().unwrap_or(&data)),
        Command::Train {
            data,
            attribute,
            kind,
            variant,
            out,
        } => cmd_train(&config, &data, &attribute, &kind, &variant, &out),
        Command::Infer {
            checkpoint,
            guidance,
            out,
        } => cmd_infer(&config, &checkpoint, &guidance, &out),
        Command::Eval {
            checkpoint,
            guidance,
            gt,
            study,
            out,
        } => cmd_eval(&config, &checkpoint, &guidance, gt.as_deref(), &study, &out),
    }
}

fn cmd_synth(
    config: &RunConfig,
    kind: &str,
    size: usize,
    lights: usize,
    noise: f32,
    out: &Path,
) -> Result<()> {
    let kind: MaterialKind = kind.parse()?;
    if lights < 1 {
        return Err(PxfrError::InvalidInput("--lights must be >= 1".into()));
    }
    let seed = config.seed;
    let material =
        generate_procedural_material(kind, size, size, derive_seed(seed, "material"))?;
    let mask = generate_procedural_mask(kind, size, size, derive_seed(seed, "material"))?;
    let mut rig = sample_light_rig(lights, derive_seed(seed, "rig"));
    rig.lights.push(Light::diffuse(1.0));
    let mut render_rng = seed_stream(seed, "render");
    let stack = PhotometricStack::render(&material, &rig, noise, &mut render_rng);
    save_dataset(out, &stack)?;
    save_normal_map(&out.join("normals_gt.png"), &material.normals)?;
    save_rgb16(&out.join("albedo_gt.png"), &material.albedo)?;
    save_mask(&out.join("mask_gt.png"), &mask)?;
    println!(
        "wrote {} images ({} directional + 1 diffuse) and ground truth to {}",
        stack.images.len(),
        lights,
        out.display()
    );
    Ok(())
}

fn cmd_stereo(data: &Path, out: &Path) -> Result<()> {
    let stack = load_dataset(data)?;
    let result = photometric_stereo(&stack)?;
    std::fs::create_dir_all(out).map_err(|e| PxfrError::io(out.display().to_string(), e))?;
    save_normal_map(&out.join("normals.png"), &result.material.normals)?;
    save_rgb16(&out.join("albedo.png"), &result.material.albedo)?;
    save_mask(&out.join("validity.png"), &result.validity)?;
    println!(
        "stereo over {} lights: {:.1}% of pixels valid",
        stack.images.len(),
        100.0 * result.valid_fraction()
    );
    let gt_path = data.join("normals_gt.png");
    if gt_path.exists() {
        let gt = load_normal_map(&gt_path)?;
        let err = mean_angular_error_deg(&result.material.normals, &gt, Some(&result.validity));
        println!("mean angular error vs ground truth: {err:.3} deg");
    }
    Ok(())
}

fn load_attribute(path: &Path, kind: AttributeKind) -> Result<AttributeMap> {
    let map = match kind {
        AttributeKind::Normals => load_normal_map(path)?,
        AttributeKind::Segmentation => load_mask(path)?,
        AttributeKind::Color => load_rgb(path)?,
        AttributeKind::Scalar => {
            return Err(PxfrError::InvalidInput(
                "scalar attributes are not supported on the command line".into(),
            ));
        }
    };
    AttributeMap::new(map, kind)
}

fn cmd_train(
    config: &RunConfig,
    data: &Path,
    attribute: &Path,
    kind: &str,
    variant: &str,
    out: &Path,
) -> Result<()> {
    let kind: AttributeKind = kind.parse()?;
    let variant: Variant = variant.parse()?;
    let stack = load_dataset(data)?;
    let stack = make_variant(&stack, variant)?;
    let attribute = load_attribute(attribute, kind)?;
    let train_config = config.train_config(kind);
    println!(
        "config: iterations={} batch={} lr={} crop={} seed={} variant={variant}",
        train_config.iterations,
        train_config.batch_size,
        train_config.lr,
        train_config.policy.crop,
        train_config.seed
    );
    let checkpoint = train(&stack, &attribute, &train_config)?;
    checkpoint.save(out)?;
    checkpoint.save_loss_csv(&out.with_extension("loss.csv"))?;
    println!(
        "trained in {:.1}s, final loss {:.5}; checkpoint at {}",
        checkpoint.train_seconds,
        checkpoint.loss_curve.last().copied().unwrap_or(f32::NAN),
        out.display()
    );
    Ok(())
}

/// Loads a guidance image, rejecting inputs that are not 3-channel color.
fn load_guidance(path: &Path) -> Result<Tensor> {
    let probe = image::open(path).map_err(|e| PxfrError::Format(format!("{}: {e}", path.display())))?;
    use image::ColorType::*;
    match probe.color() {
        L8 | L16 | La8 | La16 => Err(PxfrError::InvalidInput(format!(
            "{}: guidance must be a 3-channel color image, got grayscale",
            path.display()
        ))),
        _ => load_rgb(path),
    }
}

fn save_prediction(path: &Path, prediction: &AttributeMap) -> Result<()> {
    match prediction.kind {
        AttributeKind::Normals => save_normal_map(path, &prediction.map),
        AttributeKind::Segmentation => save_mask(path, &prediction.map),
        _ => save_rgb16(path, &prediction.map),
    }
}

fn cmd_infer(config: &RunConfig, checkpoint: &Path, guidance: &Path, out: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    let guidance = load_guidance(guidance)?;
    let plan = config.tile_plan(&checkpoint.model)?;
    let prediction = infer(&checkpoint, &guidance, &plan)?;
    save_prediction(out, &prediction)?;
    let sh = prediction.map.shape();
    println!(
        "wrote {:?} prediction ({}x{}) to {}",
        checkpoint.kind,
        sh.w,
        sh.h,
        out.display()
    );
    Ok(())
}

fn kind_metric(kind: AttributeKind) -> &'static str {
    match kind {
        AttributeKind::Normals => "cosine",
        AttributeKind::Segmentation => "iou",
        _ => "l1",
    }
}

/// Kind-specific distance between two decoded attribute maps: cosine
/// distance, one minus IoU, or mean absolute error.
fn map_distance(kind: AttributeKind, a: &Tensor, b: &Tensor) -> Result<f32> {
    match kind {
        AttributeKind::Normals => metric_cosine(a, b, None),
        AttributeKind::Segmentation => Ok(1.0 - metric_iou(a, b, None)?),
        _ => {
            let m = metric_image(a, b)?;
            Ok(m.l1)
        }
    }
}

/// Normals encoded to [0,1] so the image metrics apply; other kinds pass
/// through.
fn unit_encoded(kind: AttributeKind, map: &Tensor) -> Tensor {
    match kind {
        AttributeKind::Normals => {
            let data = map.data().iter().map(|&v| v * 0.5 + 0.5).collect();
            Tensor::from_vec(map.shape(), data).expect("same shape")
        }
        _ => map.detached(),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_eval(
    config: &RunConfig,
    checkpoints: &[PathBuf],
    guidance_path: &Path,
    gt: Option<&Path>,
    study: &str,
    out: &Path,
) -> Result<()> {
    let first = Checkpoint::load(&checkpoints[0])?;
    let guidance = load_guidance(guidance_path)?;
    let plan = config.tile_plan(&first.model)?;
    let guidance_id = file_stem(guidance_path);
    let mut report = EvalReport::default();
    match study {
        "metrics" => {
            let gt = gt.ok_or_else(|| {
                PxfrError::InvalidInput("the metrics study requires --gt".into())
            })?;
            let gt = load_attribute(gt, first.kind)?;
            let pred = infer(&first, &guidance, &plan)?;
            match first.kind {
                AttributeKind::Normals => {
                    let cosine = metric_cosine(&pred.map, &gt.map, None)?;
                    report.push(&guidance_id, "clean", "cosine", cosine)?;
                }
                AttributeKind::Segmentation => {
                    let iou = metric_iou(&pred.map, &gt.map, None)?;
                    report.push(&guidance_id, "clean", "iou", iou)?;
                }
                _ => {}
            }
            let m = metric_image(
                &unit_encoded(first.kind, &pred.map),
                &unit_encoded(first.kind, &gt.map),
            )?;
            for (name, value) in [("mse", m.mse), ("psnr", m.psnr), ("ssim", m.ssim), ("l1", m.l1)]
            {
                report.push(&guidance_id, "clean", name, value)?;
            }
        }
        "equivariance" => {
            let metric = kind_metric(first.kind);
            report.push(&guidance_id, "identity", metric, {
                let e = equivariance_error(&first, &guidance, &Affine2D::identity(), &plan)?;
                debug_assert_eq!(e, 0.0);
                e
            })?;
            let mut sweep: Vec<(String, Affine2D)> = Vec::new();
            for r in [-90.0f32, -45.0, -15.0, 15.0, 45.0, 90.0] {
                sweep.push((format!("rotation_{r}"), Affine2D::from_params(r, 0.0, 1.0)));
            }
            for s in [-45.0f32, -15.0, 15.0, 45.0] {
                sweep.push((format!("shear_{s}"), Affine2D::from_params(0.0, s, 1.0)));
            }
            for s in [0.5f32, 0.75, 1.5, 2.0] {
                sweep.push((format!("scale_{s}"), Affine2D::from_params(0.0, 0.0, s)));
            }
            for (descriptor, transform) in sweep {
                let e = equivariance_error(&first, &guidance, &transform, &plan)?;
                report.push(&guidance_id, descriptor, metric, e)?;
            }
        }
        "lights" => {
            let gt = gt.ok_or_else(|| {
                PxfrError::InvalidInput("the lights study requires --gt".into())
            })?;
            let gt = load_attribute(gt, first.kind)?;
            for path in checkpoints {
                let checkpoint = Checkpoint::load(path)?;
                if checkpoint.kind != first.kind {
                    return Err(PxfrError::InvalidInput(format!(
                        "{}: attribute kind differs from the first checkpoint",
                        path.display()
                    )));
                }
                let pred = infer(&checkpoint, &guidance, &plan)?;
                let value = map_distance(first.kind, &pred.map, &gt.map)?;
                report.push(&guidance_id, file_stem(path), kind_metric(first.kind), value)?;
            }
        }
        "degrade" => {
            let metric = kind_metric(first.kind);
            let clean = infer(&first, &guidance, &plan)?;
            let mut ops = Vec::new();
            for f in [0.0f32, 0.5, 1.5, 2.0] {
                ops.push(DegradeOp::Saturation(f));
                ops.push(DegradeOp::Contrast(f));
            }
            ops.push(DegradeOp::GaussianNoise { variance_255: 255.0 });
            let mut rng = seed_stream(config.seed, "degrade");
            for op in ops {
                let degraded = degrade(&guidance, op, &mut rng)?;
                let pred = infer(&first, &degraded, &plan)?;
                let drift = map_distance(first.kind, &pred.map, &clean.map)?;
                report.push(&guidance_id, op.descriptor(), metric, drift)?;
            }
        }
        other => {
            return Err(PxfrError::InvalidInput(format!(
                "unknown study '{other}' (expected metrics, equivariance, lights or degrade)"
            )));
        }
    }
    report.save_csv(out)?;
    println!("wrote {} rows to {}", report.rows.len(), out.display());
    Ok(())
}
