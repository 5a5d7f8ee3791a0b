//! Plain-text `key = value` run configuration.
//!
//! One assignment per line, `#` comments, unknown and duplicate keys are
//! rejected. The fully defaulted config reproduces the training constants:
//! 1000 iterations, batch 16, learning rate 0.002, crop 128, rotation
//! [-90, 90], shear [-45, 45], scale [0.5, 2].

use crate::augment::{AttributeKind, AugmentPolicy};
use crate::eval::TilePlan;
use crate::trainer::TrainConfig;
use crate::unet::{Head, UNetConfig};
use crate::{PxfrError, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub crop: usize,
    pub color_permute: bool,
    pub rotation_min: f32,
    pub rotation_max: f32,
    pub shear_min: f32,
    pub shear_max: f32,
    pub scale_min: f32,
    pub scale_max: f32,
    pub base_channels: usize,
    pub depth: usize,
    pub leaky_slope: f32,
    pub tile: usize,
    /// 0 selects the smallest safe overlap for the model.
    pub overlap: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let policy = AugmentPolicy::default();
        let unet = UNetConfig::new(3, Head::Linear);
        RunConfig {
            iterations: 1000,
            batch_size: 16,
            lr: 0.002,
            crop: policy.crop,
            color_permute: policy.color_permute,
            rotation_min: policy.rotation_deg[0],
            rotation_max: policy.rotation_deg[1],
            shear_min: policy.shear_deg[0],
            shear_max: policy.shear_deg[1],
            scale_min: policy.scale[0],
            scale_max: policy.scale[1],
            base_channels: unet.base_channels,
            depth: unet.depth,
            leaky_slope: unet.leaky_slope,
            tile: 128,
            overlap: 0,
            seed: 0,
            threads: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        PxfrError::Format(format!("config key '{key}': cannot parse value '{value}'"))
    })
}

impl RunConfig {
    /// Applies one `key = value` assignment; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "crop" => self.crop = parse_value(key, value)?,
            "color_permute" => self.color_permute = parse_value(key, value)?,
            "rotation_min" => self.rotation_min = parse_value(key, value)?,
            "rotation_max" => self.rotation_max = parse_value(key, value)?,
            "shear_min" => self.shear_min = parse_value(key, value)?,
            "shear_max" => self.shear_max = parse_value(key, value)?,
            "scale_min" => self.scale_min = parse_value(key, value)?,
            "scale_max" => self.scale_max = parse_value(key, value)?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "depth" => self.depth = parse_value(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            "tile" => self.tile = parse_value(key, value)?,
            "overlap" => self.overlap = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            other => {
                return Err(PxfrError::Format(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parses a config text on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (number, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PxfrError::Format(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    number + 1
                )));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(PxfrError::Format(format!(
                    "config line {}: duplicate key '{key}'",
                    number + 1
                )));
            }
            config.set(key, value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PxfrError::io(path.display().to_string(), e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            PxfrError::Format(msg) => PxfrError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The config as parseable text listing every key.
    pub fn to_text(&self) -> String {
        format!(
            "iterations = {}\nbatch_size = {}\nlr = {}\ncrop = {}\ncolor_permute = {}\n\
             rotation_min = {}\nrotation_max = {}\nshear_min = {}\nshear_max = {}\n\
             scale_min = {}\nscale_max = {}\nbase_channels = {}\ndepth = {}\n\
             leaky_slope = {}\ntile = {}\noverlap = {}\nseed = {}\nthreads = {}\n",
            self.iterations,
            self.batch_size,
            self.lr,
            self.crop,
            self.color_permute,
            self.rotation_min,
            self.rotation_max,
            self.shear_min,
            self.shear_max,
            self.scale_min,
            self.scale_max,
            self.base_channels,
            self.depth,
            self.leaky_slope,
            self.tile,
            self.overlap,
            self.seed,
            self.threads
        )
    }

    pub fn policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            color_permute: self.color_permute,
            rotation_deg: [self.rotation_min, self.rotation_max],
            shear_deg: [self.shear_min, self.shear_max],
            scale: [self.scale_min, self.scale_max],
            crop: self.crop,
        }
    }

    pub fn unet_config(&self, kind: AttributeKind) -> UNetConfig {
        let head = match kind {
            AttributeKind::Segmentation => Head::Logits,
            _ => Head::Linear,
        };
        UNetConfig {
            in_channels: 3,
            out_channels: kind.dims(),
            base_channels: self.base_channels,
            depth: self.depth,
            head,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn train_config(&self, kind: AttributeKind) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            lr: self.lr,
            policy: self.policy(),
            unet: self.unet_config(kind),
            seed: self.seed,
        }
    }

    /// Tile plan for the model; overlap 0 picks the smallest safe value.
    pub fn tile_plan(&self, model: &crate::unet::UNetModel) -> Result<TilePlan> {
        let auto = TilePlan::for_model(model);
        let plan = TilePlan {
            tile: self.tile,
            overlap: if self.overlap == 0 {
                auto.overlap
            } else {
                self.overlap
            },
        };
        plan.validate(model)?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_constants() {
        let c = RunConfig::default();
        assert_eq!(c.iterations, 1000);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.lr, 0.002);
        assert_eq!(c.crop, 128);
        assert_eq!([c.rotation_min, c.rotation_max], [-90.0, 90.0]);
        assert_eq!([c.shear_min, c.shear_max], [-45.0, 45.0]);
        assert_eq!([c.scale_min, c.scale_max], [0.5, 2.0]);
        assert!(c.color_permute);
        let t = c.train_config(AttributeKind::Normals);
        assert!(t.validate(AttributeKind::Normals).is_ok());
    }

    #[test]
    fn parses_comments_whitespace_and_overrides() {
        let c = RunConfig::parse(
            "# training\n iterations = 50 \n\nlr=0.01 # fast\ncrop = 64\ncolor_permute = false\n",
        )
        .unwrap();
        assert_eq!(c.iterations, 50);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.crop, 64);
        assert!(!c.color_permute);
        assert_eq!(c.batch_size, 16);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let err = RunConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
        let err = RunConfig::parse("iterations = soon\n").unwrap_err();
        assert!(err.to_string().contains("cannot parse"), "{err}");
        let err = RunConfig::parse("iterations 50\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = RunConfig::parse("crop = 64\ncrop = 128\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.set("iterations", "12").unwrap();
        c.set("scale_max", "1.5").unwrap();
        c.set("seed", "99").unwrap();
        let parsed = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(parsed, c);
    }
}
