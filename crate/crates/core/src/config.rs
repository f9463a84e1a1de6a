//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. A single `seed` drives data generation, initialisation and
//! shuffling.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::losses::{LossArm, LossConfig, Neighborhood};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::polar::Interpolation;
use crate::smoothmax::SmoothMaxVariant;
use crate::synthdata::{ShapeFamily, SynthConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

/// Learning rate used for the synthetic runs. The default Adam step of
/// 1e-4 needs far more epochs at this data scale.
pub const SYNTH_LEARNING_RATE: f64 = 1e-3;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: SynthConfig::default(),
            model: ModelConfig::default(),
            adam: AdamConfig {
                learning_rate: SYNTH_LEARNING_RATE,
                ..Default::default()
            },
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "data.image_size",
    "data.n_train",
    "data.n_val",
    "data.shape",
    "data.contrast_min",
    "data.contrast_max",
    "data.noise",
    "data.margin",
    "model.base_channels",
    "model.depth",
    "adam.learning_rate",
    "adam.beta1",
    "adam.beta2",
    "adam.epsilon",
    "adam.batch_size",
    "loss.arm",
    "loss.variant",
    "loss.alpha",
    "loss.w_min",
    "loss.lambda",
    "loss.beta",
    "loss.gamma",
    "loss.neighborhood",
    "loss.dedup_pairwise",
    "polar.n_r",
    "polar.n_theta",
    "polar.radius",
    "polar.interpolation",
    "train.epochs",
    "train.augment_copies",
    "train.threads",
    "train.slices_per_volume",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

pub fn parse_arm(s: &str) -> std::result::Result<LossArm, String> {
    match s {
        "polar" => Ok(LossArm::Polar),
        "baseline-lg" => Ok(LossArm::BaselineLg),
        "combined" => Ok(LossArm::Combined),
        _ => Err(format!("unknown loss {s:?} (polar, baseline-lg, combined)")),
    }
}

pub fn arm_name(a: LossArm) -> &'static str {
    match a {
        LossArm::Polar => "polar",
        LossArm::BaselineLg => "baseline-lg",
        LossArm::Combined => "combined",
    }
}

pub fn parse_variant(s: &str) -> std::result::Result<SmoothMaxVariant, String> {
    match s {
        "weighted-softmax" => Ok(SmoothMaxVariant::WeightedSoftmax),
        "weighted-quasimax" => Ok(SmoothMaxVariant::WeightedQuasimax),
        "hard-max" => Ok(SmoothMaxVariant::HardMax),
        _ => Err(format!(
            "unknown variant {s:?} (weighted-softmax, weighted-quasimax, hard-max)"
        )),
    }
}

pub fn variant_name(v: SmoothMaxVariant) -> &'static str {
    match v {
        SmoothMaxVariant::WeightedSoftmax => "weighted-softmax",
        SmoothMaxVariant::WeightedQuasimax => "weighted-quasimax",
        SmoothMaxVariant::HardMax => "hard-max",
    }
}

impl RunConfig {
    /// Sets one key; the error is a human-readable reason.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => {
                let s = num(key, v)?;
                self.data.seed = s;
                self.model.seed = s;
                self.train.seed = s;
            }
            "data.image_size" => self.data.image_size = num(key, v)?,
            "data.n_train" => self.data.n_train = num(key, v)?,
            "data.n_val" => self.data.n_val = num(key, v)?,
            "data.shape" => {
                self.data.shape = match v {
                    "ellipse" => ShapeFamily::Ellipse,
                    "blob" => ShapeFamily::Blob,
                    _ => return Err(format!("{key}: expected ellipse or blob, got {v:?}")),
                }
            }
            "data.contrast_min" => self.data.contrast.0 = num(key, v)?,
            "data.contrast_max" => self.data.contrast.1 = num(key, v)?,
            "data.noise" => self.data.noise = num(key, v)?,
            "data.margin" => self.data.margin = num(key, v)?,
            "model.base_channels" => self.model.base_channels = num(key, v)?,
            "model.depth" => self.model.depth = num(key, v)?,
            "adam.learning_rate" => self.adam.learning_rate = num(key, v)?,
            "adam.beta1" => self.adam.beta1 = num(key, v)?,
            "adam.beta2" => self.adam.beta2 = num(key, v)?,
            "adam.epsilon" => self.adam.epsilon = num(key, v)?,
            "adam.batch_size" => self.adam.batch_size = num(key, v)?,
            "loss.arm" => self.loss.arm = parse_arm(v)?,
            "loss.variant" => self.loss.smoothmax.variant = parse_variant(v)?,
            "loss.alpha" => self.loss.smoothmax.alpha = num(key, v)?,
            "loss.w_min" => self.loss.smoothmax.w_min = num(key, v)?,
            "loss.lambda" => self.loss.lambda = num(key, v)?,
            "loss.beta" => self.loss.beta = num(key, v)?,
            "loss.gamma" => self.loss.gamma = num(key, v)?,
            "loss.neighborhood" => {
                self.loss.neighborhood = match v {
                    "4" => Neighborhood::Four,
                    "8" => Neighborhood::Eight,
                    _ => return Err(format!("{key}: expected 4 or 8, got {v:?}")),
                }
            }
            "loss.dedup_pairwise" => self.loss.dedup_pairwise = num(key, v)?,
            "polar.n_r" => {
                let n = num(key, v)?;
                self.loss.polar.n_r = n;
                self.loss.smoothmax.n_r = n;
            }
            "polar.n_theta" => self.loss.polar.n_theta = num(key, v)?,
            "polar.radius" => self.loss.polar.radius = num(key, v)?,
            "polar.interpolation" => {
                self.loss.polar.interpolation = match v {
                    "bilinear" => Interpolation::Bilinear,
                    "nearest" => Interpolation::Nearest,
                    _ => return Err(format!("{key}: expected bilinear or nearest, got {v:?}")),
                }
            }
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.augment_copies" => self.train.augment_copies = num(key, v)?,
            "train.threads" => self.train.threads = num(key, v)?,
            "train.slices_per_volume" => self.train.slices_per_volume = num(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.train.seed.to_string(),
            "data.image_size" => self.data.image_size.to_string(),
            "data.n_train" => self.data.n_train.to_string(),
            "data.n_val" => self.data.n_val.to_string(),
            "data.shape" => match self.data.shape {
                ShapeFamily::Ellipse => "ellipse".into(),
                ShapeFamily::Blob => "blob".into(),
            },
            "data.contrast_min" => self.data.contrast.0.to_string(),
            "data.contrast_max" => self.data.contrast.1.to_string(),
            "data.noise" => self.data.noise.to_string(),
            "data.margin" => self.data.margin.to_string(),
            "model.base_channels" => self.model.base_channels.to_string(),
            "model.depth" => self.model.depth.to_string(),
            "adam.learning_rate" => self.adam.learning_rate.to_string(),
            "adam.beta1" => self.adam.beta1.to_string(),
            "adam.beta2" => self.adam.beta2.to_string(),
            "adam.epsilon" => self.adam.epsilon.to_string(),
            "adam.batch_size" => self.adam.batch_size.to_string(),
            "loss.arm" => arm_name(self.loss.arm).into(),
            "loss.variant" => variant_name(self.loss.smoothmax.variant).into(),
            "loss.alpha" => self.loss.smoothmax.alpha.to_string(),
            "loss.w_min" => self.loss.smoothmax.w_min.to_string(),
            "loss.lambda" => self.loss.lambda.to_string(),
            "loss.beta" => self.loss.beta.to_string(),
            "loss.gamma" => self.loss.gamma.to_string(),
            "loss.neighborhood" => match self.loss.neighborhood {
                Neighborhood::Four => "4".into(),
                Neighborhood::Eight => "8".into(),
            },
            "loss.dedup_pairwise" => self.loss.dedup_pairwise.to_string(),
            "polar.n_r" => self.loss.polar.n_r.to_string(),
            "polar.n_theta" => self.loss.polar.n_theta.to_string(),
            "polar.radius" => self.loss.polar.radius.to_string(),
            "polar.interpolation" => match self.loss.polar.interpolation {
                Interpolation::Bilinear => "bilinear".into(),
                Interpolation::Nearest => "nearest".into(),
            },
            "train.epochs" => self.train.epochs.to_string(),
            "train.augment_copies" => self.train.augment_copies.to_string(),
            "train.threads" => self.train.threads.to_string(),
            "train.slices_per_volume" => self.train.slices_per_volume.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::ConfigParse {
                path: source.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text, path)
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v).map_err(Error::InvalidConfig)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.adam.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            writeln!(s, "{k} = {}", self.get(k).unwrap()).unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).io_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "seed=7".into(),
            "loss.alpha=2.5".into(),
            "loss.arm=baseline-lg".into(),
            "polar.n_r=12".into(),
            "adam.learning_rate=3e-4".into(),
            "data.shape=blob".into(),
        ])
        .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.loss.smoothmax.n_r, 12);
        assert_eq!(back.model.seed, 7);
    }

    #[test]
    fn every_key_is_gettable_and_settable() {
        let c = RunConfig::default();
        for k in KEYS {
            let v = c.get(k).unwrap();
            let mut d = RunConfig::default();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = RunConfig::default();
        let e = c
            .apply_text("# note\nloss.alpha = 2\nbogus = 1\n", Path::new("run.cfg"))
            .unwrap_err();
        match e {
            Error::ConfigParse { line, reason, .. } => {
                assert_eq!(line, 3);
                assert!(reason.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert!(c.apply_text("loss.alpha\n", Path::new("a")).is_err());
        assert!(c.apply_text("loss.alpha = fast\n", Path::new("a")).is_err());
        assert!(c.apply_overrides(&["nokey".into()]).is_err());
    }
}
