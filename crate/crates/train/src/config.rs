//! Training configuration and its flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pgden_core::cramer::Grain;
use pgden_core::masking::MaskFill;
use pgden_core::revisible::{NoiseModelVariant, ReVisibleConfig};
use pgden_core::NoiseParams;

use crate::error::{TrainError, TrainResult};

/// Where `(α, σ1, σ2)` come from during denoiser training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Pre-trained estimator, frozen.
    Pretrained,
    /// The true synthesis parameters.
    Fixed,
    /// Estimator trained jointly with the denoiser.
    #[default]
    Joint,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Pretrained => "T+P",
            Scheme::Fixed => "T+F",
            Scheme::Joint => "T+J",
        })
    }
}

impl FromStr for Scheme {
    type Err = TrainError;

    fn from_str(s: &str) -> TrainResult<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "+").as_str() {
            "T+P" | "TP" | "PRETRAINED" => Ok(Scheme::Pretrained),
            "T+F" | "TF" | "FIXED" => Ok(Scheme::Fixed),
            "T+J" | "TJ" | "JOINT" => Ok(Scheme::Joint),
            other => Err(TrainError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    /// Two-branch likelihood with learned variances.
    #[default]
    AdaptiveReVisible,
    /// Squared re-visible loss on the mean heads only.
    ReVisibleSquared,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::AdaptiveReVisible => "arv",
            Objective::ReVisibleSquared => "b2u",
        })
    }
}

impl FromStr for Objective {
    type Err = TrainError;

    fn from_str(s: &str) -> TrainResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arv" => Ok(Objective::AdaptiveReVisible),
            "b2u" => Ok(Objective::ReVisibleSquared),
            other => Err(TrainError::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Random crops drawn from each training image per epoch.
    pub patches_per_image: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub estimator_lr: f64,
    pub estimator_lr_halve_every: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Synthesis noise; also the parameters used by the fixed scheme.
    pub noise: NoiseParams,
    /// Starting point of the estimator output.
    pub estimator_init: NoiseParams,
    pub scheme: Scheme,
    pub objective: Objective,
    pub revisible: ReVisibleConfig,
    pub grain: Grain,
    pub cell_size: usize,
    pub mask_fill: MaskFill,
    /// Estimator-only epochs run before training under the pre-trained scheme.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            patch_size: 64,
            patches_per_image: 1,
            lr: 1e-3,
            lr_halve_every: 20,
            estimator_lr: 1e-4,
            estimator_lr_halve_every: 10,
            weight_decay: 1e-8,
            seed: 0,
            noise: NoiseParams::new(0.01, 0.02),
            estimator_init: NoiseParams::new(0.05, 0.02),
            scheme: Scheme::Joint,
            objective: Objective::AdaptiveReVisible,
            revisible: ReVisibleConfig::default(),
            grain: Grain::CG_FG1,
            cell_size: 4,
            mask_fill: MaskFill::NeighborMean,
            pretrain_epochs: 10,
            pretrain_lr: 1e-3,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "patch_size",
    "patches_per_image",
    "lr",
    "lr_halve_every",
    "estimator_lr",
    "estimator_lr_halve_every",
    "weight_decay",
    "seed",
    "alpha",
    "sigma",
    "init_alpha",
    "init_sigma",
    "scheme",
    "objective",
    "lambda_start",
    "lambda_final",
    "noise_model",
    "iid",
    "stop_grad_noise_term",
    "noise_grad_from_nll",
    "estimator_loss_weight",
    "grain",
    "cell_size",
    "mask_fill",
    "pretrain_epochs",
    "pretrain_lr",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> TrainResult<T> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> TrainResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(TrainError::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> TrainResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(TrainError::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(TrainError::Config(format!("line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_image == 0 {
            return bad("epochs, batch_size and patches_per_image must be positive".into());
        }
        if self.patch_size < 32 || !self.patch_size.is_multiple_of(self.cell_size.max(1)) || !self.patch_size.is_multiple_of(4) {
            return bad(format!(
                "patch_size must be at least 32 and a multiple of 4 and of cell_size, got {}",
                self.patch_size
            ));
        }
        if self.cell_size < 2 {
            return bad("cell_size must be at least 2".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("estimator_lr", self.estimator_lr),
            ("pretrain_lr", self.pretrain_lr),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if self.lr_halve_every == 0 || self.estimator_lr_halve_every == 0 {
            return bad("halving intervals must be positive".into());
        }
        self.noise.validate()?;
        if !(self.estimator_init.alpha > 0.0 && self.estimator_init.sigma1 > 0.0 && self.estimator_init.sigma2 > 0.0) {
            return bad("estimator init parameters must be positive".into());
        }
        self.revisible.validate()?;
        Ok(())
    }

    /// Learning rate after halving every `every` epochs.
    pub fn scheduled(base: f64, every: usize, epoch: usize) -> f64 {
        base * 0.5f64.powi((epoch / every) as i32)
    }

    pub fn set(&mut self, key: &str, value: &str) -> TrainResult<()> {
        let rv = &mut self.revisible;
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "patches_per_image" => self.patches_per_image = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "lr_halve_every" => self.lr_halve_every = parse_value(key, value)?,
            "estimator_lr" => self.estimator_lr = parse_value(key, value)?,
            "estimator_lr_halve_every" => self.estimator_lr_halve_every = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "alpha" => self.noise.alpha = parse_value(key, value)?,
            "sigma" => {
                let s = parse_value(key, value)?;
                self.noise.sigma1 = s;
                self.noise.sigma2 = s;
            }
            "init_alpha" => self.estimator_init.alpha = parse_value(key, value)?,
            "init_sigma" => {
                let s = parse_value(key, value)?;
                self.estimator_init.sigma1 = s;
                self.estimator_init.sigma2 = s;
            }
            "scheme" => self.scheme = value.parse()?,
            "objective" => self.objective = value.parse()?,
            "lambda_start" => rv.lambda_start = parse_value(key, value)?,
            "lambda_final" => rv.lambda_final = parse_value(key, value)?,
            "noise_model" => rv.variant = value.parse::<NoiseModelVariant>()?,
            "iid" => rv.iid = parse_bool(key, value)?,
            "stop_grad_noise_term" => rv.stop_grad_noise_term = parse_bool(key, value)?,
            "noise_grad_from_nll" => rv.noise_grad_from_nll = parse_bool(key, value)?,
            "estimator_loss_weight" => rv.estimator_loss_weight = parse_value(key, value)?,
            "grain" => self.grain = Grain::parse(value)?,
            "cell_size" => self.cell_size = parse_value(key, value)?,
            "mask_fill" => self.mask_fill = MaskFill::parse(value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_value(key, value)?,
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by `text`; unknown keys are errors.
    pub fn from_text(text: &str) -> TrainResult<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> TrainResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let rv = &self.revisible;
        Some(match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "patches_per_image" => self.patches_per_image.to_string(),
            "lr" => self.lr.to_string(),
            "lr_halve_every" => self.lr_halve_every.to_string(),
            "estimator_lr" => self.estimator_lr.to_string(),
            "estimator_lr_halve_every" => self.estimator_lr_halve_every.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "seed" => self.seed.to_string(),
            "alpha" => self.noise.alpha.to_string(),
            "sigma" => self.noise.sigma1.to_string(),
            "init_alpha" => self.estimator_init.alpha.to_string(),
            "init_sigma" => self.estimator_init.sigma1.to_string(),
            "scheme" => self.scheme.to_string(),
            "objective" => self.objective.to_string(),
            "lambda_start" => rv.lambda_start.to_string(),
            "lambda_final" => rv.lambda_final.to_string(),
            "noise_model" => rv.variant.to_string(),
            "iid" => rv.iid.to_string(),
            "stop_grad_noise_term" => rv.stop_grad_noise_term.to_string(),
            "noise_grad_from_nll" => rv.noise_grad_from_nll.to_string(),
            "estimator_loss_weight" => rv.estimator_loss_weight.to_string(),
            "grain" => self.grain.label(),
            "cell_size" => self.cell_size.to_string(),
            "mask_fill" => self.mask_fill.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "pretrain_lr" => self.pretrain_lr.to_string(),
            _ => return None,
        })
    }

    /// Every key in a stable order, as accepted by [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}
