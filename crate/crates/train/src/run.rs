//! Epoch loop: on-the-fly corruption of random crops, λ and learning-rate
//! schedules, validation and logging.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pgden_core::io::load_image;
use pgden_core::metrics::psnr;
use pgden_core::noise::corrupt_exact;
use pgden_core::{ImageTensor, NoiseParams, SeededRng};

use crate::adam::Adam;
use crate::checkpoint::save_checkpoint;
use crate::config::{Scheme, TrainConfig};
use crate::denoiser::infer;
use crate::error::{TrainError, TrainResult};
use crate::step::{estimator_loss, train_step, Nets};

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP: f64 = 100.0;

const DENOISER_STREAM: u64 = 0;
const PRETRAIN_STREAM: u64 = 1 << 20;
const EPOCH_STREAM: u64 = 1 << 21;
const VALIDATION_STREAM: u64 = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lambda: f64,
    pub nll: f64,
    pub est_loss: f64,
    pub psnr_val: f64,
    pub alpha_hat: f64,
    pub sigma1_hat: f64,
    pub sigma2_hat: f64,
}

impl EpochMetrics {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6e}\t{:.4}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            self.lambda,
            self.nll,
            self.est_loss,
            self.psnr_val,
            self.alpha_hat,
            self.sigma1_hat,
            self.sigma2_hat
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.lambda,
            self.nll,
            self.est_loss,
            self.psnr_val,
            self.alpha_hat,
            self.sigma1_hat,
            self.sigma2_hat,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub nets: Nets,
    pub metrics: Vec<EpochMetrics>,
    /// Mean PSNR of the noisy validation inputs against their clean images.
    pub noisy_psnr_val: f64,
    /// Per-step total loss, in order.
    pub step_losses: Vec<f64>,
}

impl TrainingOutcome {
    pub fn final_psnr_val(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.psnr_val)
    }
}

/// A random `size × size` crop under a random element of the dihedral group.
pub fn random_patch(img: &ImageTensor, size: usize, rng: &mut SeededRng) -> TrainResult<ImageTensor> {
    let (h, w, c) = img.shape();
    let r0 = rng.below(h - size + 1);
    let c0 = rng.below(w - size + 1);
    let crop = img.crop(r0, c0, size, size)?;
    let t = rng.below(8);
    Ok(ImageTensor::from_fn(size, size, c, |r, col, ch| {
        let (mut a, mut b) = if t & 1 == 1 { (col, r) } else { (r, col) };
        if t & 2 == 2 {
            a = size - 1 - a;
        }
        if t & 4 == 4 {
            b = size - 1 - b;
        }
        crop.get(a, b, ch)
    }))
}

fn check_dataset(images: &[ImageTensor], patch: usize) -> TrainResult<usize> {
    let c = images[0].channels();
    for (i, img) in images.iter().enumerate() {
        if img.channels() != c {
            return Err(TrainError::MixedChannels(c, img.channels()));
        }
        if img.height() < patch || img.width() < patch {
            return Err(TrainError::ImageTooSmall {
                index: i,
                height: img.height(),
                width: img.width(),
                patch,
            });
        }
    }
    Ok(c)
}

/// Noisy crops for one epoch, shuffled, with corruption drawn from a stream
/// derived from the epoch index.
fn epoch_samples(images: &[ImageTensor], cfg: &TrainConfig, stream: &SeededRng) -> TrainResult<Vec<ImageTensor>> {
    let mut order: Vec<usize> = (0..images.len())
        .flat_map(|i| std::iter::repeat_n(i, cfg.patches_per_image))
        .collect();
    let mut rng = stream.fork(0);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut sample_rng = stream.fork(k as u64 + 1);
            let clean = random_patch(&images[i], cfg.patch_size, &mut sample_rng)?;
            Ok(corrupt_exact(&clean, &cfg.noise, &mut sample_rng)?)
        })
        .collect()
}

/// Trains the estimator alone on the estimator loss.
pub fn pretrain_estimator(images: &[ImageTensor], nets: &mut Nets, cfg: &TrainConfig) -> TrainResult<Vec<f64>> {
    if images.is_empty() {
        return Err(TrainError::EmptyDataset(PathBuf::new()));
    }
    check_dataset(images, cfg.patch_size)?;
    let root = SeededRng::new(cfg.seed);
    let mut opt = Adam::new(cfg.pretrain_lr, cfg.weight_decay);
    let mut losses = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let samples = epoch_samples(images, cfg, &root.fork(PRETRAIN_STREAM + epoch as u64))?;
        for batch in samples.chunks(cfg.batch_size) {
            nets.estimator.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            for y in batch {
                let (p, cache) = nets.estimator.forward_cached(y);
                let (l, g) = estimator_loss(y, &p, cfg, true)?;
                if !l.is_finite() {
                    return Err(TrainError::NonFinite {
                        term: "est_loss",
                        step: opt.steps(),
                    });
                }
                total += scale * l;
                nets.estimator.backward(&cache, g.map(|v| v * scale));
            }
            opt.update(nets.estimator.params_mut());
            losses.push(total);
        }
    }
    Ok(losses)
}

struct Validation {
    clean: Vec<ImageTensor>,
    noisy: Vec<ImageTensor>,
}

impl Validation {
    fn new(images: &[ImageTensor], cfg: &TrainConfig) -> TrainResult<Self> {
        let root = SeededRng::new(cfg.seed).fork(VALIDATION_STREAM);
        let noisy = images
            .iter()
            .enumerate()
            .map(|(i, x)| corrupt_exact(x, &cfg.noise, &mut root.fork(i as u64)))
            .collect::<pgden_core::Result<Vec<_>>>()?;
        Ok(Self {
            clean: images.to_vec(),
            noisy,
        })
    }

    fn mean_psnr(&self, preds: &[ImageTensor]) -> TrainResult<f64> {
        if preds.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for (p, x) in preds.iter().zip(&self.clean) {
            total += psnr(p, x, 1.0)?.db_or(PSNR_CAP);
        }
        Ok(total / preds.len() as f64)
    }

    fn noisy_psnr(&self) -> TrainResult<f64> {
        self.mean_psnr(&self.noisy)
    }

    fn evaluate(&self, nets: &Nets, cfg: &TrainConfig) -> TrainResult<(f64, NoiseParams)> {
        let preds = self
            .noisy
            .iter()
            .map(|y| infer(&nets.denoiser, y))
            .collect::<pgden_core::Result<Vec<_>>>()?;
        let psnr = self.mean_psnr(&preds)?;
        let n = self.noisy.len().max(1) as f64;
        let (mut a, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for y in &self.noisy {
            let p = nets.noise_params(y, cfg);
            a += p.alpha / n;
            s1 += p.sigma1 / n;
            s2 += p.sigma2 / n;
        }
        Ok((psnr, NoiseParams::two_branch(a, s1, s2)))
    }
}

/// Full training run on in-memory clean images. `val` may be empty, in which
/// case PSNR columns are NaN.
pub fn train_on_images(train: &[ImageTensor], val: &[ImageTensor], cfg: &TrainConfig) -> TrainResult<TrainingOutcome> {
    train_with_observer(train, val, cfg, |_| {})
}

/// As [`train_on_images`], calling `observe` after every epoch.
pub fn train_with_observer(
    train: &[ImageTensor],
    val: &[ImageTensor],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochMetrics),
) -> TrainResult<TrainingOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset(PathBuf::new()));
    }
    let channels = check_dataset(train, cfg.patch_size)?;
    let root = SeededRng::new(cfg.seed);
    let mut nets = Nets::new(channels, cfg, &root.fork(DENOISER_STREAM));
    if cfg.scheme == Scheme::Pretrained && cfg.pretrain_epochs > 0 {
        pretrain_estimator(train, &mut nets, cfg)?;
    }
    let validation = Validation::new(val, cfg)?;
    let noisy_psnr_val = validation.noisy_psnr()?;

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let lambda = cfg.revisible.lambda_at(epoch, cfg.epochs);
        nets.denoiser_opt.lr = TrainConfig::scheduled(cfg.lr, cfg.lr_halve_every, epoch);
        nets.estimator_opt.lr = TrainConfig::scheduled(cfg.estimator_lr, cfg.estimator_lr_halve_every, epoch);
        let samples = epoch_samples(train, cfg, &root.fork(EPOCH_STREAM + epoch as u64))?;
        let (mut nll, mut est, mut steps) = (0.0, 0.0, 0usize);
        for batch in samples.chunks(cfg.batch_size) {
            let l = train_step(batch, &mut nets, cfg, lambda)?;
            nll += l.nll;
            est += l.est_loss;
            steps += 1;
            step_losses.push(l.total);
        }
        let (psnr_val, p) = validation.evaluate(&nets, cfg)?;
        let m = EpochMetrics {
            epoch,
            lambda,
            nll: nll / steps as f64,
            est_loss: est / steps as f64,
            psnr_val,
            alpha_hat: p.alpha,
            sigma1_hat: p.sigma1,
            sigma2_hat: p.sigma2,
        };
        observe(&m);
        metrics.push(m);
    }
    Ok(TrainingOutcome {
        nets,
        metrics,
        noisy_psnr_val,
        step_losses,
    })
}

/// Image files (`.pgm`, `.ppm`, `.pgt`) in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> TrainResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| TrainError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                    Some("pgm" | "ppm" | "pgt")
                )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> TrainResult<Vec<ImageTensor>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(TrainError::EmptyDataset(dir.to_path_buf()));
    }
    Ok(paths.iter().map(load_image).collect::<pgden_core::Result<Vec<_>>>()?)
}

pub const METRICS_FILE: &str = "metrics.tsv";

/// Trains on the images in `dataset_dir` (validating on `val_dir` when
/// given) and writes the checkpoint and the per-epoch metrics log to `out_dir`.
pub fn run_training(
    dataset_dir: &Path,
    val_dir: Option<&Path>,
    out_dir: &Path,
    cfg: &TrainConfig,
) -> TrainResult<TrainingOutcome> {
    let train = load_dataset(dataset_dir)?;
    let val = match val_dir {
        Some(d) => load_dataset(d)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out_dir).map_err(|e| TrainError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let log_path = out_dir.join(METRICS_FILE);
    let io_err = |e| TrainError::Io {
        path: log_path.clone(),
        source: e,
    };
    let mut log = fs::File::create(&log_path).map_err(io_err)?;
    let mut write_err = None;
    let outcome = train_with_observer(&train, &val, cfg, |m| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{}", m.tsv_line()).and_then(|_| log.flush()) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    save_checkpoint(out_dir, &outcome.nets, cfg)?;
    Ok(outcome)
}
