use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pgden_cli::ablation::{run_ablation, AblationAxis};
use pgden_cli::bench::{bench_estimation_dir, fit_image, parse_levels, BenchConfig, FitMode};
use pgden_cli::datasets::{corrupt_dir, load_images, write_scenes};
use pgden_cli::eval::evaluate_dirs;
use pgden_cli::BenchReport;
use pgden_core::estimate::EstimationMethod;
use pgden_core::io::{load_image, save_image};
use pgden_core::noise::{gat, gat_inverse_algebraic};
use pgden_core::scene::scene_set;
use pgden_core::{ImageTensor, NoiseParams};
use pgden_train::checkpoint::load_checkpoint;
use pgden_train::run::run_training;
use pgden_train::{infer, TrainConfig};

#[derive(Parser)]
#[command(name = "pgden", version, about = "Poisson-Gaussian self-supervised denoising toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random clean synthetic scenes.
    Scenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        min_side: usize,
        #[arg(long, default_value_t = 256)]
        max_side: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Corrupt every image in a directory with Poisson-Gaussian noise.
    Synth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exact Poisson sampling (the default).
        #[arg(long, conflicts_with = "approx")]
        exact: bool,
        /// Heteroscedastic Gaussian approximation.
        #[arg(long)]
        approx: bool,
    },
    /// Apply the generalized Anscombe transform or its algebraic inverse.
    Gat {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inverse: bool,
    },
    /// Estimate (alpha, sigma) of a single noisy image.
    Estimate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "cramer")]
        method: String,
        /// Grid search (the default).
        #[arg(long, conflicts_with = "train")]
        grid: bool,
        /// Gradient-based fit of the loss.
        #[arg(long)]
        train: bool,
    },
    /// Train the denoiser and estimator on a directory of clean images.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Clean validation images; noise is synthesized with a fixed seed.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Denoise one image with a trained checkpoint.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM of predictions against references with the same file stem.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Clip predictions to [0, 1] before scoring.
        #[arg(long)]
        clip: bool,
        #[command(flatten)]
        output: ReportOutput,
    },
    /// Noise-parameter estimation benchmark.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "pg1,pg2,pg3,pg4,pg5")]
        levels: String,
        #[arg(long, default_value = "cramer")]
        method: String,
        /// Gradient-based fit instead of grid search.
        #[arg(long)]
        train: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: ReportOutput,
    },
    /// Desk-scale ablation over one axis.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Clean training images; synthetic scenes when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Clean validation images; synthetic scenes when omitted.
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        output: ReportOutput,
    },
}

#[derive(Args)]
struct ReportOutput {
    /// Also write the table as tab-separated values.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

impl ReportOutput {
    fn emit(&self, report: &BenchReport) -> Result<()> {
        print!("{}", report.to_text());
        if let Some(path) = &self.tsv {
            report.write_tsv(path)?;
        }
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    })
}

fn clean_images(dir: Option<&Path>, count: usize, side: (usize, usize), seed: u64) -> Result<Vec<ImageTensor>> {
    Ok(match dir {
        Some(d) => load_images(d)?.into_iter().map(|(_, img)| img).collect(),
        None => scene_set(count, side.0, side.1, 1, seed)?,
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Scenes {
            out,
            count,
            min_side,
            max_side,
            channels,
            seed,
        } => {
            let paths = write_scenes(&out, count, min_side, max_side, channels, seed)?;
            println!("wrote {} scenes to {}", paths.len(), out.display());
        }
        Command::Synth {
            input,
            out,
            alpha,
            sigma,
            seed,
            exact: _,
            approx,
        } => {
            let p = NoiseParams::new(alpha, sigma);
            p.validate()?;
            let n = corrupt_dir(&input, &out, &p, seed, !approx)?;
            println!("wrote {n} noisy images to {}", out.display());
        }
        Command::Gat {
            input,
            alpha,
            sigma,
            out,
            inverse,
        } => {
            let img = load_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let p = NoiseParams::new(alpha, sigma);
            let res = if inverse { gat_inverse_algebraic(&img, &p)? } else { gat(&img, &p)? };
            save_image(&res, &out, false)?;
        }
        Command::Estimate {
            input,
            method,
            grid: _,
            train,
        } => {
            let y = load_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let cfg = BenchConfig {
                method: method.parse::<EstimationMethod>()?,
                fit: if train { FitMode::Gradient } else { FitMode::Grid },
                ..BenchConfig::default()
            };
            let fit = fit_image(&y, &cfg)?;
            println!("alpha_hat\t{:.6}", fit.params.alpha);
            println!("sigma_hat\t{:.6}", fit.params.sigma());
            println!("loss\t{:.6e}", fit.loss);
        }
        Command::Train { data, config, out, val } => {
            let cfg = load_config(config.as_deref())?;
            let outcome = run_training(&data, val.as_deref(), &out, &cfg)?;
            for m in &outcome.metrics {
                println!("{}", m.tsv_line());
            }
            if val.is_some() {
                println!(
                    "noisy validation PSNR {:.3} dB, final {:.3} dB",
                    outcome.noisy_psnr_val,
                    outcome.final_psnr_val()
                );
            }
        }
        Command::Denoise { ckpt, input, out } => {
            let (nets, _) = load_checkpoint(&ckpt)?;
            let y = load_image(&input).with_context(|| format!("reading {}", input.display()))?;
            if y.channels() != nets.denoiser.channels() {
                bail!(
                    "checkpoint expects {} channels, image has {}",
                    nets.denoiser.channels(),
                    y.channels()
                );
            }
            save_image(&infer(&nets.denoiser, &y)?, &out, false)?;
        }
        Command::Eval {
            pred,
            reference,
            clip,
            output,
        } => output.emit(&evaluate_dirs(&pred, &reference, clip)?)?,
        Command::Bench {
            data,
            levels,
            method,
            train,
            seed,
            output,
        } => {
            let cfg = BenchConfig {
                method: method.parse::<EstimationMethod>()?,
                fit: if train { FitMode::Gradient } else { FitMode::Grid },
                seed,
                ..BenchConfig::default()
            };
            output.emit(&bench_estimation_dir(&data, &parse_levels(&levels)?, &cfg)?)?;
        }
        Command::Ablate {
            axis,
            config,
            data,
            val,
            output,
        } => {
            let axis: AblationAxis = axis.parse()?;
            let cfg = load_config(config.as_deref())?;
            let train = clean_images(data.as_deref(), 20, (128, 256), cfg.seed)?;
            let val = clean_images(val.as_deref(), 4, (128, 128), cfg.seed + 1)?;
            output.emit(&run_ablation(axis, &cfg, &train, &val)?.report)?;
        }
    }
    Ok(())
}
