//! Noise-parameter estimation benchmark over a set of clean images.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use pgden_core::estimate::{grid_fit, gradient_fit, EstimationMethod, FitResult, GradientFitConfig, GridFitConfig};
use pgden_core::metrics::{psnr, ssim};
use pgden_core::{ImageTensor, NoiseParams, PgLevel, SeededRng};

use crate::datasets::{load_images, synthesize};
use crate::error::{CliError, CliResult};
use crate::report::{BenchReport, Cell};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FitMode {
    /// Log-grid search with local refinement.
    #[default]
    Grid,
    /// Adam on the log-parameters with the analytic loss gradient.
    Gradient,
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMode::Grid => "grid",
            FitMode::Gradient => "gradient",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLevel {
    pub name: String,
    pub params: NoiseParams,
}

impl FromStr for NoiseLevel {
    type Err = CliError;

    /// `pg1`..`pg5`, or a custom `alpha:sigma` pair.
    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once(':') {
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Invalid(format!("bad noise level {s:?}")))
            };
            let params = NoiseParams::new(parse(a)?, parse(b)?);
            params.validate()?;
            return Ok(NoiseLevel {
                name: s.to_string(),
                params,
            });
        }
        let level: PgLevel = s.parse()?;
        Ok(NoiseLevel {
            name: level.to_string(),
            params: level.params(),
        })
    }
}

/// Comma-separated list of [`NoiseLevel`]s.
pub fn parse_levels(s: &str) -> CliResult<Vec<NoiseLevel>> {
    let levels = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<CliResult<Vec<_>>>()?;
    if levels.is_empty() {
        return Err(CliError::Invalid("no noise levels given".into()));
    }
    Ok(levels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub method: EstimationMethod,
    pub fit: FitMode,
    pub grid: GridFitConfig,
    pub gradient: GradientFitConfig,
    pub seed: u64,
    /// Exact Poisson sampling rather than the Gaussian approximation.
    pub exact: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            method: EstimationMethod::Cramer,
            fit: FitMode::Grid,
            grid: GridFitConfig::default(),
            gradient: GradientFitConfig::default(),
            seed: 0,
            exact: true,
        }
    }
}

pub fn fit_image(y: &ImageTensor, cfg: &BenchConfig) -> CliResult<FitResult> {
    Ok(match cfg.fit {
        FitMode::Grid => grid_fit(y, cfg.method, &cfg.grid)?,
        FitMode::Gradient => gradient_fit(y, cfg.method, &cfg.gradient)?,
    })
}

/// One row per level: the true parameters, the mean estimate over all
/// images, the mean fit time per image and the mean PSNR/SSIM of the noisy
/// inputs. Image `i` at level `k` is corrupted from stream `(k, i)` of the
/// seed.
pub fn bench_estimation(images: &[ImageTensor], levels: &[NoiseLevel], cfg: &BenchConfig) -> CliResult<BenchReport> {
    if images.is_empty() {
        return Err(CliError::Invalid("benchmark needs at least one image".into()));
    }
    let mut report = BenchReport::new(
        "noise parameter estimation",
        &[
            "level",
            "alpha",
            "sigma",
            "alpha_hat",
            "sigma_hat",
            "seconds_per_image",
            "noisy_psnr_db",
            "noisy_ssim",
        ],
    );
    report.note(format!(
        "method {}, {} fit, {} images, seed {}, {} sampling",
        cfg.method,
        cfg.fit,
        images.len(),
        cfg.seed,
        if cfg.exact { "exact" } else { "approximate" }
    ));
    report.note("noisy PSNR/SSIM on unclipped inputs");
    let root = SeededRng::new(cfg.seed);
    let n = images.len() as f64;
    for (k, level) in levels.iter().enumerate() {
        let stream = root.fork(k as u64);
        let (mut a, mut s, mut secs, mut q_psnr, mut q_ssim) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut saturated = false;
        for (i, x) in images.iter().enumerate() {
            let y = synthesize(x, &level.params, cfg.exact, &mut stream.fork(i as u64))?;
            let t = Instant::now();
            let fit = fit_image(&y, cfg)?;
            secs += t.elapsed().as_secs_f64() / n;
            a += fit.params.alpha / n;
            s += fit.params.sigma() / n;
            let p = psnr(&y, x, 1.0)?;
            saturated |= p.is_saturated();
            q_psnr += p.db_or(0.0) / n;
            q_ssim += ssim(&y, x)? / n;
        }
        report.push_row(vec![
            Cell::text(level.name.clone()),
            Cell::num(level.params.alpha, 6),
            Cell::num(level.params.sigma(), 6),
            Cell::num(a, 6),
            Cell::num(s, 6),
            Cell::num(secs, 3),
            if saturated { Cell::text("inf") } else { Cell::num(q_psnr, 2) },
            Cell::num(q_ssim, 4),
        ])?;
    }
    Ok(report)
}

pub fn bench_estimation_dir(dataset: &Path, levels: &[NoiseLevel], cfg: &BenchConfig) -> CliResult<BenchReport> {
    let images: Vec<ImageTensor> = load_images(dataset)?.into_iter().map(|(_, img)| img).collect();
    bench_estimation(&images, levels, cfg)
}
