//! Image directories: loading, clean scene synthesis and on-disk corruption.

use std::fs;
use std::path::{Path, PathBuf};

use pgden_core::io::{load_image, save_image};
use pgden_core::noise::{corrupt_exact, corrupt_gaussian_approx};
use pgden_core::scene::scene_set;
use pgden_core::{ImageTensor, NoiseParams, SeededRng};
use pgden_train::run::list_images;

use crate::error::{CliError, CliResult};

/// Corrupts `x` with exact Poisson-Gaussian sampling, or with its
/// heteroscedastic Gaussian approximation when `exact` is false. With
/// `α = 0` the noise is purely additive and both paths coincide.
pub fn synthesize(x: &ImageTensor, p: &NoiseParams, exact: bool, rng: &mut SeededRng) -> CliResult<ImageTensor> {
    Ok(if exact && p.alpha > 0.0 {
        corrupt_exact(x, p, rng)?
    } else {
        corrupt_gaussian_approx(x, p, rng)?
    })
}

/// Every image in `dir` with its path, sorted by name.
pub fn load_images(dir: &Path) -> CliResult<Vec<(PathBuf, ImageTensor)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(CliError::EmptyDataset(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|p| {
            let img = load_image(&p)?;
            Ok((p, img))
        })
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes a noisy `.pgt` copy of every image in `input` to `output`; image
/// `i` (in name order) draws from stream `i` of `seed`. Returns the count.
pub fn corrupt_dir(input: &Path, output: &Path, p: &NoiseParams, seed: u64, exact: bool) -> CliResult<usize> {
    let images = load_images(input)?;
    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    let root = SeededRng::new(seed);
    for (i, (path, x)) in images.iter().enumerate() {
        let y = synthesize(x, p, exact, &mut root.fork(i as u64))?;
        save_image(&y, output.join(format!("{}.pgt", stem(path))), false)?;
    }
    Ok(images.len())
}

/// Writes `count` random clean scenes as `scene_XX.pgm` (or `.ppm`).
pub fn write_scenes(
    output: &Path,
    count: usize,
    min_side: usize,
    max_side: usize,
    channels: usize,
    seed: u64,
) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    scene_set(count, min_side, max_side, channels, seed)?
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = output.join(format!("scene_{i:02}.{ext}"));
            save_image(img, &path, true)?;
            Ok(path)
        })
        .collect()
}

pub(crate) fn file_stem(path: &Path) -> String {
    stem(path)
}
