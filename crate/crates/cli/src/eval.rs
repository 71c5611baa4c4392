//! PSNR/SSIM of predictions against references matched by file stem.

use std::collections::BTreeMap;
use std::path::Path;

use pgden_core::metrics::{psnr, ssim};
use pgden_core::ImageTensor;

use crate::datasets::{file_stem, load_images};
use crate::error::{CliError, CliResult};
use crate::report::{BenchReport, Cell};

/// Per-image and mean PSNR/SSIM in the `[0, 1]` domain. Predictions are
/// clipped to `[0, 1]` first only when `clip` is set. Saturated PSNR is
/// reported as `inf` and excluded from the mean.
pub fn evaluate_pairs(pairs: &[(String, ImageTensor, ImageTensor)], clip: bool) -> CliResult<BenchReport> {
    let mut report = BenchReport::new("denoising quality", &["image", "psnr_db", "ssim"]);
    report.note(format!("predictions clipped to [0, 1]: {}", if clip { "yes" } else { "no" }));
    let (mut psnr_sum, mut psnr_n, mut ssim_sum) = (0.0, 0usize, 0.0);
    for (name, pred, reference) in pairs {
        let pred = if clip { pred.map(|v| v.clamp(0.0, 1.0)) } else { pred.clone() };
        let p = psnr(&pred, reference, 1.0)?;
        let s = ssim(&pred, reference)?;
        ssim_sum += s;
        let p_cell = match p.db_or(f64::INFINITY) {
            db if db.is_finite() => {
                psnr_sum += db;
                psnr_n += 1;
                Cell::num(db, 2)
            }
            _ => Cell::text("inf"),
        };
        report.push_row(vec![Cell::text(name.clone()), p_cell, Cell::num(s, 4)])?;
    }
    if !pairs.is_empty() {
        let mean_psnr = if psnr_n > 0 {
            Cell::num(psnr_sum / psnr_n as f64, 2)
        } else {
            Cell::text("inf")
        };
        report.push_row(vec![Cell::text("mean"), mean_psnr, Cell::num(ssim_sum / pairs.len() as f64, 4)])?;
    }
    Ok(report)
}

pub fn evaluate_dirs(pred: &Path, reference: &Path, clip: bool) -> CliResult<BenchReport> {
    let refs: BTreeMap<String, ImageTensor> = load_images(reference)?
        .into_iter()
        .map(|(p, img)| (file_stem(&p), img))
        .collect();
    let mut pairs = Vec::new();
    for (path, img) in load_images(pred)? {
        let name = file_stem(&path);
        let r = refs.get(&name).ok_or_else(|| {
            CliError::Invalid(format!("no reference image named {name:?} in {}", reference.display()))
        })?;
        pairs.push((name, img, r.clone()));
    }
    evaluate_pairs(&pairs, clip)
}
