//! Full-reference image quality metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_STD: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio. Identical inputs give `Saturated` rather than
/// an infinite number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Saturated,
}

impl Psnr {
    /// Decibels, with `Saturated` mapped to `cap`.
    pub fn db_or(self, cap: f64) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Saturated => cap,
        }
    }

    pub fn is_saturated(self) -> bool {
        matches!(self, Psnr::Saturated)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.2}"),
            Psnr::Saturated => f.write_str("inf"),
        }
    }
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor, max_val: f64) -> Result<Psnr> {
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!("max_val must be positive, got {max_val}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Psnr::Saturated);
    }
    Ok(Psnr::Db(10.0 * (max_val * max_val / m).log10()))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, std: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&src[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (j, t) in taps.iter().enumerate() {
            let src = &rows[(r + j) * ow..(r + j + 1) * ow];
            for (o, v) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, max_val: f64) -> f64 {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_WINDOW_STD);
    let c1 = (SSIM_K1 * max_val).powi(2);
    let c2 = (SSIM_K2 * max_val).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(a, a), h, w, &taps);
    let e_bb = filter_valid(&prod(b, b), h, w, &taps);
    let e_ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM over all valid 11×11 Gaussian-window positions, averaged over
/// channels, for data in `[0, 1]`.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    ssim_with_range(a, b, 1.0)
}

pub fn ssim_with_range(a: &ImageTensor, b: &ImageTensor, max_val: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            required: format!("{SSIM_WINDOW}×{SSIM_WINDOW} window"),
        });
    }
    if a == b {
        return Ok(1.0);
    }
    let total: f64 = (0..c)
        .map(|ch| {
            let pa = a.channel(ch).to_f64();
            let pb = b.channel(ch).to_f64();
            ssim_plane(&pa, &pb, h, w, max_val)
        })
        .sum();
    Ok(total / c as f64)
}
