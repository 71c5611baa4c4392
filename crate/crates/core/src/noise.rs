//! Poisson-Gaussian corruption and the generalized Anscombe transform.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{sample_poisson, SeededRng};
use crate::tensor::ImageTensor;

/// Poisson scale `alpha` and the Gaussian standard deviations of the masked
/// (`sigma1`) and visible (`sigma2`) branches. Outside the two-branch loss the
/// two deviations coincide.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseParams {
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl NoiseParams {
    pub fn new(alpha: f64, sigma: f64) -> Self {
        Self {
            alpha,
            sigma1: sigma,
            sigma2: sigma,
        }
    }

    pub fn two_branch(alpha: f64, sigma1: f64, sigma2: f64) -> Self {
        Self {
            alpha,
            sigma1,
            sigma2,
        }
    }

    /// The single Gaussian deviation used by synthesis and the transform.
    pub fn sigma(&self) -> f64 {
        self.sigma1
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn require_alpha(&self) -> Result<()> {
        self.validate()?;
        if self.alpha == 0.0 {
            return Err(Error::InvalidArgument(
                "alpha must be positive for this operation".into(),
            ));
        }
        Ok(())
    }
}

/// The five synthetic Poisson-Gaussian levels used for benchmarking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgLevel {
    Pg1,
    Pg2,
    Pg3,
    Pg4,
    Pg5,
}

impl PgLevel {
    pub const ALL: [PgLevel; 5] = [
        PgLevel::Pg1,
        PgLevel::Pg2,
        PgLevel::Pg3,
        PgLevel::Pg4,
        PgLevel::Pg5,
    ];

    pub fn params(self) -> NoiseParams {
        match self {
            PgLevel::Pg1 => NoiseParams::new(0.1, 0.02),
            PgLevel::Pg2 => NoiseParams::new(0.1, 0.0002),
            PgLevel::Pg3 => NoiseParams::new(0.05, 0.02),
            PgLevel::Pg4 => NoiseParams::new(0.05, 0.0002),
            PgLevel::Pg5 => NoiseParams::new(0.01, 0.02),
        }
    }
}

impl fmt::Display for PgLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = PgLevel::ALL.iter().position(|l| l == self).unwrap() + 1;
        write!(f, "pg{i}")
    }
}

impl FromStr for PgLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pg1" => Ok(PgLevel::Pg1),
            "pg2" => Ok(PgLevel::Pg2),
            "pg3" => Ok(PgLevel::Pg3),
            "pg4" => Ok(PgLevel::Pg4),
            "pg5" => Ok(PgLevel::Pg5),
            other => Err(Error::InvalidArgument(format!("unknown noise level {other:?}"))),
        }
    }
}

/// `y = α·Poisson(x/α) + N(0, σ²)` per sample, unclipped.
pub fn corrupt_exact(x: &ImageTensor, p: &NoiseParams, rng: &mut SeededRng) -> Result<ImageTensor> {
    p.require_alpha()?;
    let sigma = p.sigma();
    let mut out = Vec::with_capacity(x.len());
    for &v in x.as_slice() {
        let count = sample_poisson(rng, v as f64 / p.alpha)?;
        let read = if sigma > 0.0 {
            sigma * rng.standard_normal()
        } else {
            0.0
        };
        out.push((p.alpha * count as f64 + read) as f32);
    }
    ImageTensor::new(x.height(), x.width(), x.channels(), out)
}

/// Heteroscedastic Gaussian approximation `y = x + N(0, αx + σ²)`.
pub fn corrupt_gaussian_approx(
    x: &ImageTensor,
    p: &NoiseParams,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    p.validate()?;
    let s2 = p.sigma() * p.sigma();
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.as_slice().iter().enumerate() {
        let var = p.alpha * v as f64 + s2;
        if var < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative variance {var} at sample {i}"
            )));
        }
        let n = if var > 0.0 {
            var.sqrt() * rng.standard_normal()
        } else {
            0.0
        };
        out.push((v as f64 + n) as f32);
    }
    ImageTensor::new(x.height(), x.width(), x.channels(), out)
}

/// Argument of the square root in the forward transform, clipped at zero.
#[inline]
fn gat_radicand(y: f64, alpha: f64, sigma: f64) -> f64 {
    (alpha * y + 0.375 * alpha * alpha + sigma * sigma).max(0.0)
}

/// Scalar forward transform `(2/α)·sqrt(αy + 3α²/8 + σ²)`.
#[inline]
pub fn gat_value(y: f64, alpha: f64, sigma: f64) -> f64 {
    2.0 / alpha * gat_radicand(y, alpha, sigma).sqrt()
}

/// Transform value and its partial derivatives with respect to `alpha` and
/// `sigma`. Where the radicand is clipped both derivatives are zero.
#[inline]
pub fn gat_with_param_grad(y: f64, alpha: f64, sigma: f64) -> (f64, f64, f64) {
    let a = gat_radicand(y, alpha, sigma);
    if a <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let root = a.sqrt();
    let g = 2.0 / alpha * root;
    let d_alpha = -g / alpha + (y + 0.75 * alpha) / (alpha * root);
    let d_sigma = 2.0 * sigma / (alpha * root);
    (g, d_alpha, d_sigma)
}

/// Scalar algebraic inverse `(α/4)·g² − 3α/8 − σ²/α`.
#[inline]
pub fn gat_inverse_value(g: f64, alpha: f64, sigma: f64) -> f64 {
    0.25 * alpha * g * g - 0.375 * alpha - sigma * sigma / alpha
}

pub fn gat(y: &ImageTensor, p: &NoiseParams) -> Result<ImageTensor> {
    p.require_alpha()?;
    let (alpha, sigma) = (p.alpha, p.sigma());
    Ok(y.map(|v| gat_value(v as f64, alpha, sigma) as f32))
}

pub fn gat_inverse_algebraic(g: &ImageTensor, p: &NoiseParams) -> Result<ImageTensor> {
    p.require_alpha()?;
    let (alpha, sigma) = (p.alpha, p.sigma());
    Ok(g.map(|v| gat_inverse_value(v as f64, alpha, sigma) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(img: &ImageTensor) -> (f64, f64) {
        let xs = img.to_f64();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn zero_signal_zero_noise() {
        let x = ImageTensor::zeros(8, 8, 1);
        let y = corrupt_exact(&x, &NoiseParams::new(0.05, 0.0), &mut SeededRng::new(1)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        assert!(corrupt_exact(&x, &NoiseParams::new(0.0, 0.1), &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn exact_corruption_moments() {
        let x = ImageTensor::filled(1000, 1000, 1, 0.5);
        let p = NoiseParams::new(0.05, 0.02);
        let y = corrupt_exact(&x, &p, &mut SeededRng::new(5)).unwrap();
        let (m, v) = moments(&y);
        assert!((m - 0.5).abs() < 0.001, "mean {m}");
        assert!((v / 0.0254 - 1.0).abs() < 0.02, "var {v}");
        let again = corrupt_exact(&x, &p, &mut SeededRng::new(5)).unwrap();
        assert_eq!(y, again);
    }

    #[test]
    fn approx_corruption_moments() {
        let x = ImageTensor::filled(1000, 1000, 1, 0.5);
        let y = corrupt_gaussian_approx(&x, &NoiseParams::new(0.05, 0.02), &mut SeededRng::new(6))
            .unwrap();
        let (_, v) = moments(&y);
        assert!((v / 0.0254 - 1.0).abs() < 0.02, "var {v}");

        let x = ImageTensor::filled(1000, 1000, 1, 1.0);
        let y = corrupt_gaussian_approx(&x, &NoiseParams::new(0.01, 0.0002), &mut SeededRng::new(6))
            .unwrap();
        let (_, v) = moments(&y);
        assert!((v / 0.01000004 - 1.0).abs() < 0.02, "var {v}");

        let x = ImageTensor::from_fn(4, 4, 1, |r, c, _| (r * 4 + c) as f32 / 15.0);
        let y = corrupt_gaussian_approx(&x, &NoiseParams::new(0.0, 0.0), &mut SeededRng::new(6))
            .unwrap();
        assert_eq!(x, y);

        let neg = ImageTensor::filled(2, 2, 1, -1.0);
        assert!(corrupt_gaussian_approx(&neg, &NoiseParams::new(0.5, 0.0), &mut SeededRng::new(0))
            .is_err());
    }

    #[test]
    fn gat_closed_form() {
        assert!((gat_value(0.5, 0.1, 0.02) - 4.6540).abs() < 1e-4);
        assert!((gat_value(0.0, 2.0, 0.0) - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((gat_inverse_value(4.6540, 0.1, 0.02) - 0.5).abs() < 1e-4);
        assert_eq!(gat_inverse_value(0.0, 1.0, 0.0), -0.375);
        // clipped radicand
        assert_eq!(gat_value(-1.0, 0.1, 0.0), 0.0);
    }

    #[test]
    fn gat_requires_positive_alpha() {
        let img = ImageTensor::zeros(2, 2, 1);
        assert!(gat(&img, &NoiseParams::new(0.0, 0.1)).is_err());
        assert!(gat_inverse_algebraic(&img, &NoiseParams::new(0.0, 0.1)).is_err());
    }

    #[test]
    fn gat_param_gradient_matches_differences() {
        for &(y, a, s) in &[(0.5, 0.1, 0.02), (0.05, 0.01, 0.03), (1.2, 0.05, 0.0002)] {
            let (g, da, ds) = gat_with_param_grad(y, a, s);
            assert_eq!(g, gat_value(y, a, s));
            let h = 1e-7;
            let fa = (gat_value(y, a + h, s) - gat_value(y, a - h, s)) / (2.0 * h);
            let fs = (gat_value(y, a, s + h) - gat_value(y, a, s - h)) / (2.0 * h);
            assert!((da - fa).abs() < 1e-5 * fa.abs().max(1.0), "{da} vs {fa}");
            assert!((ds - fs).abs() < 1e-5 * fs.abs().max(1.0), "{ds} vs {fs}");
        }
    }

    #[test]
    fn level_names_round_trip() {
        for l in PgLevel::ALL {
            assert_eq!(l.to_string().parse::<PgLevel>().unwrap(), l);
        }
        assert_eq!(PgLevel::Pg4.params(), NoiseParams::new(0.05, 0.0002));
        assert!("pg9".parse::<PgLevel>().is_err());
    }
}
