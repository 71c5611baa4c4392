//! Adaptive re-visible loss.
//!
//! The masked branch (network applied to the masked volume, gathered by the
//! mapper) and the visible branch (network applied to the raw image) each emit
//! a per-pixel Gaussian belief `(mean, variance)`. With blind factor
//! `π1 = 1/(1+λ)` and visible factor `π2 = λ/(1+λ)` the observation is modeled
//! as
//!
//! ```text
//! μ_y = π1·μ_m + π2·μ_v
//! Σ_y = π1²·Σ_m + π2²·Σ_v + noise(α, σ1, σ2)
//! ```
//!
//! and the loss is the Gaussian negative log-likelihood of `y` under
//! `N(μ_y, Σ_y)` with the additive constant dropped, averaged over pixels.
//! Covariances are diagonal throughout; every quantity is a per-pixel scalar.
//!
//! The noise term depends on the variant:
//!
//! * [`NoiseModelVariant::Original`]: `π1²(α·μ_m⁺ + σ1²) + π2²(α·μ_v⁺ + σ2²)`,
//!   each branch marginalized separately before mixing.
//! * [`NoiseModelVariant::Enhanced`]: `α·μ_y⁺ + π1²σ1² + π2²σ2²`.
//! * [`NoiseModelVariant::Shared`]: `α·μ_y⁺ + (σ1² + σ2²)/2`.
//!
//! `μ⁺ = max(μ, 0)`. With `stop_grad_noise_term` the mean inside the Poisson
//! term is treated as a constant; α itself still receives gradient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::noise::NoiseParams;
use crate::tensor::ImageTensor;

pub const VAR_FLOOR: f64 = 1e-6;
pub const LOG_VAR_MIN: f32 = -14.0;
pub const LOG_VAR_MAX: f32 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseModelVariant {
    /// `M_O`: branch marginals combined.
    Original,
    /// `M_E`: mixture-level noise model.
    #[default]
    Enhanced,
    /// `M_S`: mixture-level noise with one shared Gaussian variance.
    Shared,
}

impl fmt::Display for NoiseModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseModelVariant::Original => "M_O",
            NoiseModelVariant::Enhanced => "M_E",
            NoiseModelVariant::Shared => "M_S",
        })
    }
}

impl FromStr for NoiseModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "M_O" | "MO" | "ORIGINAL" => Ok(NoiseModelVariant::Original),
            "M_E" | "ME" | "ENHANCED" => Ok(NoiseModelVariant::Enhanced),
            "M_S" | "MS" | "SHARED" => Ok(NoiseModelVariant::Shared),
            other => Err(Error::InvalidArgument(format!("unknown noise model {other:?}"))),
        }
    }
}

/// Blind and visible mixture weights `(1/(1+λ), λ/(1+λ))`.
pub fn mixture_weights(lambda: f64) -> (f64, f64) {
    (1.0 / (1.0 + lambda), lambda / (1.0 + lambda))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReVisibleConfig {
    pub lambda_start: f64,
    pub lambda_final: f64,
    pub variant: NoiseModelVariant,
    /// Visible branch is forward-only.
    pub iid: bool,
    /// Detach the mean inside the Poisson variance term.
    pub stop_grad_noise_term: bool,
    /// Weight of the estimator loss in the total objective.
    pub estimator_loss_weight: f64,
    /// Let the likelihood term push gradient into `(α, σ1, σ2)`.
    pub noise_grad_from_nll: bool,
}

impl Default for ReVisibleConfig {
    fn default() -> Self {
        Self {
            lambda_start: 3.0,
            lambda_final: 11.0,
            variant: NoiseModelVariant::Enhanced,
            iid: true,
            stop_grad_noise_term: true,
            estimator_loss_weight: 0.01,
            noise_grad_from_nll: true,
        }
    }
}

impl ReVisibleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_start > 0.0) || self.lambda_start > self.lambda_final {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lambda_start <= lambda_final, got {} and {}",
                self.lambda_start, self.lambda_final
            )));
        }
        if !(self.estimator_loss_weight >= 0.0) {
            return Err(Error::InvalidArgument(
                "estimator_loss_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// λ for `epoch` of `epochs`, linear from start (first epoch) to final
    /// (last epoch).
    pub fn lambda_at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.lambda_start;
        }
        let t = (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64;
        self.lambda_start + t * (self.lambda_final - self.lambda_start)
    }

    pub fn settings(&self, lambda: f64) -> LossSettings {
        LossSettings {
            lambda,
            variant: self.variant,
            stop_grad_noise_term: self.stop_grad_noise_term,
            iid: self.iid,
        }
    }
}

/// Per-pixel Gaussian belief of one branch. The variance never drops below
/// [`VAR_FLOOR`].
#[derive(Clone, Debug, PartialEq)]
pub struct BranchBelief {
    mean: ImageTensor,
    var: ImageTensor,
}

impl BranchBelief {
    pub fn new(mean: ImageTensor, var: ImageTensor) -> Result<Self> {
        mean.ensure_same_shape(&var)?;
        let var = var.map(|v| floor_var(v as f64) as f32);
        Ok(Self { mean, var })
    }

    /// Belief from a log-variance head, clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn from_log_var(mean: ImageTensor, log_var: &ImageTensor) -> Result<Self> {
        mean.ensure_same_shape(log_var)?;
        let var = log_var.map(|lv| var_from_log_var(lv).0 as f32);
        Ok(Self { mean, var })
    }

    pub fn mean(&self) -> &ImageTensor {
        &self.mean
    }

    pub fn var(&self) -> &ImageTensor {
        &self.var
    }
}

#[inline]
fn floor_var(v: f64) -> f64 {
    if v.is_nan() {
        VAR_FLOOR
    } else {
        v.max(VAR_FLOOR)
    }
}

/// Variance from a raw log-variance output and `∂var/∂log_var` (zero where
/// the clamp or the floor is active).
#[inline]
pub fn var_from_log_var(log_var: f32) -> (f64, f64) {
    let clamped = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX) as f64;
    let v = clamped.exp();
    let inside = log_var > LOG_VAR_MIN && log_var < LOG_VAR_MAX && v > VAR_FLOOR;
    (v.max(VAR_FLOOR), if inside { v } else { 0.0 })
}

/// Observation marginal of one branch: variance gains `α·max(mean, 0) + σ²`.
pub fn branch_marginal(belief: &BranchBelief, alpha: f64, sigma: f64) -> Result<BranchBelief> {
    if !(alpha >= 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha and sigma must be non-negative, got ({alpha}, {sigma})"
        )));
    }
    let s2 = sigma * sigma;
    let var = belief.mean.zip_map(&belief.var, |m, v| {
        (v as f64 + alpha * (m as f64).max(0.0) + s2) as f32
    })?;
    Ok(BranchBelief {
        mean: belief.mean.clone(),
        var,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureBelief {
    pub mu_y: ImageTensor,
    pub var_y: ImageTensor,
}

impl MixtureBelief {
    /// `n_y = y − μ_y`.
    pub fn residual(&self, y: &ImageTensor) -> Result<ImageTensor> {
        y.zip_map(&self.mu_y, |a, b| a - b)
    }
}

/// Mixture mean and variance at one pixel.
#[inline]
pub fn mixture_pixel(
    mu_m: f64,
    var_m: f64,
    mu_v: f64,
    var_v: f64,
    lambda: f64,
    variant: NoiseModelVariant,
    p: &NoiseParams,
) -> (f64, f64) {
    let (pi1, pi2) = mixture_weights(lambda);
    let mu = pi1 * mu_m + pi2 * mu_v;
    let (s1, s2) = (p.sigma1 * p.sigma1, p.sigma2 * p.sigma2);
    let base = pi1 * pi1 * var_m + pi2 * pi2 * var_v;
    let noise = match variant {
        NoiseModelVariant::Original => {
            pi1 * pi1 * (p.alpha * mu_m.max(0.0) + s1) + pi2 * pi2 * (p.alpha * mu_v.max(0.0) + s2)
        }
        NoiseModelVariant::Enhanced => p.alpha * mu.max(0.0) + pi1 * pi1 * s1 + pi2 * pi2 * s2,
        NoiseModelVariant::Shared => p.alpha * mu.max(0.0) + 0.5 * (s1 + s2),
    };
    (mu, floor_var(base + noise))
}

pub fn combine_mixture(
    masked: &BranchBelief,
    visible: &BranchBelief,
    lambda: f64,
    variant: NoiseModelVariant,
    p: &NoiseParams,
) -> Result<MixtureBelief> {
    masked.mean.ensure_same_shape(&visible.mean)?;
    check_lambda(lambda)?;
    p.validate()?;
    let (h, w, c) = masked.mean.shape();
    let n = masked.mean.len();
    let mut mu = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for i in 0..n {
        let (m, v) = mixture_pixel(
            masked.mean.as_slice()[i] as f64,
            masked.var.as_slice()[i] as f64,
            visible.mean.as_slice()[i] as f64,
            visible.var.as_slice()[i] as f64,
            lambda,
            variant,
            p,
        );
        mu.push(m);
        var.push(v);
    }
    Ok(MixtureBelief {
        mu_y: ImageTensor::from_f64(h, w, c, &mu)?,
        var_y: ImageTensor::from_f64(h, w, c, &var)?,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Per-pixel NLL `½[(y − μ)²/v + ln v]`.
#[inline]
pub fn gaussian_nll_pixel(y: f64, mu: f64, var: f64) -> f64 {
    let n = y - mu;
    0.5 * (n * n / var + var.ln())
}

/// Mean per-pixel NLL of `y` under the mixture.
pub fn nll(y: &ImageTensor, mix: &MixtureBelief) -> Result<f64> {
    y.ensure_same_shape(&mix.mu_y)?;
    let n = y.len().max(1) as f64;
    let total: f64 = y
        .as_slice()
        .iter()
        .zip(mix.mu_y.as_slice())
        .zip(mix.var_y.as_slice())
        .map(|((&y, &m), &v)| gaussian_nll_pixel(y as f64, m as f64, floor_var(v as f64)))
        .sum();
    Ok(total / n)
}

/// Which mixture this loss evaluation uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub lambda: f64,
    pub variant: NoiseModelVariant,
    pub stop_grad_noise_term: bool,
    pub iid: bool,
}

/// One branch as `f64` slices (mean and variance, same length).
#[derive(Clone, Copy, Debug)]
pub struct BranchSlices<'a> {
    pub mean: &'a [f64],
    pub var: &'a [f64],
}

/// Mean NLL and its gradient with respect to every input. Visible-branch
/// gradients are exactly zero under `iid`.
#[derive(Clone, Debug, Default)]
pub struct MixtureGrad {
    pub value: f64,
    pub d_mu_m: Vec<f64>,
    pub d_var_m: Vec<f64>,
    pub d_mu_v: Vec<f64>,
    pub d_var_v: Vec<f64>,
    pub d_alpha: f64,
    pub d_sigma1: f64,
    pub d_sigma2: f64,
}

fn check_slices(y: &[f64], masked: &BranchSlices, visible: &BranchSlices) -> Result<()> {
    let n = y.len();
    for (name, len) in [
        ("masked mean", masked.mean.len()),
        ("masked var", masked.var.len()),
        ("visible mean", visible.mean.len()),
        ("visible var", visible.var.len()),
    ] {
        if len != n {
            return Err(Error::shape(format!("{n} samples"), format!("{len} in {name}")));
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    Ok(())
}

/// Mean NLL over pixels of `y` under the two-branch mixture.
pub fn revisible_nll(
    y: &[f64],
    masked: BranchSlices,
    visible: BranchSlices,
    p: &NoiseParams,
    s: &LossSettings,
) -> Result<f64> {
    check_slices(y, &masked, &visible)?;
    check_lambda(s.lambda)?;
    let total: f64 = (0..y.len())
        .map(|i| {
            let (mu, var) = mixture_pixel(
                masked.mean[i],
                floor_var(masked.var[i]),
                visible.mean[i],
                floor_var(visible.var[i]),
                s.lambda,
                s.variant,
                p,
            );
            gaussian_nll_pixel(y[i], mu, var)
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Mean NLL with hand-derived gradients.
pub fn revisible_nll_grad(
    y: &[f64],
    masked: BranchSlices,
    visible: BranchSlices,
    p: &NoiseParams,
    s: &LossSettings,
) -> Result<MixtureGrad> {
    check_slices(y, &masked, &visible)?;
    check_lambda(s.lambda)?;
    let n = y.len();
    let inv_n = 1.0 / n as f64;
    let (pi1, pi2) = mixture_weights(s.lambda);
    let (q1, q2) = (pi1 * pi1, pi2 * pi2);
    let alpha = p.alpha;
    let mut g = MixtureGrad {
        d_mu_m: vec![0.0; n],
        d_var_m: vec![0.0; n],
        d_mu_v: vec![0.0; n],
        d_var_v: vec![0.0; n],
        ..Default::default()
    };
    let pos = |m: f64| if m > 0.0 { 1.0 } else { 0.0 };
    for i in 0..n {
        let (mu_m, mu_v) = (masked.mean[i], visible.mean[i]);
        let var_m = floor_var(masked.var[i]);
        let var_v = floor_var(visible.var[i]);
        let (mu, var) = mixture_pixel(mu_m, var_m, mu_v, var_v, s.lambda, s.variant, p);
        let res = y[i] - mu;
        g.value += gaussian_nll_pixel(y[i], mu, var);

        let dl_dmu = -res / var * inv_n;
        let dl_dvar = 0.5 * (1.0 / var - res * res / (var * var)) * inv_n;
        // a variance sitting on the floor does not respond to its inputs
        let dl_dvar = if var > VAR_FLOOR { dl_dvar } else { 0.0 };

        // ∂var/∂μ_m and ∂var/∂μ_v through the Poisson term
        let (dvar_dmu_m, dvar_dmu_v) = if s.stop_grad_noise_term {
            (0.0, 0.0)
        } else {
            match s.variant {
                NoiseModelVariant::Original => (q1 * alpha * pos(mu_m), q2 * alpha * pos(mu_v)),
                _ => (pi1 * alpha * pos(mu), pi2 * alpha * pos(mu)),
            }
        };
        g.d_mu_m[i] = pi1 * dl_dmu + dvar_dmu_m * dl_dvar;
        g.d_var_m[i] = if masked.var[i] > VAR_FLOOR { q1 * dl_dvar } else { 0.0 };
        if !s.iid {
            g.d_mu_v[i] = pi2 * dl_dmu + dvar_dmu_v * dl_dvar;
            g.d_var_v[i] = if visible.var[i] > VAR_FLOOR { q2 * dl_dvar } else { 0.0 };
        }

        let (dvar_da, dvar_ds1, dvar_ds2) = match s.variant {
            NoiseModelVariant::Original => (
                q1 * mu_m.max(0.0) + q2 * mu_v.max(0.0),
                2.0 * q1 * p.sigma1,
                2.0 * q2 * p.sigma2,
            ),
            NoiseModelVariant::Enhanced => (mu.max(0.0), 2.0 * q1 * p.sigma1, 2.0 * q2 * p.sigma2),
            NoiseModelVariant::Shared => (mu.max(0.0), p.sigma1, p.sigma2),
        };
        g.d_alpha += dl_dvar * dvar_da;
        g.d_sigma1 += dl_dvar * dvar_ds1;
        g.d_sigma2 += dl_dvar * dvar_ds2;
    }
    g.value *= inv_n;
    Ok(g)
}

fn belief_slices(b: &BranchBelief) -> (Vec<f64>, Vec<f64>) {
    (b.mean.to_f64(), b.var.to_f64())
}

/// Pixelwise gradient `∂ℓ_i/∂μ_m,i` of the per-pixel loss. Because the loss
/// is separable this equals `N · ∂nll/∂μ_m` for an `N`-sample image.
///
/// With `stop_grad_noise_term` this is `−(1/(1+λ))·(y − μ_y)/Σ_y`; without it
/// the dependence of the Poisson variance term on `μ_m` is included.
pub fn nll_grad_mu_m(
    y: &ImageTensor,
    masked: &BranchBelief,
    visible: &BranchBelief,
    lambda: f64,
    variant: NoiseModelVariant,
    p: &NoiseParams,
    stop_grad_noise_term: bool,
) -> Result<ImageTensor> {
    y.ensure_same_shape(&masked.mean)?;
    y.ensure_same_shape(&visible.mean)?;
    let (mm, vm) = belief_slices(masked);
    let (mv, vv) = belief_slices(visible);
    let s = LossSettings {
        lambda,
        variant,
        stop_grad_noise_term,
        iid: true,
    };
    let g = revisible_nll_grad(
        &y.to_f64(),
        BranchSlices { mean: &mm, var: &vm },
        BranchSlices { mean: &mv, var: &vv },
        p,
        &s,
    )?;
    let n = y.len() as f64;
    let scaled: Vec<f64> = g.d_mu_m.iter().map(|d| d * n).collect();
    ImageTensor::from_f64(y.height(), y.width(), y.channels(), &scaled)
}

/// `(μ_m + λ·μ_v)/(1 + λ)`.
pub fn optimal_clean(masked_mean: &ImageTensor, visible_mean: &ImageTensor, lambda: f64) -> Result<ImageTensor> {
    check_lambda(lambda)?;
    let (pi1, pi2) = mixture_weights(lambda);
    masked_mean.zip_map(visible_mean, |m, v| (pi1 * m as f64 + pi2 * v as f64) as f32)
}

/// Re-visible squared loss `mean((h + λ·f̂ − (1+λ)·y)²)`; the visible term is
/// a constant.
pub fn b2u_loss(
    y: &ImageTensor,
    mapped_masked_mean: &ImageTensor,
    visible_mean_detached: &ImageTensor,
    lambda: f64,
) -> Result<f64> {
    let (value, _) = b2u_loss_with_grad(
        &y.to_f64(),
        &mapped_masked_mean.to_f64(),
        &visible_mean_detached.to_f64(),
        lambda,
    )?;
    Ok(value)
}

/// Loss value and the gradient of the mean loss with respect to the mapped
/// masked output.
pub fn b2u_loss_with_grad(y: &[f64], mapped: &[f64], visible: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if mapped.len() != y.len() || visible.len() != y.len() || y.is_empty() {
        return Err(Error::shape(
            format!("{} samples", y.len()),
            format!("{} / {}", mapped.len(), visible.len()),
        ));
    }
    let n = y.len() as f64;
    let mut total = 0.0;
    let grad = (0..y.len())
        .map(|i| {
            let r = mapped[i] + lambda * visible[i] - (1.0 + lambda) * y[i];
            total += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((total / n, grad))
}

/// Pixelwise `∂/∂h` of the per-pixel re-visible loss: `2(h + λf̂ − (1+λ)y)`.
pub fn b2u_loss_grad(
    y: &ImageTensor,
    mapped_masked_mean: &ImageTensor,
    visible_mean_detached: &ImageTensor,
    lambda: f64,
) -> Result<ImageTensor> {
    y.ensure_same_shape(mapped_masked_mean)?;
    y.ensure_same_shape(visible_mean_detached)?;
    let (_, g) = b2u_loss_with_grad(
        &y.to_f64(),
        &mapped_masked_mean.to_f64(),
        &visible_mean_detached.to_f64(),
        lambda,
    )?;
    let n = y.len() as f64;
    let g: Vec<f64> = g.iter().map(|v| v * n).collect();
    ImageTensor::from_f64(y.height(), y.width(), y.channels(), &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(v: f32) -> ImageTensor {
        ImageTensor::filled(1, 1, 1, v)
    }

    fn belief(mean: f32, var: f32) -> BranchBelief {
        BranchBelief::new(px(mean), px(var)).unwrap()
    }

    #[test]
    fn marginal_adds_noise_variance() {
        let b = belief(0.5, 0.01);
        assert_eq!(branch_marginal(&b, 0.0, 0.0).unwrap(), b);
        let m = branch_marginal(&b, 0.05, 0.02).unwrap();
        assert!((m.var().get(0, 0, 0) - 0.0354).abs() < 1e-7);
        let neg = branch_marginal(&belief(-0.1, 0.01), 0.05, 0.02).unwrap();
        assert!((neg.var().get(0, 0, 0) - 0.0104).abs() < 1e-7);
    }

    #[test]
    fn variance_floor_at_construction() {
        let b = BranchBelief::new(px(0.0), px(0.0)).unwrap();
        assert_eq!(b.var().get(0, 0, 0), VAR_FLOOR as f32);
        let b = BranchBelief::from_log_var(px(0.0), &px(-40.0)).unwrap();
        assert_eq!(b.var().get(0, 0, 0), VAR_FLOOR as f32);
        let b = BranchBelief::from_log_var(px(0.0), &px(30.0)).unwrap();
        assert!((b.var().get(0, 0, 0) - 6f32.exp()).abs() < 1e-3);
    }

    #[test]
    fn mixture_closed_forms() {
        let zero = NoiseParams::new(0.0, 0.0);
        for variant in [
            NoiseModelVariant::Original,
            NoiseModelVariant::Enhanced,
            NoiseModelVariant::Shared,
        ] {
            let mix = combine_mixture(&belief(0.2, 0.04), &belief(0.4, 0.01), 3.0, variant, &zero).unwrap();
            assert!((mix.mu_y.get(0, 0, 0) - 0.35).abs() < 1e-7);
            assert!((mix.var_y.get(0, 0, 0) - 0.008125).abs() < 1e-8, "{variant}");
        }
        let p = NoiseParams::new(0.05, 0.02);
        let (mu, var) = mixture_pixel(0.2, 0.0, 0.4, 0.0, 3.0, NoiseModelVariant::Enhanced, &p);
        assert!((mu - 0.35).abs() < 1e-12);
        assert!((var - 0.01775).abs() < 1e-12, "{var}");
        assert!(combine_mixture(&belief(0.2, 0.04), &belief(0.4, 0.01), 0.0, NoiseModelVariant::Enhanced, &p).is_err());
    }

    #[test]
    fn nll_closed_forms() {
        let mix = MixtureBelief {
            mu_y: px(0.8),
            var_y: px(0.04),
        };
        let v = nll(&px(1.0), &mix).unwrap();
        assert!((v - 0.5 * (1.0 + 0.04f64.ln())).abs() < 1e-6);
        assert!((v + 1.10944).abs() < 1e-5);
        let unit = MixtureBelief {
            mu_y: px(0.3),
            var_y: px(1.0),
        };
        assert_eq!(nll(&px(0.3), &unit).unwrap(), 0.0);
    }

    #[test]
    fn stop_grad_gradient_closed_form() {
        // choose μ_m so that μ_y = 0.8 with λ = 3, μ_v = 0.8; Σ_y = 0.04
        let masked = belief(0.8, 0.04 * 16.0 / 2.0);
        let visible = belief(0.8, 0.04 * 16.0 / 18.0);
        let zero = NoiseParams::new(0.0, 0.0);
        let g = nll_grad_mu_m(&px(1.0), &masked, &visible, 3.0, NoiseModelVariant::Enhanced, &zero, true)
            .unwrap();
        assert!((g.get(0, 0, 0) + 1.25).abs() < 1e-5, "{}", g.get(0, 0, 0));
        let at_mean = nll_grad_mu_m(&px(0.8), &masked, &visible, 3.0, NoiseModelVariant::Enhanced, &zero, true)
            .unwrap();
        assert_eq!(at_mean.get(0, 0, 0), 0.0);
    }

    #[test]
    fn optimal_clean_is_convex_combination() {
        let x = optimal_clean(&px(0.3), &px(0.5), 11.0).unwrap();
        assert!((x.get(0, 0, 0) - 5.8 / 12.0).abs() < 1e-6);
        assert_eq!(optimal_clean(&px(0.7), &px(0.7), 3.0).unwrap().get(0, 0, 0), 0.7);
    }

    #[test]
    fn b2u_closed_forms() {
        let v = b2u_loss(&px(0.4), &px(0.3), &px(0.5), 3.0).unwrap();
        assert!((v - 0.04).abs() < 1e-6);
        assert_eq!(b2u_loss(&px(0.4), &px(0.4), &px(0.4), 3.0).unwrap(), 0.0);
        let g = b2u_loss_grad(&px(0.4), &px(0.3), &px(0.5), 3.0).unwrap();
        assert!((g.get(0, 0, 0) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn lambda_schedule_endpoints() {
        let cfg = ReVisibleConfig::default();
        assert_eq!(cfg.lambda_at(0, 30), 3.0);
        assert_eq!(cfg.lambda_at(29, 30), 11.0);
        assert!((cfg.lambda_at(15, 31) - 7.0).abs() < 1e-12);
        assert_eq!(cfg.lambda_at(0, 1), 3.0);
        let bad = ReVisibleConfig {
            lambda_start: 12.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variant_names() {
        for v in [
            NoiseModelVariant::Original,
            NoiseModelVariant::Enhanced,
            NoiseModelVariant::Shared,
        ] {
            assert_eq!(v.to_string().parse::<NoiseModelVariant>().unwrap(), v);
        }
        assert!("M_X".parse::<NoiseModelVariant>().is_err());
    }
}
