//! One joint optimization step over a batch of noisy patches.

use pgden_core::cramer::{cramer_loss_with_grad, EstimatorLossConfig, LossValue};
use pgden_core::masking::{build_masked_volume_with, map_blindspots, MaskFill};
use pgden_core::revisible::{b2u_loss_with_grad, revisible_nll_grad, var_from_log_var, BranchSlices};
use pgden_core::{ImageTensor, NoiseParams, SeededRng};

use crate::adam::Adam;
use crate::config::{Objective, Scheme, TrainConfig};
use crate::denoiser::DenoiserNet;
use crate::error::{TrainError, TrainResult};
use crate::estimator::EstimatorNet;
use crate::layers::{Feature, Param};

/// The denoiser, the estimator and their optimizers.
#[derive(Clone, Debug)]
pub struct Nets {
    pub denoiser: DenoiserNet,
    pub estimator: EstimatorNet,
    pub denoiser_opt: Adam,
    pub estimator_opt: Adam,
}

impl Nets {
    pub fn new(channels: usize, cfg: &TrainConfig, rng: &SeededRng) -> Self {
        Self {
            denoiser: DenoiserNet::new(channels, &mut rng.fork(0)),
            estimator: EstimatorNet::new(channels, cfg.estimator_init, &mut rng.fork(1)),
            denoiser_opt: Adam::new(cfg.lr, cfg.weight_decay),
            estimator_opt: Adam::new(cfg.estimator_lr, cfg.weight_decay),
        }
    }

    /// Noise parameters the scheme feeds to the likelihood for input `y`.
    pub fn noise_params(&self, y: &ImageTensor, cfg: &TrainConfig) -> NoiseParams {
        match cfg.scheme {
            Scheme::Fixed => cfg.noise,
            Scheme::Pretrained | Scheme::Joint => self.estimator.forward(y),
        }
    }
}

/// Batch-mean loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub nll: f64,
    pub est_loss: f64,
    pub total: f64,
    pub params: NoiseParams,
    /// Largest magnitude of the loss gradient reaching the visible-branch
    /// heads; exactly zero when the visible branch is forward-only.
    pub visible_grad_max: f64,
}

fn estimator_loss_config(cfg: &TrainConfig) -> EstimatorLossConfig {
    EstimatorLossConfig {
        grain: cfg.grain,
        ..Default::default()
    }
}

/// Estimator loss at `(α, σ1)` and `(α, σ2)`, averaged. Returns the value and
/// `d/d(α, σ1, σ2)`.
pub fn estimator_loss(y: &ImageTensor, p: &NoiseParams, cfg: &TrainConfig, want_grad: bool) -> TrainResult<(f64, [f64; 3])> {
    let lc = estimator_loss_config(cfg);
    let l1 = cramer_loss_with_grad(y, &NoiseParams::new(p.alpha, p.sigma1), &lc, want_grad)?;
    let l2 = if p.sigma2 == p.sigma1 {
        l1
    } else {
        cramer_loss_with_grad(y, &NoiseParams::new(p.alpha, p.sigma2), &lc, want_grad)?
    };
    let avg = |a: &LossValue, b: &LossValue| 0.5 * (a.value + b.value);
    Ok((
        avg(&l1, &l2),
        [0.5 * (l1.d_alpha + l2.d_alpha), 0.5 * l1.d_sigma, 0.5 * l2.d_sigma],
    ))
}

struct SampleLosses {
    nll: f64,
    est: f64,
    params: NoiseParams,
    visible_grad_max: f64,
}

fn head_split(out: &Feature, c: usize) -> (ImageTensor, ImageTensor) {
    (out.to_image(0, c), out.to_image(c, c))
}

/// Per-pixel variance and `d var / d log_var` from raw log-variance outputs.
fn variances(log_var: &ImageTensor) -> (Vec<f64>, Vec<f64>) {
    log_var.as_slice().iter().map(|&lv| var_from_log_var(lv)).unzip()
}

/// `[d_mean | d_log_var]` as a `2C`-channel channel-last image.
fn head_gradient(h: usize, w: usize, c: usize, d_mean: &[f64], d_log_var: &[f64], scale: f64) -> ImageTensor {
    let mut data = vec![0f32; h * w * 2 * c];
    for i in 0..h * w {
        for ch in 0..c {
            data[i * 2 * c + ch] = (scale * d_mean[i * c + ch]) as f32;
            data[i * 2 * c + c + ch] = (scale * d_log_var[i * c + ch]) as f32;
        }
    }
    ImageTensor::new(h, w, 2 * c, data).expect("consistent shape")
}

fn accumulate_sample(
    y: &ImageTensor,
    nets: &mut Nets,
    cfg: &TrainConfig,
    lambda: f64,
    scale: f64,
    step: u64,
) -> TrainResult<SampleLosses> {
    let c = y.channels();
    let (h, w) = (y.height(), y.width());
    let joint = cfg.scheme == Scheme::Joint;

    let (params, est_cache) = match cfg.scheme {
        Scheme::Fixed => (cfg.noise, None),
        Scheme::Pretrained => (nets.estimator.forward(y), None),
        Scheme::Joint => {
            let (p, cache) = nets.estimator.forward_cached(y);
            (p, Some(cache))
        }
    };

    let fill = match cfg.mask_fill {
        MaskFill::RandomNeighbor { .. } => MaskFill::RandomNeighbor { seed: step },
        other => other,
    };
    let vol = build_masked_volume_with(y, cfg.cell_size, fill)?;
    let mut caches = Vec::with_capacity(vol.copies().len());
    let mut means = Vec::with_capacity(vol.copies().len());
    let mut log_vars = Vec::with_capacity(vol.copies().len());
    for copy in vol.copies() {
        let (out, cache) = nets.denoiser.forward_cached(Feature::from_image(copy));
        let (m, lv) = head_split(&out, c);
        means.push(m);
        log_vars.push(lv);
        caches.push(cache);
    }
    let mu_m = map_blindspots(&means, &vol)?.to_f64();
    let log_var_m = map_blindspots(&log_vars, &vol)?;
    drop(means);
    drop(log_vars);

    let track_visible = !cfg.revisible.iid && cfg.objective == Objective::AdaptiveReVisible;
    let (vis_out, vis_cache) = if track_visible {
        let (o, cache) = nets.denoiser.forward_cached(Feature::from_image(y));
        (o, Some(cache))
    } else {
        (nets.denoiser.forward(Feature::from_image(y)), None)
    };
    let (mu_v_img, log_var_v) = head_split(&vis_out, c);
    let mu_v = mu_v_img.to_f64();
    let y64 = y.to_f64();

    let (nll, d_mu_m, d_log_var_m, nll_param_grad, visible) = match cfg.objective {
        Objective::AdaptiveReVisible => {
            let (var_m, dv_m) = variances(&log_var_m);
            let (var_v, dv_v) = variances(&log_var_v);
            let g = revisible_nll_grad(
                &y64,
                BranchSlices { mean: &mu_m, var: &var_m },
                BranchSlices { mean: &mu_v, var: &var_v },
                &params,
                &cfg.revisible.settings(lambda),
            )?;
            let d_lv_m: Vec<f64> = g.d_var_m.iter().zip(&dv_m).map(|(a, b)| a * b).collect();
            let d_lv_v: Vec<f64> = g.d_var_v.iter().zip(&dv_v).map(|(a, b)| a * b).collect();
            (
                g.value,
                g.d_mu_m,
                d_lv_m,
                [g.d_alpha, g.d_sigma1, g.d_sigma2],
                (g.d_mu_v, d_lv_v),
            )
        }
        Objective::ReVisibleSquared => {
            let (value, grad) = b2u_loss_with_grad(&y64, &mu_m, &mu_v, lambda)?;
            let n = grad.len();
            (value, grad, vec![0.0; n], [0.0; 3], (vec![0.0; n], vec![0.0; n]))
        }
    };
    if !nll.is_finite() {
        return Err(TrainError::NonFinite { term: "nll", step });
    }

    let d_heads = head_gradient(h, w, c, &d_mu_m, &d_log_var_m, scale);
    for (cache, d) in caches.iter().zip(vol.scatter_blindspots(&d_heads)?) {
        nets.denoiser.backward(cache, &Feature::from_image(&d));
    }

    let visible_grad_max = visible
        .0
        .iter()
        .chain(&visible.1)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(cache) = vis_cache {
        let d = head_gradient(h, w, c, &visible.0, &visible.1, scale);
        nets.denoiser.backward(&cache, &Feature::from_image(&d));
    }

    let (est, est_grad) = if params.alpha > 0.0 {
        estimator_loss(y, &params, cfg, joint)?
    } else {
        (0.0, [0.0; 3])
    };
    if !est.is_finite() {
        return Err(TrainError::NonFinite { term: "est_loss", step });
    }
    if let Some(cache) = est_cache {
        let w = cfg.revisible.estimator_loss_weight;
        let from_nll = if cfg.revisible.noise_grad_from_nll { 1.0 } else { 0.0 };
        let d = [0, 1, 2].map(|i| scale * (w * est_grad[i] + from_nll * nll_param_grad[i]));
        nets.estimator.backward(&cache, d);
    }

    Ok(SampleLosses {
        nll,
        est,
        params,
        visible_grad_max,
    })
}

/// Accumulates batch-mean gradients into both networks without updating them.
pub fn compute_gradients(
    batch: &[ImageTensor],
    nets: &mut Nets,
    cfg: &TrainConfig,
    lambda: f64,
) -> TrainResult<StepLosses> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    for y in batch {
        if y.height() != y.width() {
            return Err(TrainError::Config(format!(
                "training patches must be square, got {}x{}",
                y.height(),
                y.width()
            )));
        }
    }
    nets.denoiser.zero_grad();
    nets.estimator.zero_grad();
    let step = nets.denoiser_opt.steps();
    let scale = 1.0 / batch.len() as f64;
    let mut out = StepLosses::default();
    let (mut a, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for y in batch {
        let l = accumulate_sample(y, nets, cfg, lambda, scale, step)?;
        out.nll += scale * l.nll;
        out.est_loss += scale * l.est;
        a += scale * l.params.alpha;
        s1 += scale * l.params.sigma1;
        s2 += scale * l.params.sigma2;
        out.visible_grad_max = out.visible_grad_max.max(l.visible_grad_max);
    }
    out.params = NoiseParams::two_branch(a, s1, s2);
    out.total = out.nll + cfg.revisible.estimator_loss_weight * out.est_loss;
    if !out.total.is_finite() {
        return Err(TrainError::NonFinite { term: "total", step });
    }
    Ok(out)
}

fn all_finite(params: &[&mut Param]) -> bool {
    params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
}

/// Computes gradients for the batch and applies one optimizer step. The
/// estimator is only updated under the joint scheme.
pub fn train_step(batch: &[ImageTensor], nets: &mut Nets, cfg: &TrainConfig, lambda: f64) -> TrainResult<StepLosses> {
    let losses = compute_gradients(batch, nets, cfg, lambda)?;
    let step = nets.denoiser_opt.steps();
    let dp = nets.denoiser.params_mut();
    if !all_finite(&dp) {
        return Err(TrainError::NonFinite { term: "denoiser gradient", step });
    }
    nets.denoiser_opt.update(dp);
    if cfg.scheme == Scheme::Joint {
        let ep = nets.estimator.params_mut();
        if !all_finite(&ep) {
            return Err(TrainError::NonFinite { term: "estimator gradient", step });
        }
        nets.estimator_opt.update(ep);
    }
    Ok(losses)
}
