//! Noise-parameter estimation losses.
//!
//! Every loss compares the variance estimate of a GAT-transformed image (or
//! sub-block, or channel) against unit variance. All of them are
//! differentiable in `(alpha, sigma)` with the estimator's truncation set held
//! fixed, which is what lets an estimator network be trained on them.

use crate::error::{Error, Result};
use crate::noise::{gat_with_param_grad, NoiseParams};
use crate::tensor::ImageTensor;
use crate::variance::{estimate_plane, PatchConfig};

/// Which block families enter the single-channel loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grain {
    /// The whole image.
    pub coarse: bool,
    /// Four three-quarter-size corner blocks.
    pub quarter: bool,
    /// Nine half-size blocks on a 3×3 anchor grid.
    pub half: bool,
}

impl Grain {
    pub const CG: Grain = Grain {
        coarse: true,
        quarter: false,
        half: false,
    };
    pub const FG1: Grain = Grain {
        coarse: false,
        quarter: true,
        half: false,
    };
    pub const CG_FG1: Grain = Grain {
        coarse: true,
        quarter: true,
        half: false,
    };
    pub const CG_FG2: Grain = Grain {
        coarse: true,
        quarter: false,
        half: true,
    };
    pub const CG_FG1_FG2: Grain = Grain {
        coarse: true,
        quarter: true,
        half: true,
    };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.coarse {
            parts.push("CG");
        }
        if self.quarter {
            parts.push("FG1");
        }
        if self.half {
            parts.push("FG2");
        }
        parts.join("+")
    }

    pub fn parse(s: &str) -> Result<Grain> {
        let mut g = Grain {
            coarse: false,
            quarter: false,
            half: false,
        };
        for part in s.split('+') {
            match part.trim().to_ascii_uppercase().as_str() {
                "CG" => g.coarse = true,
                "FG1" => g.quarter = true,
                "FG2" => g.half = true,
                other => return Err(Error::InvalidArgument(format!("unknown grain {other:?}"))),
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorLossConfig {
    pub patch: PatchConfig,
    pub grain: Grain,
    /// Use the literal `Σ_{j≠k}` multiplicity for the cross-channel loss
    /// instead of one unit term per channel and one term per unordered pair.
    pub literal_cross_channel: bool,
}

impl Default for EstimatorLossConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            grain: Grain::CG_FG1,
            literal_cross_channel: false,
        }
    }
}

/// Loss value with its partial derivatives in `alpha` and `sigma`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_alpha: f64,
    pub d_sigma: f64,
}

impl LossValue {
    fn add_scaled(&mut self, other: &LossValue, w: f64) {
        self.value += w * other.value;
        self.d_alpha += w * other.d_alpha;
        self.d_sigma += w * other.d_sigma;
    }
}

#[derive(Clone, Debug)]
pub struct SubBlockSet {
    pub blocks: [ImageTensor; 4],
    /// `(row, col)` of each block's top-left corner.
    pub anchors: [(usize, usize); 4],
    pub block_height: usize,
    pub block_width: usize,
}

/// Block height, block width and the four corner anchors.
type CornerGeometry = (usize, usize, [(usize, usize); 4]);

fn three_quarter_geometry(height: usize, width: usize) -> Result<CornerGeometry> {
    if height < 4 || width < 4 {
        return Err(Error::TooSmall {
            height,
            width,
            required: "4x4 for corner blocks".into(),
        });
    }
    let h = (3 * height).div_ceil(4);
    let w = (3 * width).div_ceil(4);
    Ok((
        h,
        w,
        [(0, 0), (0, width - w), (height - h, 0), (height - h, width - w)],
    ))
}

fn half_geometry(height: usize, width: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let h = height.div_ceil(2);
    let w = width.div_ceil(2);
    let rows = [0, (height - h) / 2, height - h];
    let cols = [0, (width - w) / 2, width - w];
    let anchors = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    (h, w, anchors)
}

/// Four `⌈3H/4⌉ × ⌈3W/4⌉` blocks anchored at the image corners.
pub fn crop_corner_blocks(img: &ImageTensor) -> Result<SubBlockSet> {
    let (h, w, anchors) = three_quarter_geometry(img.height(), img.width())?;
    let crop = |i: usize| img.crop(anchors[i].0, anchors[i].1, h, w);
    Ok(SubBlockSet {
        blocks: [crop(0)?, crop(1)?, crop(2)?, crop(3)?],
        anchors,
        block_height: h,
        block_width: w,
    })
}

/// Variance estimate of the GAT-transformed plane, with derivatives in
/// `(alpha, sigma)` when `want_grad`.
pub fn stabilized_variance(
    plane: &[f64],
    height: usize,
    width: usize,
    alpha: f64,
    sigma: f64,
    cfg: &PatchConfig,
    want_grad: bool,
) -> Result<LossValue> {
    if !(alpha > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need alpha > 0 and sigma >= 0, got ({alpha}, {sigma})"
        )));
    }
    let n = plane.len();
    let mut g = Vec::with_capacity(n);
    let mut dga = Vec::with_capacity(if want_grad { n } else { 0 });
    let mut dgs = Vec::with_capacity(if want_grad { n } else { 0 });
    for &y in plane {
        let (v, da, ds) = gat_with_param_grad(y, alpha, sigma);
        g.push(v);
        if want_grad {
            dga.push(da);
            dgs.push(ds);
        }
    }
    let est = estimate_plane(&g, height, width, cfg, want_grad)?;
    let mut out = LossValue {
        value: est.value,
        ..Default::default()
    };
    if let Some(grad) = est.grad {
        out.d_alpha = grad.iter().zip(&dga).map(|(a, b)| a * b).sum();
        out.d_sigma = grad.iter().zip(&dgs).map(|(a, b)| a * b).sum();
    }
    Ok(out)
}

fn crop_plane(plane: &[f64], width: usize, r0: usize, c0: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for r in r0..r0 + h {
        out.extend_from_slice(&plane[r * width + c0..r * width + c0 + w]);
    }
    out
}

/// `(η − 1)²` and its derivatives.
fn unit_term(eta: &LossValue) -> LossValue {
    let e = eta.value - 1.0;
    LossValue {
        value: e * e,
        d_alpha: 2.0 * e * eta.d_alpha,
        d_sigma: 2.0 * e * eta.d_sigma,
    }
}

fn single_channel_loss(
    plane: &[f64],
    height: usize,
    width: usize,
    p: &NoiseParams,
    cfg: &EstimatorLossConfig,
    want_grad: bool,
) -> Result<LossValue> {
    let (alpha, sigma) = (p.alpha, p.sigma());
    let mut total = LossValue::default();
    let mut term = |sub: &[f64], h: usize, w: usize| -> Result<()> {
        let eta = stabilized_variance(sub, h, w, alpha, sigma, &cfg.patch, want_grad)?;
        total.add_scaled(&unit_term(&eta), 1.0);
        Ok(())
    };
    if cfg.grain.quarter {
        let (h, w, anchors) = three_quarter_geometry(height, width)?;
        for (r, c) in anchors {
            term(&crop_plane(plane, width, r, c, h, w), h, w)?;
        }
    }
    if cfg.grain.half {
        let (h, w, anchors) = half_geometry(height, width);
        for (r, c) in anchors {
            term(&crop_plane(plane, width, r, c, h, w), h, w)?;
        }
    }
    if cfg.grain.coarse {
        term(plane, height, width)?;
    }
    Ok(total)
}

fn require_single(y: &ImageTensor) -> Result<()> {
    if y.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a single-channel image, got {} channels",
            y.channels()
        )));
    }
    Ok(())
}

/// `‖η(G(y)) − 1‖²`; for multi-channel input the per-channel terms are averaged.
pub fn gaussian_loss(y: &ImageTensor, p: &NoiseParams) -> Result<f64> {
    Ok(gaussian_loss_with_grad(y, p, &PatchConfig::default(), false)?.value)
}

pub fn gaussian_loss_with_grad(
    y: &ImageTensor,
    p: &NoiseParams,
    patch: &PatchConfig,
    want_grad: bool,
) -> Result<LossValue> {
    let cfg = EstimatorLossConfig {
        patch: *patch,
        grain: Grain::CG,
        literal_cross_channel: false,
    };
    let c = y.channels();
    let mut total = LossValue::default();
    for ch in 0..c {
        let plane = y.channel(ch).to_f64();
        let l = single_channel_loss(&plane, y.height(), y.width(), p, &cfg, want_grad)?;
        total.add_scaled(&l, 1.0 / c as f64);
    }
    Ok(total)
}

/// Four corner blocks plus the whole image, each pulled toward unit variance.
pub fn cramer_loss_single(y: &ImageTensor, p: &NoiseParams) -> Result<f64> {
    Ok(cramer_loss_single_with_grad(y, p, &EstimatorLossConfig::default(), false)?.value)
}

/// Single-channel loss over the block families selected by `cfg.grain`.
pub fn cramer_loss_single_with_grad(
    y: &ImageTensor,
    p: &NoiseParams,
    cfg: &EstimatorLossConfig,
    want_grad: bool,
) -> Result<LossValue> {
    require_single(y)?;
    single_channel_loss(&y.to_f64(), y.height(), y.width(), p, cfg, want_grad)
}

/// Cross-channel loss from per-channel estimates: unit-variance terms plus
/// pairwise agreement terms.
pub fn cross_channel_loss(etas: &[f64], literal: bool) -> f64 {
    cross_channel_terms(
        &etas
            .iter()
            .map(|&value| LossValue {
                value,
                ..Default::default()
            })
            .collect::<Vec<_>>(),
        literal,
    )
    .value
}

fn cross_channel_terms(etas: &[LossValue], literal: bool) -> LossValue {
    let c = etas.len();
    // literal Σ_{j≠k}: each unit term c−1 times, each unordered pair twice
    let (unit_w, pair_w) = if literal {
        ((c - 1) as f64, 2.0)
    } else {
        (1.0, 1.0)
    };
    let mut total = LossValue::default();
    for e in etas {
        total.add_scaled(&unit_term(e), unit_w);
    }
    for j in 0..c {
        for k in j + 1..c {
            let d = etas[j].value - etas[k].value;
            total.add_scaled(
                &LossValue {
                    value: d * d,
                    d_alpha: 2.0 * d * (etas[j].d_alpha - etas[k].d_alpha),
                    d_sigma: 2.0 * d * (etas[j].d_sigma - etas[k].d_sigma),
                },
                pair_w,
            );
        }
    }
    total
}

pub fn cramer_loss_multi(y: &ImageTensor, p: &NoiseParams) -> Result<f64> {
    Ok(cramer_loss_multi_with_grad(y, p, &EstimatorLossConfig::default(), false)?.value)
}

pub fn cramer_loss_multi_with_grad(
    y: &ImageTensor,
    p: &NoiseParams,
    cfg: &EstimatorLossConfig,
    want_grad: bool,
) -> Result<LossValue> {
    if y.channels() < 2 {
        return Err(Error::InvalidArgument(
            "cross-channel loss needs at least two channels".into(),
        ));
    }
    let etas = (0..y.channels())
        .map(|ch| {
            let plane = y.channel(ch).to_f64();
            stabilized_variance(
                &plane,
                y.height(),
                y.width(),
                p.alpha,
                p.sigma(),
                &cfg.patch,
                want_grad,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cross_channel_terms(&etas, cfg.literal_cross_channel))
}

/// Cramer loss for any channel count: block form for one channel,
/// cross-channel form otherwise.
pub fn cramer_loss_with_grad(
    y: &ImageTensor,
    p: &NoiseParams,
    cfg: &EstimatorLossConfig,
    want_grad: bool,
) -> Result<LossValue> {
    if y.channels() == 1 {
        cramer_loss_single_with_grad(y, p, cfg, want_grad)
    } else {
        cramer_loss_multi_with_grad(y, p, cfg, want_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::corrupt_exact;
    use crate::rng::SeededRng;

    #[test]
    fn corner_block_geometry() {
        let set = crop_corner_blocks(&ImageTensor::zeros(64, 64, 1)).unwrap();
        assert!(set.blocks.iter().all(|b| b.shape() == (48, 48, 1)));
        let set = crop_corner_blocks(&ImageTensor::zeros(100, 60, 1)).unwrap();
        assert!(set.blocks.iter().all(|b| b.shape() == (75, 45, 1)));
        assert_eq!(set.anchors, [(0, 0), (0, 15), (25, 0), (25, 15)]);
        assert!(crop_corner_blocks(&ImageTensor::zeros(3, 10, 1)).is_err());
    }

    #[test]
    fn corner_blocks_cover_every_pixel() {
        for (h, w) in [(4, 4), (5, 7), (13, 9), (64, 48)] {
            let set = crop_corner_blocks(&ImageTensor::zeros(h, w, 1)).unwrap();
            for r in 0..h {
                for c in 0..w {
                    assert!(set.anchors.iter().any(|&(ar, ac)| {
                        r >= ar && r < ar + set.block_height && c >= ac && c < ac + set.block_width
                    }));
                }
            }
        }
    }

    #[test]
    fn corner_block_contents() {
        let img = ImageTensor::from_fn(8, 8, 1, |r, c, _| (r * 8 + c) as f32);
        let set = crop_corner_blocks(&img).unwrap();
        assert_eq!(set.blocks[3].get(0, 0, 0), img.get(2, 2, 0));
        assert_eq!(set.blocks[1].get(5, 5, 0), img.get(5, 7, 0));
    }

    #[test]
    fn half_blocks_stay_inside() {
        let (h, w, anchors) = half_geometry(33, 20);
        assert_eq!((h, w, anchors.len()), (17, 10, 9));
        assert!(anchors.iter().all(|&(r, c)| r + h <= 33 && c + w <= 20));
    }

    #[test]
    fn cross_channel_closed_form() {
        assert_eq!(cross_channel_loss(&[1.0, 1.0, 1.0], false), 0.0);
        let v = cross_channel_loss(&[1.0, 1.0, 1.1], false);
        assert!((v - 0.03).abs() < 1e-12, "{v}");
        let lit = cross_channel_loss(&[1.0, 1.0, 1.1], true);
        assert!((lit - (2.0 * 0.01 + 2.0 * 0.02)).abs() < 1e-12, "{lit}");
        let perm = cross_channel_loss(&[1.1, 1.0, 1.0], false);
        assert!((v - perm).abs() < 1e-15);
    }

    #[test]
    fn grain_labels_round_trip() {
        for g in [Grain::CG, Grain::FG1, Grain::CG_FG1, Grain::CG_FG2, Grain::CG_FG1_FG2] {
            assert_eq!(Grain::parse(&g.label()).unwrap(), g);
        }
        assert!(Grain::parse("FG3").is_err());
    }

    #[test]
    fn multi_requires_channels() {
        let y = ImageTensor::zeros(32, 32, 1);
        assert!(cramer_loss_multi(&y, &NoiseParams::new(0.1, 0.0)).is_err());
        let y3 = ImageTensor::zeros(32, 32, 3);
        assert!(cramer_loss_single(&y3, &NoiseParams::new(0.1, 0.0)).is_err());
    }

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, 1, |r, c, _| 0.1 + 0.8 * (r + c) as f32 / (h + w - 2) as f32)
    }

    #[test]
    fn param_gradients_match_differences() {
        let x = ramp(48, 48);
        let y = corrupt_exact(&x, &NoiseParams::new(0.05, 0.02), &mut SeededRng::new(2)).unwrap();
        let cfg = EstimatorLossConfig::default();
        let p = NoiseParams::new(0.04, 0.03);
        let l = cramer_loss_single_with_grad(&y, &p, &cfg, true).unwrap();
        let h = 1e-6;
        let f = |a: f64, s: f64| {
            cramer_loss_single_with_grad(&y, &NoiseParams::new(a, s), &cfg, false)
                .unwrap()
                .value
        };
        let fa = (f(0.04 + h, 0.03) - f(0.04 - h, 0.03)) / (2.0 * h);
        let fs = (f(0.04, 0.03 + h) - f(0.04, 0.03 - h)) / (2.0 * h);
        assert!((l.d_alpha - fa).abs() / fa.abs() < 1e-3, "{} vs {fa}", l.d_alpha);
        assert!((l.d_sigma - fs).abs() / fs.abs() < 1e-3, "{} vs {fs}", l.d_sigma);
    }
}
