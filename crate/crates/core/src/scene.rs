//! Procedural clean images: smooth backgrounds, shaded shapes with soft
//! edges, and oriented gratings. Values lie in `[0.02, 0.98]`.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::ImageTensor;

const LO: f32 = 0.02;
const HI: f32 = 0.98;

/// Diagonal ramp from `lo` at the top-left corner to `hi` at the bottom-right.
pub fn ramp(height: usize, width: usize, lo: f32, hi: f32) -> Result<ImageTensor> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidShape(format!("ramp needs at least 2×2, got {height}×{width}")));
    }
    let span = (height + width - 2) as f32;
    Ok(ImageTensor::from_fn(height, width, 1, |r, c, _| {
        lo + (hi - lo) * (r + c) as f32 / span
    }))
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32, cos: f32, sin: f32 },
    Rect { cy: f32, cx: f32, hy: f32, hx: f32, cos: f32, sin: f32 },
}

impl Shape {
    /// Signed distance-like coverage in pixels: positive inside.
    fn inside(&self, r: f32, c: f32) -> f32 {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (r - cy, c - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                let q = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                (1.0 - q) * rx.min(ry)
            }
            Shape::Rect { cy, cx, hy, hx, cos, sin } => {
                let (dy, dx) = (r - cy, c - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (hx - u.abs()).min(hy - v.abs())
            }
        }
    }
}

struct Layer {
    shape: Shape,
    base: Vec<f32>,
    slope: (f32, f32),
    grating: Option<(f32, f32, f32, f32)>,
}

/// A random piecewise-smooth scene with `channels` channels. Colour channels
/// share geometry and differ in shading.
pub fn random_scene(height: usize, width: usize, channels: usize, rng: &mut SeededRng) -> Result<ImageTensor> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidShape(format!("empty scene {height}×{width}×{channels}")));
    }
    let (hf, wf) = (height as f32, width as f32);
    let size = hf.min(wf);
    let mut u = || rng.uniform() as f32;

    let bg: Vec<f32> = (0..channels).map(|_| 0.1 + 0.8 * u()).collect();
    let bg_slope = ((u() - 0.5) * 0.6 / hf, (u() - 0.5) * 0.6 / wf);

    let n_layers = 6 + (u() * 8.0) as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (cy, cx) = (u() * hf, u() * wf);
        let angle = u() * std::f32::consts::PI;
        let (sin, cos) = angle.sin_cos();
        let a = size * (0.05 + 0.25 * u());
        let b = a * (0.3 + 0.7 * u());
        let shape = if u() < 0.5 {
            Shape::Ellipse { cy, cx, ry: b, rx: a, cos, sin }
        } else {
            Shape::Rect { cy, cx, hy: b, hx: a, cos, sin }
        };
        let level = u();
        let base = (0..channels)
            .map(|_| (0.7 * level + 0.3 * u()).clamp(0.0, 1.0))
            .collect();
        let slope = ((u() - 0.5) * 0.4 / a, (u() - 0.5) * 0.4 / a);
        let grating = if u() < 0.3 {
            let period = 3.0 + 9.0 * u();
            let theta = u() * std::f32::consts::PI;
            Some((0.05 + 0.15 * u(), std::f32::consts::TAU / period, theta.cos(), theta.sin()))
        } else {
            None
        };
        layers.push(Layer { shape, base, slope, grating });
    }

    let mut data = Vec::with_capacity(height * width * channels);
    let mut px = vec![0f32; channels];
    for r in 0..height {
        for c in 0..width {
            let (rf, cf) = (r as f32 + 0.5, c as f32 + 0.5);
            for (ch, v) in px.iter_mut().enumerate() {
                *v = bg[ch] + bg_slope.0 * (rf - hf / 2.0) + bg_slope.1 * (cf - wf / 2.0);
            }
            for layer in &layers {
                // one-pixel soft edge
                let cover = (layer.shape.inside(rf, cf) + 0.5).clamp(0.0, 1.0);
                if cover == 0.0 {
                    continue;
                }
                let (cy, cx) = match layer.shape {
                    Shape::Ellipse { cy, cx, .. } | Shape::Rect { cy, cx, .. } => (cy, cx),
                };
                let mut shade = layer.slope.0 * (rf - cy) + layer.slope.1 * (cf - cx);
                if let Some((amp, freq, gc, gs)) = layer.grating {
                    shade += amp * (freq * (rf * gs + cf * gc)).sin();
                }
                for (ch, v) in px.iter_mut().enumerate() {
                    let target = layer.base[ch] + shade;
                    *v = (1.0 - cover) * *v + cover * target;
                }
            }
            data.extend(px.iter().map(|v| v.clamp(LO, HI)));
        }
    }
    ImageTensor::new(height, width, channels, data)
}

/// `count` scenes with side lengths drawn from `[min_side, max_side]`, each
/// from its own forked stream.
pub fn scene_set(
    count: usize,
    min_side: usize,
    max_side: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if min_side == 0 || min_side > max_side {
        return Err(Error::InvalidArgument(format!(
            "invalid side range [{min_side}, {max_side}]"
        )));
    }
    let root = SeededRng::new(seed);
    (0..count)
        .map(|i| {
            let mut rng = root.fork(i as u64);
            let span = max_side - min_side + 1;
            let h = min_side + rng.below(span);
            let w = min_side + rng.below(span);
            random_scene(h, w, channels, &mut rng)
        })
        .collect()
}
