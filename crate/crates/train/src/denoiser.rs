//! Two-level U-Net with a mean head and a log-variance head.

use pgden_core::revisible::{LOG_VAR_MAX, LOG_VAR_MIN};
use pgden_core::{ImageTensor, Result, SeededRng};

use crate::layers::{
    leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, upsample2, upsample2_backward, Conv2d,
    Feature, Param,
};

pub const FEATURES: [usize; 3] = [16, 32, 64];
/// Spatial sizes must be multiples of this.
pub const DOWNSAMPLING: usize = 4;
const INITIAL_LOG_VAR: f32 = -6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    channels: usize,
    enc1: [Conv2d; 2],
    enc2: [Conv2d; 2],
    mid: [Conv2d; 2],
    dec2: [Conv2d; 2],
    dec1: [Conv2d; 2],
    head: Conv2d,
}

/// Mean and log-variance heads for one input, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub mean: ImageTensor,
    pub log_var: ImageTensor,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DenoiserCache {
    x: Feature,
    e1: [Feature; 2],
    p1: Feature,
    p1_idx: Vec<u32>,
    e2: [Feature; 2],
    p2: Feature,
    p2_idx: Vec<u32>,
    m: [Feature; 2],
    cat2: Feature,
    d2: [Feature; 2],
    cat1: Feature,
    d1: [Feature; 2],
    /// im2col buffers per convolution, in [`DenoiserNet::NAMES`] order.
    cols: Vec<Option<Vec<f32>>>,
}

impl DenoiserNet {
    pub fn new(channels: usize, rng: &mut SeededRng) -> Self {
        let [f1, f2, f3] = FEATURES;
        let mut conv = |cin, cout| Conv2d::new(cin, cout, 3, 1, 1.0, rng);
        let enc1 = [conv(channels, f1), conv(f1, f1)];
        let enc2 = [conv(f1, f2), conv(f2, f2)];
        let mid = [conv(f2, f3), conv(f3, f3)];
        let dec2 = [conv(f3 + f2, f2), conv(f2, f2)];
        let dec1 = [conv(f2 + f1, f1), conv(f1, f1)];
        let mut head = Conv2d::new(f1, 2 * channels, 1, 1, 0.1, rng);
        for b in &mut head.bias.value[channels..] {
            *b = INITIAL_LOG_VAR;
        }
        Self {
            channels,
            enc1,
            enc2,
            mid,
            dec2,
            dec1,
            head,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn convs(&self) -> [&Conv2d; 11] {
        [
            &self.enc1[0], &self.enc1[1], &self.enc2[0], &self.enc2[1], &self.mid[0], &self.mid[1],
            &self.dec2[0], &self.dec2[1], &self.dec1[0], &self.dec1[1], &self.head,
        ]
    }

    fn convs_mut(&mut self) -> [&mut Conv2d; 11] {
        let [e1a, e1b] = &mut self.enc1;
        let [e2a, e2b] = &mut self.enc2;
        let [ma, mb] = &mut self.mid;
        let [d2a, d2b] = &mut self.dec2;
        let [d1a, d1b] = &mut self.dec1;
        [e1a, e1b, e2a, e2b, ma, mb, d2a, d2b, d1a, d1b, &mut self.head]
    }

    const NAMES: [&'static str; 11] = [
        "enc1a", "enc1b", "enc2a", "enc2b", "mida", "midb", "dec2a", "dec2b", "dec1a", "dec1b", "head",
    ];

    /// Parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        Self::NAMES
            .iter()
            .zip(self.convs())
            .flat_map(|(n, c)| {
                let [w, b] = c.params();
                [(format!("{n}.weight"), w), (format!("{n}.bias"), b)]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs_mut().into_iter().flat_map(|c| c.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn block(convs: &[Conv2d; 2], x: &Feature, cols: &mut Vec<Option<Vec<f32>>>) -> [Feature; 2] {
        let (a, ca) = convs[0].forward_with_col(x);
        let a = leaky_relu(a);
        let (b, cb) = convs[1].forward_with_col(&a);
        cols.push(ca);
        cols.push(cb);
        [a, leaky_relu(b)]
    }

    /// Forward pass on a `C × H × W` map with `H`, `W` multiples of
    /// [`DOWNSAMPLING`]; returns the raw `2C`-channel head output.
    pub fn forward_cached(&self, x: Feature) -> (Feature, DenoiserCache) {
        debug_assert!(x.h.is_multiple_of(DOWNSAMPLING) && x.w.is_multiple_of(DOWNSAMPLING));
        let mut cols = Vec::with_capacity(11);
        let e1 = Self::block(&self.enc1, &x, &mut cols);
        let (p1, p1_idx) = max_pool2(&e1[1]);
        let e2 = Self::block(&self.enc2, &p1, &mut cols);
        let (p2, p2_idx) = max_pool2(&e2[1]);
        let m = Self::block(&self.mid, &p2, &mut cols);
        let cat2 = Feature::concat(&upsample2(&m[1]), &e2[1]);
        let d2 = Self::block(&self.dec2, &cat2, &mut cols);
        let cat1 = Feature::concat(&upsample2(&d2[1]), &e1[1]);
        let d1 = Self::block(&self.dec1, &cat1, &mut cols);
        let out = self.head.forward(&d1[1]);
        cols.push(None);
        let cache = DenoiserCache {
            x,
            e1,
            p1,
            p1_idx,
            e2,
            p2,
            p2_idx,
            m,
            cat2,
            d2,
            cat1,
            d1,
            cols,
        };
        (out, cache)
    }

    /// Uncached forward pass; no activations are retained.
    pub fn forward(&self, x: Feature) -> Feature {
        let block = |convs: &[Conv2d; 2], x: &Feature| {
            let a = leaky_relu(convs[0].forward(x));
            leaky_relu(convs[1].forward(&a))
        };
        let e1 = block(&self.enc1, &x);
        let e2 = block(&self.enc2, &max_pool2(&e1).0);
        let m = block(&self.mid, &max_pool2(&e2).0);
        let d2 = block(&self.dec2, &Feature::concat(&upsample2(&m), &e2));
        let d1 = block(&self.dec1, &Feature::concat(&upsample2(&d2), &e1));
        self.head.forward(&d1)
    }

    fn block_backward(
        convs: &mut [Conv2d; 2],
        cols: &[Option<Vec<f32>>],
        input: &Feature,
        acts: &[Feature; 2],
        d_out: Feature,
        need_input: bool,
    ) -> Option<Feature> {
        let d = leaky_relu_backward(&acts[1], d_out);
        let d = convs[1]
            .backward_with_col(&acts[0], cols[1].as_deref(), &d, true)
            .expect("input gradient");
        let d = leaky_relu_backward(&acts[0], d);
        convs[0].backward_with_col(input, cols[0].as_deref(), &d, need_input)
    }

    /// Accumulates parameter gradients for a head-output gradient `d_out`.
    pub fn backward(&mut self, cache: &DenoiserCache, d_out: &Feature) {
        let [f1, f2, _] = FEATURES;
        let d = self.head.backward(&cache.d1[1], d_out, true).expect("input gradient");
        let cols = &cache.cols;
        let d_cat1 = Self::block_backward(&mut self.dec1, &cols[8..10], &cache.cat1, &cache.d1, d, true).expect("input gradient");
        let (d_up1, mut d_e1) = d_cat1.split(f2);
        let d_d2 = upsample2_backward(&d_up1);
        let d_cat2 = Self::block_backward(&mut self.dec2, &cols[6..8], &cache.cat2, &cache.d2, d_d2, true).expect("input gradient");
        let (d_up2, mut d_e2) = d_cat2.split(FEATURES[2]);
        let d_m = upsample2_backward(&d_up2);
        let d_p2 = Self::block_backward(&mut self.mid, &cols[4..6], &cache.p2, &cache.m, d_m, true).expect("input gradient");
        d_e2.add_assign(&max_pool2_backward(&d_p2, &cache.p2_idx, cache.e2[1].h, cache.e2[1].w));
        let d_p1 = Self::block_backward(&mut self.enc2, &cols[2..4], &cache.p1, &cache.e2, d_e2, true).expect("input gradient");
        d_e1.add_assign(&max_pool2_backward(&d_p1, &cache.p1_idx, cache.e1[1].h, cache.e1[1].w));
        debug_assert_eq!(d_e1.c, f1);
        Self::block_backward(&mut self.enc1, &cols[0..2], &cache.x, &cache.e1, d_e1, false);
    }

    /// Splits a raw head output into mean and clamped log-variance images.
    pub fn heads(&self, out: &Feature) -> HeadOutput {
        let c = self.channels;
        HeadOutput {
            mean: out.to_image(0, c),
            log_var: out.to_image(c, c).map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
        }
    }
}

thread_local! {
    static INFERENCE_CALLS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of [`infer`] calls made on this thread.
pub fn inference_calls() -> u64 {
    INFERENCE_CALLS.with(|c| c.get())
}

/// Denoised image from the mean head on the raw input. Sizes that are not
/// multiples of [`DOWNSAMPLING`] are reflect-padded and cropped back.
pub fn infer(net: &DenoiserNet, y: &ImageTensor) -> Result<ImageTensor> {
    INFERENCE_CALLS.with(|c| c.set(c.get() + 1));
    let (h, w, _) = y.shape();
    let pad_h = (DOWNSAMPLING - h % DOWNSAMPLING) % DOWNSAMPLING;
    let pad_w = (DOWNSAMPLING - w % DOWNSAMPLING) % DOWNSAMPLING;
    let padded = if pad_h + pad_w > 0 {
        y.reflect_pad(pad_h, pad_w)?
    } else {
        y.clone()
    };
    let out = net.forward(Feature::from_image(&padded));
    out.to_image(0, net.channels).crop(0, 0, h, w)
}
