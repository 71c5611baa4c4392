//! Minimal f32 building blocks with hand-written backward passes. Feature maps
//! are channel-major (`C × H × W`); convolutions lower to a single matrix
//! product via im2col.

use pgden_core::{ImageTensor, SeededRng};

pub const LEAKY_SLOPE: f32 = 0.1;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(value: Vec<f32>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Feature {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Channel-last image to channel-major feature map.
    pub fn from_image(img: &ImageTensor) -> Self {
        let (h, w, c) = img.shape();
        let src = img.as_slice();
        let mut data = vec![0.0; h * w * c];
        for i in 0..h * w {
            for ch in 0..c {
                data[ch * h * w + i] = src[i * c + ch];
            }
        }
        Self { c, h, w, data }
    }

    /// Channels `[from, from + count)` as a channel-last image.
    pub fn to_image(&self, from: usize, count: usize) -> ImageTensor {
        let hw = self.plane();
        let mut data = vec![0.0; hw * count];
        for i in 0..hw {
            for ch in 0..count {
                data[i * count + ch] = self.data[(from + ch) * hw + i];
            }
        }
        ImageTensor::new(self.h, self.w, count, data).expect("consistent shape")
    }

    pub fn concat(a: &Feature, b: &Feature) -> Feature {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Feature {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Inverse of [`Feature::concat`] for gradients.
    pub fn split(self, first: usize) -> (Feature, Feature) {
        let n = first * self.plane();
        let (h, w) = (self.h, self.w);
        let mut data = self.data;
        let tail = data.split_off(n);
        (
            Feature { c: first, h, w, data },
            Feature {
                c: tail.len() / (h * w),
                h,
                w,
                data: tail,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Feature) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// He-normal weights scaled by `gain`; zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, gain: f32, rng: &mut SeededRng) -> Self {
        let fan_in = cin * k * k;
        let std = gain * (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f32)).sqrt();
        let w = (0..cout * fan_in)
            .map(|_| std * rng.standard_normal() as f32)
            .collect();
        Self {
            cin,
            cout,
            k,
            stride,
            weight: Param::new(w, vec![cout, cin, k, k]),
            bias: Param::new(vec![0.0; cout], vec![cout]),
        }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Output columns `ox` whose input column `ox * s + kx - p` lies in
    /// `[0, w)`.
    fn valid_cols(ow: usize, w: usize, s: usize, kx: usize, p: usize) -> (usize, usize) {
        let lo = p.saturating_sub(kx).div_ceil(s);
        let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &Feature) -> Vec<f32> {
        let (oh, ow) = self.out_size(x.h, x.w);
        let (k, s, p) = (self.k, self.stride, self.pad());
        let n = oh * ow;
        let mut col = vec![0.0; self.cin * k * k * n];
        for ci in 0..self.cin {
            let src = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                    let (lo, hi) = Self::valid_cols(ow, x.w, s, kx, p);
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= x.h {
                            continue;
                        }
                        let src_row = &src[(iy - p) * x.w..][..x.w];
                        let dst = &mut row[oy * ow + lo..oy * ow + hi];
                        if s == 1 {
                            dst.copy_from_slice(&src_row[lo + kx - p..hi + kx - p]);
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d = src_row[(lo + j) * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize) -> Feature {
        let (oh, ow) = self.out_size(h, w);
        let (k, s, p) = (self.k, self.stride, self.pad() as isize);
        let n = oh * ow;
        let mut dx = Feature::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut dx.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..][..w];
                        for (ox, v) in row[oy * ow..][..ow].iter().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn im2col_or_none(&self, x: &Feature) -> Option<Vec<f32>> {
        (!self.is_pointwise()).then(|| self.im2col(x))
    }

    pub fn forward(&self, x: &Feature) -> Feature {
        self.forward_with_col(x).0
    }

    /// Forward pass that also hands back the im2col buffer (`None` for
    /// pointwise convolutions) so the backward pass can reuse it.
    pub fn forward_with_col(&self, x: &Feature) -> (Feature, Option<Vec<f32>>) {
        debug_assert_eq!(x.c, self.cin);
        let (oh, ow) = self.out_size(x.h, x.w);
        let n = oh * ow;
        let kk = self.cin * self.k * self.k;
        let owned = self.im2col_or_none(x);
        let col: &[f32] = owned.as_deref().unwrap_or(&x.data);
        let mut out = Feature::zeros(self.cout, oh, ow);
        for (co, b) in self.bias.value.iter().enumerate() {
            out.data[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        // out = W · col + out
        unsafe {
            matrixmultiply::sgemm(
                self.cout,
                kk,
                n,
                1.0,
                self.weight.value.as_ptr(),
                kk as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                1.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        (out, owned)
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad`.
    pub fn backward(&mut self, x: &Feature, dy: &Feature, need_input_grad: bool) -> Option<Feature> {
        let col = self.im2col_or_none(x);
        self.backward_with_col(x, col.as_deref(), dy, need_input_grad)
    }

    /// As [`Conv2d::backward`] with the buffer from [`Conv2d::forward_with_col`].
    pub fn backward_with_col(
        &mut self,
        x: &Feature,
        col: Option<&[f32]>,
        dy: &Feature,
        need_input_grad: bool,
    ) -> Option<Feature> {
        let n = dy.plane();
        let kk = self.cin * self.k * self.k;
        let col: &[f32] = col.unwrap_or(&x.data);
        debug_assert_eq!(col.len(), kk * n);
        for (co, g) in self.bias.grad.iter_mut().enumerate() {
            *g += dy.data[co * n..(co + 1) * n].iter().sum::<f32>();
        }
        // dW += dy · colᵀ
        unsafe {
            matrixmultiply::sgemm(
                self.cout,
                n,
                kk,
                1.0,
                dy.data.as_ptr(),
                n as isize,
                1,
                col.as_ptr(),
                1,
                n as isize,
                1.0,
                self.weight.grad.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        if !need_input_grad {
            return None;
        }
        if self.stride == 1 && self.k > 1 {
            return Some(self.input_grad_transposed(dy));
        }
        // dcol = Wᵀ · dy
        let mut dcol = vec![0.0; kk * n];
        unsafe {
            matrixmultiply::sgemm(
                kk,
                self.cout,
                n,
                1.0,
                self.weight.value.as_ptr(),
                1,
                kk as isize,
                dy.data.as_ptr(),
                n as isize,
                1,
                0.0,
                dcol.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Some(if self.is_pointwise() {
            Feature {
                c: self.cin,
                h: x.h,
                w: x.w,
                data: dcol,
            }
        } else {
            self.col2im(&dcol, x.h, x.w)
        })
    }

    /// Input gradient of a stride-1 "same" convolution: `dy` convolved with
    /// the spatially flipped, channel-transposed kernel.
    fn input_grad_transposed(&self, dy: &Feature) -> Feature {
        let k = self.k;
        let kk = k * k;
        let mut flipped = vec![0.0f32; self.cin * self.cout * kk];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for t in 0..kk {
                    flipped[(ci * self.cout + co) * kk + (kk - 1 - t)] =
                        self.weight.value[(co * self.cin + ci) * kk + t];
                }
            }
        }
        let transposed = Conv2d {
            cin: self.cout,
            cout: self.cin,
            k,
            stride: 1,
            weight: Param {
                value: flipped,
                grad: Vec::new(),
                m: Vec::new(),
                v: Vec::new(),
                shape: vec![self.cin, self.cout, k, k],
            },
            bias: Param {
                value: vec![0.0; self.cin],
                grad: Vec::new(),
                m: Vec::new(),
                v: Vec::new(),
                shape: vec![self.cin],
            },
        };
        transposed.forward(dy)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

pub fn leaky_relu(mut x: Feature) -> Feature {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    x
}

/// Gradient through a leaky ReLU given its output `y`.
pub fn leaky_relu_backward(y: &Feature, mut dy: Feature) -> Feature {
    for (d, &o) in dy.data.iter_mut().zip(&y.data) {
        if o < 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
    dy
}

/// 2×2 max pooling; also returns the winning input index per output.
pub fn max_pool2(x: &Feature) -> (Feature, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Feature::zeros(x.c, oh, ow);
    let mut idx = vec![0u32; x.c * oh * ow];
    for c in 0..x.c {
        let base = c * x.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = c * oh * ow + oy * ow + ox;
                out.data[o] = x.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn max_pool2_backward(dy: &Feature, idx: &[u32], h: usize, w: usize) -> Feature {
    let mut dx = Feature::zeros(dy.c, h, w);
    for (g, &i) in dy.data.iter().zip(idx) {
        dx.data[i as usize] += g;
    }
    dx
}

pub fn upsample2(x: &Feature) -> Feature {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Feature::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.data[c * oh * ow + oy * ow + ox] = x.data[c * x.plane() + (oy / 2) * x.w + ox / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Feature) -> Feature {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Feature::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                dx.data[c * h * w + (oy / 2) * w + ox / 2] += dy.data[c * dy.plane() + oy * dy.w + ox];
            }
        }
    }
    dx
}

/// `ln(1 + e^z)` and its derivative, evaluated stably in f64.
pub fn softplus(z: f64) -> (f64, f64) {
    let s = if z > 30.0 { z } else { z.exp().ln_1p() };
    (s, 1.0 / (1.0 + (-z).exp()))
}

pub fn softplus_inverse(s: f64) -> f64 {
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}
