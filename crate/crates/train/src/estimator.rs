//! Strided convolutional trunk, global average pooling and a softplus head
//! producing `(α, σ1, σ2)`.

use std::cell::Cell;

use pgden_core::{ImageTensor, NoiseParams, SeededRng};

use crate::layers::{leaky_relu, leaky_relu_backward, softplus, softplus_inverse, Conv2d, Feature, Param};

pub const WIDTH: usize = 32;
const OUTPUTS: usize = 3;
/// Lower bound keeping every output strictly positive in f64.
const MIN_OUTPUT: f64 = 1e-9;

thread_local! {
    static FORWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of estimator forward passes made on this thread.
pub fn estimator_calls() -> u64 {
    FORWARD_CALLS.with(|c| c.get())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorNet {
    channels: usize,
    trunk: [Conv2d; 4],
    weight: Param,
    bias: Param,
}

#[derive(Clone, Debug)]
pub struct EstimatorCache {
    inputs: Vec<Feature>,
    acts: Vec<Feature>,
    pooled: Vec<f32>,
    raw: [f64; OUTPUTS],
}

impl EstimatorNet {
    /// Head bias starts at the softplus preimage of `init`, so an untrained
    /// network predicts `init` for any input up to a small perturbation.
    pub fn new(channels: usize, init: NoiseParams, rng: &mut SeededRng) -> Self {
        let trunk = [
            Conv2d::new(channels, WIDTH, 3, 2, 1.0, rng),
            Conv2d::new(WIDTH, WIDTH, 3, 2, 1.0, rng),
            Conv2d::new(WIDTH, WIDTH, 3, 2, 1.0, rng),
            Conv2d::new(WIDTH, WIDTH, 3, 1, 1.0, rng),
        ];
        let w = (0..OUTPUTS * WIDTH)
            .map(|_| 1e-3 * rng.standard_normal() as f32)
            .collect();
        let b = [init.alpha, init.sigma1, init.sigma2]
            .iter()
            .map(|&v| softplus_inverse(v.max(MIN_OUTPUT)) as f32)
            .collect();
        Self {
            channels,
            trunk,
            weight: Param::new(w, vec![OUTPUTS, WIDTH]),
            bias: Param::new(b, vec![OUTPUTS]),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, c) in self.trunk.iter().enumerate() {
            let [w, b] = c.params();
            out.push((format!("conv{i}.weight"), w));
            out.push((format!("conv{i}.bias"), b));
        }
        out.push(("fc.weight".into(), &self.weight));
        out.push(("fc.bias".into(), &self.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.trunk.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.push(&mut self.weight);
        out.push(&mut self.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn forward_cached(&self, y: &ImageTensor) -> (NoiseParams, EstimatorCache) {
        FORWARD_CALLS.with(|c| c.set(c.get() + 1));
        let mut x = Feature::from_image(y);
        let mut inputs = Vec::with_capacity(4);
        let mut acts = Vec::with_capacity(4);
        for conv in &self.trunk {
            let a = leaky_relu(conv.forward(&x));
            inputs.push(x);
            x = a.clone();
            acts.push(a);
        }
        let n = x.plane() as f32;
        let pooled: Vec<f32> = (0..WIDTH)
            .map(|c| x.data[c * x.plane()..(c + 1) * x.plane()].iter().sum::<f32>() / n)
            .collect();
        let mut raw = [0.0; OUTPUTS];
        for (o, r) in raw.iter_mut().enumerate() {
            *r = self.bias.value[o] as f64
                + self.weight.value[o * WIDTH..(o + 1) * WIDTH]
                    .iter()
                    .zip(&pooled)
                    .map(|(w, p)| *w as f64 * *p as f64)
                    .sum::<f64>();
        }
        let out = raw.map(|z| softplus(z).0.max(MIN_OUTPUT));
        (
            NoiseParams::two_branch(out[0], out[1], out[2]),
            EstimatorCache {
                inputs,
                acts,
                pooled,
                raw,
            },
        )
    }

    pub fn forward(&self, y: &ImageTensor) -> NoiseParams {
        self.forward_cached(y).0
    }

    /// Accumulates gradients for `d(loss)/d(α, σ1, σ2)`.
    pub fn backward(&mut self, cache: &EstimatorCache, d_params: [f64; OUTPUTS]) {
        let d_raw: Vec<f64> = cache
            .raw
            .iter()
            .zip(d_params)
            .map(|(&z, d)| {
                let (s, ds) = softplus(z);
                if s > MIN_OUTPUT {
                    d * ds
                } else {
                    0.0
                }
            })
            .collect();
        let mut d_pooled = vec![0.0f64; WIDTH];
        for o in 0..OUTPUTS {
            self.bias.grad[o] += d_raw[o] as f32;
            for c in 0..WIDTH {
                self.weight.grad[o * WIDTH + c] += (d_raw[o] * cache.pooled[c] as f64) as f32;
                d_pooled[c] += d_raw[o] * self.weight.value[o * WIDTH + c] as f64;
            }
        }
        let last = cache.acts.last().expect("trunk output");
        let n = last.plane();
        let mut d = Feature::zeros(last.c, last.h, last.w);
        for c in 0..WIDTH {
            let g = (d_pooled[c] / n as f64) as f32;
            d.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = g);
        }
        for i in (0..self.trunk.len()).rev() {
            d = leaky_relu_backward(&cache.acts[i], d);
            match self.trunk[i].backward(&cache.inputs[i], &d, i > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_output_near_init() {
        let init = NoiseParams::two_branch(0.05, 0.02, 0.03);
        let net = EstimatorNet::new(1, init, &mut SeededRng::new(3));
        let y = ImageTensor::from_fn(32, 32, 1, |r, c, _| ((r * c) % 5) as f32 / 5.0);
        let p = net.forward(&y);
        assert!((p.alpha / 0.05 - 1.0).abs() < 0.05, "{p:?}");
        assert!((p.sigma2 / 0.03 - 1.0).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn outputs_strictly_positive() {
        let mut net = EstimatorNet::new(1, NoiseParams::new(0.05, 0.02), &mut SeededRng::new(3));
        net.bias.value = vec![-80.0, -1e4, 5.0];
        let p = net.forward(&ImageTensor::filled(16, 16, 1, 0.3));
        assert!(p.alpha > 0.0 && p.sigma1 > 0.0 && p.sigma2 > 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(5);
        let mut net = EstimatorNet::new(1, NoiseParams::new(0.05, 0.02), &mut rng);
        net.weight.value.iter_mut().for_each(|w| *w *= 100.0);
        let y = ImageTensor::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32);
        let coef = [1.0, -2.0, 0.5];
        let loss = |n: &EstimatorNet| {
            let p = n.forward(&y);
            coef[0] * p.alpha + coef[1] * p.sigma1 + coef[2] * p.sigma2
        };
        let (_, cache) = net.forward_cached(&y);
        net.zero_grad();
        net.backward(&cache, coef);
        let eps = 1e-2f32;
        for (pi, i) in [(0usize, 3usize), (4, 10), (8, 5), (9, 1)] {
            let analytic = net.params_mut()[pi].grad[i] as f64;
            let mut plus = net.clone();
            plus.params_mut()[pi].value[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[pi].value[i] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps as f64);
            assert!((fd - analytic).abs() < 5e-2 * analytic.abs() + 1e-6, "param {pi}[{i}]: {fd} vs {analytic}");
        }
    }
}
