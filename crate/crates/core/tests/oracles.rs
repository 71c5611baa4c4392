use pgden_core::metrics::{psnr, ssim};
use pgden_core::noise::corrupt_exact;
use pgden_core::rng::{sample_gaussian, sample_poisson};
use pgden_core::scene::random_scene;
use pgden_core::{ImageTensor, NoiseParams, SeededRng};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Normal, Poisson};

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

fn poisson_fit(rate: f64, seed: u64) -> f64 {
    let n = 40_000;
    let mut rng = SeededRng::new(seed);
    let dist = Poisson::new(rate).unwrap();
    // bins with expectation >= 20, everything else pooled into the two tails
    let lo = (0..).find(|&k| dist.pmf(k) * (n as f64) >= 20.0).unwrap();
    let hi = (lo..).find(|&k| dist.pmf(k) * (n as f64) < 20.0).unwrap() - 1;
    let mut obs = vec![0.0; (hi - lo + 3) as usize];
    for _ in 0..n {
        let k = sample_poisson(&mut rng, rate).unwrap();
        let bin = if k < lo { 0 } else if k > hi { obs.len() - 1 } else { (k - lo + 1) as usize };
        obs[bin] += 1.0;
    }
    let mut exp: Vec<f64> = (lo..=hi).map(|k| dist.pmf(k) * n as f64).collect();
    let below: f64 = (0..lo).map(|k| dist.pmf(k)).sum::<f64>() * n as f64;
    let inside: f64 = exp.iter().sum();
    exp.insert(0, below);
    exp.push(n as f64 - below - inside);
    if below < 1e-9 {
        obs.remove(0);
        exp.remove(0);
    }
    chi_square_p(&obs, &exp)
}

#[test]
fn poisson_sampler_passes_goodness_of_fit() {
    for (rate, seed) in [(0.7, 1), (4.0, 2), (25.0, 3), (90.0, 4), (900.0, 5)] {
        let p = poisson_fit(rate, seed);
        assert!(p > 1e-3, "rate {rate}: p = {p}");
    }
}

#[test]
fn gaussian_sampler_passes_goodness_of_fit() {
    let n = 40_000;
    let bins = 40;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let edges: Vec<f64> = (1..bins).map(|i| std_normal.inverse_cdf(i as f64 / bins as f64)).collect();
    let draws = sample_gaussian(&mut SeededRng::new(11), n, 0.3, 2.0).unwrap();
    let mut obs = vec![0.0; bins];
    for d in draws {
        obs[edges.partition_point(|&e| e < (d - 0.3) / 2.0)] += 1.0;
    }
    let p = chi_square_p(&obs, &vec![n as f64 / bins as f64; bins]);
    assert!(p > 1e-3, "p = {p}");
}

// Direct per-window SSIM with the 2-D Gaussian weights spelled out.
fn ssim_brute(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, _) = a.shape();
    let taps: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = taps.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r0 in 0..=h - 11 {
        for c0 in 0..=w - 11 {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = taps[i] * taps[j] / norm;
                    let x = a.get(r0 + i, c0 + j, 0) as f64;
                    let y = b.get(r0 + i, c0 + j, 0) as f64;
                    ma += wt * x;
                    mb += wt * y;
                    aa += wt * x * x;
                    bb += wt * y * y;
                    ab += wt * x * y;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn random_image(h: usize, w: usize, rng: &mut SeededRng) -> ImageTensor {
    ImageTensor::from_fn(h, w, 1, |_, _, _| rng.uniform() as f32)
}

#[test]
fn ssim_matches_brute_force_windows() {
    let mut rng = SeededRng::new(21);
    for _ in 0..5 {
        let a = random_image(32, 32, &mut rng);
        let b = a.map(|v| v * 0.7 + 0.1);
        let b = b.zip_map(&random_image(32, 32, &mut rng), |x, n| x + 0.2 * (n - 0.5)).unwrap();
        let (fast, slow) = (ssim(&a, &b).unwrap(), ssim_brute(&a, &b));
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }
}

#[test]
fn ssim_is_symmetric_and_one_on_identity() {
    let mut rng = SeededRng::new(22);
    for _ in 0..5 {
        let a = random_image(40, 33, &mut rng);
        let b = random_image(40, 33, &mut rng);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn psnr_falls_as_noise_rises_and_is_symmetric() {
    let mut rng = SeededRng::new(23);
    let x = random_scene(96, 96, 1, &mut rng).unwrap();
    let mut last = f64::INFINITY;
    for alpha in [0.005, 0.02, 0.08] {
        let y = corrupt_exact(&x, &NoiseParams::new(alpha, 0.01), &mut rng.fork(1)).unwrap();
        let db = psnr(&y, &x, 1.0).unwrap().db_or(f64::INFINITY);
        assert!(db < last, "{db} !< {last}");
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        last = db;
    }
    assert!(psnr(&x, &x, 1.0).unwrap().is_saturated());
}
