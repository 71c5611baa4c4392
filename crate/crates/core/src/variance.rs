//! Gaussian noise-variance estimation from the eigenvalue spectrum of the
//! patch covariance, with the gradient of the estimate with respect to every
//! input pixel.
//!
//! The estimate keeps the smallest eigenvalues: starting from the full
//! spectrum, the largest eigenvalue is dropped while the mean of the kept set
//! exceeds its median by more than a relative [`MEDIAN_TOLERANCE`]. For a pure
//! noise tail mean and median agree, so the mean of the kept set is the noise
//! variance. The selection is piecewise constant and does not take part in
//! differentiation.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const MEDIAN_TOLERANCE: f64 = 1e-3;
const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            stride: 2,
        }
    }
}

impl PatchConfig {
    pub fn new(patch_size: usize, stride: usize) -> Result<Self> {
        let cfg = Self { patch_size, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch_size must be >= 4 and stride >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Covariance dimension `patch_size²`.
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Patch count along one axis of length `n`.
    pub fn positions(&self, n: usize) -> usize {
        if n < self.patch_size {
            0
        } else {
            (n - self.patch_size) / self.stride + 1
        }
    }

    pub fn count(&self, height: usize, width: usize) -> usize {
        self.positions(height) * self.positions(width)
    }
}

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }
}

fn single_channel_plane(img: &ImageTensor) -> Result<Vec<f64>> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a single-channel image, got {} channels",
            img.channels()
        )));
    }
    Ok(img.to_f64())
}

fn check_geometry(height: usize, width: usize, cfg: &PatchConfig) -> Result<()> {
    cfg.validate()?;
    if height < cfg.patch_size || width < cfg.patch_size {
        return Err(Error::TooSmall {
            height,
            width,
            required: format!("{0}x{0} patch", cfg.patch_size),
        });
    }
    Ok(())
}

/// Vectorized patches at `stride` over valid positions, one patch per row.
pub fn extract_patches(img: &ImageTensor, cfg: &PatchConfig) -> Result<Matrix> {
    let plane = single_channel_plane(img)?;
    patches_of_plane(&plane, img.height(), img.width(), cfg)
}

pub fn patches_of_plane(plane: &[f64], height: usize, width: usize, cfg: &PatchConfig) -> Result<Matrix> {
    check_geometry(height, width, cfg)?;
    let (ps, st) = (cfg.patch_size, cfg.stride);
    let (ny, nx) = (cfg.positions(height), cfg.positions(width));
    let d = cfg.dim();
    let mut out = Matrix::zeros(ny * nx, d);
    let mut row = 0;
    for py in 0..ny {
        for px in 0..nx {
            let dst = &mut out.data[row * d..(row + 1) * d];
            for i in 0..ps {
                let src = (py * st + i) * width + px * st;
                dst[i * ps..(i + 1) * ps].copy_from_slice(&plane[src..src + ps]);
            }
            row += 1;
        }
    }
    Ok(out)
}

fn centered_patches(patches: &Matrix) -> Vec<f64> {
    let mean = column_means(patches);
    let mut out = patches.data.clone();
    for row in out.chunks_exact_mut(patches.cols) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    out
}

fn column_means(patches: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; patches.cols];
    for r in 0..patches.rows {
        for (m, v) in mean.iter_mut().zip(patches.row(r)) {
            *m += v;
        }
    }
    let n = patches.rows as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Sample covariance of the patch rows (divisor `n − 1`), exactly symmetric.
pub fn patch_covariance(patches: &Matrix) -> Result<Matrix> {
    if patches.rows < 2 {
        return Err(Error::TooFewPatches {
            found: patches.rows,
            required: 2,
        });
    }
    let d = patches.cols;
    let centered = centered_patches(patches);
    let mut cov = Matrix::zeros(d, d);
    let scale = 1.0 / (patches.rows - 1) as f64;
    // cov = Xᵀ X / (n − 1) with X the centered n × d patch matrix
    unsafe {
        matrixmultiply::dgemm(
            d,
            patches.rows,
            d,
            scale,
            centered.as_ptr(),
            1,
            d as isize,
            centered.as_ptr(),
            d as isize,
            1,
            0.0,
            cov.data.as_mut_ptr(),
            d as isize,
            1,
        );
    }
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

/// Eigenvalues in ascending order with matching unit eigenvectors.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[i]` belongs to `values[i]`.
    pub vectors: Vec<Vec<f64>>,
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.rows != m.cols {
        return Err(Error::InvalidShape(format!(
            "expected a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    let scale = m.data.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..m.rows {
        for j in i + 1..m.cols {
            worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if worst > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Cyclic Jacobi eigen-decomposition. Sweeps stop once the off-diagonal
/// Frobenius norm falls below `1e-10` relative to the full norm, or after 100
/// sweeps.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    check_symmetric(m)?;
    let n = m.rows;
    let mut a = m.clone();
    // symmetrize so rotations see an exactly symmetric matrix
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let total = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOLERANCE * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = a.get(p, p) - t * apq;
                let aqq = a.get(q, q) + t * apq;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a.get(r, p);
                    let arq = a.get(r, q);
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a.set(r, p, np);
                    a.set(p, r, np);
                    a.set(r, q, nq);
                    a.set(q, r, nq);
                }
                a.set(p, p, app);
                a.set(q, q, aqq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, c * vrp - s * vrq);
                    v.set(r, q, s * vrp + c * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    Ok(SymEigen {
        values: order.iter().map(|&i| a.get(i, i)).collect(),
        vectors: order
            .iter()
            .map(|&i| (0..n).map(|r| v.get(r, i)).collect())
            .collect(),
    })
}

pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(m)?.values)
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Number of smallest eigenvalues kept by the mean/median truncation.
/// `ascending` must be sorted.
pub fn truncation_count(ascending: &[f64]) -> usize {
    let mut k = ascending.len();
    let mut sum: f64 = ascending.iter().sum();
    while k > 1 {
        let mean = sum / k as f64;
        let median = median_sorted(&ascending[..k]);
        if mean > median * (1.0 + MEDIAN_TOLERANCE) {
            k -= 1;
            sum -= ascending[k];
        } else {
            break;
        }
    }
    k
}

/// Result of one estimator evaluation on a single-channel plane.
#[derive(Clone, Debug)]
pub struct VarianceEstimate {
    pub value: f64,
    /// Number of eigenvalues kept by the truncation.
    pub kept: usize,
    /// `∂value/∂pixel`, same layout as the input plane, when requested.
    pub grad: Option<Vec<f64>>,
}

/// Noise variance of a single-channel image.
pub fn estimate_sigma2(img: &ImageTensor, cfg: &PatchConfig) -> Result<f64> {
    let plane = single_channel_plane(img)?;
    Ok(estimate_plane(&plane, img.height(), img.width(), cfg, false)?.value)
}

pub fn estimate_sigma2_with_grad(img: &ImageTensor, cfg: &PatchConfig) -> Result<VarianceEstimate> {
    let plane = single_channel_plane(img)?;
    estimate_plane(&plane, img.height(), img.width(), cfg, true)
}

/// Estimator on a raw `height × width` plane of `f64` samples.
pub fn estimate_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    cfg: &PatchConfig,
    want_grad: bool,
) -> Result<VarianceEstimate> {
    if plane.len() != height * width {
        return Err(Error::shape(
            format!("{} samples", height * width),
            format!("{} samples", plane.len()),
        ));
    }
    check_geometry(height, width, cfg)?;
    let d = cfg.dim();
    let n = cfg.count(height, width);
    if n < d {
        return Err(Error::TooFewPatches {
            found: n,
            required: d,
        });
    }
    let patches = patches_of_plane(plane, height, width, cfg)?;
    let cov = patch_covariance(&patches)?;
    let eig = sym_eigen(&cov)?;
    let kept = truncation_count(&eig.values);
    let value = eig.values[..kept].iter().sum::<f64>() / kept as f64;

    let grad = want_grad.then(|| {
        // ∂value/∂C = P = (1/k) Σ_kept v vᵀ and ∂C/∂x_p contributes
        // 2/(n−1) · P (x_p − mean) for patch p; the mean-subtraction term
        // cancels because centered patches sum to zero.
        let mut proj = vec![0.0; d * d];
        for vec in &eig.vectors[..kept] {
            for i in 0..d {
                let vi = vec[i] / kept as f64;
                for j in 0..d {
                    proj[i * d + j] += vi * vec[j];
                }
            }
        }
        let centered = centered_patches(&patches);
        let scale = 2.0 / (n - 1) as f64;
        // row p of `pg` is ∂value/∂(patch p) = scale · P (x_p − mean)
        let mut pg = vec![0.0; n * d];
        unsafe {
            matrixmultiply::dgemm(
                n,
                d,
                d,
                scale,
                centered.as_ptr(),
                d as isize,
                1,
                proj.as_ptr(),
                d as isize,
                1,
                0.0,
                pg.as_mut_ptr(),
                d as isize,
                1,
            );
        }
        let (ps, st) = (cfg.patch_size, cfg.stride);
        let nx = cfg.positions(width);
        let mut grad = vec![0.0; height * width];
        for (row, g) in pg.chunks_exact(d).enumerate() {
            let (py, px) = (row / nx, row % nx);
            for di in 0..ps {
                let dst = (py * st + di) * width + px * st;
                for (o, v) in grad[dst..dst + ps].iter_mut().zip(&g[di * ps..(di + 1) * ps]) {
                    *o += v;
                }
            }
        }
        grad
    });

    Ok(VarianceEstimate { value, kept, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn noise_image(h: usize, w: usize, std: f64, seed: u64) -> ImageTensor {
        let mut rng = SeededRng::new(seed);
        ImageTensor::from_fn(h, w, 1, |_, _, _| (std * rng.standard_normal()) as f32)
    }

    #[test]
    fn patch_geometry() {
        let cfg = PatchConfig::new(8, 1).unwrap();
        assert_eq!(extract_patches(&ImageTensor::zeros(8, 8, 1), &cfg).unwrap().rows, 1);
        let cfg = PatchConfig::new(8, 2).unwrap();
        let img = ImageTensor::from_fn(10, 10, 1, |r, c, _| (r * 10 + c) as f32);
        let p = extract_patches(&img, &cfg).unwrap();
        assert_eq!(p.rows, 4);
        // second patch starts two columns to the right
        assert_eq!(p.get(1, 0), 2.0);
        assert_eq!(p.get(2, 0), 20.0);
        assert_eq!(p.get(3, 63), 99.0);
        let flat = extract_patches(&ImageTensor::filled(12, 12, 1, 0.3), &cfg).unwrap();
        assert!((1..flat.rows).all(|r| flat.row(r) == flat.row(0)));
        assert!(matches!(
            extract_patches(&ImageTensor::zeros(7, 9, 1), &cfg),
            Err(Error::TooSmall { .. })
        ));
        assert!(extract_patches(&ImageTensor::zeros(9, 9, 3), &cfg).is_err());
        assert!(PatchConfig::new(3, 1).is_err());
        assert!(PatchConfig::new(8, 0).is_err());
    }

    #[test]
    fn covariance_of_identical_patches_is_zero() {
        let p = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(patch_covariance(&p).unwrap().data.iter().all(|&v| v == 0.0));
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(patch_covariance(&one), Err(Error::TooFewPatches { .. })));
    }

    #[test]
    fn covariance_matches_double_loop() {
        let mut rng = SeededRng::new(3);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.uniform()).collect()).collect();
        let p = Matrix::from_rows(&rows).unwrap();
        let cov = patch_covariance(&p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mi = rows.iter().map(|r| r[i]).sum::<f64>() / 5.0;
                let mj = rows.iter().map(|r| r[j]).sum::<f64>() / 5.0;
                let c = rows.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum::<f64>() / 4.0;
                assert!((cov.get(i, j) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_of_white_noise_is_scaled_identity() {
        let mut rng = SeededRng::new(4);
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| (0..6).map(|_| 0.5 * rng.standard_normal()).collect())
            .collect();
        let cov = patch_covariance(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((cov.get(i, j) - want).abs() < 0.01, "({i},{j}) = {}", cov.get(i, j));
            }
        }
    }

    #[test]
    fn known_spectra() {
        let d = Matrix::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        assert_eq!(sym_eigenvalues(&d).unwrap(), vec![1.0, 2.0, 3.0]);
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
        let bad = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigenvalues(&bad), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn eigenvectors_reconstruct_matrix() {
        let mut rng = SeededRng::new(8);
        let n = 16;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.uniform() - 0.5;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let e = sym_eigen(&m).unwrap();
        assert!((e.values.iter().sum::<f64>() - m.trace()).abs() < 1e-8);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                assert!((r - m.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn truncation_on_handmade_spectra() {
        assert_eq!(truncation_count(&[1.0, 1.0, 1.0, 1.0]), 4);
        assert_eq!(truncation_count(&[1.0, 1.0, 1.0, 50.0]), 3);
        assert_eq!(truncation_count(&[0.0; 5]), 5);
    }

    #[test]
    fn constant_image_estimates_zero() {
        let img = ImageTensor::filled(32, 32, 1, 0.7);
        assert_eq!(estimate_sigma2(&img, &PatchConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn too_few_patches_is_an_error() {
        // 16x16 at stride 2 gives 25 patches for a 64-dim covariance
        let img = noise_image(16, 16, 1.0, 1);
        assert!(matches!(
            estimate_sigma2(&img, &PatchConfig::default()),
            Err(Error::TooFewPatches { found: 25, required: 64 })
        ));
    }

    #[test]
    fn white_noise_estimate() {
        let img = noise_image(256, 256, 1.0, 21);
        let est = estimate_sigma2(&img, &PatchConfig::default()).unwrap();
        assert!((0.95..=1.05).contains(&est), "estimate {est}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = PatchConfig::new(4, 1).unwrap();
        let img = noise_image(16, 16, 0.3, 5);
        let mut plane = img.to_f64();
        // a smooth component keeps the truncation away from the spectrum's bulk
        for r in 0..16 {
            for c in 0..16 {
                plane[r * 16 + c] += 0.05 * (r as f64 * 0.4).sin() + 0.02 * c as f64;
            }
        }
        let est = estimate_plane(&plane, 16, 16, &cfg, true).unwrap();
        let grad = est.grad.unwrap();
        let h = 1e-6;
        for idx in [0, 17, 100, 137, 255] {
            let mut p = plane.clone();
            p[idx] += h;
            let up = estimate_plane(&p, 16, 16, &cfg, false).unwrap();
            p[idx] -= 2.0 * h;
            let down = estimate_plane(&p, 16, 16, &cfg, false).unwrap();
            assert_eq!(up.kept, est.kept);
            assert_eq!(down.kept, est.kept);
            let fd = (up.value - down.value) / (2.0 * h);
            let rel = (grad[idx] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-3, "pixel {idx}: analytic {} vs fd {fd}", grad[idx]);
        }
    }
}
