//! Linear degradation operators, the seeded measurement model, and the
//! conjugate-gradient (conjugate-residual variant) solver for `(H^T H + rho I) x = b`.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::memory::MemoryLedger;
use crate::rng::{streams, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Denoising: `H = I`.
    Identity,
    /// x2 super-resolution: each output pixel is the mean of a 2x2 block.
    DownsampleAvg2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOperator {
    kind: OperatorKind,
    input: (usize, usize),
}

impl fmt::Display for ForwardOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, w) = self.input;
        match self.kind {
            OperatorKind::Identity => write!(f, "identity({h}x{w})"),
            OperatorKind::DownsampleAvg2 => write!(f, "downsample-avg2({h}x{w})"),
        }
    }
}

impl ForwardOperator {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            kind: OperatorKind::Identity,
            input: (height, width),
        }
    }

    pub fn downsample_avg2(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "2x downsampling needs even positive dimensions, got {height}x{width}"
            )));
        }
        Ok(Self {
            kind: OperatorKind::DownsampleAvg2,
            input: (height, width),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input
    }

    pub fn output_dims(&self) -> (usize, usize) {
        match self.kind {
            OperatorKind::Identity => self.input,
            OperatorKind::DownsampleAvg2 => (self.input.0 / 2, self.input.1 / 2),
        }
    }

    fn check(&self, img: &Image, expected: (usize, usize), what: &str) -> Result<()> {
        if img.dims() != expected {
            return Err(Error::invalid(format!(
                "{self}: {what} must be {}x{}, got {}x{}",
                expected.0,
                expected.1,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.check(x, self.input, "input")?;
        Ok(match self.kind {
            OperatorKind::Identity => x.clone(),
            OperatorKind::DownsampleAvg2 => {
                let (h, w) = self.output_dims();
                Image::from_fn(h, w, |i, j| {
                    let (y, x0) = (2 * i, 2 * j);
                    0.25 * (x.get(y, x0) + x.get(y, x0 + 1) + x.get(y + 1, x0) + x.get(y + 1, x0 + 1))
                })
            }
        })
    }

    pub fn adjoint(&self, r: &Image) -> Result<Image> {
        self.check(r, self.output_dims(), "adjoint input")?;
        Ok(match self.kind {
            OperatorKind::Identity => r.clone(),
            OperatorKind::DownsampleAvg2 => {
                let (h, w) = self.input;
                Image::from_fn(h, w, |y, x| 0.25 * r.get(y / 2, x / 2))
            }
        })
    }

    /// `(H^T H + rho I) x`.
    pub fn normal_apply(&self, x: &Image, rho: f64) -> Result<Image> {
        let hth = self.adjoint(&self.apply(x)?)?;
        hth.zip_map(x, |a, b| a + rho * b)
    }

    /// `y = H x + sigma_n g` with `g` drawn from the measurement stream.
    pub fn measure(&self, noise: &NoiseModel, x: &Image) -> Result<Image> {
        let clean = self.apply(x)?;
        if noise.sigma_n == 0.0 {
            return Ok(clean);
        }
        let mut rng = SeededRng::new(noise.seed, streams::MEASUREMENT);
        Ok(clean.map(|v| v + noise.sigma_n * rng.normal()))
    }
}

/// Additive white Gaussian noise with a reproducible seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma_n: f64,
    seed: u64,
}

impl NoiseModel {
    pub fn new(sigma_n: f64, seed: u64) -> Result<Self> {
        if !(sigma_n >= 0.0) || !sigma_n.is_finite() {
            return Err(Error::invalid(format!("noise level must be >= 0, got {sigma_n}")));
        }
        Ok(Self { sigma_n, seed })
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Image,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm before the first iteration and after each one.
    pub residuals: Vec<f64>,
}

pub fn cg_solve(op: &ForwardOperator, rho: f64, b: &Image, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    cg_solve_tracked(op, rho, b, tol, max_iter, None)
}

/// Solve `(H^T H + rho I) x = b` from a zero start. Stops once
/// `||r|| <= tol * ||b||`; running out of iterations is reported through
/// `converged`, not as an error.
pub fn cg_solve_tracked(
    op: &ForwardOperator,
    rho: f64,
    b: &Image,
    tol: f64,
    max_iter: usize,
    ledger: Option<&MemoryLedger>,
) -> Result<CgOutcome> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    if !b.is_finite() {
        return Err(Error::invalid("right-hand side has non-finite values"));
    }
    op.check(b, op.input, "right-hand side")?;

    // x, r, p, Ar, Ap
    let _temps = ledger.map(|l| l.hold("cg temporaries", 5 * b.bytes()));

    let (h, w) = b.dims();
    let mut x = Image::zeros(h, w);
    let b_norm = b.norm();
    let mut residuals = vec![b_norm];
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            converged: true,
            residuals,
        });
    }

    // Conjugate-residual recurrences: each iterate minimizes ||r|| over the
    // Krylov space, so the residual history never increases.
    let mut r = b.clone();
    let mut ar = op.normal_apply(&r, rho)?;
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rar = r.dot(&ar)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let apap = ap.dot(&ap)?;
        if !(apap > 0.0) || !(rar > 0.0) {
            break;
        }
        let alpha = rar / apap;
        for (xi, pi) in x.data_mut().iter_mut().zip(p.data()) {
            *xi += alpha * pi;
        }
        for (ri, api) in r.data_mut().iter_mut().zip(ap.data()) {
            *ri -= alpha * api;
        }
        iterations += 1;
        let r_norm = r.norm();
        residuals.push(r_norm);
        if r_norm <= tol * b_norm {
            converged = true;
            break;
        }
        ar = op.normal_apply(&r, rho)?;
        let rar_new = r.dot(&ar)?;
        let beta = rar_new / rar;
        for ((pi, api), (ri, ari)) in p
            .data_mut()
            .iter_mut()
            .zip(ap.data_mut())
            .zip(r.data().iter().zip(ar.data()))
        {
            *pi = ri + beta * *pi;
            *api = ari + beta * *api;
        }
        rar = rar_new;
    }
    Ok(CgOutcome {
        x,
        iterations,
        converged,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = SeededRng::new(seed, 99);
        rng.normal_image(h, w)
    }

    #[test]
    fn identity_is_identity() {
        let x = random(5, 3, 1);
        let op = ForwardOperator::identity(5, 3);
        assert_eq!(op.apply(&x).unwrap(), x);
        assert_eq!(op.adjoint(&x).unwrap(), x);
    }

    #[test]
    fn block_mean() {
        let op = ForwardOperator::downsample_avg2(2, 2).unwrap();
        let x = Image::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(op.apply(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn downsample_adjoint_spreads_quarter() {
        let op = ForwardOperator::downsample_avg2(2, 2).unwrap();
        let r = Image::from_vec(1, 1, vec![4.0]).unwrap();
        assert_eq!(op.adjoint(&r).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(ForwardOperator::downsample_avg2(3, 4).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let op = ForwardOperator::downsample_avg2(4, 4).unwrap();
        assert!(op.apply(&Image::zeros(2, 2)).is_err());
        assert!(op.adjoint(&Image::zeros(4, 4)).is_err());
    }

    #[test]
    fn apply_is_linear() {
        let op = ForwardOperator::downsample_avg2(8, 8).unwrap();
        let a = random(8, 8, 2);
        let b = random(8, 8, 3);
        let combo = a.zip_map(&b, |u, v| 2.0 * u + v).unwrap();
        let lhs = op.apply(&combo).unwrap();
        let rhs = op
            .apply(&a)
            .unwrap()
            .zip_map(&op.apply(&b).unwrap(), |u, v| 2.0 * u + v)
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_inner_product() {
        let op = ForwardOperator::downsample_avg2(6, 6).unwrap();
        for trial in 0..100 {
            let a = random(6, 6, 1000 + trial);
            let b = random(3, 3, 2000 + trial);
            let lhs = op.apply(&a).unwrap().dot(&b).unwrap();
            let rhs = a.dot(&op.adjoint(&b).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
        }
    }

    #[test]
    fn h_ht_is_quarter_identity() {
        let op = ForwardOperator::downsample_avg2(6, 8).unwrap();
        let r = random(3, 4, 5);
        let back = op.apply(&op.adjoint(&r).unwrap()).unwrap();
        assert_eq!(back, r.map(|v| v * 0.25));
    }

    #[test]
    fn noiseless_measurement_equals_apply() {
        let op = ForwardOperator::downsample_avg2(4, 4).unwrap();
        let x = random(4, 4, 6);
        let y = op.measure(&NoiseModel::new(0.0, 1).unwrap(), &x).unwrap();
        assert_eq!(y, op.apply(&x).unwrap());
    }

    #[test]
    fn measurement_is_deterministic_with_target_std() {
        let op = ForwardOperator::identity(64, 64);
        let x = Image::filled(64, 64, 0.5);
        let noise = NoiseModel::new(0.1, 17).unwrap();
        let y1 = op.measure(&noise, &x).unwrap();
        let y2 = op.measure(&noise, &x).unwrap();
        assert_eq!(y1, y2);
        let diffs: Vec<f64> = y1.data().iter().map(|v| v - 0.5).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() <= 0.01, "std {std}");
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(NoiseModel::new(-0.1, 0).is_err());
    }

    #[test]
    fn cg_identity_constant() {
        let op = ForwardOperator::identity(4, 4);
        let out = cg_solve(&op, 1.0, &Image::filled(4, 4, 2.0), 1e-12, 10).unwrap();
        assert!(out.converged);
        assert!(out.x.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cg_zero_rhs() {
        let op = ForwardOperator::downsample_avg2(4, 4).unwrap();
        let out = cg_solve(&op, 0.5, &Image::zeros(4, 4), 1e-12, 10).unwrap();
        assert_eq!(out.x, Image::zeros(4, 4));
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn cg_rejects_bad_inputs() {
        let op = ForwardOperator::identity(2, 2);
        assert!(cg_solve(&op, 0.0, &Image::zeros(2, 2), 1e-8, 5).is_err());
        let mut b = Image::zeros(2, 2);
        b.data_mut()[0] = f64::INFINITY;
        assert!(cg_solve(&op, 1.0, &b, 1e-8, 5).is_err());
    }

    #[test]
    fn cg_flags_non_convergence() {
        let op = ForwardOperator::downsample_avg2(4, 4).unwrap();
        let b = random(4, 4, 8);
        let out = cg_solve(&op, 0.5, &b, 1e-14, 1).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn cg_residual_non_increasing() {
        let op = ForwardOperator::downsample_avg2(8, 6).unwrap();
        for seed in 0..20 {
            let b = random(8, 6, 300 + seed);
            let out = cg_solve(&op, 0.05, &b, 1e-14, 50).unwrap();
            for w in out.residuals.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", out.residuals);
            }
        }
    }

    #[test]
    fn cg_charges_and_releases_temporaries() {
        let ledger = MemoryLedger::new();
        let op = ForwardOperator::downsample_avg2(4, 4).unwrap();
        cg_solve_tracked(&op, 1.0, &random(4, 4, 1), 1e-10, 10, Some(&ledger)).unwrap();
        assert_eq!(ledger.peak(), 5 * 16 * 8);
        assert_eq!(ledger.live(), 0);
    }
}
