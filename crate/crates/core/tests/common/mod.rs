//! Independent oracles shared by the integration targets.

use patchpnp_core::rng::SeededRng;
use patchpnp_core::solvers::{eval_prior, eval_prior_vjp};
use patchpnp_core::{DenoiserPrior, Image, PriorEvalMode};

pub fn random(h: usize, w: usize, seed: u64) -> Image {
    SeededRng::new(seed, 77).normal_image(h, w)
}

/// Dense block-average matrix written out from the definition.
pub fn dense_downsample(h: usize, w: usize) -> Vec<Vec<f64>> {
    let (oh, ow) = (h / 2, w / 2);
    let mut m = vec![vec![0.0; h * w]; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                m[i * ow + j][(2 * i + dy) * w + 2 * j + dx] = 0.25;
            }
        }
    }
    m
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Relative L2 error between the analytic vjp and central differences of
/// `<v, eval(x)>` over every pixel.
pub fn vjp_fd_error(prior: &dyn DenoiserPrior, mode: PriorEvalMode, step: usize, seed: u64) -> f64 {
    let (h, w) = (10, 12);
    let sigma = 0.7;
    let x = random(h, w, seed);
    let v = random(h, w, seed + 50);
    let f = |z: &Image| eval_prior(prior, z, sigma, &mode, step).unwrap().dot(&v).unwrap();
    let analytic = eval_prior_vjp(prior, &x, sigma, &v, &mode, step).unwrap();
    let eps = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h * w {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
        num += (fd - analytic.data()[i]).powi(2);
        den += analytic.data()[i].powi(2);
    }
    (num / den).sqrt()
}
