//! Variance-exploding noise schedules (`x_sigma = x_0 + sigma * eps`) and
//! the re-noising transition shared by the solvers.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::SeededRng;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_SIGMA_MAX: f64 = 10.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.01;
pub const DEFAULT_RHO: f64 = 7.0;

/// Strictly decreasing `sigma_0 > ... > sigma_{N-1} > 0`, with an implicit
/// terminal `sigma_N = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
    rho: f64,
}

impl SigmaSchedule {
    pub fn n_steps(&self) -> usize {
        self.sigmas.len()
    }

    /// `sigma_i` for `i` in `0..=n_steps`; the last one is 0.
    pub fn sigma(&self, i: usize) -> f64 {
        if i == self.sigmas.len() {
            0.0
        } else {
            self.sigmas[i]
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.sigmas.last().unwrap()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn values(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Karras et al. interpolation: evenly spaced in `sigma^(1/rho)`.
pub fn karras_sigmas(n_steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<SigmaSchedule> {
    if n_steps < 2 {
        return Err(Error::invalid(format!(
            "schedule needs at least 2 steps, got {n_steps}"
        )));
    }
    if !(sigma_min > 0.0) || !(sigma_max > sigma_min) || !sigma_max.is_finite() {
        return Err(Error::invalid(format!(
            "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
        )));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let hi = sigma_max.powf(1.0 / rho);
    let lo = sigma_min.powf(1.0 / rho);
    let last = (n_steps - 1) as f64;
    let mut sigmas: Vec<f64> = (0..n_steps)
        .map(|i| (hi + i as f64 / last * (lo - hi)).powf(rho))
        .collect();
    // pin the endpoints against powf round-off
    sigmas[0] = sigma_max;
    sigmas[n_steps - 1] = sigma_min;
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "schedule is not strictly decreasing (too many steps for range)",
        ));
    }
    Ok(SigmaSchedule { sigmas, rho })
}

/// Move from `sigma_cur` to `sigma_next` around the clean estimate:
/// `x0_hat + sigma_next (sqrt(1 - zeta) eps_hat + sqrt(zeta) g)` with
/// `eps_hat = (x_cur - x0_hat) / sigma_cur` and `g` a unit Gaussian field
/// drawn from `rng` (only consulted when `zeta > 0`).
pub fn renoise(
    x0_hat: &Image,
    x_cur: &Image,
    sigma_cur: f64,
    sigma_next: f64,
    zeta: f64,
    rng: &mut SeededRng,
) -> Result<Image> {
    let mut out = x_cur.clone();
    renoise_in_place(x0_hat, &mut out, sigma_cur, sigma_next, zeta, rng)?;
    Ok(out)
}

/// [`renoise`] writing the result over `x`.
pub fn renoise_in_place(
    x0_hat: &Image,
    x: &mut Image,
    sigma_cur: f64,
    sigma_next: f64,
    zeta: f64,
    rng: &mut SeededRng,
) -> Result<()> {
    if !(sigma_cur > 0.0) {
        return Err(Error::invalid(format!(
            "current sigma must be positive, got {sigma_cur}"
        )));
    }
    if !(sigma_next >= 0.0) || sigma_next >= sigma_cur {
        return Err(Error::invalid(format!(
            "next sigma {sigma_next} must lie in [0, {sigma_cur})"
        )));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::invalid(format!("zeta must lie in [0, 1], got {zeta}")));
    }
    x0_hat.ensure_same_dims(x)?;
    if sigma_next == 0.0 {
        x.data_mut().copy_from_slice(x0_hat.data());
        return Ok(());
    }
    let keep = (1.0 - zeta).sqrt() * sigma_next / sigma_cur;
    let fresh = zeta.sqrt() * sigma_next;
    for (xi, &x0) in x.data_mut().iter_mut().zip(x0_hat.data()) {
        let mut v = x0 + keep * (*xi - x0);
        if zeta > 0.0 {
            v += fresh * rng.normal();
        }
        *xi = v;
    }
    Ok(())
}
