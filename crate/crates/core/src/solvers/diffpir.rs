//! DiffPIR: denoise, solve the data proximal problem, re-noise.
//!
//! With `rho_i = lambda (sigma_n / sigma_i)^2` the proximal step is
//! `argmin ||y - Hx||^2 / (2 sigma_n^2) + rho_i / 2 ||x - x0_hat||^2`.
//! Multiplying through by `sigma_n^2` gives the system
//! `(H^T H + w I) x = H^T y + w x0_hat` with `w = rho_i sigma_n^2`, which is
//! closed-form for `H = I` and solved by CG otherwise.

use std::time::Instant;

use super::{check_finite, check_residual, residual_norm, PriorEngine, RunReport, SolverConfig, StepDiagnostics};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::memory::MemoryLedger;
use crate::operators::{cg_solve_tracked, OperatorKind};
use crate::priors::DenoiserPrior;
use crate::rng::{streams, SeededRng};
use crate::schedule::renoise_in_place;

/// Closed-form proximal step for `H = I`, in place over the estimate:
/// `(y / sigma_n^2 + rho x0_hat) / (1 / sigma_n^2 + rho)`.
///
/// Written as `(y + w x0_hat) / (1 + w)` with `w = rho sigma_n^2`, which
/// stays defined at `sigma_n = 0` (returns `y`) and for huge `rho`
/// (returns `x0_hat`).
pub fn proximal_identity(y: &Image, x0_hat: &mut Image, sigma_n: f64, rho: f64) -> Result<()> {
    y.ensure_same_dims(x0_hat)?;
    let w = rho * sigma_n * sigma_n;
    if w.is_infinite() {
        return Ok(());
    }
    for (e, &m) in x0_hat.data_mut().iter_mut().zip(y.data()) {
        *e = (m + w * *e) / (1.0 + w);
    }
    Ok(())
}

pub fn diffpir_run(cfg: &SolverConfig, y: &Image) -> Result<RunReport> {
    let prior = cfg.prior.build()?;
    diffpir_run_with(cfg, prior.as_ref(), y)
}

pub fn diffpir_run_with(cfg: &SolverConfig, prior: &dyn DenoiserPrior, y: &Image) -> Result<RunReport> {
    cfg.validate()?;
    cfg.check_measurement(y)?;
    // sigma_n = 0 is the noiseless limit; the proximal step then returns y,
    // which is only well-posed when H is invertible
    if cfg.sigma_n == 0.0 && cfg.op.kind() != OperatorKind::Identity {
        return Err(Error::invalid(
            "DiffPIR needs sigma_n > 0 for a non-invertible operator",
        ));
    }
    let start = Instant::now();
    let schedule = cfg.schedule.build()?;
    let engine = PriorEngine::new(prior, cfg.eval_mode, cfg.patch_batch);
    let ledger = MemoryLedger::new();
    let (h, w) = cfg.op.input_dims();
    let image_bytes = h * w * std::mem::size_of::<f64>();
    let sn2 = cfg.sigma_n * cfg.sigma_n;

    let _measurement = ledger.hold("measurement", y.bytes());
    let iterate = ledger.hold("iterate", image_bytes);
    let mut x = SeededRng::new(cfg.seed, streams::SOLVER_INIT)
        .normal_image(h, w)
        .map(|g| schedule.sigma_max() * g);

    // H^T y is loop-invariant for the CG right-hand side
    let backprojected = match cfg.op.kind() {
        OperatorKind::Identity => None,
        OperatorKind::DownsampleAvg2 => Some((
            ledger.hold("backprojected measurement", image_bytes),
            cfg.op.adjoint(y)?,
        )),
    };

    let mut steps = Vec::with_capacity(schedule.n_steps());
    let mut offsets_used = Vec::new();
    for i in 0..schedule.n_steps() {
        let sigma = schedule.sigma(i);
        let sigma_next = schedule.sigma(i + 1);
        if let Some(g) = cfg.eval_mode.grid_at(i)? {
            offsets_used.push(g.offset());
        }

        let _estimate = ledger.hold("prior estimate", image_bytes);
        let mut estimate = engine.eval(&x, sigma, i, Some(&ledger))?;
        let data_residual = residual_norm(&cfg.op, &estimate, y)?;
        check_residual(data_residual, i)?;

        let rho = cfg.diffpir_lambda * sn2 / (sigma * sigma);
        let (cg_iterations, cg_converged) = match &backprojected {
            None => {
                proximal_identity(y, &mut estimate, cfg.sigma_n, rho)?;
                (0, true)
            }
            Some((_, hty)) => {
                let weight = rho * sn2;
                let _rhs_charge = ledger.hold("cg rhs", image_bytes);
                let rhs = hty.zip_map(&estimate, |a, e| a + weight * e)?;
                let out = cg_solve_tracked(&cfg.op, weight, &rhs, cfg.cg_tol, cfg.cg_max_iter, Some(&ledger))?;
                estimate.data_mut().copy_from_slice(out.x.data());
                (out.iterations, out.converged)
            }
        };
        steps.push(StepDiagnostics {
            sigma,
            data_residual,
            cg_iterations,
            cg_converged,
        });

        let mut rng = SeededRng::new(cfg.seed, streams::RENOISE_BASE + i as u64);
        renoise_in_place(&estimate, &mut x, sigma, sigma_next, cfg.diffpir_zeta, &mut rng)?;
        check_finite(&x, i)?;
    }

    drop(backprojected);
    drop(iterate);
    Ok(RunReport {
        restored: x,
        steps,
        offsets_used,
        peak_tracked_bytes: ledger.peak(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
