//! Diffusion posterior sampling in variance-exploding form.
//!
//! Per step `i`, starting from `x_0 = sigma_0 g`:
//!
//! ```text
//! x0_hat  = D(x_i, sigma_i)
//! x'      = x0_hat + (sigma_{i+1} / sigma_i) (x_i - x0_hat)
//! grad    = J_D(x_i)^T H^T (H x0_hat - y)
//! zeta_i  = dps_zeta / max(||y - H x0_hat||, 1e-8)
//! x_{i+1} = x' - zeta_i grad
//! ```

use std::time::Instant;

use super::{check_finite, check_residual, PriorEngine, RunReport, SolverConfig, StepDiagnostics};
use crate::error::Result;
use crate::image::Image;
use crate::memory::MemoryLedger;
use crate::priors::DenoiserPrior;
use crate::rng::{streams, SeededRng};

/// Lower bound on the residual norm used to normalize the guidance step.
pub const RESIDUAL_FLOOR: f64 = 1e-8;

pub fn dps_run(cfg: &SolverConfig, y: &Image) -> Result<RunReport> {
    let prior = cfg.prior.build()?;
    dps_run_with(cfg, prior.as_ref(), y)
}

pub fn dps_run_with(cfg: &SolverConfig, prior: &dyn DenoiserPrior, y: &Image) -> Result<RunReport> {
    cfg.validate()?;
    cfg.check_measurement(y)?;
    let start = Instant::now();
    let schedule = cfg.schedule.build()?;
    let engine = PriorEngine::new(prior, cfg.eval_mode, cfg.patch_batch);
    let ledger = MemoryLedger::new();
    let (h, w) = cfg.op.input_dims();
    let image_bytes = h * w * std::mem::size_of::<f64>();

    let _measurement = ledger.hold("measurement", y.bytes());
    let iterate = ledger.hold("iterate", image_bytes);
    let mut x = SeededRng::new(cfg.seed, streams::SOLVER_INIT)
        .normal_image(h, w)
        .map(|g| schedule.sigma_max() * g);

    let mut steps = Vec::with_capacity(schedule.n_steps());
    let mut offsets_used = Vec::new();
    for i in 0..schedule.n_steps() {
        let sigma = schedule.sigma(i);
        let sigma_next = schedule.sigma(i + 1);
        if let Some(g) = cfg.eval_mode.grid_at(i)? {
            offsets_used.push(g.offset());
        }

        let _estimate = ledger.hold("prior estimate", image_bytes);
        let x0_hat = engine.eval(&x, sigma, i, Some(&ledger))?;

        let residual_charge = ledger.hold("residual", y.bytes());
        let residual = cfg.op.apply(&x0_hat)?.zip_map(y, |a, b| a - b)?;
        let norm = residual.norm();
        check_residual(norm, i)?;
        steps.push(StepDiagnostics {
            sigma,
            data_residual: norm,
            cg_iterations: 0,
            cg_converged: true,
        });
        let bp_charge = ledger.hold("backprojection", image_bytes);
        let bp = cfg.op.adjoint(&residual)?;
        drop(residual);
        drop(residual_charge);

        let _grad_charge = ledger.hold("guidance gradient", image_bytes);
        let grad = engine.vjp(&x, sigma, &bp, i, Some(&ledger))?;
        drop(bp);
        drop(bp_charge);

        let zeta = cfg.dps_zeta / norm.max(RESIDUAL_FLOOR);
        let keep = sigma_next / sigma;
        for ((xi, &e), &g) in x.data_mut().iter_mut().zip(x0_hat.data()).zip(grad.data()) {
            *xi = e + keep * (*xi - e) - zeta * g;
        }
        check_finite(&x, i)?;
    }

    drop(iterate);
    Ok(RunReport {
        restored: x,
        steps,
        offsets_used,
        peak_tracked_bytes: ledger.peak(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
