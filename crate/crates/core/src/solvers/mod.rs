//! Plug-and-play diffusion solvers.
//!
//! Both loops reach the prior only through [`PriorEngine`], which evaluates
//! it either on the whole image or patch-by-patch on a shifted grid. That
//! is the single place patching enters, so every solver accepts every
//! [`PriorEvalMode`].

mod diffpir;
mod dps;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use diffpir::{diffpir_run, diffpir_run_with, proximal_identity};
pub use dps::{dps_run, dps_run_with};

use crate::error::{Error, Result};
use crate::grid::{extract, extract_adjoint_add, PatchGrid, Stitcher};
use crate::image::Image;
use crate::memory::MemoryLedger;
use crate::operators::ForwardOperator;
use crate::priors::{DenoiserPrior, PriorSpec};
use crate::rng::SeededRng;
use crate::schedule::{self, SigmaSchedule};

/// How the grid offset changes from step to step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OffsetPolicy {
    FixedZero,
    /// `(0, 0)` on even steps, `(p/2, p/2)` on odd ones.
    CycleHalf,
    /// Independent uniform offsets in `[0, p)^2` per step.
    SeededRandom(u64),
}

impl OffsetPolicy {
    pub fn offset(&self, step: usize, patch: usize) -> (usize, usize) {
        match *self {
            OffsetPolicy::FixedZero => (0, 0),
            OffsetPolicy::CycleHalf => {
                if step.is_multiple_of(2) {
                    (0, 0)
                } else {
                    (patch / 2, patch / 2)
                }
            }
            OffsetPolicy::SeededRandom(seed) => {
                let mut rng = SeededRng::new(seed, step as u64);
                let p = patch as u64;
                (rng.below(p) as usize, rng.below(p) as usize)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OffsetPolicy::FixedZero => "fixed",
            OffsetPolicy::CycleHalf => "cycle",
            OffsetPolicy::SeededRandom(_) => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorEvalMode {
    Whole,
    /// The grid's own offset is ignored; the policy picks one per step.
    ShiftedGrid {
        grid: PatchGrid,
        policy: OffsetPolicy,
    },
}

impl PriorEvalMode {
    pub fn grid_at(&self, step: usize) -> Result<Option<PatchGrid>> {
        match self {
            PriorEvalMode::Whole => Ok(None),
            PriorEvalMode::ShiftedGrid { grid, policy } => {
                Ok(Some(grid.with_offset(policy.offset(step, grid.patch()))?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Dps,
    DiffPir,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Dps => "dps",
            SolverKind::DiffPir => "diffpir",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dps" => Ok(SolverKind::Dps),
            "diffpir" => Ok(SolverKind::DiffPir),
            other => Err(Error::invalid(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub n_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            n_steps: schedule::DEFAULT_STEPS,
            sigma_min: schedule::DEFAULT_SIGMA_MIN,
            sigma_max: schedule::DEFAULT_SIGMA_MAX,
            rho: schedule::DEFAULT_RHO,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<SigmaSchedule> {
        schedule::karras_sigmas(self.n_steps, self.sigma_min, self.sigma_max, self.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub op: ForwardOperator,
    pub sigma_n: f64,
    pub schedule: ScheduleParams,
    pub prior: PriorSpec,
    pub eval_mode: PriorEvalMode,
    /// DPS guidance scale; 0 disables guidance.
    pub dps_zeta: f64,
    /// DiffPIR data/prior trade-off.
    pub diffpir_lambda: f64,
    /// DiffPIR re-noising stochasticity in `[0, 1]`.
    pub diffpir_zeta: f64,
    pub seed: u64,
    /// Patches evaluated (and held in memory) at once in shifted-grid mode.
    pub patch_batch: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl SolverConfig {
    pub fn new(solver: SolverKind, op: ForwardOperator, sigma_n: f64, prior: PriorSpec) -> Self {
        Self {
            solver,
            op,
            sigma_n,
            schedule: ScheduleParams::default(),
            prior,
            eval_mode: PriorEvalMode::Whole,
            dps_zeta: 1.0,
            diffpir_lambda: 1.0,
            diffpir_zeta: 0.3,
            seed: 0,
            patch_batch: 1,
            cg_tol: 1e-10,
            cg_max_iter: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.sigma_n >= 0.0) || !self.sigma_n.is_finite() {
            return Err(Error::invalid(format!("sigma_n must be >= 0, got {}", self.sigma_n)));
        }
        // zero guidance is allowed: it gives the unconditional sampler
        if !(self.dps_zeta >= 0.0) || !self.dps_zeta.is_finite() {
            return Err(Error::invalid(format!("dps_zeta must be >= 0, got {}", self.dps_zeta)));
        }
        positive("diffpir_lambda", self.diffpir_lambda)?;
        positive("cg_tol", self.cg_tol)?;
        if !(0.0..=1.0).contains(&self.diffpir_zeta) {
            return Err(Error::invalid(format!(
                "diffpir_zeta must lie in [0, 1], got {}",
                self.diffpir_zeta
            )));
        }
        if self.patch_batch == 0 {
            return Err(Error::invalid("patch_batch must be at least 1"));
        }
        self.schedule.build()?;
        Ok(())
    }

    fn check_measurement(&self, y: &Image) -> Result<()> {
        if y.dims() != self.op.output_dims() {
            let (h, w) = self.op.output_dims();
            return Err(Error::invalid(format!(
                "measurement is {}x{} but {} produces {h}x{w}",
                y.height(),
                y.width(),
                self.op
            )));
        }
        if !y.is_finite() {
            return Err(Error::invalid("measurement has non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub sigma: f64,
    /// `||y - H x0_hat||` for the prior's estimate at this step.
    pub data_residual: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub restored: Image,
    pub steps: Vec<StepDiagnostics>,
    /// Grid offset used at each step; empty in whole-image mode.
    pub offsets_used: Vec<(usize, usize)>,
    pub peak_tracked_bytes: usize,
    pub wall_time: f64,
}

impl RunReport {
    pub fn cg_warnings(&self) -> usize {
        self.steps.iter().filter(|s| !s.cg_converged).count()
    }
}

/// Evaluate the prior on `x` under `mode` at step `step`.
pub fn eval_prior(
    prior: &dyn DenoiserPrior,
    x: &Image,
    sigma: f64,
    mode: &PriorEvalMode,
    step: usize,
) -> Result<Image> {
    PriorEngine::new(prior, *mode, 1).eval(x, sigma, step, None)
}

/// Vector-Jacobian product of [`eval_prior`] with respect to `x`.
pub fn eval_prior_vjp(
    prior: &dyn DenoiserPrior,
    x: &Image,
    sigma: f64,
    v: &Image,
    mode: &PriorEvalMode,
    step: usize,
) -> Result<Image> {
    PriorEngine::new(prior, *mode, 1).vjp(x, sigma, v, step, None)
}

/// Prior evaluation with ledger accounting.
///
/// In shifted-grid mode the image is never padded as a whole: each tile is
/// extracted with the grid's padding rule filling whatever falls outside
/// the image, which yields the same tiles as padding by one patch first.
/// Tiles are processed `batch` at a time; tiles within a batch run in
/// parallel and are written back in lattice order.
#[derive(Debug, Clone, Copy)]
pub struct PriorEngine<'p> {
    prior: &'p dyn DenoiserPrior,
    mode: PriorEvalMode,
    batch: usize,
}

impl<'p> PriorEngine<'p> {
    pub fn new(prior: &'p dyn DenoiserPrior, mode: PriorEvalMode, batch: usize) -> Self {
        Self {
            prior,
            mode,
            batch: batch.max(1),
        }
    }

    pub fn mode(&self) -> &PriorEvalMode {
        &self.mode
    }

    /// Returns the estimate. The caller accounts for the returned buffer;
    /// only tile buffers and prior scratch are charged here.
    pub fn eval(&self, x: &Image, sigma: f64, step: usize, ledger: Option<&MemoryLedger>) -> Result<Image> {
        let grid = match self.mode.grid_at(step)? {
            None => {
                let (h, w) = x.dims();
                let _scratch = ledger.map(|l| l.hold("prior scratch", self.prior.working_bytes(h, w)));
                return self.prior.denoise(x, sigma);
            }
            Some(g) => g,
        };
        let side = grid.tile_side();
        let tile_bytes = side * side * std::mem::size_of::<f64>();
        let per_tile = 2 * tile_bytes + self.prior.working_bytes(side, side);
        let slots = grid.layout(x.height(), x.width());
        let mut stitcher = Stitcher::new(x.height(), x.width());
        for chunk in slots.chunks(self.batch) {
            let _batch = ledger.map(|l| l.hold("patch batch", chunk.len() * per_tile));
            let outputs: Vec<Image> = chunk
                .par_iter()
                .map(|slot| {
                    let patch = extract(x, slot.origin, side, grid.padding());
                    self.prior.denoise(&patch, sigma)
                })
                .collect::<Result<_>>()?;
            for (slot, out) in chunk.iter().zip(&outputs) {
                stitcher.add(out, slot.placement, slot.origin)?;
            }
        }
        stitcher.finish()
    }

    /// `(d eval / d x)^T v`. The returned gradient is the caller's to account.
    pub fn vjp(&self, x: &Image, sigma: f64, v: &Image, step: usize, ledger: Option<&MemoryLedger>) -> Result<Image> {
        x.ensure_same_dims(v)?;
        let grid = match self.mode.grid_at(step)? {
            None => {
                let (h, w) = x.dims();
                let _scratch = ledger.map(|l| l.hold("prior scratch", self.prior.working_bytes(h, w)));
                return self.prior.vjp(x, sigma, v);
            }
            Some(g) => g,
        };
        let side = grid.tile_side();
        let tile_bytes = side * side * std::mem::size_of::<f64>();
        // input patch, cotangent patch, gradient patch
        let per_tile = 3 * tile_bytes + self.prior.working_bytes(side, side);
        let slots = grid.layout(x.height(), x.width());
        let mut grad = Image::zeros(x.height(), x.width());
        for chunk in slots.chunks(self.batch) {
            let _batch = ledger.map(|l| l.hold("patch batch", chunk.len() * per_tile));
            let grads: Vec<Image> = chunk
                .par_iter()
                .map(|slot| {
                    let patch = extract(x, slot.origin, side, grid.padding());
                    // transpose of the crop: v on the placement, zero elsewhere
                    let (oy, ox) = slot.origin;
                    let r = slot.placement;
                    let cot = Image::from_fn(side, side, |a, b| {
                        let y = oy + a as isize;
                        let xx = ox + b as isize;
                        let inside =
                            y >= r.y0 as isize && y < r.y1() as isize && xx >= r.x0 as isize && xx < r.x1() as isize;
                        if inside {
                            v.get(y as usize, xx as usize)
                        } else {
                            0.0
                        }
                    });
                    self.prior.vjp(&patch, sigma, &cot)
                })
                .collect::<Result<_>>()?;
            for (slot, g) in chunk.iter().zip(&grads) {
                extract_adjoint_add(&mut grad, g, slot.origin, grid.padding());
            }
        }
        Ok(grad)
    }
}

/// Dispatch on `cfg.solver`.
pub fn run(cfg: &SolverConfig, y: &Image) -> Result<RunReport> {
    match cfg.solver {
        SolverKind::Dps => dps_run(cfg, y),
        SolverKind::DiffPir => diffpir_run(cfg, y),
    }
}

/// Streaming `||y - H x||` without materializing `H x`.
pub(crate) fn residual_norm(op: &ForwardOperator, x: &Image, y: &Image) -> Result<f64> {
    use crate::operators::OperatorKind;
    if x.dims() != op.input_dims() || y.dims() != op.output_dims() {
        return Err(Error::invalid("residual: dimension mismatch"));
    }
    let sum = match op.kind() {
        OperatorKind::Identity => x.data().iter().zip(y.data()).map(|(a, b)| (b - a).powi(2)).sum(),
        OperatorKind::DownsampleAvg2 => {
            let (h, w) = op.output_dims();
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let m = 0.25
                        * (x.get(2 * i, 2 * j)
                            + x.get(2 * i, 2 * j + 1)
                            + x.get(2 * i + 1, 2 * j)
                            + x.get(2 * i + 1, 2 * j + 1));
                    s += (y.get(i, j) - m).powi(2);
                }
            }
            s
        }
    };
    Ok(f64::sqrt(sum))
}

pub(crate) fn check_finite(x: &Image, step: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: "iterate contains non-finite values".into(),
        })
    }
}

pub(crate) fn check_residual(norm: f64, step: usize) -> Result<()> {
    if norm.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("data residual norm is {norm}"),
        })
    }
}
