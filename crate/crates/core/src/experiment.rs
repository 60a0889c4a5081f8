//! Experiment configs, sweeps, and CSV/image emission.
//!
//! Config files are flat `key = value` text. `#` starts a comment, list
//! values are comma separated, and relative paths resolve against the
//! config file's directory. Every sweep point (patch size x padding x
//! offset policy x seed) produces one CSV row and one restored image.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::image::{Image, PaddingMode};
use crate::io::{self, PgmDepth};
use crate::metrics::{edge_band_rmse, psnr, seam_artifact_score};
use crate::operators::{ForwardOperator, NoiseModel};
use crate::phantom::{gen_phantom, PhantomKind, PhantomSpec};
use crate::priors::{Kernel, PriorSpec, DEFAULT_BLEND_CONSTANT};
use crate::solvers::{self, OffsetPolicy, PriorEvalMode, RunReport, ScheduleParams, SolverConfig, SolverKind};

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Denoise,
    Sr2,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Sr2 => "sr2",
        }
    }

    pub fn operator(self, height: usize, width: usize) -> Result<ForwardOperator> {
        match self {
            Task::Denoise => Ok(ForwardOperator::identity(height, width)),
            Task::Sr2 => ForwardOperator::downsample_avg2(height, width),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "denoise" => Ok(Task::Denoise),
            "sr2" => Ok(Task::Sr2),
            other => Err(Error::Config(format!("unknown task `{other}` (denoise|sr2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    /// Phantom seeded by `seed`, or by each sweep seed when `None`.
    Phantom {
        kind: PhantomKind,
        height: usize,
        width: usize,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchChoice {
    Whole,
    Size(usize),
}

impl PatchChoice {
    fn label(self) -> String {
        match self {
            PatchChoice::Whole => "whole".into(),
            PatchChoice::Size(p) => p.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyChoice {
    Fixed,
    Cycle,
    /// Seeded with the sweep point's seed.
    Random,
}

impl PolicyChoice {
    fn resolve(self, seed: u64) -> OffsetPolicy {
        match self {
            PolicyChoice::Fixed => OffsetPolicy::FixedZero,
            PolicyChoice::Cycle => OffsetPolicy::CycleHalf,
            PolicyChoice::Random => OffsetPolicy::SeededRandom(seed),
        }
    }

    fn label(self) -> &'static str {
        match self {
            PolicyChoice::Fixed => "fixed",
            PolicyChoice::Cycle => "cycle",
            PolicyChoice::Random => "random",
        }
    }
}

impl FromStr for PolicyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" | "fixed-zero" => Ok(PolicyChoice::Fixed),
            "cycle" | "cycle-half" => Ok(PolicyChoice::Cycle),
            "random" | "seeded-random" => Ok(PolicyChoice::Random),
            other => Err(Error::Config(format!(
                "unknown offset policy `{other}` (fixed|cycle|random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub source: ImageSource,
    pub solver: SolverKind,
    pub sigma_n: f64,
    pub schedule: ScheduleParams,
    pub prior: PriorSpec,
    pub dps_zeta: f64,
    pub diffpir_lambda: f64,
    pub diffpir_zeta: f64,
    pub patch_sizes: Vec<PatchChoice>,
    pub context_margin: usize,
    pub paddings: Vec<PaddingMode>,
    pub policies: Vec<PolicyChoice>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub band: usize,
    pub patch_batch: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub write_images: bool,
}

impl ExperimentConfig {
    /// Defaults for everything except the output directory.
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            task: Task::Denoise,
            source: ImageSource::Phantom {
                kind: PhantomKind::Ellipses,
                height: 64,
                width: 64,
                seed: None,
            },
            solver: SolverKind::DiffPir,
            sigma_n: 0.1,
            schedule: ScheduleParams::default(),
            prior: PriorSpec::Gaussian { tau: 1.0, mu: 0.0 },
            dps_zeta: 1.0,
            diffpir_lambda: 1.0,
            diffpir_zeta: 0.3,
            patch_sizes: vec![PatchChoice::Whole],
            context_margin: 0,
            paddings: vec![PaddingMode::Reflect],
            policies: vec![PolicyChoice::Random],
            seeds: vec![0],
            output_dir: output_dir.into(),
            band: 8,
            patch_batch: 1,
            cg_tol: 1e-10,
            cg_max_iter: 200,
            write_images: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let cfg = Self::parse(&text, base)?;
        if let ImageSource::File(p) = &cfg.source {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input image not found"),
                ));
            }
        }
        Ok(cfg)
    }

    /// Parse config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = k.trim().to_ascii_lowercase();
            if kv.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        let mut kv = Keys(kv);
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let output_dir = kv
            .take("output_dir")
            .ok_or_else(|| Error::Config("missing required key `output_dir`".into()))?;
        let mut cfg = ExperimentConfig::new(resolve(&output_dir));

        if let Some(v) = kv.take("task") {
            cfg.task = v.parse()?;
        }
        match (kv.take("image"), kv.take("phantom")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("`image` and `phantom` are mutually exclusive".into()));
            }
            (Some(path), None) => cfg.source = ImageSource::File(resolve(&path)),
            (None, phantom) => {
                let kind = match phantom {
                    Some(k) => k.parse().map_err(config_err)?,
                    None => PhantomKind::Ellipses,
                };
                let size: usize = kv.parse_or("phantom_size", 64)?;
                let height = kv.parse_or("phantom_height", size)?;
                let width = kv.parse_or("phantom_width", size)?;
                let seed = kv.parse_opt("phantom_seed")?;
                cfg.source = ImageSource::Phantom {
                    kind,
                    height,
                    width,
                    seed,
                };
            }
        }
        if let Some(v) = kv.take("solver") {
            cfg.solver = v.parse().map_err(config_err)?;
        }
        cfg.sigma_n = kv.parse_or("sigma_n", cfg.sigma_n)?;
        cfg.schedule.n_steps = kv.parse_or("n_steps", cfg.schedule.n_steps)?;
        cfg.schedule.sigma_min = kv.parse_or("sigma_min", cfg.schedule.sigma_min)?;
        cfg.schedule.sigma_max = kv.parse_or("sigma_max", cfg.schedule.sigma_max)?;
        cfg.schedule.rho = kv.parse_or("rho", cfg.schedule.rho)?;
        cfg.dps_zeta = kv.parse_or("dps_zeta", cfg.dps_zeta)?;
        cfg.diffpir_lambda = kv.parse_or("diffpir_lambda", cfg.diffpir_lambda)?;
        cfg.diffpir_zeta = kv.parse_or("diffpir_zeta", cfg.diffpir_zeta)?;

        let prior = kv.take("prior").unwrap_or_else(|| "gaussian".into());
        cfg.prior = match prior.to_ascii_lowercase().as_str() {
            "gaussian" => PriorSpec::Gaussian {
                tau: kv.parse_or("prior_tau", 1.0)?,
                mu: kv.parse_or("prior_mu", 0.0)?,
            },
            "conv" | "conv-smoother" => {
                let kernel = match kv.take("conv_kernel") {
                    None => Kernel::binomial(3)?,
                    Some(k) => parse_kernel(&k, &resolve)?,
                };
                let border = match kv.take("conv_border") {
                    Some(b) => b.parse().map_err(config_err)?,
                    None => PaddingMode::Reflect,
                };
                PriorSpec::ConvSmoother {
                    kernel,
                    blend_c: kv.parse_or("conv_c", DEFAULT_BLEND_CONSTANT)?,
                    border,
                }
            }
            other => return Err(Error::Config(format!("unknown prior `{other}` (gaussian|conv)"))),
        };

        if let Some(v) = kv.take("patch_sizes") {
            cfg.patch_sizes = split_list(&v, "patch_sizes", |t| {
                if t.eq_ignore_ascii_case("whole") {
                    Ok(PatchChoice::Whole)
                } else {
                    t.parse().map(PatchChoice::Size).map_err(|_| ())
                }
            })?;
        }
        cfg.context_margin = kv.parse_or("context_margin", cfg.context_margin)?;
        if let Some(v) = kv.take("paddings") {
            cfg.paddings = split_list(&v, "paddings", |t| t.parse().map_err(|_| ()))?;
        }
        if let Some(v) = kv.take("policies") {
            cfg.policies = split_list(&v, "policies", |t| t.parse().map_err(|_| ()))?;
        }
        if let Some(v) = kv.take("seeds") {
            cfg.seeds = split_list(&v, "seeds", |t| t.parse().map_err(|_| ()))?;
        }
        cfg.band = kv.parse_or("band", cfg.band)?;
        cfg.patch_batch = kv.parse_or("patch_batch", cfg.patch_batch)?;
        cfg.cg_tol = kv.parse_or("cg_tol", cfg.cg_tol)?;
        cfg.cg_max_iter = kv.parse_or("cg_max_iter", cfg.cg_max_iter)?;
        cfg.write_images = kv.parse_or("write_images", cfg.write_images)?;

        if let Some(extra) = kv.0.keys().next() {
            return Err(Error::Config(format!("unknown key `{extra}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_sizes.is_empty() || self.paddings.is_empty() || self.policies.is_empty() || self.seeds.is_empty()
        {
            return Err(Error::Config("sweep lists must be non-empty".into()));
        }
        for p in &self.patch_sizes {
            if let PatchChoice::Size(p) = p {
                if *p == 0 || self.context_margin >= *p {
                    return Err(Error::Config(format!(
                        "patch size {p} must exceed context_margin {}",
                        self.context_margin
                    )));
                }
            }
        }
        if let ImageSource::Phantom { height, width, .. } = self.source {
            if height == 0 || width == 0 {
                return Err(Error::Config("phantom dimensions must be positive".into()));
            }
        }
        Ok(())
    }

    /// All sweep points in output order. Whole-image runs ignore padding
    /// and policy, so they appear once per seed.
    pub fn sweep(&self) -> Vec<SweepPoint> {
        let mut points = Vec::new();
        for &patch in &self.patch_sizes {
            for &seed in &self.seeds {
                match patch {
                    PatchChoice::Whole => points.push(SweepPoint {
                        patch,
                        padding: None,
                        policy: None,
                        seed,
                    }),
                    PatchChoice::Size(_) => {
                        for &padding in &self.paddings {
                            for &policy in &self.policies {
                                points.push(SweepPoint {
                                    patch,
                                    padding: Some(padding),
                                    policy: Some(policy),
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        points
    }

    fn source_image(&self, seed: u64) -> Result<Image> {
        match &self.source {
            ImageSource::File(path) => io::read_image(path),
            ImageSource::Phantom {
                kind,
                height,
                width,
                seed: fixed,
            } => gen_phantom(&PhantomSpec {
                kind: *kind,
                height: *height,
                width: *width,
                seed: fixed.unwrap_or(seed),
            }),
        }
    }

    /// Solver settings for one sweep point on an image of the given size.
    pub fn solver_config(&self, point: &SweepPoint, height: usize, width: usize) -> Result<SolverConfig> {
        let op = self.task.operator(height, width)?;
        let eval_mode = match (point.patch, point.padding, point.policy) {
            (PatchChoice::Size(p), Some(padding), Some(policy)) => PriorEvalMode::ShiftedGrid {
                grid: PatchGrid::new(p, (0, 0), self.context_margin, padding)?,
                policy: policy.resolve(point.seed),
            },
            _ => PriorEvalMode::Whole,
        };
        let mut cfg = SolverConfig::new(self.solver, op, self.sigma_n, self.prior.clone());
        cfg.schedule = self.schedule;
        cfg.eval_mode = eval_mode;
        cfg.dps_zeta = self.dps_zeta;
        cfg.diffpir_lambda = self.diffpir_lambda;
        cfg.diffpir_zeta = self.diffpir_zeta;
        cfg.seed = point.seed;
        cfg.patch_batch = self.patch_batch;
        cfg.cg_tol = self.cg_tol;
        cfg.cg_max_iter = self.cg_max_iter;
        Ok(cfg)
    }
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parse_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

fn split_list<T>(v: &str, key: &str, f: impl Fn(&str) -> std::result::Result<T, ()>) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| f(t).map_err(|_| Error::Config(format!("`{key}`: cannot parse `{t}`"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` must not be empty")));
    }
    Ok(items)
}

fn parse_kernel(spec: &str, resolve: &dyn Fn(&str) -> PathBuf) -> Result<Kernel> {
    let named = |prefix: &str| spec.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok());
    if let Some(n) = named("box") {
        return Kernel::boxcar(n).map_err(config_err);
    }
    if let Some(n) = named("binomial") {
        return Kernel::binomial(n).map_err(config_err);
    }
    Kernel::load(resolve(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepPoint {
    pub patch: PatchChoice,
    pub padding: Option<PaddingMode>,
    pub policy: Option<PolicyChoice>,
    pub seed: u64,
}

impl SweepPoint {
    fn stem(&self, task: Task, solver: SolverKind) -> String {
        format!(
            "{}_{}_p{}_{}_{}_s{}",
            task.as_str(),
            solver.as_str(),
            self.patch.label(),
            self.padding.map_or("none", PaddingMode::as_str),
            self.policy.map_or("none", PolicyChoice::label),
            self.seed
        )
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub task: String,
    pub solver: String,
    pub patch: String,
    pub padding: String,
    pub policy: String,
    pub seed: u64,
    pub psnr: f64,
    pub seam_score: f64,
    pub edge_band_rmse: f64,
    pub peak_bytes: u64,
    pub wall_time: f64,
    pub cg_warnings: u64,
}

#[derive(Debug)]
pub struct PointResult {
    pub point: SweepPoint,
    pub row: CsvRow,
    pub report: RunReport,
    pub clean: Image,
    pub measurement: Image,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub results: Vec<PointResult>,
    pub csv_path: PathBuf,
}

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<CsvRow> {
        self.results.iter().map(|r| r.row.clone()).collect()
    }
}

pub fn run_point(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<PointResult> {
    let clean = cfg.source_image(point.seed)?;
    let (h, w) = clean.dims();
    let solver_cfg = cfg.solver_config(point, h, w)?;
    let noise = NoiseModel::new(cfg.sigma_n, point.seed)?;
    let measurement = solver_cfg.op.measure(&noise, &clean)?;
    let report = solvers::run(&solver_cfg, &measurement)?;

    let seam_score = match (&solver_cfg.eval_mode, report.offsets_used.last()) {
        (PriorEvalMode::ShiftedGrid { grid, .. }, Some(&last)) => seam_artifact_score(&report.restored, grid, &[last])?,
        _ => 0.0,
    };
    let band = cfg.band.min(h.min(w).div_ceil(2)).max(1);
    let row = CsvRow {
        task: cfg.task.as_str().into(),
        solver: cfg.solver.as_str().into(),
        patch: point.patch.label(),
        padding: point.padding.map_or("none", PaddingMode::as_str).into(),
        policy: point.policy.map_or("none", PolicyChoice::label).into(),
        seed: point.seed,
        psnr: psnr(&report.restored, &clean, 1.0)?,
        seam_score,
        edge_band_rmse: edge_band_rmse(&report.restored, &clean, band)?,
        peak_bytes: report.peak_tracked_bytes as u64,
        wall_time: report.wall_time,
        cg_warnings: report.cg_warnings() as u64,
    };

    if cfg.write_images {
        let stem = point.stem(cfg.task, cfg.solver);
        io::write_f32i(cfg.output_dir.join(format!("{stem}.f32i")), &report.restored)?;
        io::write_pgm(
            cfg.output_dir.join(format!("{stem}.pgm")),
            &report.restored,
            PgmDepth::Eight,
        )?;
    }
    Ok(PointResult {
        point: *point,
        row,
        report,
        clean,
        measurement,
    })
}

/// Run every sweep point (in parallel) and write `results.csv` in sweep order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let points = cfg.sweep();
    let results: Vec<PointResult> = points.par_iter().map(|p| run_point(cfg, p)).collect::<Result<_>>()?;

    let csv_path = cfg.output_dir.join(RESULTS_FILE);
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for r in &results {
        writer.serialize(&r.row)?;
    }
    writer.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(ExperimentOutput { results, csv_path })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}
