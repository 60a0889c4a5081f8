//! Solver loops against per-pixel reference recursions, plus patching invariants.

use patchpnp_core::rng::{streams, SeededRng};
use patchpnp_core::solvers::ScheduleParams;
use patchpnp_core::{
    ConvSmootherPrior, DenoiserPrior, ForwardOperator, Image, Kernel, NoiseModel, OffsetPolicy, PaddingMode, PatchGrid,
    PriorEvalMode, PriorSpec, SolverConfig, SolverKind,
};

/// Schedule written out directly from the interpolation rule, with the
/// endpoints pinned and a terminal zero.
fn reference_sigmas(n: usize, lo: f64, hi: f64, rho: f64) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (hi.powf(1.0 / rho) + t * (lo.powf(1.0 / rho) - hi.powf(1.0 / rho))).powf(rho)
        })
        .collect();
    s[0] = hi;
    s[n - 1] = lo;
    s.push(0.0);
    s
}

fn initial_noise(seed: u64, h: usize, w: usize, sigma0: f64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed, streams::SOLVER_INIT);
    (0..h * w).map(|_| sigma0 * rng.normal()).collect()
}

fn gaussian_cfg(solver: SolverKind, op: ForwardOperator, sigma_n: f64, tau: f64, mu: f64) -> SolverConfig {
    SolverConfig::new(solver, op, sigma_n, PriorSpec::Gaussian { tau, mu })
}

/// DPS with a Gaussian prior and identity H: every map is pixelwise affine
/// except the residual-norm normalization, which couples the pixels.
fn dps_reference(y: &[f64], x0: &[f64], sig: &[f64], tau: f64, mu: f64, zeta: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    for i in 0..sig.len() - 1 {
        let s = tau * tau / (tau * tau + sig[i] * sig[i]);
        let xh: Vec<f64> = x.iter().map(|v| mu + s * (v - mu)).collect();
        let r: Vec<f64> = xh.iter().zip(y).map(|(a, b)| a - b).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        for k in 0..x.len() {
            x[k] = xh[k] + sig[i + 1] / sig[i] * (x[k] - xh[k]) - zeta / norm * s * r[k];
        }
    }
    x
}

fn diffpir_reference(y: &[f64], x0: &[f64], sig: &[f64], tau: f64, mu: f64, sn: f64, lambda: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    for i in 0..sig.len() - 1 {
        let s = tau * tau / (tau * tau + sig[i] * sig[i]);
        let rho = lambda * sn * sn / (sig[i] * sig[i]);
        for k in 0..x.len() {
            let xh = mu + s * (x[k] - mu);
            let xt = (y[k] / (sn * sn) + rho * xh) / (1.0 / (sn * sn) + rho);
            x[k] = xt + sig[i + 1] / sig[i] * (x[k] - xt);
        }
    }
    x
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn measurement(h: usize, w: usize, seed: u64) -> Image {
    Image::from_fn(h, w, |y, x| {
        0.5 + 0.3 * ((y * 3 + x * 5 + seed as usize) % 7) as f64 / 7.0
    })
}

#[test]
fn dps_matches_reference_recursion() {
    let (h, w) = (6, 5);
    let y = measurement(h, w, 1);
    for (zeta, tau, mu, seed) in [(0.0, 1.0, 0.0, 3), (0.7, 0.5, 0.2, 4), (2.0, 2.0, -0.1, 5)] {
        let mut cfg = gaussian_cfg(SolverKind::Dps, ForwardOperator::identity(h, w), 0.05, tau, mu);
        cfg.dps_zeta = zeta;
        cfg.seed = seed;
        cfg.schedule.n_steps = 30;
        let got = patchpnp_core::dps_run(&cfg, &y).unwrap();
        let sig = reference_sigmas(30, 0.01, 10.0, 7.0);
        let want = dps_reference(y.data(), &initial_noise(seed, h, w, 10.0), &sig, tau, mu, zeta);
        let err = max_abs_diff(got.restored.data(), &want);
        assert!(err < 1e-10, "zeta {zeta}: {err}");
        assert_eq!(got.steps.len(), 30);
    }
}

#[test]
fn unguided_dps_with_tight_prior_collapses_to_mean() {
    let (h, w) = (8, 8);
    let mut cfg = gaussian_cfg(SolverKind::Dps, ForwardOperator::identity(h, w), 0.1, 1e-4, 0.0);
    cfg.dps_zeta = 0.0;
    let y = measurement(h, w, 2);
    let out = patchpnp_core::dps_run(&cfg, &y).unwrap();
    let worst = out.restored.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn dps_guidance_pulls_toward_measurement() {
    let (h, w) = (16, 16);
    let clean = measurement(h, w, 3);
    let op = ForwardOperator::identity(h, w);
    let y = op.measure(&NoiseModel::new(0.01, 7).unwrap(), &clean).unwrap();
    let mut cfg = gaussian_cfg(SolverKind::Dps, op, 0.01, 1.0, 0.0);
    cfg.dps_zeta = 0.5;
    let init = Image::from_vec(h, w, initial_noise(cfg.seed, h, w, 10.0)).unwrap();
    let out = patchpnp_core::dps_run(&cfg, &y).unwrap();
    let dist = |a: &Image| a.zip_map(&y, |p, q| p - q).unwrap().norm();
    assert!(dist(&out.restored) < dist(&init));

    cfg.dps_zeta = 0.0;
    let unguided = patchpnp_core::dps_run(&cfg, &y).unwrap();
    assert!(dist(&out.restored) < dist(&unguided.restored));
}

#[test]
fn diffpir_matches_reference_recursion() {
    let (h, w) = (5, 7);
    let y = measurement(h, w, 4);
    for (lambda, tau, mu, sn) in [(1.0, 1.0, 0.0, 0.2), (7.0, 0.6, 0.3, 0.05), (0.1, 2.0, 0.0, 0.5)] {
        let mut cfg = gaussian_cfg(SolverKind::DiffPir, ForwardOperator::identity(h, w), sn, tau, mu);
        cfg.diffpir_lambda = lambda;
        cfg.diffpir_zeta = 0.0;
        cfg.schedule = ScheduleParams {
            n_steps: 40,
            sigma_min: 0.02,
            sigma_max: 5.0,
            rho: 3.0,
        };
        let got = patchpnp_core::diffpir_run(&cfg, &y).unwrap();
        let sig = reference_sigmas(40, 0.02, 5.0, 3.0);
        let want = diffpir_reference(y.data(), &initial_noise(0, h, w, 5.0), &sig, tau, mu, sn, lambda);
        let err = max_abs_diff(got.restored.data(), &want);
        assert!(err < 1e-10, "lambda {lambda}: {err}");
    }
}

#[test]
fn noiseless_diffpir_returns_measurement() {
    let (h, w) = (8, 8);
    let y = measurement(h, w, 5);
    let cfg = gaussian_cfg(SolverKind::DiffPir, ForwardOperator::identity(h, w), 0.0, 1.0, 0.0);
    assert_eq!(patchpnp_core::diffpir_run(&cfg, &y).unwrap().restored, y);

    let sr = gaussian_cfg(
        SolverKind::DiffPir,
        ForwardOperator::downsample_avg2(h, w).unwrap(),
        0.0,
        1.0,
        0.0,
    );
    assert!(patchpnp_core::diffpir_run(&sr, &Image::zeros(4, 4)).is_err());
}

#[test]
fn diffpir_super_resolution_is_data_consistent() {
    let (h, w) = (16, 16);
    let op = ForwardOperator::downsample_avg2(h, w).unwrap();
    let clean = measurement(h, w, 6);
    let y = op.measure(&NoiseModel::new(0.01, 1).unwrap(), &clean).unwrap();
    let mut cfg = gaussian_cfg(SolverKind::DiffPir, op, 0.01, 0.3, 0.6);
    cfg.diffpir_zeta = 0.0;
    let out = patchpnp_core::diffpir_run(&cfg, &y).unwrap();
    assert_eq!(out.cg_warnings(), 0);
    assert!(out.steps.iter().all(|s| s.cg_iterations > 0));
    let fit = op
        .apply(&out.restored)
        .unwrap()
        .zip_map(&y, |a, b| a - b)
        .unwrap()
        .norm();
    assert!(fit / y.norm() < 0.05, "{fit}");
}

fn shifted(patch: usize, margin: usize, padding: PaddingMode, policy: OffsetPolicy) -> PriorEvalMode {
    PriorEvalMode::ShiftedGrid {
        grid: PatchGrid::new(patch, (0, 0), margin, padding).unwrap(),
        policy,
    }
}

#[test]
fn pointwise_prior_makes_patching_invisible_to_both_solvers() {
    let mut rng = SeededRng::new(99, 0);
    for trial in 0..8u64 {
        let (h, w) = (8 + 2 * rng.below(6) as usize, 8 + 2 * rng.below(6) as usize);
        let patch = 2 + rng.below(7) as usize;
        let padding = if rng.below(2) == 0 {
            PaddingMode::Zero
        } else {
            PaddingMode::Reflect
        };
        let policy = match rng.below(3) {
            0 => OffsetPolicy::FixedZero,
            1 => OffsetPolicy::CycleHalf,
            _ => OffsetPolicy::SeededRandom(trial),
        };
        let margin = rng.below(patch as u64) as usize;
        for solver in [SolverKind::Dps, SolverKind::DiffPir] {
            for op in [
                ForwardOperator::identity(h, w),
                ForwardOperator::downsample_avg2(h, w).unwrap(),
            ] {
                let (oh, ow) = op.output_dims();
                let y = measurement(oh, ow, trial);
                let mut cfg = gaussian_cfg(solver, op, 0.1, 0.8, 0.2);
                cfg.schedule.n_steps = 12;
                cfg.seed = trial;
                let whole = patchpnp_core::solvers::run(&cfg, &y).unwrap();
                cfg.eval_mode = shifted(patch, margin, padding, policy);
                cfg.patch_batch = 1 + trial as usize % 3;
                let patched = patchpnp_core::solvers::run(&cfg, &y).unwrap();
                let err = max_abs_diff(whole.restored.data(), patched.restored.data());
                assert!(err <= 1e-12, "trial {trial} {solver}: {err}");
            }
        }
    }
}

#[test]
fn conv_prior_with_context_matches_whole_in_interior() {
    let kernel = Kernel::binomial(5).unwrap();
    let r = kernel.radius();
    let prior = ConvSmootherPrior::new(kernel, 0.5, PaddingMode::Reflect).unwrap();
    let x = Image::from_vec(24, 20, initial_noise(1, 24, 20, 1.0)).unwrap();
    let whole = prior.denoise(&x, 0.8).unwrap();
    for padding in [PaddingMode::Zero, PaddingMode::Reflect] {
        for step in 0..5 {
            let mode = shifted(8, r, padding, OffsetPolicy::SeededRandom(step as u64));
            let patched = patchpnp_core::eval_prior(&prior, &x, 0.8, &mode, step).unwrap();
            for y in r..24 - r {
                for xx in r..20 - r {
                    assert!((whole.get(y, xx) - patched.get(y, xx)).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let (h, w) = (16, 16);
    let op = ForwardOperator::downsample_avg2(h, w).unwrap();
    let y = measurement(8, 8, 9);
    let prior = PriorSpec::ConvSmoother {
        kernel: Kernel::boxcar(3).unwrap(),
        blend_c: 0.5,
        border: PaddingMode::Reflect,
    };
    for solver in [SolverKind::Dps, SolverKind::DiffPir] {
        let mut cfg = SolverConfig::new(solver, op, 0.05, prior.clone());
        cfg.eval_mode = shifted(4, 1, PaddingMode::Reflect, OffsetPolicy::SeededRandom(5));
        cfg.patch_batch = 3;
        cfg.seed = 11;
        let a = patchpnp_core::solvers::run(&cfg, &y).unwrap();
        let b = patchpnp_core::solvers::run(&cfg, &y).unwrap();
        assert_eq!(a.restored, b.restored);
        assert_eq!(a.offsets_used, b.offsets_used);
        assert_eq!(a.peak_tracked_bytes, b.peak_tracked_bytes);
        cfg.seed = 12;
        assert_ne!(patchpnp_core::solvers::run(&cfg, &y).unwrap().restored, a.restored);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let op = ForwardOperator::identity(4, 4);
    let y = Image::zeros(4, 4);
    let mut cfg = gaussian_cfg(SolverKind::DiffPir, op, 0.1, 1.0, 0.0);
    cfg.diffpir_zeta = 1.5;
    assert!(patchpnp_core::solvers::run(&cfg, &y).is_err());
    cfg.diffpir_zeta = 0.3;
    assert!(patchpnp_core::solvers::run(&cfg, &Image::zeros(2, 2)).is_err());
    cfg.schedule.sigma_min = 20.0;
    assert!(patchpnp_core::solvers::run(&cfg, &y).is_err());
}
