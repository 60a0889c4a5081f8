use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use patchpnp_core::experiment::read_csv;
use patchpnp_core::io::read_image;

fn patchpnp(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_patchpnp"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PATCHPNP_THREADS", t),
        None => cmd.env_remove("PATCHPNP_THREADS"),
    };
    cmd.output().expect("spawn patchpnp")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_input_image_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "image = no_such_image.f32i\noutput_dir = out\n");
    let out = patchpnp(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such_image.f32i"), "{stderr}");
}

#[test]
fn missing_config_exits_2_with_path() {
    let out = patchpnp(&["run", "/definitely/not/here.cfg"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.cfg"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "output_dir = out\nsigma_n = lots\n");
    assert_eq!(patchpnp(&["run", &cfg], None).status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_2() {
    let out = patchpnp(&["phantom", "-o", "/tmp/unused.f32i"], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "phantom = disc\nphantom_size = 8\nsolver = dps\nprior_tau = 1e200\nsigma_max = 1e200\nn_steps = 5\noutput_dir = out\n",
    );
    let out = patchpnp(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn noiseless_smoke_run_writes_csv_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "task = denoise\nphantom = smooth\nphantom_size = 16\nsigma_n = 0\nsolver = dps\nn_steps = 50\n\
         patch_sizes = whole, 8\npolicies = fixed\noutput_dir = out\n",
    );
    let out = patchpnp(&["run", &cfg], Some("2"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].patch, "whole");
    assert_eq!(rows[1].patch, "8");
    for r in &rows {
        assert!(r.psnr.is_finite() || r.psnr == f64::INFINITY);
        assert!(r.peak_bytes > 0);
    }
    let img = read_image(dir.path().join("out/denoise_dps_pwhole_none_none_s0.f32i")).unwrap();
    assert_eq!(img.dims(), (16, 16));
    assert!(dir.path().join("out/denoise_dps_pwhole_none_none_s0.pgm").is_file());
}

#[test]
fn identical_configs_give_identical_outputs() {
    let body = "task = sr2\nphantom = ellipses\nphantom_size = 16\nsigma_n = 0.05\nsolver = diffpir\nn_steps = 10\n\
                prior = conv\npatch_sizes = whole, 8\npaddings = zero, reflect\npolicies = cycle, random\nseeds = 1, 2\noutput_dir = out\n";
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = write_config(dir.path(), body);
            let out = patchpnp(&["run", &cfg], None);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            dir
        })
        .collect();
    let mut a = read_csv(runs[0].path().join("out/results.csv")).unwrap();
    let mut b = read_csv(runs[1].path().join("out/results.csv")).unwrap();
    for r in a.iter_mut().chain(b.iter_mut()) {
        r.wall_time = 0.0;
    }
    assert_eq!(a, b);
    let mut names: Vec<_> = fs::read_dir(runs[0].path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 10 + 1);
    for n in names {
        let x = fs::read(runs[0].path().join("out").join(&n)).unwrap();
        let y = fs::read(runs[1].path().join("out").join(&n)).unwrap();
        if n != "results.csv" {
            assert_eq!(x, y, "{n:?}");
        }
    }
}

#[test]
fn phantom_and_metrics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.f32i");
    let p = dir.path().join("a.pgm");
    for target in [&a, &p] {
        let out = patchpnp(
            &[
                "phantom",
                "--kind",
                "disc",
                "--size",
                "32",
                "--seed",
                "4",
                "-o",
                target.to_str().unwrap(),
            ],
            None,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let img = read_image(&a).unwrap();
    assert_eq!(img.dims(), (32, 32));
    assert_eq!(img.get(0, 0), 0.0);

    let out = patchpnp(
        &["metrics", a.to_str().unwrap(), a.to_str().unwrap(), "--patch", "8"],
        None,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("psnr=inf"), "{stdout}");
    assert!(stdout.contains("rmse=0"), "{stdout}");
    assert!(stdout.contains("seam_score="), "{stdout}");

    // 16-bit PGM quantization keeps PSNR high but finite
    let out = patchpnp(&["metrics", p.to_str().unwrap(), a.to_str().unwrap()], None);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let psnr: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("psnr="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(psnr > 90.0, "{psnr}");
}

#[test]
fn metrics_on_missing_file_exits_2() {
    let out = patchpnp(&["metrics", "/nope/a.f32i", "/nope/b.f32i"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nope/a.f32i"));
}
