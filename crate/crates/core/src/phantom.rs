//! Synthetic test images with values in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::SeededRng;

/// Foreground intensity of the disc phantom.
pub const DISC_INTENSITY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomKind {
    /// Shepp-Logan-like stack of ellipses with jittered geometry.
    Ellipses,
    /// A flat disc wide enough to cross the image edges, on a zero
    /// background that always owns the corners.
    Disc,
    /// Low-frequency random cosine field, min-max scaled.
    SmoothField,
}

impl PhantomKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhantomKind::Ellipses => "shepp-like-ellipses",
            PhantomKind::Disc => "disc-on-background",
            PhantomKind::SmoothField => "smooth-random-field",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shepp-like-ellipses" | "ellipses" | "shepp" => Ok(PhantomKind::Ellipses),
            "disc-on-background" | "disc" => Ok(PhantomKind::Disc),
            "smooth-random-field" | "smooth" | "field" => Ok(PhantomKind::SmoothField),
            other => Err(Error::invalid(format!("unknown phantom kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

pub fn gen_phantom(spec: &PhantomSpec) -> Result<Image> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "phantom dimensions must be positive, got {h}x{w}"
        )));
    }
    let mut rng = SeededRng::new(spec.seed, 0);
    let img = match spec.kind {
        PhantomKind::Disc => disc(h, w, &mut rng),
        PhantomKind::Ellipses => ellipses(h, w, &mut rng),
        PhantomKind::SmoothField => smooth_field(h, w, &mut rng),
    };
    Ok(img)
}

fn disc(h: usize, w: usize, rng: &mut SeededRng) -> Image {
    let m = h.min(w) as f64;
    let cy = h as f64 / 2.0 + (rng.uniform() - 0.5) * m / 8.0;
    let cx = w as f64 / 2.0 + (rng.uniform() - 0.5) * m / 8.0;
    // r <= 0.6 m while every corner is at least ~0.62 m from the centre
    let r = m * (0.5 + 0.1 * rng.uniform());
    Image::from_fn(h, w, |y, x| {
        let dy = y as f64 + 0.5 - cy;
        let dx = x as f64 + 0.5 - cx;
        if dy * dy + dx * dx <= r * r {
            DISC_INTENSITY
        } else {
            0.0
        }
    })
}

fn ellipses(h: usize, w: usize, rng: &mut SeededRng) -> Image {
    // (intensity, cy, cx, ay, ax, angle) in unit coordinates, Shepp-Logan style
    const BASE: [(f64, f64, f64, f64, f64, f64); 6] = [
        (0.8, 0.0, 0.0, 0.92, 0.69, 0.0),
        (-0.6, -0.0184, 0.0, 0.874, 0.6624, 0.0),
        (-0.15, 0.0, 0.22, 0.31, 0.11, -0.3142),
        (-0.15, 0.0, -0.22, 0.41, 0.16, 0.3142),
        (0.25, 0.35, 0.0, 0.25, 0.21, 0.0),
        (0.2, -0.5, 0.05, 0.08, 0.12, 0.5),
    ];
    let params: Vec<_> = BASE
        .iter()
        .map(|&(v, cy, cx, ay, ax, t)| {
            let j = |rng: &mut SeededRng, s: f64| (rng.uniform() - 0.5) * s;
            (
                v,
                cy + j(rng, 0.04),
                cx + j(rng, 0.04),
                ay * (1.0 + j(rng, 0.1)),
                ax * (1.0 + j(rng, 0.1)),
                t + j(rng, 0.2),
            )
        })
        .collect();
    Image::from_fn(h, w, |y, x| {
        let py = 1.0 - 2.0 * (y as f64 + 0.5) / h as f64;
        let px = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
        let mut v = 0.0;
        for &(val, cy, cx, ay, ax, t) in &params {
            let (s, c) = t.sin_cos();
            let u = (px - cx) * c + (py - cy) * s;
            let q = -(px - cx) * s + (py - cy) * c;
            if (u / ax).powi(2) + (q / ay).powi(2) <= 1.0 {
                v += val;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

fn smooth_field(h: usize, w: usize, rng: &mut SeededRng) -> Image {
    let waves: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            let fy = 0.5 + 2.5 * rng.uniform();
            let fx = 0.5 + 2.5 * rng.uniform();
            let phase = std::f64::consts::TAU * rng.uniform();
            let amp = rng.normal();
            (fy, fx, phase, amp)
        })
        .collect();
    let raw = Image::from_fn(h, w, |y, x| {
        let v = y as f64 / h as f64;
        let u = x as f64 / w as f64;
        waves
            .iter()
            .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * v + fx * u) + ph).cos())
            .sum()
    });
    let lo = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON {
        return Image::filled(h, w, 0.5);
    }
    raw.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}
