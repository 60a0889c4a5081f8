//! Sigma-conditioned denoisers used as the plug-and-play prior.
//!
//! A prior exposes `denoise(x, sigma)` and the exact vector-Jacobian
//! product of that map, so guidance gradients need no autodiff. The two
//! built-ins are linear in `x` at fixed `sigma`:
//!
//! * [`GaussianAnalyticPrior`]: the MMSE estimator for `x ~ N(mu, tau^2)`
//!   per pixel, `mu + (x - mu) tau^2 / (tau^2 + sigma^2)`. Pointwise.
//! * [`ConvSmootherPrior`]: `(1 - l) x + l (k * x)` with
//!   `l(sigma) = sigma^2 / (sigma^2 + c^2)` and a small normalized kernel.
//!   Translation invariant with receptive radius `(k - 1) / 2`.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{mirror_index, sample, Image, PaddingMode};

pub trait DenoiserPrior: Send + Sync + fmt::Debug {
    fn denoise(&self, x: &Image, sigma: f64) -> Result<Image>;

    /// `(d denoise / d x)^T v` at `x`.
    fn vjp(&self, x: &Image, sigma: f64, v: &Image) -> Result<Image>;

    /// Largest pixel distance an output depends on.
    fn receptive_radius(&self) -> usize;

    /// Declared scratch bytes for one evaluation on an `height x width`
    /// input, charged to the memory ledger on top of the input/output
    /// buffers.
    fn working_bytes(&self, _height: usize, _width: usize) -> usize {
        0
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must be positive, got {sigma}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianAnalyticPrior {
    tau: f64,
    mu: f64,
}

impl GaussianAnalyticPrior {
    pub fn new(tau: f64, mu: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() || !mu.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian prior needs tau > 0 and finite mu, got tau={tau}, mu={mu}"
            )));
        }
        Ok(Self { tau, mu })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn shrinkage(&self, sigma: f64) -> f64 {
        // tau^2 / (tau^2 + sigma^2), written to survive overflow of either square
        1.0 / (1.0 + (sigma / self.tau).powi(2))
    }
}

impl DenoiserPrior for GaussianAnalyticPrior {
    fn denoise(&self, x: &Image, sigma: f64) -> Result<Image> {
        check_sigma(sigma)?;
        let s = self.shrinkage(sigma);
        Ok(x.map(|v| self.mu + (v - self.mu) * s))
    }

    fn vjp(&self, x: &Image, sigma: f64, v: &Image) -> Result<Image> {
        check_sigma(sigma)?;
        x.ensure_same_dims(v)?;
        let s = self.shrinkage(sigma);
        Ok(v.map(|u| u * s))
    }

    fn receptive_radius(&self) -> usize {
        0
    }
}

/// Odd-sized, non-negative, unit-sum square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Normalizes `weights` (row-major, `size x size`) to sum to one.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("kernel weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("kernel weights sum to zero"));
        }
        Ok(Self {
            size,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn boxcar(size: usize) -> Result<Self> {
        Self::new(size, vec![1.0; size * size])
    }

    /// Separable binomial kernel, e.g. `[1 2 1]^T [1 2 1] / 16` for size 3.
    pub fn binomial(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        let mut row = vec![1.0f64];
        for _ in 1..size {
            let mut next = vec![1.0; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        let weights = row.iter().flat_map(|a| row.iter().map(move |b| a * b)).collect();
        Self::new(size, weights)
    }

    /// Parse the text form: first line the odd size `k`, then `k` rows of
    /// `k` whitespace-separated reals.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let size: usize = lines
            .next()
            .ok_or_else(|| Error::invalid("empty kernel file"))?
            .parse()
            .map_err(|_| Error::invalid("kernel size line is not an integer"))?;
        let mut weights = Vec::with_capacity(size * size);
        for r in 0..size {
            let line = lines
                .next()
                .ok_or_else(|| Error::invalid(format!("kernel row {} missing", r + 1)))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("kernel row {}: {e}", r + 1)))?;
            if row.len() != size {
                return Err(Error::invalid(format!(
                    "kernel row {} has {} entries, expected {size}",
                    r + 1,
                    row.len()
                )));
            }
            weights.extend(row);
        }
        if lines.next().is_some() {
            return Err(Error::invalid("trailing data after kernel rows"));
        }
        Self::new(size, weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.size + b]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `out(y, x) = sum_ab k(a, b) img(y + a - r, x + b - r)`, borders by `mode`.
    pub fn apply(&self, img: &Image, mode: PaddingMode) -> Image {
        let r = self.radius() as isize;
        let (h, w) = img.dims();
        Image::from_fn(h, w, |y, x| {
            let mut acc = 0.0;
            for a in 0..self.size {
                for b in 0..self.size {
                    let k = self.weights[a * self.size + b];
                    if k != 0.0 {
                        acc += k * sample(img, y as isize + a as isize - r, x as isize + b as isize - r, mode);
                    }
                }
            }
            acc
        })
    }

    /// Exact transpose of [`Kernel::apply`] under the same border rule.
    pub fn apply_transpose(&self, v: &Image, mode: PaddingMode) -> Image {
        let r = self.radius() as isize;
        let (h, w) = v.dims();
        let mut out = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let g = v.get(y, x);
                if g == 0.0 {
                    continue;
                }
                for a in 0..self.size {
                    for b in 0..self.size {
                        let k = self.weights[a * self.size + b];
                        let sy = y as isize + a as isize - r;
                        let sx = x as isize + b as isize - r;
                        let inside = (0..h as isize).contains(&sy) && (0..w as isize).contains(&sx);
                        let (ty, tx) = if inside {
                            (sy as usize, sx as usize)
                        } else if mode == PaddingMode::Reflect {
                            (mirror_index(sy, h), mirror_index(sx, w))
                        } else {
                            continue;
                        };
                        let cur = out.get(ty, tx);
                        out.set(ty, tx, cur + k * g);
                    }
                }
            }
        }
        out
    }
}

pub const DEFAULT_BLEND_CONSTANT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSmootherPrior {
    kernel: Kernel,
    blend_c: f64,
    border: PaddingMode,
}

impl ConvSmootherPrior {
    pub fn new(kernel: Kernel, blend_c: f64, border: PaddingMode) -> Result<Self> {
        if !(blend_c > 0.0) || !blend_c.is_finite() {
            return Err(Error::invalid(format!(
                "blend constant must be positive, got {blend_c}"
            )));
        }
        Ok(Self {
            kernel,
            blend_c,
            border,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn border(&self) -> PaddingMode {
        self.border
    }

    /// `sigma^2 / (sigma^2 + c^2)`: 0 at `sigma = 0`, increasing to 1.
    pub fn blend(&self, sigma: f64) -> f64 {
        1.0 / (1.0 + (self.blend_c / sigma).powi(2))
    }
}

impl DenoiserPrior for ConvSmootherPrior {
    fn denoise(&self, x: &Image, sigma: f64) -> Result<Image> {
        check_sigma(sigma)?;
        let l = self.blend(sigma);
        let smooth = self.kernel.apply(x, self.border);
        x.zip_map(&smooth, |a, s| (1.0 - l) * a + l * s)
    }

    fn vjp(&self, x: &Image, sigma: f64, v: &Image) -> Result<Image> {
        check_sigma(sigma)?;
        x.ensure_same_dims(v)?;
        let l = self.blend(sigma);
        let back = self.kernel.apply_transpose(v, self.border);
        v.zip_map(&back, |a, s| (1.0 - l) * a + l * s)
    }

    fn receptive_radius(&self) -> usize {
        self.kernel.radius()
    }

    /// The smoothed (or back-projected) copy held alongside the output.
    fn working_bytes(&self, height: usize, width: usize) -> usize {
        height * width * std::mem::size_of::<f64>()
    }
}

/// Serializable description of a built-in prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Gaussian {
        tau: f64,
        mu: f64,
    },
    ConvSmoother {
        kernel: Kernel,
        blend_c: f64,
        border: PaddingMode,
    },
}

impl PriorSpec {
    pub fn build(&self) -> Result<Box<dyn DenoiserPrior>> {
        Ok(match self {
            PriorSpec::Gaussian { tau, mu } => Box::new(GaussianAnalyticPrior::new(*tau, *mu)?),
            PriorSpec::ConvSmoother {
                kernel,
                blend_c,
                border,
            } => Box::new(ConvSmootherPrior::new(kernel.clone(), *blend_c, *border)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Gaussian { .. } => "gaussian",
            PriorSpec::ConvSmoother { .. } => "conv",
        }
    }
}
