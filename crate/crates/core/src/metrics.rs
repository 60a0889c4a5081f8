//! Image-quality and artifact metrics.

use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::image::Image;
use crate::rng::SeededRng;

pub use crate::memory::{Charge, Direction, LedgerEvent, MemoryLedger};

/// Seed for the interior-pair sample in [`seam_artifact_score`].
const SEAM_SAMPLE_SEED: u64 = 0x5ea3_5ea3;

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    mse(a, b).map(f64::sqrt)
}

/// `10 log10(peak^2 / MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Excess mean absolute difference across tile boundaries.
///
/// Seam pairs are the horizontally or vertically adjacent pixel pairs that
/// straddle a tile boundary of `grid` shifted by any of `offsets_used`
/// (the grid's own offset when the list is empty). Their mean `|delta|`
/// minus the mean `|delta|` of an equally sized, fixed-seed sample of the
/// remaining pairs is returned. Zero when there are no seam pairs.
pub fn seam_artifact_score(img: &Image, grid: &PatchGrid, offsets_used: &[(usize, usize)]) -> Result<f64> {
    let grids: Vec<PatchGrid> = if offsets_used.is_empty() {
        vec![*grid]
    } else {
        offsets_used
            .iter()
            .map(|&o| grid.with_offset(o))
            .collect::<Result<_>>()?
    };
    let (h, w) = img.dims();
    let mut seam = Vec::new();
    let mut interior = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let d = (img.get(y, x + 1) - img.get(y, x)).abs();
                if grids.iter().any(|g| g.is_vertical_seam(x)) {
                    seam.push(d);
                } else {
                    interior.push(d);
                }
            }
            if y + 1 < h {
                let d = (img.get(y + 1, x) - img.get(y, x)).abs();
                if grids.iter().any(|g| g.is_horizontal_seam(y)) {
                    seam.push(d);
                } else {
                    interior.push(d);
                }
            }
        }
    }
    if seam.is_empty() {
        return Ok(0.0);
    }
    let seam_mean = seam.iter().sum::<f64>() / seam.len() as f64;
    if interior.is_empty() {
        return Ok(seam_mean);
    }
    // partial Fisher-Yates draw without replacement
    let take = seam.len().min(interior.len());
    let mut rng = SeededRng::new(SEAM_SAMPLE_SEED, 0);
    for i in 0..take {
        let j = i + rng.below((interior.len() - i) as u64) as usize;
        interior.swap(i, j);
    }
    let interior_mean = interior[..take].iter().sum::<f64>() / take as f64;
    Ok(seam_mean - interior_mean)
}

/// RMSE over the outer frame of `band` pixels. `band` may reach half the
/// smaller dimension (rounded up), where the frame is the whole image.
pub fn edge_band_rmse(a: &Image, reference: &Image, band: usize) -> Result<f64> {
    a.ensure_same_dims(reference)?;
    let (h, w) = a.dims();
    if band == 0 || 2 * band > h.min(w) + 1 {
        return Err(Error::invalid(format!("band {band} out of range for {h}x{w} image")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let in_band = y < band || x < band || y >= h - band || x >= w - band;
            if in_band {
                sum += (a.get(y, x) - reference.get(y, x)).powi(2);
                n += 1;
            }
        }
    }
    Ok((sum / n as f64).sqrt())
}
