//! Single-channel real-valued raster and border extension.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Row-major single-channel image.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; images have at least one pixel.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Logical size of the pixel buffer in bytes.
    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally sized images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Copy out the rectangle `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Image {
            height: h,
            width: w,
            data,
        })
    }
}

/// Border extension rule used wherever pixels outside an image are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PaddingMode {
    Zero,
    /// Mirror about the edge pixel without repeating it: `[3,2,|1,2,3]`.
    #[default]
    Reflect,
}

impl PaddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PaddingMode::Zero => "zero",
            PaddingMode::Reflect => "reflect",
        }
    }
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" => Ok(PaddingMode::Zero),
            "reflect" => Ok(PaddingMode::Reflect),
            other => Err(Error::invalid(format!("unknown padding mode `{other}`"))),
        }
    }
}

/// Map a possibly out-of-range coordinate onto `[0, n)` by mirroring.
///
/// Within one reflection (`-(n-1) ..= 2(n-1)`) this is exactly the `pad`
/// rule; further out the mirror repeats with period `2(n-1)`. A length-one
/// axis maps everything to 0.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Read pixel `(y, x)` with out-of-bounds coordinates resolved by `mode`.
#[inline]
pub fn sample(img: &Image, y: isize, x: isize, mode: PaddingMode) -> f64 {
    let (h, w) = (img.height as isize, img.width as isize);
    if (0..h).contains(&y) && (0..w).contains(&x) {
        return img.get(y as usize, x as usize);
    }
    match mode {
        PaddingMode::Zero => 0.0,
        PaddingMode::Reflect => img.get(mirror_index(y, img.height), mirror_index(x, img.width)),
    }
}

/// Extend `img` by the given amounts on each side.
///
/// Reflect needs each amount to be at most `dimension - 1`, otherwise the
/// mirror would have to wrap around a second time.
pub fn pad(img: &Image, top: usize, bottom: usize, left: usize, right: usize, mode: PaddingMode) -> Result<Image> {
    if mode == PaddingMode::Reflect {
        let (h, w) = img.dims();
        if top.max(bottom) > h - 1 || left.max(right) > w - 1 {
            return Err(Error::invalid(format!(
                "reflect padding ({top},{bottom},{left},{right}) too large for {h}x{w} image"
            )));
        }
    }
    let out_h = img.height + top + bottom;
    let out_w = img.width + left + right;
    Ok(Image::from_fn(out_h, out_w, |y, x| {
        sample(img, y as isize - top as isize, x as isize - left as isize, mode)
    }))
}
