//! Shifted patch lattices: tiling an image into square patches and
//! stitching the per-patch results back together.
//!
//! Tiles start at `(i * patch - oy, j * patch - ox)`, so a nonzero offset
//! moves the lattice up and to the left. Border tiles that hang over the
//! image are completed from the grid's padding rule, evaluated as full
//! patches, and cropped back to the part that lies inside the image. The
//! cropped parts partition the image for every offset in `[0, patch)^2`.

use crate::error::{Error, Result};
use crate::image::{mirror_index, sample, Image, PaddingMode};

/// Axis-aligned rectangle in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(y0: usize, x0: usize, height: usize, width: usize) -> Self {
        Self { y0, x0, height, width }
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    patch: usize,
    offset: (usize, usize),
    context_margin: usize,
    padding: PaddingMode,
}

impl PatchGrid {
    pub fn new(patch: usize, offset: (usize, usize), context_margin: usize, padding: PaddingMode) -> Result<Self> {
        if patch == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if offset.0 >= patch || offset.1 >= patch {
            return Err(Error::invalid(format!(
                "offset ({}, {}) must lie in [0, {patch})",
                offset.0, offset.1
            )));
        }
        if context_margin >= patch {
            return Err(Error::invalid(format!(
                "context margin {context_margin} must be smaller than patch {patch}"
            )));
        }
        Ok(Self {
            patch,
            offset,
            context_margin,
            padding,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    pub fn context_margin(&self) -> usize {
        self.context_margin
    }

    pub fn padding(&self) -> PaddingMode {
        self.padding
    }

    /// Same lattice with a different offset.
    pub fn with_offset(&self, offset: (usize, usize)) -> Result<Self> {
        Self::new(self.patch, offset, self.context_margin, self.padding)
    }

    /// Side length of an extracted patch, context included.
    pub fn tile_side(&self) -> usize {
        self.patch + 2 * self.context_margin
    }

    /// Start coordinates (possibly negative) of the tiles along one axis.
    fn starts(&self, len: usize, off: usize) -> impl Iterator<Item = isize> {
        let p = self.patch as isize;
        let first = -(off as isize);
        (0..).map(move |i| first + i * p).take_while(move |&s| s < len as isize)
    }

    /// Tile layout for an image of the given size: each entry is the
    /// cropped placement and the image coordinate of the extracted patch's
    /// top-left pixel (context included).
    pub fn layout(&self, height: usize, width: usize) -> Vec<TileSlot> {
        let p = self.patch as isize;
        let m = self.context_margin as isize;
        let mut slots = Vec::new();
        for sy in self.starts(height, self.offset.0) {
            for sx in self.starts(width, self.offset.1) {
                let y0 = sy.max(0) as usize;
                let x0 = sx.max(0) as usize;
                let y1 = ((sy + p) as usize).min(height);
                let x1 = ((sx + p) as usize).min(width);
                slots.push(TileSlot {
                    placement: Rect::new(y0, x0, y1 - y0, x1 - x0),
                    origin: (sy - m, sx - m),
                });
            }
        }
        slots
    }

    /// Pixel pairs straddling a tile boundary: `true` if the horizontal
    /// pair `(y, x)-(y, x+1)` crosses a vertical seam.
    pub fn is_vertical_seam(&self, x: usize) -> bool {
        (x + 1 + self.offset.1).is_multiple_of(self.patch)
    }

    /// `true` if the vertical pair `(y, x)-(y+1, x)` crosses a horizontal seam.
    pub fn is_horizontal_seam(&self, y: usize) -> bool {
        (y + 1 + self.offset.0).is_multiple_of(self.patch)
    }
}

/// Where a tile lives: its cropped placement and the image coordinate of
/// its first (context) pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSlot {
    pub placement: Rect,
    pub origin: (isize, isize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub patch: Image,
    pub placement: Rect,
    pub origin: (isize, isize),
}

/// Copy out the `side x side` window starting at `origin`, reading
/// outside pixels through `mode`.
pub fn extract(img: &Image, origin: (isize, isize), side: usize, mode: PaddingMode) -> Image {
    Image::from_fn(side, side, |a, b| {
        sample(img, origin.0 + a as isize, origin.1 + b as isize, mode)
    })
}

/// Transpose of [`extract`]: accumulate `patch` into `dst`, folding
/// out-of-bounds contributions back through the padding rule.
pub fn extract_adjoint_add(dst: &mut Image, patch: &Image, origin: (isize, isize), mode: PaddingMode) {
    let (h, w) = dst.dims();
    for a in 0..patch.height() {
        for b in 0..patch.width() {
            let y = origin.0 + a as isize;
            let x = origin.1 + b as isize;
            let inside = (0..h as isize).contains(&y) && (0..w as isize).contains(&x);
            let target = if inside {
                Some((y as usize, x as usize))
            } else {
                match mode {
                    PaddingMode::Zero => None,
                    PaddingMode::Reflect => Some((mirror_index(y, h), mirror_index(x, w))),
                }
            };
            if let Some((ty, tx)) = target {
                let v = dst.get(ty, tx) + patch.get(a, b);
                dst.set(ty, tx, v);
            }
        }
    }
}

pub fn tile(img: &Image, grid: &PatchGrid) -> Vec<Tile> {
    let side = grid.tile_side();
    grid.layout(img.height(), img.width())
        .into_iter()
        .map(|slot| Tile {
            patch: extract(img, slot.origin, side, grid.padding()),
            placement: slot.placement,
            origin: slot.origin,
        })
        .collect()
}

/// Incremental stitcher that checks the placements form a partition.
#[derive(Debug)]
pub struct Stitcher {
    target: Image,
    covered: Vec<bool>,
}

impl Stitcher {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            target: Image::zeros(height, width),
            covered: vec![false; height * width],
        }
    }

    /// Write the part of `patch` (whose first pixel sits at `origin`) that
    /// falls inside `placement`.
    pub fn add(&mut self, patch: &Image, placement: Rect, origin: (isize, isize)) -> Result<()> {
        let (h, w) = self.target.dims();
        if placement.area() == 0 || placement.y1() > h || placement.x1() > w {
            return Err(Error::invalid(format!("placement {placement:?} outside {h}x{w} image")));
        }
        let dy = placement.y0 as isize - origin.0;
        let dx = placement.x0 as isize - origin.1;
        if dy < 0
            || dx < 0
            || dy as usize + placement.height > patch.height()
            || dx as usize + placement.width > patch.width()
        {
            return Err(Error::invalid(format!(
                "placement {placement:?} not contained in {}x{} patch at {origin:?}",
                patch.height(),
                patch.width()
            )));
        }
        for y in placement.y0..placement.y1() {
            for x in placement.x0..placement.x1() {
                let k = y * w + x;
                if self.covered[k] {
                    return Err(Error::invalid(format!("pixel ({y}, {x}) covered twice")));
                }
                self.covered[k] = true;
                let v = patch.get(y - placement.y0 + dy as usize, x - placement.x0 + dx as usize);
                self.target.set(y, x, v);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Image> {
        if let Some(k) = self.covered.iter().position(|c| !c) {
            let w = self.target.width();
            return Err(Error::invalid(format!(
                "pixel ({}, {}) not covered by any patch",
                k / w,
                k % w
            )));
        }
        Ok(self.target)
    }
}

pub fn stitch(tiles: &[Tile], height: usize, width: usize) -> Result<Image> {
    let mut stitcher = Stitcher::new(height, width);
    for t in tiles {
        stitcher.add(&t.patch, t.placement, t.origin)?;
    }
    stitcher.finish()
}
