//! Train/test splitting, overlap gridding into fixed-size windows, tile
//! extraction and stitching tiles back together.
//!
//! Windows never leave the raster: when the stride does not divide the free
//! span, one extra window is clamped flush against the far edge.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{apply_unrecognized_mask, Crop, GeoRaster, LabelRaster, PixelRect, RasterError};
use crate::typology::ClassLabel;

pub const DEFAULT_WINDOW: usize = 513;
pub const DEFAULT_TRAIN_OVERLAP: f64 = 0.70;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.70;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window size must be at least 1")]
    ZeroSize,
    #[error("overlap {0} must lie in [0, 1)")]
    Overlap(f64),
    #[error("train fraction {0} must lie in (0, 1)")]
    Fraction(f64),
    #[error("{axis} extent {dimension} is smaller than the {size}px window; pad the mosaic to at least {size}px first")]
    TooSmall {
        axis: &'static str,
        dimension: usize,
        size: usize,
    },
    #[error("raster with {0} rows cannot be split; need at least 2")]
    TooShort(usize),
    #[error("train fraction {fraction} of {height} rows leaves an empty {empty} region")]
    EmptySplit {
        fraction: f64,
        height: usize,
        empty: &'static str,
    },
    #[error("image is {0}×{1} but the grid was built for {2}×{3}")]
    GridMismatch(usize, usize, usize, usize),
    #[error("tile at ({x}, {y}) of size {w}×{h} exceeds the {width}×{height} output")]
    TileOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("pixel ({0}, {1}) is not covered by any tile")]
    Uncovered(usize, usize),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T, E = WindowError> = std::result::Result<T, E>;

/// Window size and fractional overlap between neighbouring windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: usize,
    pub overlap: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            size: DEFAULT_WINDOW,
            overlap: DEFAULT_TRAIN_OVERLAP,
        }
    }
}

impl WindowSpec {
    pub fn new(size: usize, overlap: f64) -> Result<Self> {
        if size == 0 {
            return Err(WindowError::ZeroSize);
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(WindowError::Overlap(overlap));
        }
        Ok(Self { size, overlap })
    }

    /// Non-overlapping windows of `size`.
    pub fn tiled(size: usize) -> Result<Self> {
        Self::new(size, 0.0)
    }

    /// `max(1, round(size · (1 − overlap)))`; 154 for the 513/0.7 default.
    pub fn stride(&self) -> usize {
        ((self.size as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// Window origins along both axes of a raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub size: usize,
    pub width: usize,
    pub height: usize,
    pub origins_x: Vec<usize>,
    pub origins_y: Vec<usize>,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.origins_x.len() * self.origins_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(ox, oy)` pairs, row-major.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.origins_y
            .iter()
            .flat_map(move |&oy| self.origins_x.iter().map(move |&ox| (ox, oy)))
    }
}

fn axis_origins(dimension: usize, size: usize, stride: usize, axis: &'static str) -> Result<Vec<usize>> {
    if dimension < size {
        return Err(WindowError::TooSmall { axis, dimension, size });
    }
    let last = dimension - size;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    Ok(origins)
}

pub fn grid_windows(width: usize, height: usize, spec: &WindowSpec) -> Result<WindowGrid> {
    let spec = WindowSpec::new(spec.size, spec.overlap)?;
    let stride = spec.stride();
    Ok(WindowGrid {
        size: spec.size,
        width,
        height,
        origins_x: axis_origins(width, spec.size, stride, "width")?,
        origins_y: axis_origins(height, spec.size, stride, "height")?,
    })
}

/// Top rows train, bottom rows test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(WindowError::Fraction(train_fraction));
        }
        Ok(Self { train_fraction })
    }

    /// `(train_rows, test_rows)` for a raster of `height` rows.
    pub fn rows(&self, height: usize) -> Result<(usize, usize)> {
        SplitSpec::new(self.train_fraction)?;
        if height < 2 {
            return Err(WindowError::TooShort(height));
        }
        let train = (height as f64 * self.train_fraction).round() as usize;
        let empty = match train {
            0 => Some("train"),
            t if t >= height => Some("test"),
            _ => None,
        };
        if let Some(empty) = empty {
            return Err(WindowError::EmptySplit {
                fraction: self.train_fraction,
                height,
                empty,
            });
        }
        Ok((train, height - train))
    }

    pub fn regions(&self, width: usize, height: usize) -> Result<(PixelRect, PixelRect)> {
        let (train, test) = self.rows(height)?;
        Ok((PixelRect::new(0, 0, width, train), PixelRect::new(0, train, width, test)))
    }
}

/// Splits a raster into its (train, test) row bands; geotransforms follow the crop.
pub fn split_train_test<R: Crop>(r: &R, s: &SplitSpec) -> Result<(R, R)> {
    let (w, h) = r.dimensions();
    let (train, test) = s.regions(w, h)?;
    Ok((r.crop(train)?, r.crop(test)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One window cut from a source raster.
#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    /// `(x, y)` of the window's top-left pixel in the source.
    pub origin: (usize, usize),
    pub size: usize,
    pub role: Role,
    pub image: GeoRaster,
    pub label: Option<LabelRaster>,
}

impl TileRecord {
    /// `<oy>_<ox>`, the stem used for tile file names.
    pub fn stem(&self) -> String {
        tile_stem(self.origin)
    }
}

pub fn tile_stem((ox, oy): (usize, usize)) -> String {
    format!("{oy}_{ox}")
}

/// Cuts one record per grid window. When labels are given the image is masked
/// with their `Unrecognized` region first.
pub fn extract_tiles(
    image: &GeoRaster,
    labels: Option<&LabelRaster>,
    grid: &WindowGrid,
    role: Role,
) -> Result<Vec<TileRecord>> {
    let check = |(w, h): (usize, usize)| {
        if (w, h) != (grid.width, grid.height) {
            return Err(WindowError::GridMismatch(w, h, grid.width, grid.height));
        }
        Ok(())
    };
    check(image.dimensions())?;
    let masked;
    let source = match labels {
        Some(l) => {
            check(l.dimensions())?;
            masked = apply_unrecognized_mask(image, l)?;
            &masked
        }
        None => image,
    };
    let origins: Vec<_> = grid.origins().collect();
    origins
        .into_par_iter()
        .map(|(ox, oy)| {
            let rect = PixelRect::new(ox, oy, grid.size, grid.size);
            Ok(TileRecord {
                origin: (ox, oy),
                size: grid.size,
                role,
                image: source.crop(rect)?,
                label: labels.map(|l| l.crop(rect)).transpose()?,
            })
        })
        .collect()
}

/// How overlapping tiles are reconciled per pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    /// Most frequent class among covering tiles; ties go to the lowest index.
    #[default]
    MajorityVote,
    /// The tile listed last wins.
    LastWins,
}

/// Reassembles label tiles placed at their origins into a `width × height` raster.
pub fn stitch(
    tiles: &[((usize, usize), &LabelRaster)],
    width: usize,
    height: usize,
    policy: MergePolicy,
) -> Result<LabelRaster> {
    for &((x, y), t) in tiles {
        let (w, h) = t.dimensions();
        if x + w > width || y + h > height {
            return Err(WindowError::TileOutOfBounds { x, y, w, h, width, height });
        }
    }
    let palette = tiles.first().map(|(_, t)| t.palette).unwrap_or_default();
    let mut out = vec![ClassLabel::Unrecognized; width * height];
    match policy {
        MergePolicy::LastWins => {
            let mut covered = vec![false; width * height];
            for &((x, y), t) in tiles {
                for row in 0..t.height() {
                    let dst = (y + row) * width + x;
                    let src = &t.classes()[row * t.width()..(row + 1) * t.width()];
                    out[dst..dst + src.len()].copy_from_slice(src);
                    covered[dst..dst + src.len()].fill(true);
                }
            }
            if let Some(i) = covered.iter().position(|c| !c) {
                return Err(WindowError::Uncovered(i % width, i / width));
            }
        }
        MergePolicy::MajorityVote => {
            let mut votes = vec![[0u32; ClassLabel::COUNT]; width * height];
            for &((x, y), t) in tiles {
                for row in 0..t.height() {
                    let dst = (y + row) * width + x;
                    let src = &t.classes()[row * t.width()..(row + 1) * t.width()];
                    for (v, c) in votes[dst..dst + src.len()].iter_mut().zip(src) {
                        v[usize::from(c.index())] += 1;
                    }
                }
            }
            for (i, (slot, v)) in out.iter_mut().zip(&votes).enumerate() {
                let mut best = 0;
                for k in 1..ClassLabel::COUNT {
                    if v[k] > v[best] {
                        best = k;
                    }
                }
                if v[best] == 0 {
                    return Err(WindowError::Uncovered(i % width, i / width));
                }
                *slot = ClassLabel::ALL[best];
            }
        }
    }
    Ok(LabelRaster::new(width, height, out)?.with_palette(palette))
}
