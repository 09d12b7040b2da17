//! The `grid` step: mask, split and cut a mosaic and its ground truth into
//! training and test tiles on disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! dataset.json
//! test_region_img.png   test_region_lbl.png
//! train/<oy>_<ox>_img.png   train/<oy>_<ox>_lbl.png
//! test/<oy>_<ox>_img.png    test/<oy>_<ox>_lbl.png
//! ```
//!
//! Tile origins are relative to their region (the test region starts at row 0).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use urbanform_core::raster::io::{write_labels, write_raster};
use urbanform_core::raster::{apply_unrecognized_mask, class_histogram, ClassHistogram, Crop, GeoRaster, LabelRaster, PixelRect};
use urbanform_core::tilemath::GeoTransform;
use urbanform_core::typology::ColorMap;
use urbanform_core::windowing::{extract_tiles, grid_windows, tile_stem, Role, SplitSpec, TileRecord, WindowGrid, WindowSpec, DEFAULT_WINDOW};

use crate::{io_err, read_json, write_json, PipelineError, Result};

pub const LAYOUT_FILE: &str = "dataset.json";
pub const TEST_REGION_IMAGE: &str = "test_region_img.png";
pub const TEST_REGION_LABEL: &str = "test_region_lbl.png";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub train: WindowSpec,
    pub test: WindowSpec,
    pub split: SplitSpec,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            train: WindowSpec::default(),
            test: WindowSpec {
                size: DEFAULT_WINDOW,
                overlap: 0.0,
            },
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterInfo {
    pub width: usize,
    pub height: usize,
    pub zoom: Option<u8>,
    pub geotransform: Option<GeoTransform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpecs {
    pub train: WindowSpec,
    pub test: WindowSpec,
}

/// The test band of the source raster and its full-size files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRegion {
    pub rect: PixelRect,
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub role: Role,
    /// `[x, y]` within the tile's region.
    pub origin: [usize; 2],
    pub image: String,
    pub label: String,
}

impl TileEntry {
    pub fn new(role: Role, origin: (usize, usize)) -> Self {
        let stem = tile_stem(origin);
        Self {
            role,
            origin: [origin.0, origin.1],
            image: format!("{role}/{stem}_img.png"),
            label: format!("{role}/{stem}_lbl.png"),
        }
    }

    pub fn stem(&self) -> String {
        tile_stem((self.origin[0], self.origin[1]))
    }

    /// File name of the image, which is also the name of its prediction.
    pub fn image_file_name(&self) -> &str {
        self.image.rsplit('/').next().unwrap_or(&self.image)
    }
}

/// Everything `grid` produced, as recorded in `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub raster: RasterInfo,
    pub palette: ColorMap,
    pub split: SplitInfo,
    pub windows: WindowSpecs,
    /// Class counts over the whole training region (each pixel once).
    pub train_histogram: ClassHistogram,
    pub test_region: TestRegion,
    /// Train entries first, then test; each row-major by origin.
    pub tiles: Vec<TileEntry>,
}

impl DatasetLayout {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(LAYOUT_FILE))
    }

    pub fn tiles(&self, role: Role) -> impl Iterator<Item = &TileEntry> {
        self.tiles.iter().filter(move |t| t.role == role)
    }

    /// Grids implied by the split and window specs.
    pub fn grids(&self) -> Result<(WindowGrid, WindowGrid)> {
        let w = self.raster.width;
        Ok((
            grid_windows(w, self.split.train_rows, &self.windows.train)?,
            grid_windows(w, self.split.test_rows, &self.windows.test)?,
        ))
    }
}

pub(crate) fn sorted_entries(role: Role, grid: &WindowGrid) -> Vec<TileEntry> {
    let mut origins: Vec<_> = grid.origins().collect();
    origins.sort_by_key(|&(x, y)| (y, x));
    origins.into_iter().map(|o| TileEntry::new(role, o)).collect()
}

fn write_tiles(out: &Path, records: &[TileRecord]) -> Result<()> {
    records.par_iter().try_for_each(|t| {
        let entry = TileEntry::new(t.role, t.origin);
        write_raster(&out.join(&entry.image), &t.image)?;
        if let Some(l) = &t.label {
            write_labels(&out.join(&entry.label), l)?;
        }
        Ok(())
    })
}

/// Masks `image` with the unrecognized region of `labels`, splits both into
/// train/test bands, grids each band and writes tiles plus `dataset.json`.
pub fn build_dataset(image: &GeoRaster, labels: &LabelRaster, opts: &GridOptions, out: &Path) -> Result<DatasetLayout> {
    if image.dimensions() != labels.dimensions() {
        return Err(PipelineError::Manifest(format!(
            "imagery is {}×{} but labels are {}×{}",
            image.width(),
            image.height(),
            labels.width(),
            labels.height()
        )));
    }
    let (width, height) = image.dimensions();
    let (train_rect, test_rect) = opts.split.regions(width, height)?;
    let train_grid = grid_windows(width, train_rect.height, &opts.train)?;
    let test_grid = grid_windows(width, test_rect.height, &opts.test)?;

    let masked = apply_unrecognized_mask(image, labels)?;
    for role in [Role::Train, Role::Test] {
        let dir = out.join(role.as_str());
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for (rect, grid, role) in [(train_rect, &train_grid, Role::Train), (test_rect, &test_grid, Role::Test)] {
        let region_img = masked.crop(rect)?;
        let region_lbl = labels.crop(rect)?;
        let records = extract_tiles(&region_img, Some(&region_lbl), grid, role)?;
        write_tiles(out, &records)?;
        if role == Role::Test {
            write_raster(&out.join(TEST_REGION_IMAGE), &region_img)?;
            write_labels(&out.join(TEST_REGION_LABEL), &region_lbl)?;
        }
    }

    let mut tiles = sorted_entries(Role::Train, &train_grid);
    tiles.extend(sorted_entries(Role::Test, &test_grid));
    let layout = DatasetLayout {
        raster: RasterInfo {
            width,
            height,
            zoom: image.geotransform.map(|g| g.zoom),
            geotransform: image.geotransform,
        },
        palette: labels.palette,
        split: SplitInfo {
            train_fraction: opts.split.train_fraction,
            train_rows: train_rect.height,
            test_rows: test_rect.height,
        },
        windows: WindowSpecs {
            train: opts.train,
            test: opts.test,
        },
        train_histogram: class_histogram(labels, Some(train_rect))?,
        test_region: TestRegion {
            rect: test_rect,
            image: TEST_REGION_IMAGE.into(),
            label: TEST_REGION_LABEL.into(),
        },
        tiles,
    };
    write_json(&out.join(LAYOUT_FILE), &layout)?;
    Ok(layout)
}
