//! The dataset manifest handed to training and inference backends.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use urbanform_core::raster::{class_weights, ClassHistogram, Weighting};
use urbanform_core::typology::{ClassLabel, Rgb};
use urbanform_core::windowing::Role;

use crate::dataset::{sorted_entries, DatasetLayout, RasterInfo, SplitInfo, TestRegion, TileEntry, WindowSpecs};
use crate::{io_err, read_json, write_json, PipelineError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema for [`DatasetManifest`] files.
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Resnet,
    Xception,
}

impl std::str::FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "resnet" => Ok(Self::Resnet),
            "xception" => Ok(Self::Xception),
            other => Err(format!("unknown backbone {other:?}; expected resnet or xception")),
        }
    }
}

/// Training settings passed through to the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterRecord {
    pub optimizer: String,
    pub learning_rate: f64,
    pub epochs: u32,
    pub num_classes: u32,
    pub crop: u32,
    pub backbone: Backbone,
    pub output_stride: u32,
}

impl Default for HyperparameterRecord {
    fn default() -> Self {
        Self {
            optimizer: "SGD".into(),
            learning_rate: 0.007,
            epochs: 26,
            num_classes: ClassLabel::COUNT as u32,
            crop: 513,
            backbone: Backbone::Resnet,
            output_stride: 16,
        }
    }
}

impl HyperparameterRecord {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.num_classes > 0
            && self.crop > 0
            && self.output_stride > 0;
        if !positive || self.optimizer.is_empty() {
            return Err(PipelineError::Manifest(format!("hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRow {
    pub index: u8,
    pub label: ClassLabel,
    pub color: Rgb,
    /// Excluded from the loss and from evaluation.
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsInfo {
    pub scheme: Weighting,
    /// Counts over the training region the weights were derived from.
    pub histogram: ClassHistogram,
    /// Indexed by class; the ignored class gets 0.
    pub weights: [f64; ClassLabel::COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Directory the relative paths below resolve against, relative to the
    /// manifest's own directory unless absolute.
    pub root: String,
    pub raster: RasterInfo,
    pub split: SplitInfo,
    pub windows: WindowSpecs,
    pub classes: Vec<ClassRow>,
    pub ignore_index: u8,
    pub class_weights: WeightsInfo,
    pub test_region: TestRegion,
    pub tiles: Vec<TileEntry>,
    pub hyperparameters: HyperparameterRecord,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Manifest(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn root_dir(&self, manifest_path: &Path) -> PathBuf {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        base.join(&self.root)
    }

    pub fn tiles(&self, role: Role) -> impl Iterator<Item = &TileEntry> {
        self.tiles.iter().filter(move |t| t.role == role)
    }

    pub fn palette(&self) -> Result<urbanform_core::typology::ColorMap> {
        let mut colors = [Rgb::BLACK; ClassLabel::COUNT];
        for row in &self.classes {
            colors[usize::from(row.index)] = row.color;
        }
        urbanform_core::typology::ColorMap::new(colors).map_err(|e| PipelineError::Manifest(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportOptions {
    pub weighting: Weighting,
    pub hyperparameters: HyperparameterRecord,
}

fn root_field(dataset_dir: &Path, out: &Path) -> Result<String> {
    let dataset = dataset_dir.canonicalize().map_err(io_err(dataset_dir))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let parent = parent.canonicalize().map_err(io_err(&parent))?;
    Ok(if parent == dataset {
        ".".into()
    } else {
        dataset.to_string_lossy().into_owned()
    })
}

/// Checks the `grid` output in `dataset_dir` and writes the manifest to `out`.
///
/// Fails if a listed file is missing or the tile list disagrees with the grids
/// implied by the recorded split and window specs.
pub fn export_manifest(dataset_dir: &Path, out: &Path, opts: &ExportOptions) -> Result<DatasetManifest> {
    opts.hyperparameters.validate()?;
    let layout = DatasetLayout::load(dataset_dir)?;
    let (train_grid, test_grid) = layout.grids()?;
    for (role, grid) in [(Role::Train, &train_grid), (Role::Test, &test_grid)] {
        let expected = sorted_entries(role, grid);
        let listed: Vec<_> = layout.tiles(role).cloned().collect();
        if listed != expected {
            return Err(PipelineError::Manifest(format!(
                "{role} tiles: {} listed, the grid yields {}",
                listed.len(),
                expected.len()
            )));
        }
    }
    let region = &layout.test_region;
    let files = layout
        .tiles
        .iter()
        .flat_map(|t| [&t.image, &t.label])
        .chain([&region.image, &region.label]);
    for rel in files {
        let path = dataset_dir.join(rel);
        if !path.is_file() {
            return Err(PipelineError::MissingFile(path));
        }
    }

    let w = class_weights::<f64>(&layout.train_histogram, opts.weighting)?;
    let mut weights = [0.0; ClassLabel::COUNT];
    weights[1..].copy_from_slice(&w.weights);
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        root: root_field(dataset_dir, out)?,
        raster: layout.raster,
        split: layout.split,
        windows: layout.windows,
        classes: ClassLabel::ALL
            .iter()
            .map(|&label| ClassRow {
                index: label.index(),
                label,
                color: layout.palette.color(label),
                ignore: !label.is_real(),
            })
            .collect(),
        ignore_index: ClassLabel::Unrecognized.index(),
        class_weights: WeightsInfo {
            scheme: opts.weighting,
            histogram: layout.train_histogram,
            weights,
        },
        test_region: layout.test_region,
        tiles: layout.tiles,
        hyperparameters: opts.hyperparameters.clone(),
    };
    write_json(out, &manifest)?;
    Ok(manifest)
}
