//! Stitching predictions back into the test region and scoring them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use urbanform_core::metrics::{confusion, ConfusionMatrix, MetricsReport};
use urbanform_core::raster::io::{read_labels, write_labels, write_labels_rgb, LabelReadOptions};
use urbanform_core::raster::{LabelRaster, PixelRect};
use urbanform_core::typology::ClassLabel;
use urbanform_core::windowing::{stitch, MergePolicy, Role};

use crate::backend::read_prediction;
use crate::manifest::DatasetManifest;
use crate::{io_err, write_json, PipelineError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const STITCHED_LABELS: &str = "prediction_lbl.png";
pub const STITCHED_RGB: &str = "prediction_rgb.png";

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub summary: Vec<String>,
    pub metrics: MetricsReport<f64>,
    pub evaluated_pixels: u64,
    pub ignored_pixels: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_region: Option<PixelRect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiles: Option<usize>,
}

impl EvaluationReport {
    pub fn new(m: &ConfusionMatrix) -> Result<Self> {
        let metrics = MetricsReport::<f64>::from_confusion(m)?;
        Ok(Self {
            summary: metrics.summary_lines(),
            metrics,
            evaluated_pixels: m.total(),
            ignored_pixels: m.ignored(),
            test_region: None,
            tiles: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub confusion: ConfusionMatrix,
    pub report: EvaluationReport,
    pub stitched: LabelRaster,
}

/// Reads the prediction for every `role` tile from `preds`, keyed by the tile
/// origin. A missing file is a coverage error naming the tile.
pub fn load_predictions(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    preds: &Path,
    role: Role,
) -> Result<Vec<((usize, usize), LabelRaster)>> {
    let palette = manifest.palette()?;
    let size = match role {
        Role::Train => manifest.windows.train.size,
        Role::Test => manifest.windows.test.size,
    };
    let root = manifest.root_dir(manifest_path);
    let tiles: Vec<_> = manifest.tiles(role).collect();
    tiles
        .par_iter()
        .map(|t| {
            let path = preds.join(t.image_file_name());
            if !path.is_file() {
                return Err(PipelineError::Coverage {
                    tile: format!("{} tile {}", t.role, t.stem()),
                    path,
                });
            }
            let dims = image::image_dimensions(root.join(&t.image))
                .map(|(w, h)| (w as usize, h as usize))
                .unwrap_or((size, size));
            let l = read_prediction(&path, dims)?;
            Ok(((t.origin[0], t.origin[1]), l.with_palette(palette)))
        })
        .collect()
}

/// Reassembles test predictions into a raster the size of the test region.
pub fn stitch_predictions(
    manifest: &DatasetManifest,
    predictions: &[((usize, usize), LabelRaster)],
    policy: MergePolicy,
) -> Result<LabelRaster> {
    let rect = manifest.test_region.rect;
    let refs: Vec<_> = predictions.iter().map(|(o, l)| (*o, l)).collect();
    let geo = manifest
        .raster
        .geotransform
        .map(|g| g.offset(rect.x as u64, rect.y as u64));
    Ok(stitch(&refs, rect.width, rect.height, policy)?
        .with_palette(manifest.palette()?)
        .with_geotransform(geo))
}

/// Confusion of `pred` against `gt`, with unrecognized ground truth ignored.
pub fn score(gt: &LabelRaster, pred: &LabelRaster) -> Result<ConfusionMatrix> {
    Ok(confusion(gt, pred, Some(ClassLabel::Unrecognized))?)
}

/// Writes `report.json`, the stitched class indices and their RGB rendering.
pub fn write_outputs(out: &Path, report: &EvaluationReport, stitched: &LabelRaster) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join(REPORT_FILE), report)?;
    write_labels(&out.join(STITCHED_LABELS), stitched)?;
    write_labels_rgb(&out.join(STITCHED_RGB), stitched)?;
    Ok(())
}

/// Stitches the test predictions in `preds`, scores them against the test-region
/// ground truth and, if `out` is given, writes the report and rasters there.
pub fn evaluate_run(manifest_path: &Path, preds: &Path, out: Option<&Path>) -> Result<RunEvaluation> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let predictions = load_predictions(&manifest, manifest_path, preds, Role::Test)?;
    let stitched = stitch_predictions(&manifest, &predictions, MergePolicy::MajorityVote)?;
    let gt_path = manifest.root_dir(manifest_path).join(&manifest.test_region.label);
    if !gt_path.is_file() {
        return Err(PipelineError::MissingFile(gt_path));
    }
    let gt = read_labels(
        &gt_path,
        LabelReadOptions {
            palette: Some(manifest.palette()?),
            tolerance: 0,
        },
    )?;
    let m = score(&gt, &stitched)?;
    let mut report = EvaluationReport::new(&m)?;
    report.test_region = Some(manifest.test_region.rect);
    report.tiles = Some(predictions.len());
    if let Some(out) = out {
        write_outputs(out, &report, &stitched)?;
    }
    Ok(RunEvaluation {
        confusion: m,
        report,
        stitched,
    })
}
