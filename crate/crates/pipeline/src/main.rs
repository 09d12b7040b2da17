use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use urbanform_core::raster::io::{read_labels, read_raster, write_labels, write_labels_rgb, write_raster, LabelReadOptions};
use urbanform_core::raster::{class_histogram, class_weights, Weighting};
use urbanform_core::tilemath::GeoPoint;
use urbanform_core::typology::{ClassLabel, ColorMap, TypologyDocument};
use urbanform_core::windowing::{MergePolicy, Role, SplitSpec, WindowSpec};
use urbanform_pipeline::backend::{run_inference, InferenceBackend};
use urbanform_pipeline::dataset::{build_dataset, GridOptions};
use urbanform_pipeline::evaluate::{evaluate_run, load_predictions, stitch_predictions, write_outputs, EvaluationReport};
use urbanform_pipeline::manifest::{export_manifest, Backbone, DatasetManifest, ExportOptions, HyperparameterRecord};
use urbanform_pipeline::server::{AnnotationService, RunningServer};
use urbanform_tilefetch::{assemble_mosaic, Fetcher, MissingPolicy, TileCache, TileSource};

#[derive(Parser)]
#[command(name = "urbanform", version, about = "Urban formality mapping from satellite imagery")]
struct Cli {
    /// Palette JSON (bare label → color map or a typology document).
    #[arg(long, global = true)]
    colormap: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Download tiles covering a bounding box and write the mosaic.
    Fetch(FetchArgs),
    /// Mask, split and cut imagery plus ground truth into tiles.
    Grid(GridArgs),
    /// Class histogram and balancing weights of a label raster.
    Weights(WeightsArgs),
    /// Write the dataset manifest for a grid output directory.
    Export(ExportArgs),
    /// Run an inference backend over the manifest's tiles.
    Infer(InferArgs),
    /// Reassemble prediction tiles into the test region.
    Stitch(StitchArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Print the typology matrix, classes and palette as JSON.
    Typology,
}

#[derive(Args)]
struct FetchArgs {
    /// Two corners: lat1,lon1,lat2,lon2
    #[arg(long, allow_hyphen_values = true)]
    bbox: String,
    #[arg(long)]
    zoom: u8,
    /// Tile source description (TOML or JSON).
    #[arg(long)]
    source: PathBuf,
    /// Output raster (.png or .tif).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "tile-cache")]
    cache: PathBuf,
    /// fail | fill_black
    #[arg(long, default_value = "fail")]
    missing: MissingPolicy,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    image: PathBuf,
    /// Ground truth: class-index PNG or palette-colored RGB.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 513)]
    window: usize,
    /// Overlap between training windows.
    #[arg(long, default_value_t = 0.7)]
    overlap: f64,
    #[arg(long, default_value_t = 0.0)]
    test_overlap: f64,
    /// Fraction of rows (from the top) used for training.
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    /// Per-channel color tolerance when reading RGB labels.
    #[arg(long, default_value_t = 8)]
    tolerance: u8,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    labels: PathBuf,
    /// inverse_freq | median_freq | none
    #[arg(long, default_value = "inverse_freq")]
    weighting: Weighting,
    /// Count only the top training band of this fraction.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 8)]
    tolerance: u8,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `grid`.
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to <dataset>/manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "inverse_freq")]
    weighting: Weighting,
    /// resnet | xception
    #[arg(long, default_value = "resnet")]
    backbone: Backbone,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// constant:<class> | color-heuristic[:<block>] | labels | external:<command>
    #[arg(long)]
    backend: InferenceBackend,
    #[arg(long)]
    out: PathBuf,
    /// train | test
    #[arg(long, default_value = "test")]
    role: String,
    /// Seconds an external backend may run.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
    /// Working directory for an external backend.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Args)]
struct StitchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    /// Stitched class-index raster.
    #[arg(long)]
    out: PathBuf,
    /// Also write the palette rendering here.
    #[arg(long)]
    rgb: Option<PathBuf>,
    /// majority | last
    #[arg(long, default_value = "majority")]
    merge: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Score a run: stitch predictions for the manifest's test tiles.
    #[arg(long, conflicts_with_all = ["gt", "pred"], requires = "preds")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Directory for report.json and the stitched rasters (manifest mode).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth raster (raster mode).
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ignored ground-truth class, or `none`.
    #[arg(long, default_value = "0")]
    ignore: String,
    /// Report path (raster mode).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    tolerance: u8,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Geo-referenced mosaic (with its .meta.json sidecar).
    #[arg(long)]
    imagery: PathBuf,
    /// Label journal (JSON lines, created if absent).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 400.0)]
    cell_m: f64,
    /// Tile cache served under /tiles.
    #[arg(long, requires = "source_id")]
    cache: Option<PathBuf>,
    #[arg(long)]
    source_id: Option<String>,
    /// Directory of UI assets served at /.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

fn parse_bbox(s: &str) -> Result<(GeoPoint<f64>, GeoPoint<f64>)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bbox {s:?} is not four numbers"))?;
    let [lat1, lon1, lat2, lon2] = v[..] else {
        bail!("bbox needs lat1,lon1,lat2,lon2; got {} values", v.len());
    };
    Ok((GeoPoint::new(lat1, lon1)?, GeoPoint::new(lat2, lon2)?))
}

fn parse_role(s: &str) -> Result<Role> {
    match s {
        "train" => Ok(Role::Train),
        "test" => Ok(Role::Test),
        other => bail!("unknown role {other:?}; expected train or test"),
    }
}

fn load_palette(path: Option<&Path>) -> Result<Option<ColorMap>> {
    path.map(|p| {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        ColorMap::from_json(&text).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

fn print_report(report: &EvaluationReport) {
    for line in &report.summary {
        println!("{line}");
    }
    println!("evaluated pixels: {}, ignored: {}", report.evaluated_pixels, report.ignored_pixels);
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let palette = load_palette(cli.colormap.as_deref())?;
    match cli.command {
        Cmd::Fetch(a) => {
            let (p, q) = parse_bbox(&a.bbox)?;
            let fetcher = Fetcher::new(TileSource::load(&a.source)?)?;
            let mosaic = assemble_mosaic(&fetcher, p, q, a.zoom, &TileCache::new(&a.cache), a.missing)?;
            write_raster(&a.out, &mosaic.raster)?;
            println!(
                "{}: {}×{} px, {} tiles fetched, {} from cache, {} missing",
                a.out.display(),
                mosaic.raster.width(),
                mosaic.raster.height(),
                mosaic.network_tiles,
                mosaic.cached_tiles,
                mosaic.missing.len()
            );
        }
        Cmd::Grid(a) => {
            let image = read_raster(&a.image)?;
            let labels = read_labels(
                &a.labels,
                LabelReadOptions {
                    palette,
                    tolerance: a.tolerance,
                },
            )?;
            let opts = GridOptions {
                train: WindowSpec::new(a.window, a.overlap)?,
                test: WindowSpec::new(a.window, a.test_overlap)?,
                split: SplitSpec::new(a.split)?,
            };
            let layout = build_dataset(&image, &labels, &opts, &a.out)?;
            println!(
                "{}: {} train tiles, {} test tiles",
                a.out.display(),
                layout.tiles(Role::Train).count(),
                layout.tiles(Role::Test).count()
            );
        }
        Cmd::Weights(a) => {
            let labels = read_labels(
                &a.labels,
                LabelReadOptions {
                    palette,
                    tolerance: a.tolerance,
                },
            )?;
            let region = match a.split {
                Some(f) => Some(SplitSpec::new(f)?.regions(labels.width(), labels.height())?.0),
                None => None,
            };
            let h = class_histogram(&labels, region)?;
            let w = class_weights::<f64>(&h, a.weighting)?;
            let out = serde_json::json!({ "scheme": a.weighting, "histogram": h.counts, "weights": w.weights });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Export(a) => {
            let out = a.out.unwrap_or_else(|| a.dataset.join("manifest.json"));
            let defaults = HyperparameterRecord::default();
            let opts = ExportOptions {
                weighting: a.weighting,
                hyperparameters: HyperparameterRecord {
                    backbone: a.backbone,
                    epochs: a.epochs.unwrap_or(defaults.epochs),
                    learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
                    ..defaults
                },
            };
            let m = export_manifest(&a.dataset, &out, &opts)?;
            println!("{}: {} tiles", out.display(), m.tiles.len());
        }
        Cmd::Infer(a) => {
            let mut backend = a.backend;
            if let InferenceBackend::External(cmd) = &mut backend {
                cmd.timeout = Duration::from_secs(a.timeout);
                cmd.workdir = a.workdir;
            }
            let summary = run_inference(&backend, &a.manifest, &a.out, parse_role(&a.role)?)?;
            if !summary.stderr.is_empty() {
                eprint!("{}", summary.stderr);
            }
            println!("{}: {} predictions from {backend}", a.out.display(), summary.predictions.len());
        }
        Cmd::Stitch(a) => {
            let policy = match a.merge.as_str() {
                "majority" => MergePolicy::MajorityVote,
                "last" => MergePolicy::LastWins,
                other => bail!("unknown merge policy {other:?}; expected majority or last"),
            };
            let m = DatasetManifest::load(&a.manifest)?;
            let preds = load_predictions(&m, &a.manifest, &a.preds, Role::Test)?;
            let stitched = stitch_predictions(&m, &preds, policy)?;
            write_labels(&a.out, &stitched)?;
            if let Some(rgb) = a.rgb {
                write_labels_rgb(&rgb, &stitched)?;
            }
            println!("{}: {}×{}", a.out.display(), stitched.width(), stitched.height());
        }
        Cmd::Eval(a) => {
            if let Some(manifest) = a.manifest {
                let preds = a.preds.expect("clap enforces --preds");
                let run = evaluate_run(&manifest, &preds, a.out.as_deref())?;
                print_report(&run.report);
            } else {
                let (Some(gt), Some(pred)) = (a.gt, a.pred) else {
                    bail!("eval needs either --manifest and --preds, or --gt and --pred");
                };
                let opts = LabelReadOptions {
                    palette,
                    tolerance: a.tolerance,
                };
                let gt = read_labels(&gt, opts)?;
                let pred = read_labels(&pred, opts)?;
                let ignore = match a.ignore.as_str() {
                    "none" => None,
                    s => Some(s.parse::<ClassLabel>()?),
                };
                let m = urbanform_core::metrics::confusion(&gt, &pred, ignore)?;
                let report = EvaluationReport::new(&m)?;
                if let Some(path) = &a.report {
                    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
                }
                if let Some(out) = &a.out {
                    write_outputs(out, &report, &pred)?;
                }
                print_report(&report);
            }
        }
        Cmd::Serve(a) => {
            let imagery = read_raster(&a.imagery)?;
            let mut service = AnnotationService::new(imagery, palette.unwrap_or_default(), &a.labels, a.cell_m)?;
            if let (Some(cache), Some(id)) = (a.cache, a.source_id) {
                service = service.with_tile_cache(TileCache::new(cache), id);
            }
            if let Some(dir) = a.static_dir {
                service = service.with_static_dir(dir);
            }
            let server = RunningServer::start(Arc::new(service), &format!("{}:{}", a.bind, a.port), a.workers)?;
            println!("serving on http://{}:{}", a.bind, server.port);
            server.join();
        }
        Cmd::Typology => {
            let doc = TypologyDocument::new(palette.unwrap_or_default());
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}
