//! Inference backends and the tile-level wire contract.
//!
//! A backend reads the manifest, and for every tile of the requested role
//! writes `<out>/<image file name>`: an 8-bit grayscale PNG of class indices
//! (0..=4) with the tile's dimensions. External backends are invoked as
//! `<command...> <manifest> <out>` and their output is checked against that
//! contract afterwards.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use image::DynamicImage;
use rayon::prelude::*;
use thiserror::Error;
use urbanform_core::raster::io::{read_labels, read_raster, write_labels, LabelReadOptions};
use urbanform_core::raster::{GeoRaster, LabelRaster};
use urbanform_core::typology::{ClassLabel, ColorMap, Rgb};
use urbanform_core::windowing::Role;

use crate::dataset::TileEntry;
use crate::manifest::DatasetManifest;
use crate::{io_err, PipelineError, Result};

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

/// Diagnostics beyond this many bytes keep only their tail.
const DIAGNOSTIC_LIMIT: usize = 8192;

/// How long to wait for a finished backend's output pipes to close.
const PIPE_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot parse backend spec {spec:?}: {reason}")]
    Spec { spec: String, reason: String },
    #[error("cannot start `{command}`: {reason}")]
    Spawn { command: String, reason: String },
    #[error("`{command}` exited with {}{}", exit_text(*.code), stderr_suffix(.stderr))]
    Failed {
        command: String,
        code: Option<i32>,
        stdout: String,
        stderr: String,
    },
    #[error("`{command}` did not finish within {:.1}s{}", .timeout.as_secs_f64(), stderr_suffix(.stderr))]
    Timeout {
        command: String,
        timeout: Duration,
        stdout: String,
        stderr: String,
    },
    #[error("backend produced no prediction at {}", .0.display())]
    MissingOutput(PathBuf),
    #[error("malformed prediction {}: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },
}

fn exit_text(code: Option<i32>) -> String {
    match code {
        Some(c) => format!("exit code {c}"),
        None => "no exit code (killed by a signal)".into(),
    }
}

fn stderr_suffix(stderr: &str) -> String {
    let s = stderr.trim();
    if s.is_empty() {
        String::new()
    } else {
        format!("; stderr: {s}")
    }
}

/// An external command line; the manifest and output paths are appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
    pub workdir: Option<PathBuf>,
    pub timeout: Duration,
}

impl ExternalCommand {
    /// Splits `line` on whitespace; no shell quoting is interpreted.
    pub fn parse(line: &str) -> Option<Self> {
        let mut words = line.split_whitespace().map(String::from);
        Some(Self {
            program: words.next()?,
            args: words.collect(),
            workdir: None,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InferenceBackend {
    /// Every pixel gets the same class.
    Constant(ClassLabel),
    /// Nearest palette color to the mean of each `block × block` cell.
    ColorHeuristic { block: usize },
    /// Copies the ground-truth label tiles; an upper bound for sanity checks.
    Labels,
    External(ExternalCommand),
}

impl FromStr for InferenceBackend {
    type Err = BackendError;

    /// `constant:<class>`, `color-heuristic[:<block>]`, `labels` or `external:<command line>`.
    fn from_str(spec: &str) -> std::result::Result<Self, Self::Err> {
        let bad = |reason: &str| BackendError::Spec {
            spec: spec.into(),
            reason: reason.into(),
        };
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a)),
            None => (spec.trim(), None),
        };
        match (kind, arg) {
            ("constant", Some(c)) => c
                .trim()
                .parse::<ClassLabel>()
                .map(Self::Constant)
                .map_err(|e| bad(&e.to_string())),
            ("color-heuristic", None) => Ok(Self::ColorHeuristic { block: DEFAULT_BLOCK }),
            ("color-heuristic", Some(b)) => match b.trim().parse::<usize>() {
                Ok(block) if block > 0 => Ok(Self::ColorHeuristic { block }),
                _ => Err(bad("block size must be a positive integer")),
            },
            ("labels" | "identity", None) => Ok(Self::Labels),
            ("external", Some(line)) => ExternalCommand::parse(line)
                .map(Self::External)
                .ok_or_else(|| bad("empty command line")),
            _ => Err(bad("expected constant:<class>, color-heuristic[:<block>], labels or external:<command>")),
        }
    }
}

impl fmt::Display for InferenceBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "constant:{}", c.name()),
            Self::ColorHeuristic { block } => write!(f, "color-heuristic:{block}"),
            Self::Labels => f.write_str("labels"),
            Self::External(cmd) => write!(f, "external:{}", cmd.display()),
        }
    }
}

/// Classifies each `block × block` cell of `image` by the palette color nearest
/// to its mean (per-channel, rounded half up). Edge cells are clipped.
pub fn color_heuristic(image: &GeoRaster, palette: &ColorMap, block: usize) -> LabelRaster {
    let (w, h) = (image.width(), image.height());
    let block = block.max(1);
    let mut classes = vec![ClassLabel::Unrecognized; w * h];
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (x1, y1) = ((bx + block).min(w), (by + block).min(h));
            let mut sum = [0u64; 3];
            for y in by..y1 {
                for x in bx..x1 {
                    for (s, v) in sum.iter_mut().zip(image.rgb_at(x, y).0) {
                        *s += u64::from(v);
                    }
                }
            }
            let n = ((x1 - bx) * (y1 - by)) as u64;
            let mean = Rgb(sum.map(|s| ((s + n / 2) / n) as u8));
            let label = palette.nearest(mean);
            for y in by..y1 {
                classes[y * w + bx..y * w + x1].fill(label);
            }
        }
    }
    LabelRaster::new(w, h, classes)
        .expect("dimensions come from a valid raster")
        .with_palette(*palette)
        .with_geotransform(image.geotransform)
}

/// Reads a prediction tile and checks it against the wire contract.
pub fn read_prediction(path: &Path, expected: (usize, usize)) -> std::result::Result<LabelRaster, BackendError> {
    if !path.is_file() {
        return Err(BackendError::MissingOutput(path.to_path_buf()));
    }
    let malformed = |reason: String| BackendError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::open(path).map_err(|e| malformed(e.to_string()))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(malformed(format!(
                "expected 8-bit grayscale class indices, found {:?}",
                other.color()
            )))
        }
    };
    let dims = (gray.width() as usize, gray.height() as usize);
    if dims != expected {
        return Err(malformed(format!(
            "{}×{} does not match the {}×{} input tile",
            dims.0, dims.1, expected.0, expected.1
        )));
    }
    LabelRaster::from_indices(dims.0, dims.1, gray.as_raw()).map_err(|e| malformed(e.to_string()))
}

/// What a backend run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceSummary {
    /// One path per tile, in manifest order.
    pub predictions: Vec<PathBuf>,
    /// Captured output of an external backend.
    pub stdout: String,
    pub stderr: String,
}

fn tile_size(root: &Path, t: &TileEntry, fallback: usize) -> Result<(usize, usize)> {
    let path = root.join(&t.image);
    match image::image_dimensions(&path) {
        Ok((w, h)) => Ok((w as usize, h as usize)),
        Err(_) if !path.exists() => Err(PipelineError::MissingFile(path)),
        Err(_) => Ok((fallback, fallback)),
    }
}

fn run_builtin(backend: &InferenceBackend, manifest: &DatasetManifest, root: &Path, tiles: &[&TileEntry], out: &Path) -> Result<()> {
    let palette = manifest.palette()?;
    tiles.par_iter().try_for_each(|t| {
        let prediction = match backend {
            InferenceBackend::Constant(c) => {
                let (w, h) = tile_size(root, t, manifest.windows.test.size)?;
                LabelRaster::filled(w, h, *c)?
            }
            InferenceBackend::ColorHeuristic { block } => color_heuristic(&read_raster(&root.join(&t.image))?, &palette, *block),
            InferenceBackend::Labels => read_labels(
                &root.join(&t.label),
                LabelReadOptions {
                    palette: Some(palette),
                    tolerance: 0,
                },
            )?,
            InferenceBackend::External(_) => unreachable!("handled by run_external"),
        };
        write_labels(&out.join(t.image_file_name()), &prediction.with_palette(palette))?;
        Ok(())
    })
}

/// Reads a pipe to the end on a helper thread. A grandchild that outlives the
/// backend can hold the pipe open, so callers wait on the channel with a deadline.
fn drain(mut r: impl Read + Send + 'static) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        let text = String::from_utf8_lossy(&buf).into_owned();
        let text = match text.len().checked_sub(DIAGNOSTIC_LIMIT) {
            Some(cut) if cut > 0 => {
                let start = (cut..text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(cut);
                format!("…{}", &text[start..])
            }
            _ => text,
        };
        let _ = tx.send(text);
    });
    rx
}

fn run_external(cmd: &ExternalCommand, manifest_path: &Path, out: &Path) -> Result<(String, String)> {
    let command = cmd.display();
    let absolute = |p: &Path| p.canonicalize().map_err(io_err(p));
    let mut proc = Command::new(&cmd.program);
    proc.args(&cmd.args)
        .arg(absolute(manifest_path)?)
        .arg(absolute(out)?)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = &cmd.workdir {
        proc.current_dir(dir);
    }
    let mut child = proc.spawn().map_err(|e| BackendError::Spawn {
        command: command.clone(),
        reason: e.to_string(),
    })?;
    let stdout = drain(child.stdout.take().expect("stdout is piped"));
    let stderr = drain(child.stderr.take().expect("stderr is piped"));
    let deadline = Instant::now() + cmd.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                return Err(BackendError::Spawn {
                    command,
                    reason: e.to_string(),
                }
                .into())
            }
        }
    };
    let grace = if status.is_some() { PIPE_GRACE } else { Duration::from_millis(200) };
    let collect = |rx: mpsc::Receiver<String>| rx.recv_timeout(grace).unwrap_or_default();
    let (stdout, stderr) = (collect(stdout), collect(stderr));
    match status {
        None => Err(BackendError::Timeout {
            command,
            timeout: cmd.timeout,
            stdout,
            stderr,
        }
        .into()),
        Some(s) if !s.success() => Err(BackendError::Failed {
            command,
            code: s.code(),
            stdout,
            stderr,
        }
        .into()),
        Some(_) => Ok((stdout, stderr)),
    }
}

/// Runs `backend` over the `role` tiles of the manifest at `manifest_path`,
/// writing predictions into `out`, then checks every prediction.
pub fn run_inference(backend: &InferenceBackend, manifest_path: &Path, out: &Path, role: Role) -> Result<InferenceSummary> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest.root_dir(manifest_path);
    let tiles: Vec<&TileEntry> = manifest.tiles(role).collect();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let (stdout, stderr) = match backend {
        InferenceBackend::External(cmd) => run_external(cmd, manifest_path, out)?,
        builtin => {
            run_builtin(builtin, &manifest, &root, &tiles, out)?;
            Default::default()
        }
    };
    let predictions = tiles
        .par_iter()
        .map(|t| {
            let path = out.join(t.image_file_name());
            let size = tile_size(&root, t, manifest.windows.test.size)?;
            read_prediction(&path, size)?;
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceSummary {
        predictions,
        stdout,
        stderr,
    })
}
