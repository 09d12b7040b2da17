//! Cell-based annotation: the 400 m grid over a mosaic, the append-only label
//! journal and rasterization of the current labels.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use urbanform_core::raster::{LabelRaster, PixelRect};
use urbanform_core::tilemath::{GeoPoint, GeoTransform};
use urbanform_core::typology::{classify_code, BuildingDiversity, ClassLabel, ColorMap, Rgb, StreetPattern, TypologyCode};

pub const CELL_METERS: f64 = 400.0;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("cell ({0}, {1}) is outside the {2}×{3} grid")]
    OutOfGrid(u32, u32, u32, u32),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("{}:{line}: {reason}", .path.display())]
    Journal { path: PathBuf, line: usize, reason: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T, E = AnnotateError> = std::result::Result<T, E>;

/// Square cells of `cell_m` meters over a `width × height` raster. Row `i`,
/// column `j`; cells on the right and bottom edges are clipped to the raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub width: usize,
    pub height: usize,
    pub cell_m: f64,
    pub scale_m_per_px: f64,
    pub cell_px: f64,
    pub rows: u32,
    pub cols: u32,
    pub geotransform: Option<GeoTransform>,
}

impl CellGrid {
    pub fn new(width: usize, height: usize, scale_m_per_px: f64, cell_m: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(AnnotateError::Grid(format!("raster is {width}×{height}")));
        }
        if !(scale_m_per_px > 0.0 && scale_m_per_px.is_finite() && cell_m > 0.0 && cell_m.is_finite()) {
            return Err(AnnotateError::Grid(format!("scale {scale_m_per_px} m/px, cell {cell_m} m")));
        }
        let cell_px = cell_m / scale_m_per_px;
        let count = |dim: usize| (dim as f64 / cell_px).ceil().max(1.0) as u32;
        Ok(Self {
            width,
            height,
            cell_m,
            scale_m_per_px,
            cell_px,
            rows: count(height),
            cols: count(width),
            geotransform: None,
        })
    }

    /// Grid sized from the geotransform's ground resolution.
    pub fn for_geotransform(width: usize, height: usize, g: GeoTransform, cell_m: f64) -> Result<Self> {
        let mut grid = Self::new(width, height, g.scale_m_per_px, cell_m)?;
        grid.geotransform = Some(g);
        Ok(grid)
    }

    fn edge(&self, k: u32, dim: usize) -> usize {
        ((f64::from(k) * self.cell_px).floor() as usize).min(dim)
    }

    pub fn contains(&self, i: u32, j: u32) -> bool {
        i < self.rows && j < self.cols
    }

    /// Pixel rectangle of cell `(i, j)`.
    pub fn rect(&self, i: u32, j: u32) -> Result<PixelRect> {
        if !self.contains(i, j) {
            return Err(AnnotateError::OutOfGrid(i, j, self.rows, self.cols));
        }
        let (x0, y0) = (self.edge(j, self.width), self.edge(i, self.height));
        let x1 = if j + 1 == self.cols { self.width } else { self.edge(j + 1, self.width) };
        let y1 = if i + 1 == self.rows { self.height } else { self.edge(i + 1, self.height) };
        Ok(PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// North-west and south-east corners of a cell, when geo-referenced.
    pub fn corners(&self, i: u32, j: u32) -> Result<Option<(GeoPoint<f64>, GeoPoint<f64>)>> {
        let r = self.rect(i, j)?;
        Ok(self.geotransform.map(|g| {
            (
                g.pixel_to_latlon(r.x as f64, r.y as f64),
                g.pixel_to_latlon((r.x + r.width) as f64, (r.y + r.height) as f64),
            )
        }))
    }
}

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellEvent {
    pub i: u32,
    pub j: u32,
    pub diversity: BuildingDiversity,
    pub pattern: StreetPattern,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

impl CellEvent {
    pub fn code(&self) -> TypologyCode {
        TypologyCode::new(self.diversity, self.pattern)
    }

    pub fn label(&self) -> ClassLabel {
        classify_code(self.code())
    }
}

/// Append-only JSON-lines file of [`CellEvent`]s.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) and replays the journal. A final line cut
    /// short by a crash is dropped and truncated away; any other bad line is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<CellEvent>)> {
        let io = |source| AnnotateError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut events = Vec::new();
        let mut good_len = 0u64;
        let mut pending: Option<(usize, String)> = None;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line).map_err(io)?;
            if read == 0 {
                break;
            }
            n += 1;
            if let Some((at, reason)) = pending.take() {
                return Err(AnnotateError::Journal {
                    path: path.to_path_buf(),
                    line: at,
                    reason,
                });
            }
            let complete = line.ends_with('\n');
            let text = line.trim();
            if text.is_empty() {
                good_len += read as u64;
                continue;
            }
            match serde_json::from_str::<CellEvent>(text) {
                Ok(e) if complete => {
                    events.push(e);
                    good_len += read as u64;
                }
                Ok(_) => pending = Some((n, "unterminated final line".into())),
                Err(e) => pending = Some((n, e.to_string())),
            }
        }
        drop(reader);
        if pending.is_some() {
            file.set_len(good_len).map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append(&mut self, e: &CellEvent) -> Result<()> {
        let mut line = serde_json::to_string(e).expect("events serialize");
        line.push('\n');
        let io = |source| AnnotateError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

/// Current label of a cell as reported over the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellView {
    pub i: u32,
    pub j: u32,
    pub rect: PixelRect,
    pub annotation: Option<AnnotationView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationView {
    pub code: String,
    pub diversity: BuildingDiversity,
    pub pattern: StreetPattern,
    pub label: ClassLabel,
    pub class_index: u8,
    pub color: Rgb,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

/// Grid plus the replayed journal. Later timestamps win; equal timestamps go
/// to the event written last.
#[derive(Debug)]
pub struct AnnotationStore {
    grid: CellGrid,
    palette: ColorMap,
    cells: BTreeMap<(u32, u32), CellEvent>,
    journal: Journal,
}

impl AnnotationStore {
    pub fn open(grid: CellGrid, palette: ColorMap, journal: &Path) -> Result<Self> {
        let (journal, events) = Journal::open(journal)?;
        let mut store = Self {
            grid,
            palette,
            cells: BTreeMap::new(),
            journal,
        };
        for e in events {
            // events for cells outside a since-changed grid are kept in the file but ignored
            if store.grid.contains(e.i, e.j) {
                store.apply(e);
            }
        }
        Ok(store)
    }

    fn apply(&mut self, e: CellEvent) {
        match self.cells.get(&(e.i, e.j)) {
            Some(cur) if cur.timestamp_ms > e.timestamp_ms => {}
            _ => {
                self.cells.insert((e.i, e.j), e);
            }
        }
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn palette(&self) -> &ColorMap {
        &self.palette
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Journals and applies an event, returning the cell's resulting state.
    pub fn record(&mut self, e: CellEvent) -> Result<CellView> {
        self.grid.rect(e.i, e.j)?;
        self.journal.append(&e)?;
        let (i, j) = (e.i, e.j);
        self.apply(e);
        self.view(i, j)
    }

    pub fn get(&self, i: u32, j: u32) -> Option<&CellEvent> {
        self.cells.get(&(i, j))
    }

    pub fn view(&self, i: u32, j: u32) -> Result<CellView> {
        Ok(CellView {
            i,
            j,
            rect: self.grid.rect(i, j)?,
            annotation: self.get(i, j).map(|e| {
                let label = e.label();
                AnnotationView {
                    code: e.code().to_string(),
                    diversity: e.diversity,
                    pattern: e.pattern,
                    label,
                    class_index: label.index(),
                    color: self.palette.color(label),
                    timestamp_ms: e.timestamp_ms,
                    annotator: e.annotator.clone(),
                }
            }),
        })
    }

    /// Views of all annotated cells, row-major.
    pub fn annotated(&self) -> Vec<CellView> {
        self.cells
            .keys()
            .filter_map(|&(i, j)| self.view(i, j).ok())
            .collect()
    }

    /// Label raster of the whole mosaic; unannotated cells stay unrecognized.
    pub fn rasterize(&self) -> LabelRaster {
        let (w, h) = (self.grid.width, self.grid.height);
        let mut classes = vec![ClassLabel::Unrecognized; w * h];
        for (&(i, j), e) in &self.cells {
            let r = self.grid.rect(i, j).expect("stored cells lie inside the grid");
            let label = e.label();
            for y in r.y..r.y + r.height {
                classes[y * w + r.x..y * w + r.x + r.width].fill(label);
            }
        }
        LabelRaster::new(w, h, classes)
            .expect("grid dimensions are positive")
            .with_palette(self.palette)
            .with_geotransform(self.grid.geotransform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let p = std::env::temp_dir().join(format!("urbanform-annotate-{}-{name}.jsonl", std::process::id()));
        let _ = std::fs::remove_file(&p);
        p
    }

    fn event(i: u32, j: u32, code: &str, ts: u64) -> CellEvent {
        let c: TypologyCode = code.parse().unwrap();
        CellEvent {
            i,
            j,
            diversity: c.diversity,
            pattern: c.pattern,
            timestamp_ms: ts,
            annotator: None,
        }
    }

    #[test]
    fn grid_clips_edge_cells() {
        // 1000 px at 1 m/px with 400 m cells: 400, 400, 200
        let g = CellGrid::new(1000, 450, 1.0, 400.0).unwrap();
        assert_eq!((g.rows, g.cols), (2, 3));
        assert_eq!(g.rect(0, 2).unwrap(), PixelRect::new(800, 0, 200, 400));
        assert_eq!(g.rect(1, 0).unwrap(), PixelRect::new(0, 400, 400, 50));
        assert!(g.rect(2, 0).is_err());
        let total: usize = (0..g.rows)
            .flat_map(|i| (0..g.cols).map(move |j| (i, j)))
            .map(|(i, j)| {
                let r = g.rect(i, j).unwrap();
                r.width * r.height
            })
            .sum();
        assert_eq!(total, 1000 * 450);
    }

    #[test]
    fn fractional_cell_sizes_tile_exactly() {
        let g = CellGrid::new(2052, 2052, 1.0927, 400.0).unwrap();
        let mut covered = vec![0u8; 2052 * 2052];
        for i in 0..g.rows {
            for j in 0..g.cols {
                let r = g.rect(i, j).unwrap();
                for y in r.y..r.y + r.height {
                    for x in r.x..r.x + r.width {
                        covered[y * 2052 + x] += 1;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn journal_replay_and_last_writer_wins() {
        let path = tmp("replay");
        let grid = CellGrid::new(800, 800, 1.0, 400.0).unwrap();
        {
            let mut s = AnnotationStore::open(grid.clone(), ColorMap::default(), &path).unwrap();
            s.record(event(0, 0, "2/A", 10)).unwrap();
            s.record(event(0, 0, "3/B", 20)).unwrap();
            // stale write loses to the newer one
            let v = s.record(event(0, 0, "1/A", 15)).unwrap();
            assert_eq!(v.annotation.unwrap().code, "3/B");
            s.record(event(1, 1, "4/D", 30)).unwrap();
            assert!(s.record(event(2, 0, "4/D", 30)).is_err());
        }
        let s = AnnotationStore::open(grid, ColorMap::default(), &path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(0, 0).unwrap().label(), ClassLabel::ModeratelyFormal);
        let l = s.rasterize();
        assert_eq!(l.get(0, 0), ClassLabel::ModeratelyFormal);
        assert_eq!(l.get(799, 799), ClassLabel::HighlyFormal);
        assert_eq!(l.get(500, 100), ClassLabel::Unrecognized);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let path = tmp("torn");
        let good = serde_json::to_string(&event(0, 0, "2/A", 1)).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"i\":0,\"j\":")).unwrap();
        let (mut j, events) = Journal::open(&path).unwrap();
        assert_eq!(events.len(), 1);
        j.append(&event(0, 1, "4/D", 2)).unwrap();
        let (_, events) = Journal::open(&path).unwrap();
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let path = tmp("corrupt");
        let good = serde_json::to_string(&event(0, 0, "2/A", 1)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n{good}\n")).unwrap();
        match Journal::open(&path) {
            Err(AnnotateError::Journal { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
