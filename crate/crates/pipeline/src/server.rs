//! HTTP API for the annotation UI.
//!
//! | route | |
//! |---|---|
//! | `GET /api/typology` | matrix, classes and palette |
//! | `GET /api/grid` | cell geometry |
//! | `GET /api/annotations` | every annotated cell |
//! | `GET /api/cell/{i}/{j}` | one cell, `annotation: null` when unlabeled |
//! | `PUT /api/cell/{i}/{j}` | body `{"diversity": 1..4, "pattern": "A".."D"}` |
//! | `GET /api/export/labelraster` | class-index PNG (`?format=rgb` for colors) |
//! | `GET /api/export/labelraster.meta.json` | its sidecar |
//! | `GET /api/imagery` | the mosaic as PNG |
//! | `GET /tiles/{z}/{x}/{y}.png` | cached imagery tiles |
//!
//! Anything else is looked up in the static directory, if one is configured.

use std::io::{Cursor, Read};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tiny_http::{Header, Method, Response, Server};
use urbanform_core::raster::io::Sidecar;
use urbanform_core::raster::{decode_labels, GeoRaster};
use urbanform_core::tilemath::TileCoord;
use urbanform_core::typology::{BuildingDiversity, ColorMap, StreetPattern, TypologyDocument};
use urbanform_tilefetch::TileCache;

use crate::annotate::{AnnotateError, AnnotationStore, CellEvent, CellGrid};

const MAX_BODY: u64 = 64 * 1024;

/// A response before it is put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, value: &impl Serialize) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(value).expect("API values serialize"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &json!({ "error": message.into() }))
    }

    fn bytes(content_type: &'static str, body: Vec<u8>) -> Self {
        Self {
            status: 200,
            content_type,
            body,
        }
    }

    pub fn json_body(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellUpdate {
    diversity: u8,
    pattern: String,
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    timestamp_ms: Option<u64>,
}

/// Shared state behind the HTTP API. Writes go through the store's write lock,
/// so journal appends are serialized and reads see whole updates.
pub struct AnnotationService {
    store: RwLock<AnnotationStore>,
    imagery: GeoRaster,
    typology: TypologyDocument,
    tiles: Option<(TileCache, String)>,
    static_dir: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn encode_png(width: usize, height: usize, data: &[u8], color: ExtendedColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, data, width as u32, height as u32, color, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

impl AnnotationService {
    /// `imagery` must carry a geotransform unless `grid` is given explicitly.
    pub fn new(imagery: GeoRaster, palette: ColorMap, journal: &Path, cell_m: f64) -> Result<Self, AnnotateError> {
        let g = imagery
            .geotransform
            .ok_or_else(|| AnnotateError::Grid("imagery has no geotransform; cannot size 400 m cells".into()))?;
        let grid = CellGrid::for_geotransform(imagery.width(), imagery.height(), g, cell_m)?;
        Self::with_grid(imagery, grid, palette, journal)
    }

    pub fn with_grid(imagery: GeoRaster, grid: CellGrid, palette: ColorMap, journal: &Path) -> Result<Self, AnnotateError> {
        Ok(Self {
            store: RwLock::new(AnnotationStore::open(grid, palette, journal)?),
            imagery,
            typology: TypologyDocument::new(palette),
            tiles: None,
            static_dir: None,
        })
    }

    /// Serves `/tiles/...` from `cache` entries of source `source_id`.
    pub fn with_tile_cache(mut self, cache: TileCache, source_id: impl Into<String>) -> Self {
        self.tiles = Some((cache, source_id.into()));
        self
    }

    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, AnnotationStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Routes one request. `url` may include a query string.
    pub fn handle(&self, method: &Method, url: &str, body: &[u8]) -> Reply {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (method, segments.as_slice()) {
            (Method::Get, ["api", "typology"]) => Reply::json(200, &self.typology),
            (Method::Get, ["api", "grid"]) => self.grid(),
            (Method::Get, ["api", "annotations"]) => Reply::json(200, &self.store().annotated()),
            (Method::Get, ["api", "cell", i, j]) => match parse_cell(i, j) {
                Some((i, j)) => match self.store().view(i, j) {
                    Ok(v) => Reply::json(200, &v),
                    Err(e) => Reply::error(404, e.to_string()),
                },
                None => Reply::error(400, "cell indices must be non-negative integers"),
            },
            (Method::Put, ["api", "cell", i, j]) => match parse_cell(i, j) {
                Some((i, j)) => self.put_cell(i, j, body),
                None => Reply::error(400, "cell indices must be non-negative integers"),
            },
            (Method::Get, ["api", "export", "labelraster"]) => self.export(query),
            (Method::Get, ["api", "export", "labelraster.meta.json"]) => {
                let store = self.store();
                let g = store.grid().geotransform;
                Reply::json(200, &Sidecar::from_parts(g, Some(*store.palette()), None))
            }
            (Method::Get, ["api", "imagery"]) => {
                let color = if self.imagery.bands() == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgb8 };
                Reply::bytes(
                    "image/png",
                    encode_png(self.imagery.width(), self.imagery.height(), self.imagery.data(), color),
                )
            }
            (Method::Get, ["tiles", z, x, y]) => self.tile(z, x, y),
            (Method::Get, _) => self.static_file(path),
            _ => Reply::error(405, format!("{method} {path} is not supported")),
        }
    }

    fn grid(&self) -> Reply {
        let store = self.store();
        let g = store.grid();
        let cells: Vec<_> = (0..g.rows)
            .flat_map(|i| (0..g.cols).map(move |j| (i, j)))
            .map(|(i, j)| {
                let rect = g.rect(i, j).expect("indices are in range");
                let corners = g.corners(i, j).expect("indices are in range");
                json!({ "i": i, "j": j, "rect": rect, "corners": corners })
            })
            .collect();
        Reply::json(
            200,
            &json!({
                "width": g.width,
                "height": g.height,
                "cell_m": g.cell_m,
                "scale_m_per_px": g.scale_m_per_px,
                "cell_px": g.cell_px,
                "rows": g.rows,
                "cols": g.cols,
                "geotransform": g.geotransform,
                "cells": cells,
            }),
        )
    }

    fn put_cell(&self, i: u32, j: u32, body: &[u8]) -> Reply {
        let update: CellUpdate = match serde_json::from_slice(body) {
            Ok(u) => u,
            Err(e) => return Reply::error(400, format!("invalid body: {e}")),
        };
        let Some(diversity) = BuildingDiversity::from_level(update.diversity) else {
            return Reply::error(400, format!("diversity {} is not in 1..=4", update.diversity));
        };
        let mut letters = update.pattern.trim().chars();
        let pattern = match (letters.next(), letters.next()) {
            (Some(c), None) => StreetPattern::from_letter(c),
            _ => None,
        };
        let Some(pattern) = pattern else {
            return Reply::error(400, format!("pattern {:?} is not one of A..=D", update.pattern));
        };
        let event = CellEvent {
            i,
            j,
            diversity,
            pattern,
            timestamp_ms: update.timestamp_ms.unwrap_or_else(now_ms),
            annotator: update.annotator,
        };
        let mut store = self.store.write().unwrap_or_else(|e| e.into_inner());
        match store.record(event) {
            Ok(v) => Reply::json(200, &v),
            Err(e @ AnnotateError::OutOfGrid(..)) => Reply::error(404, e.to_string()),
            Err(e) => Reply::error(500, e.to_string()),
        }
    }

    fn export(&self, query: &str) -> Reply {
        let labels = self.store().rasterize();
        let rgb = query.split('&').any(|kv| kv == "format=rgb");
        let (w, h) = (labels.width(), labels.height());
        let body = if rgb {
            encode_png(w, h, decode_labels(&labels).data(), ExtendedColorType::Rgb8)
        } else {
            encode_png(w, h, &labels.indices(), ExtendedColorType::L8)
        };
        Reply::bytes("image/png", body)
    }

    fn tile(&self, z: &str, x: &str, y: &str) -> Reply {
        let Some((cache, source)) = &self.tiles else {
            return Reply::error(404, "no tile cache configured");
        };
        let coord = match (z.parse(), x.parse(), y.trim_end_matches(".png").parse()) {
            (Ok(z), Ok(x), Ok(y)) => TileCoord::new(x, y, z),
            _ => return Reply::error(400, "expected /tiles/{z}/{x}/{y}.png"),
        };
        match coord {
            Ok(c) => match cache.get(source, c, "png") {
                Ok(Some(entry)) => Reply::bytes("image/png", entry.bytes),
                Ok(None) => Reply::error(404, "tile not cached"),
                Err(e) => Reply::error(500, e.to_string()),
            },
            Err(e) => Reply::error(400, e.to_string()),
        }
    }

    fn static_file(&self, path: &str) -> Reply {
        let Some(dir) = &self.static_dir else {
            return Reply::error(404, format!("no route for {path}"));
        };
        let rel = Path::new(path.trim_start_matches('/'));
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Reply::error(404, "not found");
        }
        let mut file = dir.join(rel);
        if rel.as_os_str().is_empty() || file.is_dir() {
            file = file.join("index.html");
        }
        match std::fs::read(&file) {
            Ok(body) => Reply::bytes(content_type(&file), body),
            Err(_) => Reply::error(404, "not found"),
        }
    }
}

fn parse_cell(i: &str, j: &str) -> Option<(u32, u32)> {
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// A running HTTP server; dropping it stops the workers.
pub struct RunningServer {
    server: Arc<Server>,
    workers: Vec<thread::JoinHandle<()>>,
    pub port: u16,
}

impl RunningServer {
    /// Binds `addr` (e.g. `127.0.0.1:0`) and serves `service` on `workers` threads.
    pub fn start(service: Arc<AnnotationService>, addr: &str, workers: usize) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let workers = (0..workers.max(1))
            .map(|_| {
                let (server, service) = (server.clone(), service.clone());
                thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let mut body = Vec::new();
                        let read = req.as_reader().take(MAX_BODY + 1).read_to_end(&mut body);
                        let reply = match read {
                            Ok(n) if n as u64 > MAX_BODY => Reply::error(413, "body too large"),
                            Ok(_) => service.handle(req.method(), req.url(), &body),
                            Err(e) => Reply::error(400, e.to_string()),
                        };
                        let header = Header::from_bytes("Content-Type", reply.content_type).expect("static header");
                        let response = Response::from_data(reply.body).with_status_code(reply.status).with_header(header);
                        let _ = req.respond(response);
                    }
                })
            })
            .collect();
        Ok(Self { server, workers, port })
    }

    /// Blocks until the workers exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
