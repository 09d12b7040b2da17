use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::SystemTime;

use urbanform_core::tilemath::TileCoord;

use crate::FetchError;

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// On-disk tile store laid out as `<root>/<source>/<z>/<x>/<y>.<ext>`.
///
/// Keys are tile coordinates, never URLs. Writes go to a temporary file that
/// is renamed into place, so readers never observe partial tiles and
/// concurrent writers to one key resolve last-writer-wins.
#[derive(Debug, Clone)]
pub struct TileCache {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub bytes: Vec<u8>,
    /// Modification time of the cached file, i.e. when it was fetched.
    pub fetched_at: SystemTime,
}

fn io_err(path: &Path, e: io::Error) -> FetchError {
    FetchError::Cache(format!("{}: {e}", path.display()))
}

impl TileCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, source: &str, coord: TileCoord, ext: &str) -> PathBuf {
        self.root
            .join(source)
            .join(coord.zoom.to_string())
            .join(coord.x.to_string())
            .join(format!("{}.{ext}", coord.y))
    }

    pub fn get(&self, source: &str, coord: TileCoord, ext: &str) -> Result<Option<CacheEntry>, FetchError> {
        let path = self.path(source, coord, ext);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let fetched_at = fs::metadata(&path)
            .and_then(|m| m.modified())
            .map_err(|e| io_err(&path, e))?;
        Ok(Some(CacheEntry { bytes, fetched_at }))
    }

    pub fn put(&self, source: &str, coord: TileCoord, ext: &str, bytes: &[u8]) -> Result<PathBuf, FetchError> {
        let path = self.path(source, coord, ext);
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            coord.y,
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(&path, e)
        })?;
        Ok(path)
    }
}
