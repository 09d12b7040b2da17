//! Cached, rate-limited tile downloads and assembly of geo-referenced mosaics.
//!
//! ```no_run
//! use urbanform_tilefetch::{assemble_mosaic, Fetcher, MissingPolicy, TileCache, TileSource};
//! use urbanform_core::GeoPoint;
//!
//! let source = TileSource::new("osm", "https://tile.example.org/{z}/{x}/{y}.png").unwrap();
//! let fetcher = Fetcher::new(source).unwrap();
//! let cache = TileCache::new("cache");
//! let a = GeoPoint { lat: 23.90, lon: 90.35 };
//! let b = GeoPoint { lat: 23.85, lon: 90.40 };
//! let mosaic = assemble_mosaic(&fetcher, a, b, 17, &cache, MissingPolicy::Fail).unwrap();
//! println!("{}×{}", mosaic.raster.width(), mosaic.raster.height());
//! ```

mod cache;
mod fetch;
mod mosaic;
mod source;

use thiserror::Error;
use urbanform_core::tilemath::{TileCoord, TileMathError};

pub use cache::{CacheEntry, TileCache};
pub use fetch::{FetchedTile, Fetcher};
pub use mosaic::{assemble_mosaic, assemble_pixel_bounds, MissingPolicy, Mosaic};
pub use source::{RetryPolicy, TileSource};

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("tile {coord:?}: permanent failure after {attempts} attempt(s): {reason}")]
    Permanent {
        coord: TileCoord,
        status: Option<u16>,
        reason: String,
        attempts: u32,
    },
    #[error("tile {coord:?}: gave up after {attempts} attempt(s): {reason}")]
    Transient {
        coord: TileCoord,
        reason: String,
        attempts: u32,
    },
    #[error("tile {coord:?}: {reason}")]
    Content { coord: TileCoord, reason: String },
    #[error("cache: {0}")]
    Cache(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{} tile(s) missing: {}", .0.len(), format_missing(.0))]
    MissingTiles(Vec<(TileCoord, String)>),
    #[error(transparent)]
    TileMath(#[from] TileMathError),
}

fn format_missing(m: &[(TileCoord, String)]) -> String {
    m.iter()
        .map(|(c, r)| format!("{}/{}/{} ({r})", c.zoom, c.x, c.y))
        .collect::<Vec<_>>()
        .join(", ")
}

impl FetchError {
    /// Attempts made before the error, where that applies.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            Self::Permanent { attempts, .. } | Self::Transient { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}
