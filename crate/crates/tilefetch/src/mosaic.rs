use serde::{Deserialize, Serialize};
use urbanform_core::raster::GeoRaster;
use urbanform_core::tilemath::{bbox_to_pixel_bounds, pixel_bounds_to_tile_range, GeoPoint, GeoTransform, PixelBounds, TileCoord, TILE_SIZE};

use crate::{FetchError, Fetcher, TileCache};

/// What to do when a tile cannot be obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Fail,
    FillBlack,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "fail" => Ok(Self::Fail),
            "fill_black" => Ok(Self::FillBlack),
            other => Err(format!("unknown missing-tile policy {other:?}; expected fail or fill_black")),
        }
    }
}

#[derive(Debug)]
pub struct Mosaic {
    pub raster: GeoRaster,
    pub bounds: PixelBounds,
    /// Tiles that could not be fetched and were left black.
    pub missing: Vec<(TileCoord, String)>,
    pub network_tiles: usize,
    pub cached_tiles: usize,
}

/// Mosaic of the box spanned by two corners at `zoom`.
pub fn assemble_mosaic(
    fetcher: &Fetcher,
    a: GeoPoint<f64>,
    b: GeoPoint<f64>,
    zoom: u8,
    cache: &TileCache,
    policy: MissingPolicy,
) -> Result<Mosaic, FetchError> {
    let bounds = bbox_to_pixel_bounds(a, b, zoom)?;
    assemble_pixel_bounds(fetcher, bounds, cache, policy)
}

fn decode_tile(t: &crate::FetchedTile) -> Result<image::RgbImage, String> {
    let img = image::load_from_memory(&t.bytes).map_err(|e| e.to_string())?.into_rgb8();
    if img.dimensions() != (TILE_SIZE, TILE_SIZE) {
        let (w, h) = img.dimensions();
        return Err(format!("tile is {w}×{h}, expected {TILE_SIZE}×{TILE_SIZE}"));
    }
    Ok(img)
}

/// Mosaic of an exact global-pixel rectangle. Tile `(x, y)` lands at
/// `(x·256 − x0, y·256 − y0)` and everything outside the rectangle is cropped.
pub fn assemble_pixel_bounds(
    fetcher: &Fetcher,
    bounds: PixelBounds,
    cache: &TileCache,
    policy: MissingPolicy,
) -> Result<Mosaic, FetchError> {
    let range = pixel_bounds_to_tile_range(&bounds)?;
    let coords: Vec<TileCoord> = range.iter().collect();
    let results = fetcher.fetch_all(&coords, cache);

    let (width, height) = (bounds.width() as usize, bounds.height() as usize);
    let mut data = vec![0u8; width * height * 3];
    let mut missing = Vec::new();
    let (mut network_tiles, mut cached_tiles) = (0, 0);
    let t = u64::from(TILE_SIZE);
    for (coord, result) in coords.iter().zip(results) {
        let img = result
            .map_err(|e| e.to_string())
            .and_then(|tile| {
                if tile.from_cache {
                    cached_tiles += 1;
                } else {
                    network_tiles += 1;
                }
                decode_tile(&tile)
            });
        let img = match img {
            Ok(img) => img,
            Err(reason) => {
                missing.push((*coord, reason));
                continue;
            }
        };
        let (tx, ty) = coord.pixel_origin();
        let gx0 = tx.max(bounds.x0);
        let gx1 = (tx + t).min(bounds.x1);
        let span = (gx1 - gx0) as usize * 3;
        let raw = img.as_raw();
        for gy in ty.max(bounds.y0)..(ty + t).min(bounds.y1) {
            let src = (((gy - ty) * t + (gx0 - tx)) * 3) as usize;
            let dst = (((gy - bounds.y0) as usize) * width + (gx0 - bounds.x0) as usize) * 3;
            data[dst..dst + span].copy_from_slice(&raw[src..src + span]);
        }
    }
    if policy == MissingPolicy::Fail && !missing.is_empty() {
        return Err(FetchError::MissingTiles(missing));
    }
    let raster = GeoRaster::rgb(width, height, data)
        .map_err(|e| FetchError::Config(e.to_string()))?
        .with_geotransform(Some(GeoTransform::for_bounds(&bounds)?));
    Ok(Mosaic {
        raster,
        bounds,
        missing,
        network_tiles,
        cached_tiles,
    })
}
