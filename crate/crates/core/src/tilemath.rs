//! Spherical Web-Mercator arithmetic: ground resolution, global pixel
//! coordinates, tile addressing and quadkeys.
//!
//! Global pixel coordinates at zoom `z` span `[0, 256·2^z)` on both axes with
//! the origin at the north-west corner of the map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Float;

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
pub const TILE_SIZE: u32 = 256;
pub const MAX_LATITUDE: f64 = 85.051_128_78;
pub const MAX_ZOOM: u8 = 23;

#[derive(Debug, Error, PartialEq)]
pub enum TileMathError {
    #[error("zoom {0} outside supported range {1}..={2}")]
    Zoom(u8, u8, u8),
    #[error("tile ({x}, {y}) outside the {n}×{n} grid at zoom {zoom}")]
    TileOutOfRange { x: u32, y: u32, zoom: u8, n: u64 },
    #[error("invalid quadkey {key:?}: {reason}")]
    Quadkey { key: String, reason: String },
    #[error("degenerate bounding box: {0}")]
    DegenerateBbox(String),
    #[error("coordinate is not finite")]
    NotFinite,
}

/// A geodetic position in degrees, clamped to the Web-Mercator validity range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Float> GeoPoint<T> {
    /// Clamps latitude to ±85.05112878° and wraps longitude into [-180, 180).
    pub fn new(lat: T, lon: T) -> Result<Self, TileMathError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(TileMathError::NotFinite);
        }
        let max_lat = T::lit(MAX_LATITUDE);
        let lat = lat.max(-max_lat).min(max_lat);
        let full = T::lit(360.0);
        let half = T::lit(180.0);
        let mut lon = (lon + half) % full;
        if lon < T::zero() {
            lon = lon + full;
        }
        Ok(Self { lat, lon: lon - half })
    }
}

/// Size of the whole map in pixels at `zoom`.
pub fn map_size(zoom: u8) -> u64 {
    u64::from(TILE_SIZE) << zoom
}

fn check_zoom(zoom: u8, min: u8) -> Result<(), TileMathError> {
    if zoom < min || zoom > MAX_ZOOM {
        return Err(TileMathError::Zoom(zoom, min, MAX_ZOOM));
    }
    Ok(())
}

/// Meters of ground covered by one pixel at `lat` degrees and `zoom`.
pub fn ground_resolution<T: Float>(lat: T, zoom: u8) -> Result<T, TileMathError> {
    check_zoom(zoom, 0)?;
    let lat = lat.max(-T::lit(MAX_LATITUDE)).min(T::lit(MAX_LATITUDE));
    let circumference = T::lit(2.0) * T::PI() * T::lit(EARTH_RADIUS_M);
    Ok(circumference * lat.to_radians().cos() / T::from_count(map_size(zoom)))
}

/// Projects `p` to global pixel coordinates, clamped to `[0, map_size − 1]`.
pub fn latlon_to_global_pixel<T: Float>(p: GeoPoint<T>, zoom: u8) -> (T, T) {
    let size = T::from_count(map_size(zoom));
    let max = size - T::one();
    let lat = p.lat.max(-T::lit(MAX_LATITUDE)).min(T::lit(MAX_LATITUDE));
    let x = (p.lon + T::lit(180.0)) / T::lit(360.0);
    let sin_lat = lat.to_radians().sin();
    let y = T::lit(0.5) - ((T::one() + sin_lat) / (T::one() - sin_lat)).ln() / (T::lit(4.0) * T::PI());
    let clamp = |v: T| (v * size).max(T::zero()).min(max);
    (clamp(x), clamp(y))
}

/// Inverse projection of a global pixel position (not clamped).
pub fn global_pixel_to_latlon<T: Float>(px: T, py: T, zoom: u8) -> GeoPoint<T> {
    let size = T::from_count(map_size(zoom));
    let x = px / size - T::lit(0.5);
    let y = T::lit(0.5) - py / size;
    let lat = T::lit(90.0) - T::lit(360.0) * (-y * T::lit(2.0) * T::PI()).exp().atan() / T::PI();
    GeoPoint {
        lat,
        lon: T::lit(360.0) * x,
    }
}

/// Address of one 256-px tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
    pub zoom: u8,
}

impl TileCoord {
    pub fn new(x: u32, y: u32, zoom: u8) -> Result<Self, TileMathError> {
        check_zoom(zoom, 1)?;
        let n = 1u64 << zoom;
        if u64::from(x) >= n || u64::from(y) >= n {
            return Err(TileMathError::TileOutOfRange { x, y, zoom, n });
        }
        Ok(Self { x, y, zoom })
    }

    /// Tile containing the global pixel.
    pub fn containing_pixel(px: u64, py: u64, zoom: u8) -> Result<Self, TileMathError> {
        let t = u64::from(TILE_SIZE);
        let x = u32::try_from(px / t).unwrap_or(u32::MAX);
        let y = u32::try_from(py / t).unwrap_or(u32::MAX);
        Self::new(x, y, zoom)
    }

    /// Global pixel of the tile's north-west corner.
    pub fn pixel_origin(&self) -> (u64, u64) {
        let t = u64::from(TILE_SIZE);
        (u64::from(self.x) * t, u64::from(self.y) * t)
    }

    pub fn parent(&self) -> Option<TileCoord> {
        (self.zoom > 1).then(|| TileCoord {
            x: self.x >> 1,
            y: self.y >> 1,
            zoom: self.zoom - 1,
        })
    }

    pub fn quadkey(&self) -> String {
        tile_to_quadkey(*self)
    }
}

pub fn tile_to_quadkey(t: TileCoord) -> String {
    (1..=t.zoom)
        .rev()
        .map(|i| {
            let mask = 1u32 << (i - 1);
            let mut digit = b'0';
            if t.x & mask != 0 {
                digit += 1;
            }
            if t.y & mask != 0 {
                digit += 2;
            }
            char::from(digit)
        })
        .collect()
}

pub fn quadkey_to_tile(q: &str) -> Result<TileCoord, TileMathError> {
    let err = |reason: String| TileMathError::Quadkey {
        key: q.to_string(),
        reason,
    };
    if q.is_empty() {
        return Err(err("empty quadkey".into()));
    }
    let zoom = u8::try_from(q.len())
        .ok()
        .filter(|z| *z <= MAX_ZOOM)
        .ok_or_else(|| err(format!("longer than {MAX_ZOOM} digits")))?;
    let (mut x, mut y) = (0u32, 0u32);
    for c in q.chars() {
        let d = c.to_digit(4).ok_or_else(|| err(format!("invalid digit {c:?}")))?;
        x = (x << 1) | (d & 1);
        y = (y << 1) | (d >> 1);
    }
    TileCoord::new(x, y, zoom)
}

/// Half-open rectangle in global pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBounds {
    pub zoom: u8,
    pub x0: u64,
    pub y0: u64,
    pub x1: u64,
    pub y1: u64,
}

impl PixelBounds {
    pub fn width(&self) -> u64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u64 {
        self.y1 - self.y0
    }
}

/// Inclusive tile rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRange {
    pub zoom: u8,
    pub x_min: u32,
    pub x_max: u32,
    pub y_min: u32,
    pub y_max: u32,
}

impl TileRange {
    pub fn columns(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn rows(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn len(&self) -> usize {
        self.columns() as usize * self.rows() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major iteration.
    pub fn iter(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (self.y_min..=self.y_max)
            .flat_map(move |y| (self.x_min..=self.x_max).map(move |x| TileCoord { x, y, zoom: self.zoom }))
    }

    pub fn contains(&self, t: TileCoord) -> bool {
        t.zoom == self.zoom && (self.x_min..=self.x_max).contains(&t.x) && (self.y_min..=self.y_max).contains(&t.y)
    }
}

// Projected corners that land within this distance of an integer pixel are
// treated as lying on it, so bboxes built from tile corners stay exact.
const PIXEL_SNAP: f64 = 1e-6;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < PIXEL_SNAP {
        r
    } else {
        v
    }
}

/// Smallest integer pixel rectangle covering the box spanned by two corners.
pub fn bbox_to_pixel_bounds<T: Float>(a: GeoPoint<T>, b: GeoPoint<T>, zoom: u8) -> Result<PixelBounds, TileMathError> {
    check_zoom(zoom, 0)?;
    if a.lat == b.lat || a.lon == b.lon {
        return Err(TileMathError::DegenerateBbox(format!(
            "corners ({:?}, {:?}) and ({:?}, {:?}) span zero area",
            a.lat, a.lon, b.lat, b.lon
        )));
    }
    let (ax, ay) = latlon_to_global_pixel(a, zoom);
    let (bx, by) = latlon_to_global_pixel(b, zoom);
    let (ax, ay, bx, by) = (snap(ax.as_f64()), snap(ay.as_f64()), snap(bx.as_f64()), snap(by.as_f64()));
    let size = map_size(zoom);
    let x0 = ax.min(bx).floor() as u64;
    let y0 = ay.min(by).floor() as u64;
    let x1 = (ax.max(bx).ceil() as u64).clamp(x0 + 1, size);
    let y1 = (ay.max(by).ceil() as u64).clamp(y0 + 1, size);
    Ok(PixelBounds { zoom, x0, y0, x1, y1 })
}

/// Tiles intersecting a pixel rectangle.
pub fn pixel_bounds_to_tile_range(b: &PixelBounds) -> Result<TileRange, TileMathError> {
    check_zoom(b.zoom, 1)?;
    let lo = TileCoord::containing_pixel(b.x0, b.y0, b.zoom)?;
    let hi = TileCoord::containing_pixel(b.x1 - 1, b.y1 - 1, b.zoom)?;
    Ok(TileRange {
        zoom: b.zoom,
        x_min: lo.x,
        x_max: hi.x,
        y_min: lo.y,
        y_max: hi.y,
    })
}

/// Minimal inclusive tile rectangle covering the bbox spanned by two corners.
pub fn bbox_to_tile_range<T: Float>(a: GeoPoint<T>, b: GeoPoint<T>, zoom: u8) -> Result<TileRange, TileMathError> {
    pixel_bounds_to_tile_range(&bbox_to_pixel_bounds(a, b, zoom)?)
}

/// Pixel-to-map placement of a raster.
///
/// Raster pixel `(col, row)` sits at global pixel `(origin_px[0] + col,
/// origin_px[1] + row)` at `zoom`; `scale_m_per_px` is the ground resolution
/// at the raster's center latitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_px: [u64; 2],
    pub zoom: u8,
    pub scale_m_per_px: f64,
}

impl GeoTransform {
    /// Transform for a raster covering `bounds`, with the scale taken at the center row.
    pub fn for_bounds(bounds: &PixelBounds) -> Result<Self, TileMathError> {
        let center_y = (bounds.y0 + bounds.y1) as f64 / 2.0;
        let center = global_pixel_to_latlon(0.0, center_y, bounds.zoom);
        Ok(Self {
            origin_px: [bounds.x0, bounds.y0],
            zoom: bounds.zoom,
            scale_m_per_px: ground_resolution(center.lat, bounds.zoom)?,
        })
    }

    /// Transform of a sub-window starting at raster pixel `(col, row)`.
    pub fn offset(&self, col: u64, row: u64) -> Self {
        Self {
            origin_px: [self.origin_px[0] + col, self.origin_px[1] + row],
            ..*self
        }
    }

    /// Location of the north-west corner of raster pixel `(col, row)`.
    pub fn pixel_to_latlon(&self, col: f64, row: f64) -> GeoPoint<f64> {
        global_pixel_to_latlon(self.origin_px[0] as f64 + col, self.origin_px[1] as f64 + row, self.zoom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_at_equator() {
        let r0 = ground_resolution(0.0f64, 0).unwrap();
        assert!((r0 - 156_543.034).abs() < 1e-3, "{r0}");
        assert_eq!(ground_resolution(0.0f64, 1).unwrap(), r0 / 2.0);
        assert!(ground_resolution(0.0f64, 24).is_err());
        let r32 = ground_resolution(0.0f32, 0).unwrap();
        assert!((f64::from(r32) - 156_543.034).abs() < 0.1);
    }

    #[test]
    fn resolution_at_dhaka() {
        // 2π·6378137·cos(23.81°)/(256·2^17)
        let expected = 2.0 * std::f64::consts::PI * 6_378_137.0 * 23.81f64.to_radians().cos() / (256.0 * 131_072.0);
        let r = ground_resolution(23.81f64, 17).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 1.0927).abs() < 1e-4, "{r}");
    }

    #[test]
    fn pixel_examples() {
        assert_eq!(latlon_to_global_pixel(GeoPoint { lat: 0.0, lon: 0.0 }, 1), (256.0, 256.0));
        assert_eq!(latlon_to_global_pixel(GeoPoint { lat: 0.0, lon: -180.0 }, 0), (0.0, 128.0));
        let (x, y) = latlon_to_global_pixel(GeoPoint { lat: MAX_LATITUDE, lon: -180.0 }, 2);
        assert_eq!((x, y), (0.0, 0.0));
        let (_, y) = latlon_to_global_pixel(GeoPoint { lat: -MAX_LATITUDE, lon: 0.0 }, 2);
        assert_eq!(y, 1023.0);
    }

    #[test]
    fn geopoint_clamps_and_wraps() {
        let p = GeoPoint::new(89.0f64, 180.0).unwrap();
        assert_eq!(p.lat, MAX_LATITUDE);
        assert_eq!(p.lon, -180.0);
        assert_eq!(GeoPoint::new(0.0f64, 190.0).unwrap().lon, -170.0);
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn quadkey_examples() {
        assert_eq!(tile_to_quadkey(TileCoord::new(0, 0, 1).unwrap()), "0");
        assert_eq!(tile_to_quadkey(TileCoord::new(3, 5, 3).unwrap()), "213");
        assert_eq!(quadkey_to_tile("213").unwrap(), TileCoord::new(3, 5, 3).unwrap());
        assert_eq!(quadkey_to_tile("0").unwrap(), TileCoord::new(0, 0, 1).unwrap());
        assert!(quadkey_to_tile("4").is_err());
        assert!(quadkey_to_tile("").is_err());
        assert!(quadkey_to_tile(&"1".repeat(24)).is_err());
    }

    #[test]
    fn tile_validation() {
        assert!(TileCoord::new(2, 0, 1).is_err());
        assert!(TileCoord::new(0, 0, 0).is_err());
        assert!(TileCoord::new(0, 0, 24).is_err());
    }

    #[test]
    fn whole_world_range() {
        let a = GeoPoint { lat: MAX_LATITUDE, lon: -180.0 };
        let b = GeoPoint { lat: -MAX_LATITUDE, lon: 179.999_999 };
        let r = bbox_to_tile_range(a, b, 1).unwrap();
        assert_eq!((r.x_min, r.x_max, r.y_min, r.y_max), (0, 1, 0, 1));
    }

    #[test]
    fn bbox_inside_one_tile() {
        let t = TileCoord::new(5, 9, 5).unwrap();
        let (ox, oy) = t.pixel_origin();
        let a = global_pixel_to_latlon(ox as f64 + 10.0, oy as f64 + 10.0, 5);
        let b = global_pixel_to_latlon(ox as f64 + 200.0, oy as f64 + 100.0, 5);
        let r = bbox_to_tile_range(a, b, 5).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r.contains(t));
    }

    #[test]
    fn degenerate_bbox() {
        let a = GeoPoint { lat: 10.0, lon: 10.0 };
        assert!(matches!(bbox_to_tile_range(a, a, 3), Err(TileMathError::DegenerateBbox(_))));
        let b = GeoPoint { lat: 10.0, lon: 12.0 };
        assert!(bbox_to_tile_range(a, b, 3).is_err());
    }

    #[test]
    fn tile_corner_bbox_is_exact() {
        let z = 17;
        let a = global_pixel_to_latlon(512.0 * 1000.0, 256.0 * 2000.0, z);
        let b = global_pixel_to_latlon(512.0 * 1000.0 + 512.0, 256.0 * 2000.0 + 512.0, z);
        let bounds = bbox_to_pixel_bounds(a, b, z).unwrap();
        assert_eq!((bounds.width(), bounds.height()), (512, 512));
        let r = pixel_bounds_to_tile_range(&bounds).unwrap();
        assert_eq!((r.columns(), r.rows()), (2, 2));
    }

    #[test]
    fn parent_drops_last_digit() {
        let t = TileCoord::new(1234, 4321, 14).unwrap();
        let q = t.quadkey();
        assert_eq!(t.parent().unwrap().quadkey(), q[..q.len() - 1]);
        assert!(TileCoord::new(0, 1, 1).unwrap().parent().is_none());
    }

    #[test]
    fn geotransform_offset() {
        let g = GeoTransform {
            origin_px: [100, 200],
            zoom: 10,
            scale_m_per_px: 1.0,
        };
        assert_eq!(g.offset(5, 7).origin_px, [105, 207]);
        let p = g.pixel_to_latlon(0.0, 0.0);
        let (x, y) = latlon_to_global_pixel(p, 10);
        assert!((x - 100.0).abs() < 1e-6 && (y - 200.0).abs() < 1e-6);
    }
}
