//! In-memory rasters and the RGB ⇄ class-label encoding.
//!
//! [`GeoRaster`] holds 8-bit imagery (1 or 3 bands) and [`LabelRaster`] holds
//! per-pixel [`ClassLabel`]s. Both are row-major and carry an optional
//! [`GeoTransform`] that follows them through cropping.

mod histogram;
pub mod io;

pub use histogram::{class_histogram, class_weights, ClassHistogram, ClassWeights, Weighting};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tilemath::GeoTransform;
use crate::typology::{ClassLabel, ColorMap, Rgb};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {0}×{1}")]
    EmptyDimensions(usize, usize),
    #[error("data length {actual} does not match {width}×{height}×{bands} = {expected}")]
    DataLength {
        width: usize,
        height: usize,
        bands: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported band count {0}; expected 1 or 3")]
    Bands(usize),
    #[error("dimension mismatch: {0}×{1} vs {2}×{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("region {region:?} exceeds raster bounds {width}×{height}")]
    OutOfBounds {
        region: PixelRect,
        width: usize,
        height: usize,
    },
    #[error("class index {0} at pixel offset {1} is outside 0..=4")]
    ClassIndex(u8, usize),
    #[error("palette colors are only {separation} apart (Chebyshev); tolerance {tolerance} needs more than {}", 2 * u16::from(*tolerance))]
    PaletteTooClose { separation: u8, tolerance: u8 },
    #[error("histogram has no pixels in any real class")]
    NoRealPixels,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: invalid sidecar: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Axis-aligned pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        let fits = self.width > 0
            && self.height > 0
            && self.x.checked_add(self.width).is_some_and(|e| e <= width)
            && self.y.checked_add(self.height).is_some_and(|e| e <= height);
        if fits {
            Ok(())
        } else {
            Err(RasterError::OutOfBounds {
                region: *self,
                width,
                height,
            })
        }
    }
}

/// Rasters that can be cut into sub-windows.
pub trait Crop: Sized {
    fn dimensions(&self) -> (usize, usize);
    fn crop(&self, rect: PixelRect) -> Result<Self>;
}

fn crop_rows<T: Copy>(data: &[T], width: usize, bands: usize, rect: PixelRect) -> Vec<T> {
    let row_len = rect.width * bands;
    let mut out = Vec::with_capacity(row_len * rect.height);
    for row in rect.y..rect.y + rect.height {
        let start = (row * width + rect.x) * bands;
        out.extend_from_slice(&data[start..start + row_len]);
    }
    out
}

fn offset_transform(g: Option<GeoTransform>, rect: PixelRect) -> Option<GeoTransform> {
    g.map(|g| g.offset(rect.x as u64, rect.y as u64))
}

/// 8-bit raster with 1 or 3 interleaved bands.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<u8>,
    pub geotransform: Option<GeoTransform>,
    pub nodata: Option<u8>,
}

impl GeoRaster {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions(width, height));
        }
        if bands != 1 && bands != 3 {
            return Err(RasterError::Bands(bands));
        }
        let expected = width * height * bands;
        if data.len() != expected {
            return Err(RasterError::DataLength {
                width,
                height,
                bands,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
            geotransform: None,
            nodata: None,
        })
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    /// Three-band raster filled with one color.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        let data = color.0.repeat(width * height);
        Self::rgb(width, height, data)
    }

    pub fn with_geotransform(mut self, g: Option<GeoTransform>) -> Self {
        self.geotransform = g;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.bands;
        &self.data[i..i + self.bands]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.bands;
        &mut self.data[i..i + self.bands]
    }

    /// Color at `(x, y)`; single-band rasters read as gray.
    pub fn rgb_at(&self, x: usize, y: usize) -> Rgb {
        match *self.pixel(x, y) {
            [v] => Rgb([v, v, v]),
            [r, g, b] => Rgb([r, g, b]),
            _ => unreachable!("band count validated at construction"),
        }
    }

    fn expect_rgb(&self) -> Result<()> {
        if self.bands != 3 {
            return Err(RasterError::Bands(self.bands));
        }
        Ok(())
    }
}

impl Crop for GeoRaster {
    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn crop(&self, rect: PixelRect) -> Result<Self> {
        rect.check(self.width, self.height)?;
        let mut out = GeoRaster::new(rect.width, rect.height, self.bands, crop_rows(&self.data, self.width, self.bands, rect))?;
        out.geotransform = offset_transform(self.geotransform, rect);
        out.nodata = self.nodata;
        Ok(out)
    }
}

/// Per-pixel class labels plus the palette used to render them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    classes: Vec<ClassLabel>,
    pub palette: ColorMap,
    pub geotransform: Option<GeoTransform>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, classes: Vec<ClassLabel>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions(width, height));
        }
        if classes.len() != width * height {
            return Err(RasterError::DataLength {
                width,
                height,
                bands: 1,
                expected: width * height,
                actual: classes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            classes,
            palette: ColorMap::default(),
            geotransform: None,
        })
    }

    pub fn filled(width: usize, height: usize, label: ClassLabel) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    /// Builds a raster from raw class indices, rejecting anything above 4.
    pub fn from_indices(width: usize, height: usize, indices: &[u8]) -> Result<Self> {
        let classes = indices
            .iter()
            .enumerate()
            .map(|(i, &v)| ClassLabel::from_index(v).map_err(|_| RasterError::ClassIndex(v, i)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, classes)
    }

    pub fn with_palette(mut self, palette: ColorMap) -> Self {
        self.palette = palette;
        self
    }

    pub fn with_geotransform(mut self, g: Option<GeoTransform>) -> Self {
        self.geotransform = g;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> ClassLabel {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: ClassLabel) {
        self.classes[y * self.width + x] = label;
    }

    pub fn indices(&self) -> Vec<u8> {
        self.classes.iter().map(|c| c.index()).collect()
    }
}

impl Crop for LabelRaster {
    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn crop(&self, rect: PixelRect) -> Result<Self> {
        rect.check(self.width, self.height)?;
        Ok(LabelRaster::new(rect.width, rect.height, crop_rows(&self.classes, self.width, 1, rect))?
            .with_palette(self.palette)
            .with_geotransform(offset_transform(self.geotransform, rect)))
    }
}

/// Maps each pixel to the palette entry within Chebyshev distance `tolerance`,
/// or to `Unrecognized` when none is that close.
pub fn encode_labels(rgb: &GeoRaster, map: &ColorMap, tolerance: u8) -> Result<LabelRaster> {
    rgb.expect_rgb()?;
    let separation = map.min_separation();
    if u16::from(separation) <= 2 * u16::from(tolerance) {
        return Err(RasterError::PaletteTooClose { separation, tolerance });
    }
    let palette = map.colors();
    let classes = rgb
        .data
        .par_chunks_exact(3)
        .map(|px| {
            let c = Rgb([px[0], px[1], px[2]]);
            palette
                .iter()
                .position(|p| p.chebyshev(c) <= tolerance)
                .map_or(ClassLabel::Unrecognized, |i| ClassLabel::ALL[i])
        })
        .collect();
    Ok(LabelRaster::new(rgb.width, rgb.height, classes)?
        .with_palette(*map)
        .with_geotransform(rgb.geotransform))
}

/// Renders labels through their palette.
pub fn decode_labels(l: &LabelRaster) -> GeoRaster {
    let data = l.classes.iter().flat_map(|&c| l.palette.color(c).0).collect();
    GeoRaster::rgb(l.width, l.height, data)
        .expect("label raster dimensions are valid")
        .with_geotransform(l.geotransform)
}

/// Blacks out every image pixel whose label is `Unrecognized`.
pub fn apply_unrecognized_mask(image: &GeoRaster, labels: &LabelRaster) -> Result<GeoRaster> {
    if image.dimensions() != labels.dimensions() {
        return Err(RasterError::DimensionMismatch(image.width, image.height, labels.width, labels.height));
    }
    let mut out = image.clone();
    let bands = out.bands;
    out.data
        .par_chunks_exact_mut(bands)
        .zip(labels.classes.par_iter())
        .filter(|(_, c)| **c == ClassLabel::Unrecognized)
        .for_each(|(px, _)| px.fill(0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(c: [u8; 3]) -> GeoRaster {
        GeoRaster::rgb(1, 1, c.to_vec()).unwrap()
    }

    #[test]
    fn encode_examples() {
        let m = ColorMap::default();
        assert_eq!(encode_labels(&px([255, 0, 0]), &m, 0).unwrap().get(0, 0), ClassLabel::HighlyInformal);
        assert_eq!(encode_labels(&px([250, 5, 3]), &m, 8).unwrap().get(0, 0), ClassLabel::HighlyInformal);
        assert_eq!(encode_labels(&px([128, 128, 128]), &m, 8).unwrap().get(0, 0), ClassLabel::Unrecognized);
        assert_eq!(encode_labels(&px([250, 5, 3]), &m, 4).unwrap().get(0, 0), ClassLabel::Unrecognized);
    }

    #[test]
    fn encode_rejects_overlapping_palette() {
        let m = ColorMap::default();
        assert!(matches!(
            encode_labels(&px([0, 0, 0]), &m, 128),
            Err(RasterError::PaletteTooClose { .. })
        ));
        assert!(encode_labels(&px([0, 0, 0]), &m, 127).is_ok());
        let gray = GeoRaster::new(1, 1, 1, vec![0]).unwrap();
        assert!(matches!(encode_labels(&gray, &m, 0), Err(RasterError::Bands(1))));
    }

    #[test]
    fn decode_examples() {
        let l = LabelRaster::filled(3, 2, ClassLabel::Unrecognized).unwrap();
        assert!(decode_labels(&l).data().iter().all(|&v| v == 0));

        let l = LabelRaster::from_indices(2, 2, &[1, 2, 3, 4]).unwrap();
        let rgb = decode_labels(&l);
        assert_eq!(rgb.rgb_at(0, 0), Rgb([255, 0, 0]));
        assert_eq!(rgb.rgb_at(1, 0), Rgb([255, 255, 0]));
        assert_eq!(rgb.rgb_at(0, 1), Rgb([0, 255, 255]));
        assert_eq!(rgb.rgb_at(1, 1), Rgb([0, 0, 255]));
        assert_eq!(encode_labels(&rgb, &l.palette, 0).unwrap(), l);
    }

    #[test]
    fn mask_examples() {
        let img = GeoRaster::filled(10, 10, Rgb([9, 8, 7])).unwrap();
        let all = LabelRaster::filled(10, 10, ClassLabel::Unrecognized).unwrap();
        assert!(apply_unrecognized_mask(&img, &all).unwrap().data().iter().all(|&v| v == 0));

        let none = LabelRaster::filled(10, 10, ClassLabel::ModeratelyFormal).unwrap();
        assert_eq!(apply_unrecognized_mask(&img, &none).unwrap(), img);

        let mut one = none.clone();
        one.set(3, 7, ClassLabel::Unrecognized);
        let masked = apply_unrecognized_mask(&img, &one).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let expect = if (x, y) == (3, 7) { Rgb::BLACK } else { Rgb([9, 8, 7]) };
                assert_eq!(masked.rgb_at(x, y), expect);
            }
        }
        let small = LabelRaster::filled(9, 10, ClassLabel::HighlyFormal).unwrap();
        assert!(matches!(
            apply_unrecognized_mask(&img, &small),
            Err(RasterError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn constructors_validate() {
        assert!(GeoRaster::rgb(0, 1, vec![]).is_err());
        assert!(GeoRaster::rgb(2, 2, vec![0; 11]).is_err());
        assert!(GeoRaster::new(1, 1, 4, vec![0; 4]).is_err());
        assert!(matches!(
            LabelRaster::from_indices(2, 1, &[0, 5]),
            Err(RasterError::ClassIndex(5, 1))
        ));
    }

    #[test]
    fn crop_moves_geotransform() {
        let g = GeoTransform {
            origin_px: [1000, 2000],
            zoom: 17,
            scale_m_per_px: 1.09,
        };
        let data: Vec<u8> = (0..4 * 3 * 3).map(|v| v as u8).collect();
        let r = GeoRaster::rgb(4, 3, data).unwrap().with_geotransform(Some(g));
        let c = r.crop(PixelRect::new(1, 2, 2, 1)).unwrap();
        assert_eq!(c.geotransform.unwrap().origin_px, [1001, 2002]);
        assert_eq!(c.pixel(0, 0), r.pixel(1, 2));
        assert_eq!(c.pixel(1, 0), r.pixel(2, 2));
        assert!(r.crop(PixelRect::new(3, 0, 2, 1)).is_err());
        assert!(r.crop(PixelRect::new(0, 0, 0, 1)).is_err());
    }
}
