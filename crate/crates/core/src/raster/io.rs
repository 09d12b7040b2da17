//! Raster files: a lossless image (PNG or TIFF, chosen by extension) plus a
//! `<name>.meta.json` sidecar carrying placement and palette.
//!
//! Label rasters are stored as single-channel class indices. Reading a label
//! file also accepts color-coded RGB images, which are encoded through the
//! palette.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{encode_labels, GeoRaster, LabelRaster, RasterError, Result};
use crate::tilemath::GeoTransform;
use crate::typology::ColorMap;

/// Contents of `<name>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_px: Option<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_m_per_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<ColorMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodata: Option<u8>,
}

impl Sidecar {
    pub fn from_parts(g: Option<GeoTransform>, palette: Option<ColorMap>, nodata: Option<u8>) -> Self {
        Self {
            origin_px: g.map(|g| g.origin_px),
            zoom: g.map(|g| g.zoom),
            scale_m_per_px: g.map(|g| g.scale_m_per_px),
            palette,
            nodata,
        }
    }

    pub fn geotransform(&self) -> Option<GeoTransform> {
        Some(GeoTransform {
            origin_px: self.origin_px?,
            zoom: self.zoom?,
            scale_m_per_px: self.scale_m_per_px?,
        })
    }
}

/// `dir/name.png` → `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Tiff)) => Ok(f),
        _ => Err(RasterError::Format {
            path: display(path),
            reason: "unsupported raster extension; use .png, .tif or .tiff".into(),
        }),
    }
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let meta = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(sidecar).map_err(|source| RasterError::Sidecar {
        path: display(&meta),
        source,
    })?;
    text.push('\n');
    fs::write(&meta, text).map_err(|source| RasterError::Io {
        path: display(&meta),
        source,
    })
}

/// Reads the sidecar next to `path`, if there is one.
pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let meta = sidecar_path(path);
    match fs::read_to_string(&meta) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|source| RasterError::Sidecar {
            path: display(&meta),
            source,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(RasterError::Io {
            path: display(&meta),
            source,
        }),
    }
}

fn save(path: &Path, width: usize, height: usize, data: &[u8], color: ColorType) -> Result<()> {
    let format = format_for(path)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| RasterError::Io {
            path: display(parent),
            source,
        })?;
    }
    image::save_buffer_with_format(path, data, width as u32, height as u32, color, format).map_err(|source| {
        RasterError::Image {
            path: display(path),
            source,
        }
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    let format = format_for(path)?;
    let bytes = fs::read(path).map_err(|source| RasterError::Io {
        path: display(path),
        source,
    })?;
    image::load_from_memory_with_format(&bytes, format).map_err(|source| RasterError::Image {
        path: display(path),
        source,
    })
}

/// Writes the image and its sidecar.
pub fn write_raster(path: &Path, r: &GeoRaster) -> Result<()> {
    let color = if r.bands() == 1 { ColorType::L8 } else { ColorType::Rgb8 };
    save(path, r.width(), r.height(), r.data(), color)?;
    write_sidecar(path, &Sidecar::from_parts(r.geotransform, None, r.nodata))
}

/// Reads an image as 1-band (grayscale input) or 3-band (anything else).
pub fn read_raster(path: &Path) -> Result<GeoRaster> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut r = match img {
        DynamicImage::ImageLuma8(buf) => GeoRaster::new(w, h, 1, buf.into_raw())?,
        other => GeoRaster::rgb(w, h, other.into_rgb8().into_raw())?,
    };
    if let Some(meta) = read_sidecar(path)? {
        r.geotransform = meta.geotransform();
        r.nodata = meta.nodata;
    }
    Ok(r)
}

/// Writes class indices as an 8-bit grayscale image plus sidecar.
pub fn write_labels(path: &Path, l: &LabelRaster) -> Result<()> {
    save(path, l.width(), l.height(), &l.indices(), ColorType::L8)?;
    write_sidecar(path, &Sidecar::from_parts(l.geotransform, Some(l.palette), None))
}

/// Renders labels to RGB through their palette.
pub fn write_labels_rgb(path: &Path, l: &LabelRaster) -> Result<()> {
    let rgb = super::decode_labels(l);
    save(path, rgb.width(), rgb.height(), rgb.data(), ColorType::Rgb8)?;
    write_sidecar(path, &Sidecar::from_parts(l.geotransform, Some(l.palette), None))
}

/// Options for interpreting a label file.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelReadOptions {
    /// Palette overriding the sidecar's, used for RGB files and attached to the result.
    pub palette: Option<ColorMap>,
    /// Chebyshev tolerance when encoding RGB files.
    pub tolerance: u8,
}

pub fn read_labels(path: &Path, opts: LabelReadOptions) -> Result<LabelRaster> {
    let raster = read_raster(path)?;
    let meta = read_sidecar(path)?.unwrap_or_default();
    let palette = opts.palette.or(meta.palette).unwrap_or_default();
    let labels = if raster.bands() == 1 {
        LabelRaster::from_indices(raster.width(), raster.height(), raster.data()).map_err(|e| RasterError::Format {
            path: display(path),
            reason: e.to_string(),
        })?
    } else {
        encode_labels(&raster, &palette, opts.tolerance)?
    };
    Ok(labels.with_palette(palette).with_geotransform(raster.geotransform))
}
