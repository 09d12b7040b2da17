#![allow(dead_code)]

use std::path::{Path, PathBuf};

use urbanform_core::raster::{decode_labels, GeoRaster, LabelRaster};
use urbanform_core::tilemath::{GeoTransform, PixelBounds};
use urbanform_core::typology::ClassLabel;
use urbanform_pipeline::dataset::{build_dataset, GridOptions};
use urbanform_pipeline::manifest::{export_manifest, ExportOptions};

pub fn temp_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("urbanform-pl-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Small deterministic hash used to place classes and noise.
pub fn mix(mut v: u64) -> u64 {
    v ^= v >> 33;
    v = v.wrapping_mul(0xff51_afd7_ed55_8ccd);
    v ^= v >> 33;
    v = v.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    v ^ (v >> 33)
}

/// Square regions of `block` pixels with pseudo-random classes; about one in
/// ten regions is unrecognized.
pub fn blocky_labels(width: usize, height: usize, block: usize, seed: u64) -> LabelRaster {
    let classes = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let h = mix(seed ^ ((x / block) as u64) << 20 ^ (y / block) as u64);
            if h % 10 == 0 {
                ClassLabel::Unrecognized
            } else {
                ClassLabel::REAL[(h % 4) as usize]
            }
        })
        .collect();
    LabelRaster::new(width, height, classes).unwrap()
}

/// Palette colors of `labels` with per-pixel noise of up to ±`noise` per channel.
pub fn noisy_image(labels: &LabelRaster, noise: u8, seed: u64) -> GeoRaster {
    let mut img = decode_labels(labels);
    if noise > 0 {
        let span = u64::from(noise) * 2 + 1;
        let w = img.width();
        for y in 0..img.height() {
            for x in 0..w {
                let h = mix(seed ^ (y * w + x) as u64);
                for (b, v) in img.pixel_mut(x, y).iter_mut().enumerate() {
                    let d = ((h >> (b * 16)) % span) as i16 - i16::from(noise);
                    *v = (i16::from(*v) + d).clamp(0, 255) as u8;
                }
            }
        }
    }
    img.with_geotransform(Some(geo(labels.width(), labels.height())))
}

pub fn geo(width: usize, height: usize) -> GeoTransform {
    let (x0, y0) = (dhaka_origin().0, dhaka_origin().1);
    GeoTransform::for_bounds(&PixelBounds {
        zoom: 17,
        x0,
        y0,
        x1: x0 + width as u64,
        y1: y0 + height as u64,
    })
    .unwrap()
}

/// Global pixel near Dhaka at zoom 17.
pub fn dhaka_origin() -> (u64, u64) {
    (25_203_000, 14_492_000)
}

/// Builds the dataset and manifest under `dir`; returns the manifest path.
pub fn prepare(dir: &Path, image: &GeoRaster, labels: &LabelRaster, opts: &GridOptions) -> PathBuf {
    let dataset = dir.join("dataset");
    build_dataset(image, labels, opts, &dataset).unwrap();
    let manifest = dataset.join("manifest.json");
    export_manifest(&dataset, &manifest, &ExportOptions::default()).unwrap();
    manifest
}

pub fn small_options(window: usize, overlap: f64, split: f64) -> GridOptions {
    use urbanform_core::windowing::{SplitSpec, WindowSpec};
    GridOptions {
        train: WindowSpec::new(window, overlap).unwrap(),
        test: WindowSpec::tiled(window).unwrap(),
        split: SplitSpec::new(split).unwrap(),
    }
}
