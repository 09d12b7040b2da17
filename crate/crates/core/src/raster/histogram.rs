use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::{LabelRaster, PixelRect, RasterError, Result};
use crate::scalar::Scalar;
use crate::typology::ClassLabel;

/// Pixel counts per class, indexed by [`ClassLabel::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: [u64; ClassLabel::COUNT],
}

impl ClassHistogram {
    pub fn from_counts(counts: [u64; ClassLabel::COUNT]) -> Self {
        Self { counts }
    }

    /// Histogram with no unrecognized pixels and the given real-class counts.
    pub fn from_real_counts(real: [u64; 4]) -> Self {
        Self {
            counts: [0, real[0], real[1], real[2], real[3]],
        }
    }

    pub fn count(&self, label: ClassLabel) -> u64 {
        self.counts[usize::from(label.index())]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn real_total(&self) -> u64 {
        ClassLabel::REAL.iter().map(|&c| self.count(c)).sum()
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        Self {
            counts: self.counts.map(|c| c * k),
        }
    }
}

impl AddAssign for ClassHistogram {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts) {
            *a += b;
        }
    }
}

impl Add for ClassHistogram {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

/// Exact per-class pixel counts over `region` (or the whole raster).
pub fn class_histogram(l: &LabelRaster, region: Option<PixelRect>) -> Result<ClassHistogram> {
    let rect = region.unwrap_or(PixelRect::full(l.width, l.height));
    rect.check(l.width, l.height)?;
    let mut h = ClassHistogram::default();
    for row in rect.y..rect.y + rect.height {
        let start = row * l.width + rect.x;
        for c in &l.classes[start..start + rect.width] {
            h.counts[usize::from(c.index())] += 1;
        }
    }
    Ok(h)
}

/// How class weights are derived from a histogram.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `N_real / (4 · count_c)`
    #[default]
    InverseFreq,
    /// `median(freq) / freq_c` over the classes that occur
    MedianFreq,
    None,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "inverse_freq" => Ok(Self::InverseFreq),
            "median_freq" => Ok(Self::MedianFreq),
            "none" => Ok(Self::None),
            other => Err(format!("unknown weighting {other:?}; expected inverse_freq, median_freq or none")),
        }
    }
}

/// Loss weights for the four real classes, normalized to mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<T> {
    pub weights: [T; 4],
}

impl<T: Scalar> ClassWeights<T> {
    pub fn get(&self, label: ClassLabel) -> Option<&T> {
        label.is_real().then(|| &self.weights[usize::from(label.index()) - 1])
    }

    pub fn to_f64(&self) -> ClassWeights<f64> {
        ClassWeights {
            weights: [0, 1, 2, 3].map(|i| self.weights[i].as_f64()),
        }
    }
}

fn median<T: Scalar>(mut values: Vec<T>) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("weights are comparable"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2].clone()
    } else {
        (values[n / 2 - 1].clone() + values[n / 2].clone()) / T::from_count(2)
    }
}

/// Class-balancing weights from a histogram. `Unrecognized` pixels are ignored;
/// classes with no pixels receive the largest weight computed for the others.
pub fn class_weights<T: Scalar>(h: &ClassHistogram, scheme: Weighting) -> Result<ClassWeights<T>> {
    let real = ClassLabel::REAL.map(|c| h.count(c));
    let n_real: u64 = real.iter().sum();
    if n_real == 0 {
        return Err(RasterError::NoRealPixels);
    }
    let raw: [Option<T>; 4] = match scheme {
        Weighting::None => return Ok(ClassWeights { weights: [0; 4].map(|_| T::one()) }),
        Weighting::InverseFreq => real.map(|c| (c > 0).then(|| T::ratio(n_real, 4 * c))),
        Weighting::MedianFreq => {
            let freqs: Vec<T> = real.iter().filter(|&&c| c > 0).map(|&c| T::ratio(c, n_real)).collect();
            let med = median(freqs);
            real.map(|c| (c > 0).then(|| med.clone() / T::ratio(c, n_real)))
        }
    };
    let max = raw
        .iter()
        .flatten()
        .cloned()
        .reduce(|a, b| if b > a { b } else { a })
        .expect("at least one class has pixels");
    let filled = raw.map(|w| w.unwrap_or_else(|| max.clone()));
    let sum = filled.iter().cloned().fold(T::zero(), |a, b| a + b);
    let scale = T::from_count(4) / sum;
    Ok(ClassWeights {
        weights: filled.map(|w| w * scale.clone()),
    })
}
