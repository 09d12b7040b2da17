//! Pixel-wise confusion matrices and the metrics derived from them.
//!
//! Rows are ground truth, columns are predictions. Pixels whose ground truth
//! is the ignore class are tallied separately and never enter the matrix;
//! predictions of the ignore class on other pixels still count as misses.
//! All derived values are generic over [`Scalar`], so they can be computed in
//! floating point or as exact rationals.

use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::LabelRaster;
use crate::scalar::{mean, Scalar};
use crate::typology::ClassLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ground truth is {0}×{1} but prediction is {2}×{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0} is undefined: no counted pixels")]
    Undefined(&'static str),
    #[error("matrices of different shape cannot be combined")]
    Shape,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    ignore: Option<usize>,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize, ignore: Option<usize>) -> Self {
        Self {
            k,
            ignore,
            counts: vec![0; k * k],
            ignored: 0,
        }
    }

    /// Matrix over the five labels with `ignore` excluded.
    pub fn for_labels(ignore: Option<ClassLabel>) -> Self {
        Self::new(ClassLabel::COUNT, ignore.map(|c| usize::from(c.index())))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ignore(&self) -> Option<usize> {
        self.ignore
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    /// Records one pixel.
    pub fn record(&mut self, gt: usize, pred: usize) {
        if Some(gt) == self.ignore {
            self.ignored += 1;
        } else {
            self.counts[gt * self.k + pred] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Classes metrics are reported for: all but the ignore class.
    pub fn evaluated_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(move |c| Some(*c) != self.ignore)
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum::<u64>() - self.tp(c)
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k || self.ignore != other.ignore {
            return Err(MetricsError::Shape);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs).expect("matrices share shape");
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self += &rhs;
        self
    }
}

const ROWS_PER_TASK: usize = 64;

/// Tallies every pixel pair; ground-truth `ignore` pixels only bump `ignored`.
pub fn confusion(gt: &LabelRaster, pred: &LabelRaster, ignore: Option<ClassLabel>) -> Result<ConfusionMatrix> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(MetricsError::DimensionMismatch(gt.width(), gt.height(), pred.width(), pred.height()));
    }
    let chunk = gt.width() * ROWS_PER_TASK;
    Ok(gt
        .classes()
        .par_chunks(chunk)
        .zip(pred.classes().par_chunks(chunk))
        .fold(
            || ConfusionMatrix::for_labels(ignore),
            |mut m, (g, p)| {
                for (g, p) in g.iter().zip(p) {
                    m.record(usize::from(g.index()), usize::from(p.index()));
                }
                m
            },
        )
        .reduce(|| ConfusionMatrix::for_labels(ignore), |a, b| a + b))
}

/// `trace / total`; the multiclass form of `(tp + tn) / (tp + tn + fp + fn)`.
pub fn accuracy<T: Scalar>(m: &ConfusionMatrix) -> Result<T> {
    match m.total() {
        0 => Err(MetricsError::Undefined("accuracy")),
        n => Ok(T::ratio(m.trace(), n)),
    }
}

fn ratio_or_none<T: Scalar>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::ratio(num, den))
}

/// `tp / (tp + fp + fn)`; `None` when the class appears in neither raster.
pub fn iou<T: Scalar>(m: &ConfusionMatrix, c: usize) -> Option<T> {
    let tp = m.tp(c);
    ratio_or_none(tp, tp + m.fp(c) + m.fn_(c))
}

/// Mean of the defined per-class IoUs over the evaluated classes.
pub fn miou<T: Scalar>(m: &ConfusionMatrix) -> Result<T> {
    let defined: Vec<T> = m.evaluated_classes().filter_map(|c| iou(m, c)).collect();
    mean(&defined).ok_or(MetricsError::Undefined("mIoU"))
}

/// `tp / (tp + fp)`; `None` when the class is never predicted.
pub fn precision<T: Scalar>(m: &ConfusionMatrix, c: usize) -> Option<T> {
    let tp = m.tp(c);
    ratio_or_none(tp, tp + m.fp(c))
}

/// `tp / (tp + fn)`; `None` when the class is absent from the ground truth.
pub fn recall<T: Scalar>(m: &ConfusionMatrix, c: usize) -> Option<T> {
    let tp = m.tp(c);
    ratio_or_none(tp, tp + m.fn_(c))
}

/// One-vs-rest accuracy `(tp + tn) / total` for class `c`.
pub fn class_accuracy<T: Scalar>(m: &ConfusionMatrix, c: usize) -> Option<T> {
    ratio_or_none(m.tp(c) + m.tn(c), m.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub class: ClassLabel,
    pub iou: Option<T>,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub class_accuracy: Option<T>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub overall_accuracy: T,
    pub miou: T,
    pub per_class: Vec<ClassMetrics<T>>,
    pub confusion: ConfusionMatrix,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn from_confusion(m: &ConfusionMatrix) -> Result<Self> {
        let per_class = m
            .evaluated_classes()
            .map(|c| ClassMetrics {
                class: ClassLabel::ALL.get(c).copied().unwrap_or_default(),
                iou: iou(m, c),
                precision: precision(m, c),
                recall: recall(m, c),
                class_accuracy: class_accuracy(m, c),
                support: m.tp(c) + m.fn_(c),
            })
            .collect();
        Ok(Self {
            overall_accuracy: accuracy(m)?,
            miou: miou(m)?,
            per_class,
            confusion: m.clone(),
        })
    }

    /// Mean per-class recall over classes present in the ground truth.
    pub fn mean_recall(&self) -> Option<T> {
        let defined: Vec<T> = self.per_class.iter().filter_map(|c| c.recall.clone()).collect();
        mean(&defined)
    }

    pub fn to_f64(&self) -> MetricsReport<f64> {
        let conv = |v: &Option<T>| v.as_ref().map(Scalar::as_f64);
        MetricsReport {
            overall_accuracy: self.overall_accuracy.as_f64(),
            miou: self.miou.as_f64(),
            per_class: self
                .per_class
                .iter()
                .map(|c| ClassMetrics {
                    class: c.class,
                    iou: conv(&c.iou),
                    precision: conv(&c.precision),
                    recall: conv(&c.recall),
                    class_accuracy: conv(&c.class_accuracy),
                    support: c.support,
                })
                .collect(),
            confusion: self.confusion.clone(),
        }
    }

    /// Human-readable lines with values as percentages to two decimals.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("Accuracy: {}", percent(Some(self.overall_accuracy.as_f64()))),
            format!("mIoU: {}", percent(Some(self.miou.as_f64()))),
        ];
        for c in &self.per_class {
            lines.push(format!(
                "{}: IoU {}, precision {}, recall {}, class accuracy {}",
                c.class,
                percent(c.iou.as_ref().map(Scalar::as_f64)),
                percent(c.precision.as_ref().map(Scalar::as_f64)),
                percent(c.recall.as_ref().map(Scalar::as_f64)),
                percent(c.class_accuracy.as_ref().map(Scalar::as_f64)),
            ));
        }
        if let Some(r) = self.mean_recall() {
            lines.push(format!("Mean class recall: {}", percent(Some(r.as_f64()))));
        }
        lines
    }
}

/// `0.905` → `"90.50%"`; undefined values print as `"undefined"`.
pub fn percent(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "undefined".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn pair(gt: &[u8], pred: &[u8]) -> ConfusionMatrix {
        let g = LabelRaster::from_indices(gt.len(), 1, gt).unwrap();
        let p = LabelRaster::from_indices(pred.len(), 1, pred).unwrap();
        confusion(&g, &p, Some(ClassLabel::Unrecognized)).unwrap()
    }

    #[test]
    fn worked_example() {
        let m = pair(&[1, 1, 2, 2], &[1, 2, 2, 2]);
        assert_eq!(accuracy::<Rational64>(&m).unwrap(), Rational64::new(3, 4));
        assert_eq!(iou::<Rational64>(&m, 1), Some(Rational64::new(1, 2)));
        assert_eq!(iou::<Rational64>(&m, 2), Some(Rational64::new(2, 3)));
        assert_eq!(miou::<Rational64>(&m).unwrap(), Rational64::new(7, 12));
        assert_eq!(precision::<Rational64>(&m, 2), Some(Rational64::new(2, 3)));
        assert_eq!(recall::<Rational64>(&m, 2), Some(Rational64::from_integer(1)));
        assert_eq!(precision::<Rational64>(&m, 1), Some(Rational64::from_integer(1)));
        assert_eq!(recall::<Rational64>(&m, 1), Some(Rational64::new(1, 2)));
        assert!((miou::<f64>(&m).unwrap() - 0.583_333).abs() < 1e-6);
    }

    #[test]
    fn identity_is_diagonal() {
        let m = pair(&[1, 2, 3, 4, 4], &[1, 2, 3, 4, 4]);
        for g in 0..5 {
            for p in 0..5 {
                if g != p {
                    assert_eq!(m.get(g, p), 0);
                }
            }
        }
        assert_eq!(accuracy::<f64>(&m).unwrap(), 1.0);
        assert_eq!(miou::<f64>(&m).unwrap(), 1.0);
        assert_eq!(precision::<f64>(&m, 4), Some(1.0));
    }

    #[test]
    fn all_ignored() {
        let m = pair(&[0, 0, 0], &[1, 2, 0]);
        assert_eq!(m.total(), 0);
        assert_eq!(m.ignored(), 3);
        assert_eq!(accuracy::<f64>(&m), Err(MetricsError::Undefined("accuracy")));
        assert!(miou::<f64>(&m).is_err());
    }

    #[test]
    fn undefined_classes() {
        let m = pair(&[1, 1, 2], &[1, 1, 1]);
        assert_eq!(iou::<f64>(&m, 3), None);
        assert_eq!(recall::<f64>(&m, 2), Some(0.0));
        assert_eq!(precision::<f64>(&m, 2), None);
        // classes 1 and 2 defined: iou1 = 2/3, iou2 = 0
        assert_eq!(miou::<Rational64>(&m).unwrap(), Rational64::new(1, 3));
    }

    #[test]
    fn unrecognized_prediction_is_a_miss() {
        let m = pair(&[1, 1], &[1, 0]);
        assert_eq!(accuracy::<Rational64>(&m).unwrap(), Rational64::new(1, 2));
        assert_eq!(recall::<Rational64>(&m, 1), Some(Rational64::new(1, 2)));
        assert_eq!(precision::<Rational64>(&m, 1), Some(Rational64::from_integer(1)));
    }

    #[test]
    fn dimension_mismatch() {
        let g = LabelRaster::filled(2, 2, ClassLabel::HighlyFormal).unwrap();
        let p = LabelRaster::filled(2, 3, ClassLabel::HighlyFormal).unwrap();
        assert!(matches!(confusion(&g, &p, None), Err(MetricsError::DimensionMismatch(2, 2, 2, 3))));
    }

    #[test]
    fn merge_requires_same_shape() {
        let mut a = ConfusionMatrix::new(5, Some(0));
        assert_eq!(a.merge(&ConfusionMatrix::new(4, Some(0))), Err(MetricsError::Shape));
        assert_eq!(a.merge(&ConfusionMatrix::new(5, None)), Err(MetricsError::Shape));
    }

    #[test]
    fn report_lines() {
        let m = pair(&[1, 1, 2, 2], &[1, 2, 2, 2]);
        let r = MetricsReport::<f64>::from_confusion(&m).unwrap();
        let lines = r.summary_lines();
        assert_eq!(lines[0], "Accuracy: 75.00%");
        assert_eq!(lines[1], "mIoU: 58.33%");
        assert!(lines[4].starts_with("moderately_formal: IoU undefined"));
        assert_eq!(percent(Some(0.905)), "90.50%");
        assert_eq!(percent(None), "undefined");
    }
}
