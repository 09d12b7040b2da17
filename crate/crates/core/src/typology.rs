//! The 4×4 urban-environment matrix and its collapse into four formality classes.
//!
//! A cell of the matrix pairs a building-diversity level (1–4) with a street
//! pattern (A–D) and is written `"<digit>/<letter>"`, e.g. `"2/A"`. Every cell
//! maps to one of four classes; a fifth, [`ClassLabel::Unrecognized`], marks
//! pixels the annotator left unlabeled and is the ignore class everywhere.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypologyError {
    #[error("malformed typology code {text:?}: {reason} (offending token {token:?})")]
    Parse {
        text: String,
        token: String,
        reason: &'static str,
    },
    #[error("class index {0} out of range 0..=4")]
    ClassIndex(u8),
    #[error("unknown class name {0:?}")]
    ClassName(String),
    #[error("palette is not bijective: {0} and {1} share color {2}")]
    DuplicateColor(ClassLabel, ClassLabel, Rgb),
    #[error("invalid color map document: {0}")]
    Document(String),
}

/// Building axis: how constrained individual buildings are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BuildingDiversity {
    /// (1) no constraint
    None = 1,
    /// (2) limited
    Limited = 2,
    /// (3) unwritten rules
    Unwritten = 3,
    /// (4) built to a written code
    WithCode = 4,
}

impl BuildingDiversity {
    pub const ALL: [BuildingDiversity; 4] = [Self::None, Self::Limited, Self::Unwritten, Self::WithCode];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        Self::ALL.get(usize::from(level).wrapping_sub(1)).copied()
    }
}

impl TryFrom<u8> for BuildingDiversity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::from_level(v).ok_or_else(|| format!("building diversity {v} not in 1..=4"))
    }
}

impl From<BuildingDiversity> for u8 {
    fn from(d: BuildingDiversity) -> u8 {
        d.level()
    }
}

/// Street axis: how the road network came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StreetPattern {
    /// (A) natural generation
    Natural,
    /// (B) planned outline, natural generation inside
    PlannedOutline,
    /// (C) natural outside, planned within the district
    PlannedDistrict,
    /// (D) planned
    Planned,
}

impl StreetPattern {
    pub const ALL: [StreetPattern; 4] = [Self::Natural, Self::PlannedOutline, Self::PlannedDistrict, Self::Planned];

    pub fn letter(self) -> char {
        match self {
            Self::Natural => 'A',
            Self::PlannedOutline => 'B',
            Self::PlannedDistrict => 'C',
            Self::Planned => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(Self::Natural),
            'B' => Some(Self::PlannedOutline),
            'C' => Some(Self::PlannedDistrict),
            'D' => Some(Self::Planned),
            _ => None,
        }
    }
}

impl TryFrom<String> for StreetPattern {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c).ok_or_else(|| format!("street pattern {s:?} not in A..=D")),
            _ => Err(format!("street pattern {s:?} is not a single letter")),
        }
    }
}

impl From<StreetPattern> for String {
    fn from(p: StreetPattern) -> String {
        p.letter().to_string()
    }
}

/// One of the 16 cells of the typology matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypologyCode {
    pub diversity: BuildingDiversity,
    pub pattern: StreetPattern,
}

impl TypologyCode {
    pub fn new(diversity: BuildingDiversity, pattern: StreetPattern) -> Self {
        Self { diversity, pattern }
    }

    /// All 16 codes, diversity-major.
    pub fn all() -> impl Iterator<Item = TypologyCode> {
        BuildingDiversity::ALL
            .into_iter()
            .flat_map(|d| StreetPattern::ALL.into_iter().map(move |p| TypologyCode::new(d, p)))
    }

    pub fn classify(self) -> ClassLabel {
        classify_code(self)
    }
}

impl fmt::Display for TypologyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.diversity.level(), self.pattern.letter())
    }
}

impl FromStr for TypologyCode {
    type Err = TypologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_code(s)
    }
}

/// Parses `"<digit>/<letter>"`, ignoring surrounding whitespace and letter case.
pub fn parse_code(text: &str) -> Result<TypologyCode, TypologyError> {
    let err = |token: &str, reason| TypologyError::Parse {
        text: text.to_string(),
        token: token.to_string(),
        reason,
    };
    let trimmed = text.trim();
    let (digit, letter) = trimmed
        .split_once('/')
        .ok_or_else(|| err(trimmed, "expected <digit>/<letter>"))?;
    let diversity = match digit.parse::<u8>() {
        Ok(level) if digit.len() == 1 => {
            BuildingDiversity::from_level(level).ok_or_else(|| err(digit, "building diversity must be 1-4"))?
        }
        _ => return Err(err(digit, "building diversity must be a single digit")),
    };
    let mut chars = letter.chars();
    let pattern = match (chars.next(), chars.next()) {
        (Some(c), None) => StreetPattern::from_letter(c).ok_or_else(|| err(letter, "street pattern must be A-D"))?,
        _ => return Err(err(letter, "street pattern must be a single letter")),
    };
    Ok(TypologyCode::new(diversity, pattern))
}

/// Collapsed class. Index 0 is the ignore class so zero-filled rasters read as
/// unlabeled; the real classes follow in order of increasing formality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    #[default]
    Unrecognized = 0,
    HighlyInformal = 1,
    ModeratelyInformal = 2,
    ModeratelyFormal = 3,
    HighlyFormal = 4,
}

impl ClassLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [ClassLabel; 5] = [
        Self::Unrecognized,
        Self::HighlyInformal,
        Self::ModeratelyInformal,
        Self::ModeratelyFormal,
        Self::HighlyFormal,
    ];
    pub const REAL: [ClassLabel; 4] = [
        Self::HighlyInformal,
        Self::ModeratelyInformal,
        Self::ModeratelyFormal,
        Self::HighlyFormal,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self, TypologyError> {
        Self::ALL.get(usize::from(i)).copied().ok_or(TypologyError::ClassIndex(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Unrecognized => "unrecognized",
            Self::HighlyInformal => "highly_informal",
            Self::ModeratelyInformal => "moderately_informal",
            Self::ModeratelyFormal => "moderately_formal",
            Self::HighlyFormal => "highly_formal",
        }
    }

    pub fn is_real(self) -> bool {
        self != Self::Unrecognized
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = TypologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(i) = s.parse::<u8>() {
            return Self::from_index(i);
        }
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TypologyError::ClassName(s.to_string()))
    }
}

/// The color-table collapse of the matrix.
pub fn classify_code(code: TypologyCode) -> ClassLabel {
    use BuildingDiversity as B;
    use StreetPattern as S;
    match (code.diversity, code.pattern) {
        (B::None, S::Natural) | (B::Limited, S::Natural) | (B::Limited, S::PlannedOutline) => ClassLabel::HighlyInformal,
        (B::None, _) | (B::Limited, _) | (B::Unwritten, S::Natural) => ClassLabel::ModeratelyInformal,
        (B::WithCode, S::Planned) => ClassLabel::HighlyFormal,
        (B::Unwritten, _) | (B::WithCode, _) => ClassLabel::ModeratelyFormal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);

    /// Largest per-channel difference.
    pub fn chebyshev(self, other: Rgb) -> u8 {
        self.0.iter().zip(other.0).map(|(a, b)| a.abs_diff(b)).max().unwrap_or(0)
    }

    pub fn distance_sq(self, other: Rgb) -> u32 {
        self.0
            .iter()
            .zip(other.0)
            .map(|(&a, b)| {
                let d = u32::from(a.abs_diff(b));
                d * d
            })
            .sum()
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Label → color table. Always bijective over the five labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ClassLabel, Rgb>", into = "BTreeMap<ClassLabel, Rgb>")]
pub struct ColorMap {
    colors: [Rgb; ClassLabel::COUNT],
}

impl Default for ColorMap {
    /// Saturated named colors: red, yellow, cyan, blue, with black for unlabeled.
    fn default() -> Self {
        Self {
            colors: [
                Rgb([0, 0, 0]),
                Rgb([255, 0, 0]),
                Rgb([255, 255, 0]),
                Rgb([0, 255, 255]),
                Rgb([0, 0, 255]),
            ],
        }
    }
}

impl ColorMap {
    /// `colors` is indexed by [`ClassLabel::index`].
    pub fn new(colors: [Rgb; ClassLabel::COUNT]) -> Result<Self, TypologyError> {
        for a in 0..ClassLabel::COUNT {
            for b in a + 1..ClassLabel::COUNT {
                if colors[a] == colors[b] {
                    return Err(TypologyError::DuplicateColor(ClassLabel::ALL[a], ClassLabel::ALL[b], colors[a]));
                }
            }
        }
        Ok(Self { colors })
    }

    pub fn color(&self, label: ClassLabel) -> Rgb {
        self.colors[usize::from(label.index())]
    }

    pub fn colors(&self) -> &[Rgb; ClassLabel::COUNT] {
        &self.colors
    }

    /// Smallest pairwise Chebyshev distance between palette entries.
    pub fn min_separation(&self) -> u8 {
        let mut best = u8::MAX;
        for a in 0..ClassLabel::COUNT {
            for b in a + 1..ClassLabel::COUNT {
                best = best.min(self.colors[a].chebyshev(self.colors[b]));
            }
        }
        best
    }

    /// Label whose color is nearest in Euclidean RGB distance; ties go to the lower index.
    pub fn nearest(&self, c: Rgb) -> ClassLabel {
        let (idx, _) = self
            .colors
            .iter()
            .enumerate()
            .min_by_key(|(i, p)| (p.distance_sq(c), *i))
            .expect("palette is never empty");
        ClassLabel::ALL[idx]
    }

    /// Exact color lookup.
    pub fn label_of(&self, c: Rgb) -> Option<ClassLabel> {
        self.colors.iter().position(|&p| p == c).map(|i| ClassLabel::ALL[i])
    }

    /// Reads either a bare palette object or a full [`TypologyDocument`].
    pub fn from_json(text: &str) -> Result<Self, TypologyError> {
        if let Ok(doc) = serde_json::from_str::<TypologyDocument>(text) {
            return Ok(doc.palette);
        }
        serde_json::from_str::<ColorMap>(text).map_err(|e| TypologyError::Document(e.to_string()))
    }
}

impl TryFrom<BTreeMap<ClassLabel, Rgb>> for ColorMap {
    type Error = TypologyError;

    fn try_from(map: BTreeMap<ClassLabel, Rgb>) -> Result<Self, Self::Error> {
        let mut colors = [Rgb::BLACK; ClassLabel::COUNT];
        for label in ClassLabel::ALL {
            colors[usize::from(label.index())] = *map
                .get(&label)
                .ok_or_else(|| TypologyError::Document(format!("palette lacks a color for {label}")))?;
        }
        ColorMap::new(colors)
    }
}

impl From<ColorMap> for BTreeMap<ClassLabel, Rgb> {
    fn from(m: ColorMap) -> Self {
        ClassLabel::ALL.into_iter().map(|l| (l, m.color(l))).collect()
    }
}

/// Looks up `label` in `map`.
pub fn class_color(label: ClassLabel, map: &ColorMap) -> Rgb {
    map.color(label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypologyCell {
    pub code: String,
    pub diversity: BuildingDiversity,
    pub pattern: StreetPattern,
    pub label: ClassLabel,
    pub class_index: u8,
    pub color: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: ClassLabel,
    pub index: u8,
    pub color: Rgb,
}

/// JSON view of the matrix (code → label → color) plus the palette, consumed
/// by the annotation UI and by `--colormap`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypologyDocument {
    pub cells: Vec<TypologyCell>,
    pub classes: Vec<ClassEntry>,
    pub palette: ColorMap,
}

impl TypologyDocument {
    pub fn new(palette: ColorMap) -> Self {
        let cells = TypologyCode::all()
            .map(|code| {
                let label = classify_code(code);
                TypologyCell {
                    code: code.to_string(),
                    diversity: code.diversity,
                    pattern: code.pattern,
                    label,
                    class_index: label.index(),
                    color: palette.color(label),
                }
            })
            .collect();
        let classes = ClassLabel::ALL
            .into_iter()
            .map(|label| ClassEntry {
                label,
                index: label.index(),
                color: palette.color(label),
            })
            .collect();
        Self { cells, classes, palette }
    }
}
