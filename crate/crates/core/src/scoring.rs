//! Radiological score systems, normalization, rater aggregation and Fleiss' kappa.
//!
//! Two per-lung grading schemes are supported. Geographic extent grades each
//! lung 0..=4 by the fraction of lung involved (none, under 25%, 25-50%,
//! 50-75%, over 75%), so the right+left total ranges over 0..=8. Opacity extent grades each
//! lung 0..=3 (none, ground glass, consolidation, white-out), total 0..=6.
//! Totals are mapped linearly onto [0, 1] for training.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which score a value, label or network refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Geographic,
    Opacity,
}

impl TargetKind {
    pub const ALL: [TargetKind; 2] = [TargetKind::Geographic, TargetKind::Opacity];

    /// Highest legal per-lung grade.
    pub fn max_grade(self) -> u8 {
        match self {
            TargetKind::Geographic => 4,
            TargetKind::Opacity => 3,
        }
    }

    /// Highest legal right+left total.
    pub fn max_total(self) -> u32 {
        2 * u32::from(self.max_grade())
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Geographic => "geographic",
            TargetKind::Opacity => "opacity",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "geographic" | "geo" => Ok(TargetKind::Geographic),
            "opacity" | "opac" => Ok(TargetKind::Opacity),
            other => Err(Error::validation(format!("unknown target kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lung {
    Right,
    Left,
}

impl fmt::Display for Lung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lung::Right => "right",
            Lung::Left => "left",
        })
    }
}

fn check_grade(kind: TargetKind, lung: Lung, grade: u8) -> Result<u8> {
    if grade > kind.max_grade() {
        return Err(Error::validation(format!(
            "{kind} grade for {lung} lung is {grade}, legal range is 0..={}",
            kind.max_grade()
        )));
    }
    Ok(grade)
}

/// Per-lung extent of involvement, each lung graded 0..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeographicScore {
    right_lung: u8,
    left_lung: u8,
}

impl GeographicScore {
    pub fn new(right_lung: u8, left_lung: u8) -> Result<Self> {
        Ok(Self {
            right_lung: check_grade(TargetKind::Geographic, Lung::Right, right_lung)?,
            left_lung: check_grade(TargetKind::Geographic, Lung::Left, left_lung)?,
        })
    }

    pub fn right_lung(&self) -> u8 {
        self.right_lung
    }

    pub fn left_lung(&self) -> u8 {
        self.left_lung
    }

    pub fn total(&self) -> u32 {
        u32::from(self.right_lung) + u32::from(self.left_lung)
    }
}

/// Per-lung degree of opacity, each lung graded 0..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpacityScore {
    right_lung: u8,
    left_lung: u8,
}

impl OpacityScore {
    pub fn new(right_lung: u8, left_lung: u8) -> Result<Self> {
        Ok(Self {
            right_lung: check_grade(TargetKind::Opacity, Lung::Right, right_lung)?,
            left_lung: check_grade(TargetKind::Opacity, Lung::Left, left_lung)?,
        })
    }

    pub fn right_lung(&self) -> u8 {
        self.right_lung
    }

    pub fn left_lung(&self) -> u8 {
        self.left_lung
    }

    pub fn total(&self) -> u32 {
        u32::from(self.right_lung) + u32::from(self.left_lung)
    }
}

/// Validates a pair of per-lung grades for `kind` and returns their sum.
pub fn total_score(kind: TargetKind, right_lung: u8, left_lung: u8) -> Result<u32> {
    match kind {
        TargetKind::Geographic => GeographicScore::new(right_lung, left_lung).map(|s| s.total()),
        TargetKind::Opacity => OpacityScore::new(right_lung, left_lung).map(|s| s.total()),
    }
}

/// A score on the unified `[0, 1]` scale, tagged with the scheme it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScore {
    value: f64,
    kind: TargetKind,
}

impl NormalizedScore {
    pub fn new(value: f64, kind: TargetKind) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::validation(format!(
                "normalized {kind} score {value} outside [0, 1]"
            )));
        }
        Ok(Self { value, kind })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Maps back onto the original `0..=max_total` range.
    pub fn denormalize(&self) -> f64 {
        self.value * f64::from(self.kind.max_total())
    }
}

/// Linear map `total / max_total`.
pub fn normalize(total: u32, kind: TargetKind) -> Result<NormalizedScore> {
    if total > kind.max_total() {
        return Err(Error::validation(format!(
            "{kind} total {total} outside 0..={}",
            kind.max_total()
        )));
    }
    normalize_real(f64::from(total), kind)
}

/// Same map for real-valued totals such as rater means.
pub fn normalize_real(total: f64, kind: TargetKind) -> Result<NormalizedScore> {
    let max = f64::from(kind.max_total());
    if !(0.0..=max).contains(&total) {
        return Err(Error::validation(format!("{kind} total {total} outside 0..={max}")));
    }
    NormalizedScore::new(total / max, kind)
}

/// Checks the `[0, 1]` domain and maps `value` back to score units.
pub fn denormalize(value: f64, kind: TargetKind) -> Result<f64> {
    NormalizedScore::new(value, kind).map(|s| s.denormalize())
}

/// Scores from several raters for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPanel {
    pub image_id: String,
    ratings: Vec<(String, f64)>,
}

impl RaterPanel {
    pub fn new(image_id: impl Into<String>, ratings: Vec<(String, f64)>) -> Result<Self> {
        let image_id = image_id.into();
        if ratings.is_empty() {
            return Err(Error::validation(format!(
                "rater panel for `{image_id}` has no ratings"
            )));
        }
        if let Some((rater, v)) = ratings.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!(
                "rater `{rater}` gave non-finite score {v} for `{image_id}`"
            )));
        }
        Ok(Self { image_id, ratings })
    }

    pub fn ratings(&self) -> &[(String, f64)] {
        &self.ratings
    }

    pub fn mean(&self) -> f64 {
        self.ratings.iter().map(|(_, v)| v).sum::<f64>() / self.ratings.len() as f64
    }
}

pub fn rater_mean(panel: &RaterPanel) -> Result<f64> {
    if panel.ratings.is_empty() {
        return Err(Error::validation("rater panel is empty"));
    }
    Ok(panel.mean())
}

/// Subject × category count matrix for Fleiss' kappa.
///
/// Entry `(i, j)` is the number of raters who put subject `i` in category `j`.
/// Every row sums to the same number of raters `n >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    counts: Vec<Vec<u32>>,
    raters_per_subject: u32,
}

impl AgreementTable {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::validation(format!(
                "agreement table needs at least 2 subjects, got {}",
                counts.len()
            )));
        }
        let categories = counts[0].len();
        if categories == 0 {
            return Err(Error::validation("agreement table has no categories"));
        }
        let raters: u32 = counts[0].iter().sum();
        if raters < 2 {
            return Err(Error::validation(format!(
                "agreement table needs at least 2 raters per subject, got {raters}"
            )));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories {
                return Err(Error::validation(format!(
                    "subject {i} has {} categories, expected {categories}",
                    row.len()
                )));
            }
            let sum: u32 = row.iter().sum();
            if sum != raters {
                return Err(Error::validation(format!(
                    "subject {i} has {sum} ratings, expected {raters}"
                )));
            }
        }
        Ok(Self {
            counts,
            raters_per_subject: raters,
        })
    }

    /// Builds the table from raw category labels, one inner vector per subject.
    pub fn from_labels(labels: &[Vec<usize>], categories: usize) -> Result<Self> {
        let mut counts = Vec::with_capacity(labels.len());
        for (i, subject) in labels.iter().enumerate() {
            let mut row = vec![0u32; categories];
            for &c in subject {
                if c >= categories {
                    return Err(Error::validation(format!(
                        "subject {i} has label {c}, only {categories} categories"
                    )));
                }
                row[c] += 1;
            }
            counts.push(row);
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn subjects(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters_per_subject(&self) -> u32 {
        self.raters_per_subject
    }
}

/// Fleiss' kappa for a fixed number of raters per subject.
///
/// Evaluated in exact integer arithmetic with a single final division:
///
/// ```text
/// A  = Σ_i Σ_j n_ij² − N·n        D1 = N·n·(n−1)      P̄  = A / D1
/// B  = Σ_j (Σ_i n_ij)²            D2 = (N·n)²         P̄e = B / D2
/// κ  = (A·D2 − B·D1) / (D1·(D2 − B))
/// ```
pub fn fleiss_kappa(table: &AgreementTable) -> Result<f64> {
    let n = i128::from(table.raters_per_subject);
    let subjects = table.subjects() as i128;

    let mut a: i128 = 0;
    let mut column = vec![0i128; table.categories()];
    for row in &table.counts {
        for (j, &c) in row.iter().enumerate() {
            let c = i128::from(c);
            a += c * c;
            column[j] += c;
        }
    }
    a -= subjects * n;
    let b: i128 = column.iter().map(|c| c * c).sum();
    let d1 = subjects * n * (n - 1);
    let d2 = (subjects * n) * (subjects * n);

    if d2 == b {
        return Err(Error::DegenerateAgreement);
    }
    let num = a * d2 - b * d1;
    let den = d1 * (d2 - b);
    Ok(num as f64 / den as f64)
}
