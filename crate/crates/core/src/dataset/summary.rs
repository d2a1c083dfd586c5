//! Demographic and acquisition summary in the layout of a cohort table.
//!
//! Age, sex and location are counted once per patient; view and position are
//! counted once per image.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metadata::{CxrMeta, Position, Sex, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patient,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub count: usize,
    /// Percentage of the block denominator, rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub name: String,
    pub level: Level,
    pub rows: Vec<SummaryRow>,
}

impl SummaryBlock {
    /// Sum of the row percentages, accumulated in whole tenths.
    pub fn percent_sum(&self) -> f64 {
        let tenths: i64 = self.rows.iter().map(|r| (r.percent * 10.0).round() as i64).sum();
        tenths as f64 / 10.0
    }

    pub fn count_sum(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub patient_count: usize,
    pub image_count: usize,
    pub age_mean: Option<f64>,
    /// Sample standard deviation of known ages.
    pub age_std: Option<f64>,
    pub blocks: Vec<SummaryBlock>,
}

pub const AGE_BINS: [&str; 10] = [
    "<20", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89", "90+", "Unknown",
];

fn age_bin(age: Option<u32>) -> usize {
    match age {
        None => 9,
        Some(a) if a < 20 => 0,
        Some(a) => ((a / 10) as usize - 1).min(8),
    }
}

/// Percentages of `counts / total` rounded to one decimal with the
/// largest-remainder rule, so each block sums to exactly 100.0 when total > 0.
fn rounded_percentages(counts: &[usize], total: usize) -> Vec<f64> {
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    // Work in tenths of a percent: floor, then hand out the shortfall by largest remainder.
    let scaled: Vec<usize> = counts.iter().map(|&c| c * 1000).collect();
    let mut tenths: Vec<usize> = scaled.iter().map(|&s| s / total).collect();
    let mut missing = 1000usize.saturating_sub(tenths.iter().sum());
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] % total).cmp(&(scaled[a] % total)).then(a.cmp(&b)));
    for &i in &order {
        if missing == 0 {
            break;
        }
        if scaled[i] % total != 0 {
            tenths[i] += 1;
            missing -= 1;
        }
    }
    tenths.into_iter().map(|t| t as f64 / 10.0).collect()
}

fn block(name: &str, level: Level, entries: Vec<(String, usize)>, total: usize) -> SummaryBlock {
    let counts: Vec<usize> = entries.iter().map(|(_, c)| *c).collect();
    let pct = rounded_percentages(&counts, total);
    SummaryBlock {
        name: name.to_string(),
        level,
        rows: entries
            .into_iter()
            .zip(pct)
            .map(|((label, count), percent)| SummaryRow { label, count, percent })
            .collect(),
    }
}

/// Summarizes metadata; duplicates (one row per rater) are collapsed by
/// `image_id` for image-level blocks and by `patient_id` for patient-level ones.
pub fn summarize<'a>(metas: impl IntoIterator<Item = &'a CxrMeta>) -> DatasetSummary {
    let mut seen_images = HashSet::new();
    let mut seen_patients = HashSet::new();
    let mut images = Vec::new();
    let mut patients = Vec::new();
    for m in metas {
        if seen_images.insert(m.image_id.as_str()) {
            images.push(m);
        }
        if seen_patients.insert(m.patient_id.as_str()) {
            patients.push(m);
        }
    }
    let np = patients.len();
    let ni = images.len();

    let ages: Vec<f64> = patients.iter().filter_map(|p| p.age).map(f64::from).collect();
    let age_mean = (!ages.is_empty()).then(|| ages.iter().sum::<f64>() / ages.len() as f64);
    let age_std = age_mean
        .filter(|_| ages.len() >= 2)
        .map(|mean| (ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (ages.len() - 1) as f64).sqrt());

    let mut age_counts = [0usize; 10];
    for p in &patients {
        age_counts[age_bin(p.age)] += 1;
    }
    let age = block(
        "Age",
        Level::Patient,
        AGE_BINS
            .iter()
            .zip(age_counts)
            .map(|(l, c)| (l.to_string(), c))
            .collect(),
        np,
    );

    let count = |pred: &dyn Fn(&CxrMeta) -> bool, pool: &[&CxrMeta]| pool.iter().filter(|m| pred(m)).count();
    let sex = block(
        "Sex",
        Level::Patient,
        vec![
            ("Male".into(), count(&|m| m.sex == Some(Sex::Male), &patients)),
            ("Female".into(), count(&|m| m.sex == Some(Sex::Female), &patients)),
            ("Unknown".into(), count(&|m| m.sex.is_none(), &patients)),
        ],
        np,
    );

    let mut locations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut unknown_location = 0;
    for p in &patients {
        match &p.location {
            Some(l) => *locations.entry(l.as_str()).or_default() += 1,
            None => unknown_location += 1,
        }
    }
    let mut loc_entries: Vec<(String, usize)> = locations.into_iter().map(|(l, c)| (l.to_string(), c)).collect();
    loc_entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    loc_entries.push(("Unknown".into(), unknown_location));
    let location = block("Geographic location", Level::Patient, loc_entries, np);

    let view = block(
        "Imaging view",
        Level::Image,
        vec![
            ("PA".into(), count(&|m| m.view == View::PA, &images)),
            ("AP".into(), count(&|m| m.view == View::AP, &images)),
        ],
        ni,
    );
    let position = block(
        "Imaging position",
        Level::Image,
        vec![
            ("Supine".into(), count(&|m| m.position == Position::Supine, &images)),
            ("Upright".into(), count(&|m| m.position == Position::Upright, &images)),
        ],
        ni,
    );

    DatasetSummary {
        patient_count: np,
        image_count: ni,
        age_mean,
        age_std,
        blocks: vec![age, sex, location, view, position],
    }
}

impl DatasetSummary {
    pub fn block(&self, name: &str) -> Option<&SummaryBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Aligned plain-text table, one row per category.
    pub fn render_table(&self) -> String {
        let mut lines: Vec<(String, String, String)> = Vec::new();
        lines.push((
            format!("Patients: {}", self.patient_count),
            String::new(),
            format!("Images: {}", self.image_count),
        ));
        for b in &self.blocks {
            let first = if b.name == "Age" {
                let stat = match (self.age_mean, self.age_std) {
                    (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
                    (Some(m), None) => format!("{m:.1}"),
                    _ => "n/a".into(),
                };
                ("Age".to_string(), "mean ± std".to_string(), stat)
            } else {
                (b.name.clone(), String::new(), String::new())
            };
            lines.push(first);
            for r in &b.rows {
                lines.push((
                    String::new(),
                    r.label.clone(),
                    format!("{} ({:.1}%)", r.count, r.percent),
                ));
            }
        }
        let w0 = lines.iter().map(|l| l.0.chars().count()).max().unwrap_or(0);
        let w1 = lines.iter().map(|l| l.1.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (a, b, c) in lines {
            let line = format!("{a:<w0$}  {b:<w1$}  {c}");
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }
}
