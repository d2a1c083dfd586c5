//! Metadata CSV: one row per (image, rater).
//!
//! The header is
//! `image_id,patient_id,age,sex,location,view,position,geo_right,geo_left,opac_right,opac_left,rater_id`.
//! Column order is free; every column must be present. Empty cells (and the
//! literals `unknown`/`na`) in optional fields are kept as absent.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{normalize_real, NormalizedScore, RaterPanel, TargetKind};

pub const METADATA_COLUMNS: [&str; 12] = [
    "image_id",
    "patient_id",
    "age",
    "sex",
    "location",
    "view",
    "position",
    "geo_right",
    "geo_left",
    "opac_right",
    "opac_left",
    "rater_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    PA,
    AP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Supine,
    Upright,
}

/// Patient and acquisition fields shared by every row of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CxrMeta {
    pub image_id: String,
    pub patient_id: String,
    pub age: Option<u32>,
    pub sex: Option<Sex>,
    pub location: Option<String>,
    pub view: View,
    pub position: Position,
}

/// One parsed CSV row: image metadata plus one rater's per-lung grades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub meta: CxrMeta,
    pub geo_right: Option<f64>,
    pub geo_left: Option<f64>,
    pub opac_right: Option<f64>,
    pub opac_left: Option<f64>,
    pub rater_id: Option<String>,
}

impl MetadataRow {
    /// Right+left total for `kind`, if this rater graded both lungs.
    pub fn total(&self, kind: TargetKind) -> Option<f64> {
        let (r, l) = match kind {
            TargetKind::Geographic => (self.geo_right, self.geo_left),
            TargetKind::Opacity => (self.opac_right, self.opac_left),
        };
        Some(r? + l?)
    }
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<MetadataRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(file)
}

pub fn parse_metadata(reader: impl Read) -> Result<Vec<MetadataRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Row {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.insert(h.to_string(), i);
    }
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(METADATA_COLUMNS) {
        *slot = *index.get(name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
        })?;
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(cols[c]).unwrap_or("");
        let row = parse_row(&field).map_err(|message| Error::Row { line, message })?;
        rows.push(row);
    }
    Ok(rows)
}

fn absent(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("unknown") || s.eq_ignore_ascii_case("na")
}

fn optional_text(s: &str) -> Option<String> {
    (!absent(s)).then(|| s.to_string())
}

fn parse_grade(s: &str, column: &str, kind: TargetKind) -> Result<Option<f64>, String> {
    if absent(s) {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("`{column}` value `{s}` is not a number"))?;
    let max = f64::from(kind.max_grade());
    if !(0.0..=max).contains(&v) {
        return Err(format!("`{column}` value {v} outside 0..={max}"));
    }
    Ok(Some(v))
}

fn parse_row<'a>(field: &dyn Fn(usize) -> &'a str) -> Result<MetadataRow, String> {
    let image_id = field(0).to_string();
    if image_id.is_empty() {
        return Err("`image_id` is empty".into());
    }
    let patient_id = field(1).to_string();
    if patient_id.is_empty() {
        return Err("`patient_id` is empty".into());
    }
    let age = match field(2) {
        s if absent(s) => None,
        s => Some(
            s.parse::<u32>()
                .map_err(|_| format!("`age` value `{s}` is not a whole number"))?,
        ),
    };
    let sex = match field(3).to_ascii_lowercase().as_str() {
        s if absent(s) => None,
        "m" | "male" => Some(Sex::Male),
        "f" | "female" => Some(Sex::Female),
        other => return Err(format!("`sex` value `{other}` is not male/female")),
    };
    let view = match field(5).to_ascii_uppercase().as_str() {
        "PA" => View::PA,
        "AP" => View::AP,
        other => return Err(format!("`view` value `{other}` is not PA/AP")),
    };
    let position = match field(6).to_ascii_lowercase().as_str() {
        "supine" => Position::Supine,
        "upright" | "erect" => Position::Upright,
        other => return Err(format!("`position` value `{other}` is not supine/upright")),
    };
    Ok(MetadataRow {
        meta: CxrMeta {
            image_id,
            patient_id,
            age,
            sex,
            location: optional_text(field(4)),
            view,
            position,
        },
        geo_right: parse_grade(field(7), "geo_right", TargetKind::Geographic)?,
        geo_left: parse_grade(field(8), "geo_left", TargetKind::Geographic)?,
        opac_right: parse_grade(field(9), "opac_right", TargetKind::Opacity)?,
        opac_left: parse_grade(field(10), "opac_left", TargetKind::Opacity)?,
        rater_id: optional_text(field(11)),
    })
}

/// Per-image metadata with the rater panels for both targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLabels {
    pub meta: CxrMeta,
    pub geographic: RaterPanel,
    pub opacity: RaterPanel,
}

impl ImageLabels {
    pub fn label(&self, kind: TargetKind) -> Result<NormalizedScore> {
        let panel = match kind {
            TargetKind::Geographic => &self.geographic,
            TargetKind::Opacity => &self.opacity,
        };
        normalize_real(panel.mean(), kind)
    }
}

/// Groups rows by image (first-appearance order) and collects each target's
/// rater totals. Images without a complete rating for a target are an error.
pub fn group_ratings(rows: &[MetadataRow]) -> Result<Vec<ImageLabels>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&MetadataRow>> = HashMap::new();
    for row in rows {
        let id = row.meta.image_id.as_str();
        groups
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(row);
    }
    order
        .into_iter()
        .map(|id| {
            let group = &groups[id];
            let panel = |kind: TargetKind| {
                let ratings = group
                    .iter()
                    .enumerate()
                    .filter_map(|(i, r)| {
                        let rater = r.rater_id.clone().unwrap_or_else(|| format!("rater{i}"));
                        r.total(kind).map(|t| (rater, t))
                    })
                    .collect::<Vec<_>>();
                if ratings.is_empty() {
                    return Err(Error::validation(format!("image `{id}` has no complete {kind} rating")));
                }
                RaterPanel::new(id, ratings)
            };
            Ok(ImageLabels {
                meta: group[0].meta.clone(),
                geographic: panel(TargetKind::Geographic)?,
                opacity: panel(TargetKind::Opacity)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "image_id,patient_id,age,sex,location,view,position,geo_right,geo_left,opac_right,opac_left,rater_id\n";

    #[test]
    fn parses_rows_verbatim() {
        let csv = format!(
            "{HEADER}a,p1,56,M,Europe,PA,upright,2,3,1,2,r1\n\
             b,p2,71,F,Asia,AP,supine,4,4,3,3,r1\n\
             c,p3,40,M,North America,PA,upright,0,1,0,1,r2\n"
        );
        let rows = parse_metadata(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].meta.image_id, "a");
        assert_eq!(rows[0].meta.age, Some(56));
        assert_eq!(rows[1].meta.view, View::AP);
        assert_eq!(rows[1].meta.position, Position::Supine);
        assert_eq!(rows[2].meta.location.as_deref(), Some("North America"));
        assert_eq!(rows[0].total(TargetKind::Geographic), Some(5.0));
        assert_eq!(rows[1].rater_id.as_deref(), Some("r1"));
    }

    #[test]
    fn empty_fields_are_absent() {
        let csv = format!("{HEADER}a,p1,,,,PA,upright,,,,,\n");
        let rows = parse_metadata(csv.as_bytes()).unwrap();
        let r = &rows[0];
        assert_eq!(r.meta.age, None);
        assert_eq!(r.meta.sex, None);
        assert_eq!(r.meta.location, None);
        assert_eq!(r.geo_right, None);
        assert_eq!(r.rater_id, None);
        assert_eq!(r.total(TargetKind::Opacity), None);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "image_id,patient_id,age,sex,location,position,geo_right,geo_left,opac_right,opac_left,rater_id\n";
        match parse_metadata(csv.as_bytes()) {
            Err(Error::Schema { column }) => assert_eq!(column, "view"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_row_reports_line() {
        let csv = format!("{HEADER}a,p1,50,M,Europe,PA,upright,1,1,1,1,r1\nb,p2,old,M,Europe,PA,upright,1,1,1,1,r1\n");
        match parse_metadata(csv.as_bytes()) {
            Err(Error::Row { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("age"));
            }
            other => panic!("{other:?}"),
        }
        let csv = format!("{HEADER}a,p1,50,M,Europe,PA,upright,5,1,1,1,r1\n");
        assert!(matches!(
            parse_metadata(csv.as_bytes()),
            Err(Error::Row { line: 2, .. })
        ));
    }

    #[test]
    fn groups_raters_into_means() {
        let csv = format!(
            "{HEADER}a,p1,50,M,Europe,PA,upright,2,3,1,1,r1\n\
             a,p1,50,M,Europe,PA,upright,3,4,2,1,r2\n\
             a,p1,50,M,Europe,PA,upright,2,2,1,0,r3\n\
             b,p2,60,F,Asia,AP,supine,0,0,0,0,r1\n"
        );
        let rows = parse_metadata(csv.as_bytes()).unwrap();
        let groups = group_ratings(&rows).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].geographic.mean(), 16.0 / 3.0);
        assert_eq!(groups[0].opacity.mean(), 2.0);
        assert_eq!(groups[0].label(TargetKind::Opacity).unwrap().value(), 2.0 / 6.0);
        assert_eq!(groups[1].label(TargetKind::Geographic).unwrap().value(), 0.0);
    }
}
