//! Image records, metadata loading, preprocessing, cohort summaries and the
//! synthetic data generator.

pub mod metadata;
pub mod preprocess;
pub mod summary;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use metadata::{
    group_ratings, load_metadata, parse_metadata, CxrMeta, ImageLabels, MetadataRow, Position, Sex, View,
    METADATA_COLUMNS,
};
pub use preprocess::{crop_borders, resize_bilinear, PreprocessConfig};
pub use summary::{summarize, DatasetSummary, Level, SummaryBlock, SummaryRow};
pub use synthetic::generate_synthetic;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scoring::{NormalizedScore, TargetKind};

/// One image with its metadata and both normalized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CxrRecord {
    pub meta: CxrMeta,
    pub pixels: Raster,
    pub geo_label: NormalizedScore,
    pub opac_label: NormalizedScore,
}

impl CxrRecord {
    pub fn id(&self) -> &str {
        &self.meta.image_id
    }

    pub fn label(&self, kind: TargetKind) -> NormalizedScore {
        match kind {
            TargetKind::Geographic => self.geo_label,
            TargetKind::Opacity => self.opac_label,
        }
    }

    /// Replaces the pixels with their preprocessed version.
    pub fn preprocessed(mut self, config: &PreprocessConfig) -> Result<Self> {
        self.pixels = config.apply(&self.pixels)?;
        Ok(self)
    }
}

pub const METADATA_FILE: &str = "metadata.csv";

/// Image path for `image_id` inside `dir`; `.png` is appended when missing.
pub fn image_path(dir: &Path, image_id: &str) -> PathBuf {
    if image_id.to_ascii_lowercase().ends_with(".png") {
        dir.join(image_id)
    } else {
        dir.join(format!("{image_id}.png"))
    }
}

/// Loads `dir/metadata.csv` and each referenced PNG, averaging rater totals
/// into labels and preprocessing every image. Images decode in parallel;
/// output order follows first appearance in the CSV.
pub fn load_dataset(dir: impl AsRef<Path>, config: &PreprocessConfig) -> Result<Vec<CxrRecord>> {
    let dir = dir.as_ref();
    config.validate()?;
    let rows = load_metadata(dir.join(METADATA_FILE))?;
    let images = group_ratings(&rows)?;
    if images.is_empty() {
        return Err(Error::validation(format!(
            "{} lists no images",
            dir.join(METADATA_FILE).display()
        )));
    }
    images
        .into_par_iter()
        .map(|img| {
            let pixels = Raster::load_png(image_path(dir, &img.meta.image_id))?;
            Ok(CxrRecord {
                geo_label: img.label(TargetKind::Geographic)?,
                opac_label: img.label(TargetKind::Opacity)?,
                pixels: config.apply(&pixels)?,
                meta: img.meta,
            })
        })
        .collect()
}

/// Writes `records` as a dataset directory readable by [`load_dataset`]:
/// `metadata.csv` with one rater row per image plus one 16-bit PNG each.
/// Totals are split across the lungs (right gets the larger half).
pub fn write_dataset(dir: impl AsRef<Path>, records: &[CxrRecord]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METADATA_FILE);
    let csv_err = |e: csv::Error| Error::io(&path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(METADATA_COLUMNS).map_err(csv_err)?;
    for r in records {
        let m = &r.meta;
        let split = |kind: TargetKind| {
            let total = r.label(kind).denormalize();
            let left = (total / 2.0).floor();
            ((total - left).to_string(), left.to_string())
        };
        let (geo_r, geo_l) = split(TargetKind::Geographic);
        let (opac_r, opac_l) = split(TargetKind::Opacity);
        let row = [
            m.image_id.clone(),
            m.patient_id.clone(),
            m.age.map(|a| a.to_string()).unwrap_or_default(),
            match m.sex {
                Some(Sex::Male) => "male".into(),
                Some(Sex::Female) => "female".into(),
                None => String::new(),
            },
            m.location.clone().unwrap_or_default(),
            format!("{:?}", m.view),
            match m.position {
                Position::Supine => "supine".into(),
                Position::Upright => "upright".into(),
            },
            geo_r,
            geo_l,
            opac_r,
            opac_l,
            "synthetic".into(),
        ];
        w.write_record(&row).map_err(csv_err)?;
        r.pixels.save_png(image_path(dir, &m.image_id))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
