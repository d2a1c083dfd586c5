//! Synthetic chest-radiograph-like images with exactly known severity labels.
//!
//! Each image has two elliptical lung fields on a brighter body background,
//! a dark acquisition border and a bright corner tag (both removed by the
//! default border crop). Opacities are ellipses clipped to one lung field.
//!
//! Labels follow the radiological schemes applied per lung:
//! * geographic grade from the covered fraction `c` of the lung field:
//!   0 if `c == 0`, 1 if `c < 0.25`, 2 if `c < 0.5`, 3 if `c < 0.75`, else 4;
//! * opacity grade from the mean opacity intensity `m` over covered pixels:
//!   0 if nothing is covered, 1 if `m < 0.45`, 2 if `m < 0.8`, else 3.
//!
//! Lung pixels are rendered as `LUNG_LEVEL + OPACITY_GAIN * o`, where `o` is the
//! strongest opacity covering the pixel, so labels can be recovered from the
//! image and the lung masks alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metadata::{CxrMeta, Position, Sex, View};
use super::CxrRecord;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scoring::{normalize, GeographicScore, OpacityScore, TargetKind};

pub const BODY_LEVEL: f64 = 0.65;
pub const LUNG_LEVEL: f64 = 0.18;
pub const OPACITY_GAIN: f64 = 0.75;
pub const BORDER_LEVEL: f64 = 0.04;
pub const MIN_SIZE: usize = 32;

/// Axis-aligned ellipse in fractional image coordinates (`0..1` on each axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(x, y)` lies inside, on a `w × h` grid.
    #[inline]
    pub fn contains_pixel(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        let u = ((x as f64 + 0.5) / w as f64 - self.cx) / self.rx;
        let v = ((y as f64 + 0.5) / h as f64 - self.cy) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Right lung sits on the viewer's left, as on a frontal radiograph.
pub const LUNG_FIELDS: [Ellipse; 2] = [
    Ellipse {
        cx: 0.31,
        cy: 0.5,
        rx: 0.16,
        ry: 0.31,
    },
    Ellipse {
        cx: 0.69,
        cy: 0.5,
        rx: 0.16,
        ry: 0.31,
    },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Opacity {
    pub shape: Ellipse,
    /// Opacity strength in `(0, 1]`.
    pub intensity: f64,
}

/// Opacities for each lung, index 0 = right, 1 = left.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticCase {
    pub lungs: [Vec<Opacity>; 2],
}

/// Per-lung measurements and the derived grades.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub coverage: [f64; 2],
    pub mean_intensity: [f64; 2],
    pub geographic: GeographicScore,
    pub opacity: OpacityScore,
}

pub fn geographic_grade(coverage: f64) -> u8 {
    match coverage {
        c if c <= 0.0 => 0,
        c if c < 0.25 => 1,
        c if c < 0.5 => 2,
        c if c < 0.75 => 3,
        _ => 4,
    }
}

pub fn opacity_grade(covered: bool, mean_intensity: f64) -> u8 {
    match mean_intensity {
        _ if !covered => 0,
        m if m < 0.45 => 1,
        m if m < 0.8 => 2,
        _ => 3,
    }
}

/// Grades a lung from its field mask and per-pixel opacity values (0 = clear).
pub fn grade_lung(mask: &[bool], opacity: &[f64]) -> (f64, f64) {
    let mut area = 0usize;
    let mut covered = 0usize;
    let mut sum = 0.0;
    for (&inside, &o) in mask.iter().zip(opacity) {
        if inside {
            area += 1;
            if o > 0.0 {
                covered += 1;
                sum += o;
            }
        }
    }
    let coverage = if area == 0 { 0.0 } else { covered as f64 / area as f64 };
    let mean = if covered == 0 { 0.0 } else { sum / covered as f64 };
    (coverage, mean)
}

/// Renders a case and measures its labels.
pub fn render_case(case: &SyntheticCase, width: usize, height: usize) -> Result<(Raster, SyntheticTruth)> {
    if width < MIN_SIZE || height < MIN_SIZE {
        return Err(Error::validation(format!(
            "synthetic images need at least {MIN_SIZE}x{MIN_SIZE} pixels, got {width}x{height}"
        )));
    }
    let n = width * height;
    let mut pixels = vec![BODY_LEVEL; n];
    let border_x = (0.04 * width as f64).ceil() as usize;
    let border_y = (0.04 * height as f64).ceil() as usize;
    let mut coverage = [0.0; 2];
    let mut mean_intensity = [0.0; 2];

    for (lung, field) in LUNG_FIELDS.iter().enumerate() {
        let mut mask = vec![false; n];
        let mut opacity = vec![0.0; n];
        for y in 0..height {
            for x in 0..width {
                if !field.contains_pixel(x, y, width, height) {
                    continue;
                }
                let i = y * width + x;
                mask[i] = true;
                let o = case.lungs[lung]
                    .iter()
                    .filter(|op| op.shape.contains_pixel(x, y, width, height))
                    .map(|op| op.intensity)
                    .fold(0.0, f64::max);
                opacity[i] = o;
                pixels[i] = LUNG_LEVEL + OPACITY_GAIN * o;
            }
        }
        let (c, m) = grade_lung(&mask, &opacity);
        coverage[lung] = c;
        mean_intensity[lung] = m;
    }

    // Acquisition border and a burned-in corner tag, both outside the crop.
    for y in 0..height {
        for x in 0..width {
            let edge = x < border_x || y < border_y || x >= width - border_x || y >= height - border_y;
            if edge {
                pixels[y * width + x] = BORDER_LEVEL;
            }
        }
    }
    for y in 0..border_y {
        for x in 0..(width / 6) {
            pixels[y * width + x] = 1.0;
        }
    }

    let truth = SyntheticTruth {
        coverage,
        mean_intensity,
        geographic: GeographicScore::new(geographic_grade(coverage[0]), geographic_grade(coverage[1]))?,
        opacity: OpacityScore::new(
            opacity_grade(coverage[0] > 0.0, mean_intensity[0]),
            opacity_grade(coverage[1] > 0.0, mean_intensity[1]),
        )?,
    };
    Ok((Raster::new(width, height, pixels)?, truth))
}

/// Draws a random case: 0–4 opacities per lung sharing a per-lung character
/// level, with centres inside the lung field.
pub fn random_case(rng: &mut impl Rng) -> SyntheticCase {
    let mut case = SyntheticCase::default();
    for (lung, field) in LUNG_FIELDS.iter().enumerate() {
        let count = rng.gen_range(0..=4usize);
        let character: f64 = rng.gen_range(0.15..=1.0);
        for _ in 0..count {
            let r = rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let cx = field.cx + 0.8 * r * field.rx * theta.cos();
            let cy = field.cy + 0.8 * r * field.ry * theta.sin();
            let rx = field.rx * rng.gen_range(0.2..0.95);
            let ry = field.ry * rng.gen_range(0.2..0.95);
            let intensity = (character + rng.gen_range(-0.08..0.08)).clamp(0.1, 1.0);
            case.lungs[lung].push(Opacity {
                shape: Ellipse { cx, cy, rx, ry },
                intensity,
            });
        }
    }
    case
}

const LOCATIONS: [&str; 4] = ["Asia", "Europe", "North America", "Australia"];

/// Deterministic synthetic cohort of `count` labelled images.
pub fn generate_synthetic(count: usize, seed: u64, width: usize, height: usize) -> Result<Vec<CxrRecord>> {
    if count == 0 {
        return Err(Error::validation("synthetic count must be at least 1"));
    }
    if width < MIN_SIZE || height < MIN_SIZE {
        return Err(Error::validation(format!(
            "synthetic images need at least {MIN_SIZE}x{MIN_SIZE} pixels, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let case = random_case(&mut rng);
            let (pixels, truth) = render_case(&case, width, height)?;
            let meta = CxrMeta {
                image_id: format!("syn-{i:04}"),
                patient_id: format!("patient-{i:04}"),
                age: (rng.gen::<f64>() > 0.15).then(|| rng.gen_range(12..=90)),
                sex: match rng.gen_range(0..10) {
                    0..=5 => Some(Sex::Male),
                    6..=8 => Some(Sex::Female),
                    _ => None,
                },
                location: {
                    let k = rng.gen_range(0..=LOCATIONS.len());
                    LOCATIONS.get(k).map(|s| s.to_string())
                },
                view: if rng.gen::<f64>() < 0.75 { View::PA } else { View::AP },
                position: if rng.gen::<f64>() < 0.13 {
                    Position::Supine
                } else {
                    Position::Upright
                },
            };
            Ok(CxrRecord {
                meta,
                pixels,
                geo_label: normalize(truth.geographic.total(), TargetKind::Geographic)?,
                opac_label: normalize(truth.opacity.total(), TargetKind::Opacity)?,
            })
        })
        .collect()
}
