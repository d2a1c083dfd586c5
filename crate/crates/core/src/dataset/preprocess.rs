//! Border crop and resize applied to every image before training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Fraction of each dimension removed from every side, in `[0, 0.4)`.
    pub crop_fraction: f64,
    pub target_width: usize,
    pub target_height: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_fraction: 0.08,
            target_width: 224,
            target_height: 224,
        }
    }
}

impl PreprocessConfig {
    /// Returns one message per offending key, prefixed with `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..0.4).contains(&self.crop_fraction) {
            out.push(format!("{prefix}crop_fraction: {} not in [0, 0.4)", self.crop_fraction));
        }
        if self.target_width < 8 {
            out.push(format!("{prefix}target_width: {} is below 8", self.target_width));
        }
        if self.target_height < 8 {
            out.push(format!("{prefix}target_height: {} is below 8", self.target_height));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn apply(&self, pixels: &Raster) -> Result<Raster> {
        self.validate()?;
        let cropped = crop_borders(pixels, self.crop_fraction)?;
        resize_bilinear(&cropped, self.target_width, self.target_height)
    }
}

/// Removes `floor(fraction * dim)` pixels from each of the four sides.
pub fn crop_borders(pixels: &Raster, fraction: f64) -> Result<Raster> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::validation(format!(
            "crop fraction {fraction} would empty the image"
        )));
    }
    let dx = (fraction * pixels.width() as f64).floor() as usize;
    let dy = (fraction * pixels.height() as f64).floor() as usize;
    if 2 * dx >= pixels.width() || 2 * dy >= pixels.height() {
        return Err(Error::validation(format!(
            "crop fraction {fraction} empties a {}x{} image",
            pixels.width(),
            pixels.height()
        )));
    }
    let w = pixels.width() - 2 * dx;
    let h = pixels.height() - 2 * dy;
    Raster::from_fn(w, h, |x, y| pixels.get(x + dx, y + dy))
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners.
pub fn resize_bilinear(pixels: &Raster, target_width: usize, target_height: usize) -> Result<Raster> {
    if target_width == 0 || target_height == 0 {
        return Err(Error::validation(format!(
            "resize target {target_width}x{target_height} has a zero dimension"
        )));
    }
    if target_width == pixels.width() && target_height == pixels.height() {
        return Ok(pixels.clone());
    }
    let scale = |src: usize, dst: usize| {
        if dst == 1 {
            None
        } else {
            Some((src - 1) as f64 / (dst - 1) as f64)
        }
    };
    let sx = scale(pixels.width(), target_width);
    let sy = scale(pixels.height(), target_height);
    let cx = (pixels.width() - 1) as f64 / 2.0;
    let cy = (pixels.height() - 1) as f64 / 2.0;
    Raster::from_fn(target_width, target_height, |x, y| {
        let u = sx.map_or(cx, |s| x as f64 * s);
        let v = sy.map_or(cy, |s| y as f64 * s);
        pixels.sample_bilinear(u, v)
    })
}
