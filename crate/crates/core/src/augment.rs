//! Stochastic training-time augmentation.
//!
//! Seven transforms are applied in a fixed order: translate, rotate,
//! horizontal flip, zoom, intensity shift, cutout, Gaussian noise. Geometric
//! resampling replicates edge pixels rather than padding with black, and the
//! result is always clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Fill value used by cutout.
pub const CUTOUT_FILL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Largest translation as a fraction of width/height.
    pub max_translate_frac: f64,
    pub max_rotate_deg: f64,
    pub hflip_prob: f64,
    /// Zoom factor range; values above 1 magnify.
    pub zoom_range: (f64, f64),
    pub max_intensity_shift: f64,
    /// Largest cutout area as a fraction of the image.
    pub cutout_frac: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translate_frac: 0.1,
            max_rotate_deg: 10.0,
            hflip_prob: 0.5,
            zoom_range: (0.9, 1.1),
            max_intensity_shift: 0.1,
            cutout_frac: 0.25,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Small geometric jitter and noise without cutout; label-preserving for severity scores.
    pub fn mild() -> Self {
        Self {
            max_translate_frac: 0.05,
            max_rotate_deg: 5.0,
            hflip_prob: 0.5,
            zoom_range: (0.95, 1.05),
            max_intensity_shift: 0.03,
            cutout_frac: 0.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }

    /// Every magnitude zero: `apply` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            max_translate_frac: 0.0,
            max_rotate_deg: 0.0,
            hflip_prob: 0.0,
            zoom_range: (1.0, 1.0),
            max_intensity_shift: 0.0,
            cutout_frac: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, key: &str, msg: String| {
            if !ok {
                out.push(format!("{prefix}{key}: {msg}"));
            }
        };
        check(
            (0.0..=0.5).contains(&self.max_translate_frac),
            "max_translate_frac",
            format!("{} not in [0, 0.5]", self.max_translate_frac),
        );
        check(
            (0.0..=180.0).contains(&self.max_rotate_deg),
            "max_rotate_deg",
            format!("{} not in [0, 180]", self.max_rotate_deg),
        );
        check(
            (0.0..=1.0).contains(&self.hflip_prob),
            "hflip_prob",
            format!("{} not in [0, 1]", self.hflip_prob),
        );
        let (lo, hi) = self.zoom_range;
        check(
            lo > 0.0 && lo <= hi && hi.is_finite(),
            "zoom_range",
            format!("({lo}, {hi}) must satisfy 0 < lo <= hi"),
        );
        check(
            (0.0..=1.0).contains(&self.max_intensity_shift),
            "max_intensity_shift",
            format!("{} not in [0, 1]", self.max_intensity_shift),
        );
        check(
            (0.0..1.0).contains(&self.cutout_frac),
            "cutout_frac",
            format!("{} not in [0, 1)", self.cutout_frac),
        );
        check(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise_sigma",
            format!("{} must be finite and >= 0", self.noise_sigma),
        );
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

    /// Draws the concrete transform sequence for one `width × height` image.
    ///
    /// Always consumes the same number of values from `rng`, so the stream
    /// position after a call does not depend on the configuration.
    pub fn sample(&self, rng: &mut impl Rng, width: usize, height: usize) -> Vec<Transform> {
        let sym = |rng: &mut dyn rand::RngCore| 2.0 * rng.gen::<f64>() - 1.0;
        let tx = sym(rng) * self.max_translate_frac * width as f64;
        let ty = sym(rng) * self.max_translate_frac * height as f64;
        let angle = sym(rng) * self.max_rotate_deg;
        let flip = rng.gen::<f64>() < self.hflip_prob;
        let (lo, hi) = self.zoom_range;
        let zoom = lo + rng.gen::<f64>() * (hi - lo);
        let delta = sym(rng) * self.max_intensity_shift;
        let area = rng.gen::<f64>() * self.cutout_frac;
        let ux: f64 = rng.gen();
        let uy: f64 = rng.gen();
        let noise_seed: u64 = rng.gen();

        let mut plan = Vec::with_capacity(7);
        let (dx, dy) = (tx.round() as i64, ty.round() as i64);
        if dx != 0 || dy != 0 {
            plan.push(Transform::Translate { dx, dy });
        }
        if angle != 0.0 {
            plan.push(Transform::Rotate { degrees: angle });
        }
        if flip {
            plan.push(Transform::HFlip);
        }
        if zoom != 1.0 {
            plan.push(Transform::Zoom { factor: zoom });
        }
        if delta != 0.0 {
            plan.push(Transform::IntensityShift { delta });
        }
        let cw = (area.sqrt() * width as f64).round() as usize;
        let ch = (area.sqrt() * height as f64).round() as usize;
        if cw > 0 && ch > 0 {
            let x = ((ux * (width - cw + 1) as f64) as usize).min(width - cw);
            let y = ((uy * (height - ch + 1) as f64) as usize).min(height - ch);
            plan.push(Transform::Cutout {
                x,
                y,
                width: cw,
                height: ch,
            });
        }
        if self.noise_sigma > 0.0 {
            plan.push(Transform::Noise {
                sigma: self.noise_sigma,
                seed: noise_seed,
            });
        }
        plan
    }
}

/// One concrete, deterministic transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Whole-pixel shift; positive `dx` moves content right.
    Translate {
        dx: i64,
        dy: i64,
    },
    /// Counter-clockwise rotation about the image centre.
    Rotate {
        degrees: f64,
    },
    HFlip,
    /// Scale about the centre; `factor > 1` magnifies.
    Zoom {
        factor: f64,
    },
    IntensityShift {
        delta: f64,
    },
    /// Box set to [`CUTOUT_FILL`].
    Cutout {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    /// Additive i.i.d. Gaussian noise drawn from a stream seeded with `seed`.
    Noise {
        sigma: f64,
        seed: u64,
    },
}

impl Transform {
    /// Builds a transform from a kind name and positional parameters.
    ///
    /// Kinds: `translate dx dy`, `rotate degrees`, `hflip`, `zoom factor`,
    /// `intensity delta`, `cutout x y w h`, `noise sigma seed`.
    pub fn from_kind(kind: &str, params: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::validation(format!(
                    "transform `{kind}` takes {n} parameter(s), got {}",
                    params.len()
                )))
            }
        };
        let idx = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::validation(format!(
                    "`{kind}` needs whole non-negative values, got {v}"
                )))
            }
        };
        let t = match kind {
            "translate" => {
                need(2)?;
                Transform::Translate {
                    dx: params[0].round() as i64,
                    dy: params[1].round() as i64,
                }
            }
            "rotate" => {
                need(1)?;
                Transform::Rotate { degrees: params[0] }
            }
            "hflip" => {
                need(0)?;
                Transform::HFlip
            }
            "zoom" => {
                need(1)?;
                Transform::Zoom { factor: params[0] }
            }
            "intensity" | "intensity_shift" => {
                need(1)?;
                Transform::IntensityShift { delta: params[0] }
            }
            "cutout" => {
                need(4)?;
                Transform::Cutout {
                    x: idx(params[0])?,
                    y: idx(params[1])?,
                    width: idx(params[2])?,
                    height: idx(params[3])?,
                }
            }
            "noise" => {
                need(2)?;
                Transform::Noise {
                    sigma: params[0],
                    seed: idx(params[1])? as u64,
                }
            }
            other => return Err(Error::validation(format!("unknown transform kind `{other}`"))),
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Transform::Rotate { degrees } => degrees.is_finite(),
            Transform::Zoom { factor } => factor.is_finite() && factor > 0.0,
            Transform::IntensityShift { delta } => delta.is_finite(),
            Transform::Noise { sigma, .. } => sigma.is_finite() && sigma >= 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("illegal transform parameters {self:?}")))
        }
    }
}

fn clamp_unit(mut r: Raster) -> Raster {
    for v in r.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    r
}

/// Applies one transform.
pub fn transform_single(transform: &Transform, pixels: &Raster) -> Result<Raster> {
    transform.check()?;
    let (w, h) = (pixels.width(), pixels.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let out = match *transform {
        Transform::Translate { dx, dy } => Raster::from_fn(w, h, |x, y| {
            pixels.get_clamped(x as isize - dx as isize, y as isize - dy as isize)
        })?,
        Transform::Rotate { degrees } => {
            if degrees == 0.0 {
                return Ok(pixels.clone());
            }
            let (s, c) = degrees.to_radians().sin_cos();
            Raster::from_fn(w, h, |x, y| {
                let (u, v) = (x as f64 - cx, y as f64 - cy);
                // Inverse rotation maps each output pixel to its source.
                let sx = c * u - s * v + cx;
                let sy = s * u + c * v + cy;
                pixels.sample_bilinear(sx, sy)
            })?
        }
        Transform::HFlip => Raster::from_fn(w, h, |x, y| pixels.get(w - 1 - x, y))?,
        Transform::Zoom { factor } => {
            if factor == 1.0 {
                return Ok(pixels.clone());
            }
            Raster::from_fn(w, h, |x, y| {
                pixels.sample_bilinear(cx + (x as f64 - cx) / factor, cy + (y as f64 - cy) / factor)
            })?
        }
        Transform::IntensityShift { delta } => {
            let mut out = pixels.clone();
            for v in out.data_mut() {
                *v += delta;
            }
            out
        }
        Transform::Cutout {
            x: x0,
            y: y0,
            width: bw,
            height: bh,
        } => {
            let mut out = pixels.clone();
            for y in y0..(y0 + bh).min(h) {
                for x in x0..(x0 + bw).min(w) {
                    out.set(x, y, CUTOUT_FILL);
                }
            }
            out
        }
        Transform::Noise { sigma, seed } => {
            if sigma == 0.0 {
                return Ok(pixels.clone());
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::validation(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = pixels.clone();
            for v in out.data_mut() {
                *v += normal.sample(&mut rng);
            }
            out
        }
    };
    Ok(clamp_unit(out))
}

/// Samples and applies a full augmentation to one image.
pub fn apply(pixels: &Raster, config: &AugmentConfig, rng: &mut impl Rng) -> Result<Raster> {
    if !pixels.all_finite() {
        return Err(Error::validation("augmentation input has non-finite pixels"));
    }
    let plan = config.sample(rng, pixels.width(), pixels.height());
    let mut out = pixels.clone();
    for t in &plan {
        out = transform_single(t, &out)?;
    }
    Ok(clamp_unit(out))
}
