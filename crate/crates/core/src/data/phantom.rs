//! Seeded synthetic longitudinal carotid phantoms.
//!
//! A dark lumen band runs horizontally between two bright wall lines. One
//! or two raised-cosine plaque blobs grow from the inner edge of a wall into
//! the lumen; with two plaques there is one on each wall. The clean
//! rendering is lightly blurred and multiplied by unit-mean gamma speckle.
//! The mask is exactly the set of pixels assigned plaque intensity.

use serde::{Deserialize, Serialize};

use crate::data::augment::{gaussian_blur, Sample};
use crate::data::image::GrayImage;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::postprocess::label_components;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Lumen height as a fraction of the image height.
    pub lumen_fraction: (f64, f64),
    /// Wall line thickness in pixels.
    pub wall_thickness: (usize, usize),
    /// Peak wall excursion of the gentle sinusoidal tilt, in pixels.
    pub wall_wobble: f64,
    /// `None` draws 1 or 2 with equal probability.
    pub plaque_count: Option<usize>,
    /// Plaque base width as a fraction of the image width.
    pub plaque_width: (f64, f64),
    /// Plaque protrusion as a fraction of the lumen height.
    pub plaque_height: (f64, f64),
    pub plaque_intensity: (f64, f64),
    pub lumen_intensity: (f64, f64),
    pub wall_intensity: (f64, f64),
    pub tissue_intensity: (f64, f64),
    /// Gamma shape of the speckle multiplier (mean 1, variance `1/shape`).
    pub speckle_shape: f64,
    /// Blur applied to the clean rendering before speckle, in pixels.
    pub blur_sigma: f64,
    /// Accepted range of the mask foreground fraction.
    pub foreground_fraction: (f64, f64),
    /// Largest allowed ratio between the two plaque areas.
    pub max_area_ratio: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            lumen_fraction: (0.35, 0.5),
            wall_thickness: (3, 5),
            wall_wobble: 3.0,
            plaque_count: None,
            plaque_width: (0.25, 0.5),
            plaque_height: (0.25, 0.45),
            plaque_intensity: (0.45, 0.65),
            lumen_intensity: (0.04, 0.1),
            wall_intensity: (0.8, 0.95),
            tissue_intensity: (0.25, 0.4),
            speckle_shape: 6.0,
            blur_sigma: 0.8,
            foreground_fraction: (0.02, 0.2),
            max_area_ratio: 5.0,
            seed: 0,
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.height < 32 || self.width < 32 {
            return err(format!("phantom size must be at least 32×32, got {}×{}", self.height, self.width));
        }
        for (name, (lo, hi)) in [
            ("lumen_fraction", self.lumen_fraction),
            ("plaque_width", self.plaque_width),
            ("plaque_height", self.plaque_height),
            ("plaque_intensity", self.plaque_intensity),
            ("lumen_intensity", self.lumen_intensity),
            ("wall_intensity", self.wall_intensity),
            ("tissue_intensity", self.tissue_intensity),
            ("foreground_fraction", self.foreground_fraction),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return err(format!("{name} must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"));
            }
        }
        if self.lumen_fraction.1 > 0.7 {
            return err("lumen_fraction above 0.7 leaves no room for the walls".into());
        }
        if self.plaque_height.1 > 0.45 {
            return err("plaque_height above 0.45 lets opposing plaques touch".into());
        }
        if self.wall_thickness.0 == 0 || self.wall_thickness.0 > self.wall_thickness.1 {
            return err(format!("invalid wall_thickness {:?}", self.wall_thickness));
        }
        if let Some(n) = self.plaque_count {
            if !(1..=2).contains(&n) {
                return err(format!("plaque_count must be 1 or 2, got {n}"));
            }
        }
        if !(self.speckle_shape > 0.0) || self.blur_sigma < 0.0 || self.wall_wobble < 0.0 {
            return err("speckle_shape must be positive; blur_sigma and wall_wobble non-negative".into());
        }
        if !(self.max_area_ratio >= 1.0) {
            return err(format!("max_area_ratio must be >= 1, got {}", self.max_area_ratio));
        }
        Ok(())
    }

    /// Config for the `index`-th phantom of a set seeded with `seed`.
    pub fn for_index(&self, seed: u64, index: usize) -> Self {
        Self {
            seed: derive_seed(seed, index as u64),
            ..self.clone()
        }
    }
}

struct Geometry {
    /// First lumen row per column (just below the top wall).
    top_inner: Vec<usize>,
    /// Last lumen row + 1 per column (first row of the bottom wall).
    bot_inner: Vec<usize>,
    thickness: (usize, usize),
    /// Per column: rows `[top_inner, top_inner + t)` are top plaque and
    /// `[bot_inner − b, bot_inner)` are bottom plaque.
    plaque_top: Vec<usize>,
    plaque_bot: Vec<usize>,
}

fn raised_cosine(c: usize, centre: f64, half_width: f64, peak: f64) -> usize {
    let d = (c as f64 + 0.5 - centre) / half_width;
    if d.abs() >= 1.0 {
        return 0;
    }
    (peak * 0.5 * (1.0 + (std::f64::consts::PI * d).cos())).round() as usize
}

fn draw_geometry(cfg: &PhantomConfig, rng: &mut SplitMix64) -> Geometry {
    let (h, w) = (cfg.height, cfg.width);
    let lumen = (rng.uniform(cfg.lumen_fraction.0, cfg.lumen_fraction.1) * h as f64).round();
    let tt = cfg.wall_thickness.0 + rng.below(cfg.wall_thickness.1 - cfg.wall_thickness.0 + 1);
    let tb = cfg.wall_thickness.0 + rng.below(cfg.wall_thickness.1 - cfg.wall_thickness.0 + 1);
    let margin = cfg.wall_wobble.ceil() + tt.max(tb) as f64 + 2.0;
    let free = (h as f64 - lumen - 2.0 * margin).max(0.0);
    let top0 = margin + rng.uniform(0.0, free);
    let amp = rng.uniform(0.0, cfg.wall_wobble);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let period = rng.uniform(1.0, 2.0) * w as f64;

    let mut top_inner = Vec::with_capacity(w);
    let mut bot_inner = Vec::with_capacity(w);
    for c in 0..w {
        // Slope never exceeds 2π·amp/period < 1 px per column for the
        // default ranges, so neighbouring columns differ by at most one row.
        let shift = amp * (std::f64::consts::TAU * c as f64 / period + phase).sin();
        let t = (top0 + shift).round().max(tt as f64) as usize;
        top_inner.push(t);
        bot_inner.push(((top0 + lumen + shift).round() as usize).min(h - tb));
    }

    let count = cfg.plaque_count.unwrap_or_else(|| 1 + rng.below(2));
    let on_top_first = rng.below(2) == 0;
    let mut plaque_top = vec![0; w];
    let mut plaque_bot = vec![0; w];
    for k in 0..count {
        let on_top = on_top_first == (k == 0);
        let half = rng.uniform(cfg.plaque_width.0, cfg.plaque_width.1) * w as f64 / 2.0;
        let centre = rng.uniform(half.min(w as f64 / 2.0), (w as f64 - half).max(w as f64 / 2.0));
        let peak = rng.uniform(cfg.plaque_height.0, cfg.plaque_height.1) * lumen;
        let dst = if on_top { &mut plaque_top } else { &mut plaque_bot };
        for (c, d) in dst.iter_mut().enumerate() {
            *d = raised_cosine(c, centre, half, peak);
        }
    }
    Geometry {
        top_inner,
        bot_inner,
        thickness: (tt, tb),
        plaque_top,
        plaque_bot,
    }
}

fn plaque_mask(g: &Geometry, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| {
        let (t, b) = (g.top_inner[c], g.bot_inner[c]);
        (r >= t && r < t + g.plaque_top[c]) || (r < b && r + g.plaque_bot[c] >= b)
    })
}

fn acceptable(cfg: &PhantomConfig, g: &Geometry, mask: &BinaryMask) -> bool {
    let n = mask.count() as f64 / (cfg.height * cfg.width) as f64;
    if n < cfg.foreground_fraction.0 || n > cfg.foreground_fraction.1 {
        return false;
    }
    let expected = usize::from(g.plaque_top.iter().any(|&v| v > 0)) + usize::from(g.plaque_bot.iter().any(|&v| v > 0));
    let lc = label_components(mask);
    if lc.num() != expected {
        return false;
    }
    let areas: Vec<usize> = lc.ranked().iter().map(|&(_, a)| a).collect();
    areas.len() < 2 || areas[0] as f64 <= cfg.max_area_ratio * areas[1] as f64
}

/// Renders one phantom; deterministic in `cfg` (including `cfg.seed`).
/// Intensities are quantized to 8 bits so a saved phantom reloads exactly.
/// Geometry draws that violate the foreground-fraction, component-count or
/// area-ratio constraints are redrawn from the same stream.
pub fn synth_phantom(cfg: &PhantomConfig, id: impl Into<String>) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = SplitMix64::new(cfg.seed);
    let (g, mask) = (0..MAX_ATTEMPTS)
        .map(|_| {
            let g = draw_geometry(cfg, &mut rng);
            let m = plaque_mask(&g, h, w);
            (g, m)
        })
        .find(|(g, m)| acceptable(cfg, g, m))
        .ok_or_else(|| Error::Config(format!("no valid phantom geometry after {MAX_ATTEMPTS} draws; loosen the config")))?;

    let pick = |rng: &mut SplitMix64, (lo, hi): (f64, f64)| rng.uniform(lo, hi);
    let plaque = pick(&mut rng, cfg.plaque_intensity);
    let lumen = pick(&mut rng, cfg.lumen_intensity);
    let wall = pick(&mut rng, cfg.wall_intensity);
    let tissue = pick(&mut rng, cfg.tissue_intensity);
    let mut clean = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (t, b) = (g.top_inner[c], g.bot_inner[c]);
            clean[r * w + c] = if mask.get(r, c) {
                plaque
            } else if r >= t && r < b {
                lumen
            } else if (r < t && r + g.thickness.0 >= t) || (r >= b && r < b + g.thickness.1) {
                wall
            } else {
                tissue
            };
        }
    }
    if cfg.blur_sigma > 0.0 {
        clean = gaussian_blur(&clean, h, w, cfg.blur_sigma);
    }
    let k = cfg.speckle_shape;
    let pixels: Vec<f32> = clean
        .iter()
        .map(|&v| ((v * rng.gamma(k) / k).clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0)
        .collect();
    Sample::new(id, GrayImage::new(h, w, pixels)?, mask)
}

/// `n` phantoms with ids `p000, p001, …`, phantom `i` seeded with
/// `derive_seed(seed, i)`.
pub fn synth_dataset(cfg: &PhantomConfig, n: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n)
        .map(|i| synth_phantom(&cfg.for_index(seed, i), format!("p{i:03}")))
        .collect()
}
