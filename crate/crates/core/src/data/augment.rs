//! Geometric augmentation of image/mask pairs. Images are resampled
//! bilinearly, masks by nearest neighbour, and anything mapped from outside
//! the frame becomes 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::image::GrayImage;
use crate::error::{invalid, Error, Result};
use crate::mask::BinaryMask;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugTag {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "hflip")]
    Hflip,
    #[serde(rename = "vflip")]
    Vflip,
    #[serde(rename = "rot180")]
    Rot180,
    #[serde(rename = "rot+30")]
    RotPlus30,
    #[serde(rename = "rot-30")]
    RotMinus30,
    #[serde(rename = "elastic")]
    Elastic,
}

impl AugTag {
    /// The six training transforms, in output order.
    pub const TRANSFORMS: [AugTag; 6] = [
        AugTag::Hflip,
        AugTag::Vflip,
        AugTag::Rot180,
        AugTag::RotPlus30,
        AugTag::RotMinus30,
        AugTag::Elastic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugTag::None => "none",
            AugTag::Hflip => "hflip",
            AugTag::Vflip => "vflip",
            AugTag::Rot180 => "rot180",
            AugTag::RotPlus30 => "rot+30",
            AugTag::RotMinus30 => "rot-30",
            AugTag::Elastic => "elastic",
        }
    }
}

impl fmt::Display for AugTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AugTag::None]
            .into_iter()
            .chain(AugTag::TRANSFORMS)
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub tag: AugTag,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage, mask: BinaryMask) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::ShapeMismatch {
                op: "Sample::new",
                lhs: vec![image.height(), image.width()],
                rhs: vec![mask.height(), mask.width()],
            });
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
            tag: AugTag::None,
        })
    }

    fn derived(&self, tag: AugTag, image: GrayImage, mask: BinaryMask) -> Self {
        Self {
            id: format!("{}_{}", self.id, tag),
            image,
            mask,
            tag,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Displacement scale in pixels.
    pub alpha: f64,
    /// Smoothing width of the displacement field in pixels.
    pub sigma: f64,
}

impl ElasticParams {
    /// `alpha = 8`, `sigma = 6` at width 128, scaled with the width.
    pub fn for_width(width: usize) -> Self {
        let s = width as f64 / 128.0;
        Self {
            alpha: 8.0 * s,
            sigma: 6.0 * s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Overrides the width-scaled defaults.
    pub elastic: Option<ElasticParams>,
    /// Appends the untransformed sample after the six transforms.
    pub include_original: bool,
}

pub fn hflip(s: &Sample) -> Sample {
    let (h, w) = s.image.dims();
    let img = GrayImage::from_fn(h, w, |r, c| s.image.get(r, w - 1 - c));
    s.derived(AugTag::Hflip, img, s.mask.flip_horizontal())
}

pub fn vflip(s: &Sample) -> Sample {
    let (h, w) = s.image.dims();
    let img = GrayImage::from_fn(h, w, |r, c| s.image.get(h - 1 - r, c));
    s.derived(AugTag::Vflip, img, s.mask.flip_vertical())
}

pub fn rot180(s: &Sample) -> Sample {
    let (h, w) = s.image.dims();
    let img = GrayImage::from_fn(h, w, |r, c| s.image.get(h - 1 - r, w - 1 - c));
    s.derived(AugTag::Rot180, img, s.mask.flip_horizontal().flip_vertical())
}

/// Bilinear lookup at fractional `(y, x)`; 0 outside the frame.
fn bilinear(img: &GrayImage, y: f64, x: f64) -> f32 {
    let (h, w) = img.dims();
    if !(y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64) {
        return 0.0;
    }
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
    let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Nearest-neighbour lookup; background outside the frame.
fn nearest(m: &BinaryMask, y: f64, x: f64) -> bool {
    let (r, c) = ((y + 0.5).floor(), (x + 0.5).floor());
    if r < 0.0 || c < 0.0 {
        return false;
    }
    let (r, c) = (r as usize, c as usize);
    r < m.height() && c < m.width() && m.get(r, c)
}

/// Warps with a backward map `(r, c) -> source (y, x)`.
fn warp(s: &Sample, tag: AugTag, map: impl Fn(usize, usize) -> (f64, f64)) -> Sample {
    let (h, w) = s.image.dims();
    let img = GrayImage::from_fn(h, w, |r, c| {
        let (y, x) = map(r, c);
        bilinear(&s.image, y, x)
    });
    let mask = BinaryMask::from_fn(h, w, |r, c| {
        let (y, x) = map(r, c);
        nearest(&s.mask, y, x)
    });
    s.derived(tag, img, mask.with_provenance(s.mask.provenance))
}

/// Rotates about the image centre by `degrees`, counter-clockwise as
/// displayed (rows grow downwards).
pub fn rotate(s: &Sample, degrees: f64, tag: AugTag) -> Sample {
    let (h, w) = s.image.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    warp(s, tag, |r, c| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        (cy + cos * dy + sin * dx, cx - sin * dy + cos * dx)
    })
}

/// Separable Gaussian smoothing truncated at `3σ`, zero beyond the border.
pub(crate) fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r as isize, c as isize + off)
                    } else {
                        (r as isize + off, c as isize)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += kv * src[rr as usize * w + cc as usize];
                    }
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

/// Random elastic warp: per-pixel Uniform(−1, 1) displacements, Gaussian
/// smoothed with `sigma` and scaled by `alpha`.
pub fn elastic_deform(s: &Sample, params: ElasticParams, seed: u64) -> Result<Sample> {
    if !(params.alpha >= 0.0 && params.sigma > 0.0) {
        return Err(invalid(
            "elastic_deform",
            format!("need alpha >= 0 and sigma > 0, got alpha = {}, sigma = {}", params.alpha, params.sigma),
        ));
    }
    let (h, w) = s.image.dims();
    let mut rng = SplitMix64::new(seed);
    let mut draw = || (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>();
    let (raw_y, raw_x) = (draw(), draw());
    let dy = gaussian_blur(&raw_y, h, w, params.sigma);
    let dx = gaussian_blur(&raw_x, h, w, params.sigma);
    let a = params.alpha;
    Ok(warp(s, AugTag::Elastic, |r, c| {
        let i = r * w + c;
        (r as f64 + a * dy[i], c as f64 + a * dx[i])
    }))
}

/// The six transforms of one sample, in [`AugTag::TRANSFORMS`] order,
/// optionally followed by the original.
pub fn augment(s: &Sample, cfg: &AugmentConfig, seed: u64) -> Result<Vec<Sample>> {
    let elastic = cfg.elastic.unwrap_or_else(|| ElasticParams::for_width(s.image.width()));
    let mut out = vec![
        hflip(s),
        vflip(s),
        rot180(s),
        rotate(s, 30.0, AugTag::RotPlus30),
        rotate(s, -30.0, AugTag::RotMinus30),
        elastic_deform(s, elastic, seed)?,
    ];
    if cfg.include_original {
        out.push(s.clone());
    }
    Ok(out)
}

/// Augments a whole set; sample `i` uses `derive_seed(seed, i)` for its
/// elastic field.
pub fn augment_all(samples: &[Sample], cfg: &AugmentConfig, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(samples.len() * 7);
    for (i, s) in samples.iter().enumerate() {
        out.extend(augment(s, cfg, derive_seed(seed, i as u64))?);
    }
    Ok(out)
}
