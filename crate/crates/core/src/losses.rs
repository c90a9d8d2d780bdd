//! Differentiable segmentation objectives on the foreground probability map.
//!
//! All losses take `P` (prediction) and `L` (label) as `N×1×H×W` tape nodes
//! and return a scalar node averaged over the batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Function, NodeId, Tape};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Smoothing added to numerator and denominator of the Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-6;
/// Probabilities are clamped into `[BCE_CLAMP, 1 − BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dice,
    Bce,
    Ssim,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ssim, LossKind::Bce, LossKind::Dice];

    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, p: NodeId, l: NodeId, ssim: &SsimConfig) -> Result<NodeId> {
        match self {
            LossKind::Dice => dice_loss(tape, p, l),
            LossKind::Bce => bce_loss(tape, p, l),
            LossKind::Ssim => ssim_loss(tape, p, l, ssim),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::Bce => "bce",
            LossKind::Ssim => "ssim",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "bce" => Ok(LossKind::Bce),
            "ssim" => Ok(LossKind::Ssim),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected dice, bce or ssim)"))),
        }
    }
}

fn check_pair<T: Scalar>(tape: &Tape<T>, op: &'static str, p: NodeId, l: NodeId) -> Result<()> {
    if tape.shape(p) != tape.shape(l) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: tape.shape(p).to_vec(),
            rhs: tape.shape(l).to_vec(),
        });
    }
    tape.value(p).dims4(op)?;
    Ok(())
}

/// `1 − mean_n (2·Σ L·P + ε) / (Σ L + Σ P + ε)`.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, p: NodeId, l: NodeId) -> Result<NodeId> {
    check_pair(tape, "dice_loss", p, l)?;
    let eps = T::from_f64_lossy(DICE_SMOOTH);
    let two = T::from_f64_lossy(2.0);
    let lp = tape.mul(l, p)?;
    let inter = tape.sum_per_sample(lp);
    let sum_l = tape.sum_per_sample(l);
    let sum_p = tape.sum_per_sample(p);
    let num = tape.scale(inter, two);
    let num = tape.add_scalar(num, eps);
    let den = tape.add(sum_l, sum_p)?;
    let den = tape.add_scalar(den, eps);
    let dice = tape.div(num, den)?;
    let mean = tape.mean(dice);
    let neg = tape.scale(mean, -T::one());
    Ok(tape.add_scalar(neg, T::one()))
}

/// Mean binary cross-entropy with `P` clamped away from 0 and 1.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, p: NodeId, l: NodeId) -> Result<NodeId> {
    check_pair(tape, "bce_loss", p, l)?;
    let lo = T::from_f64_lossy(BCE_CLAMP);
    let pc = tape.clamp(p, lo, T::one() - lo);
    let log_p = tape.ln(pc);
    let neg_pc = tape.scale(pc, -T::one());
    let q = tape.add_scalar(neg_pc, T::one());
    let log_q = tape.ln(q);
    let neg_l = tape.scale(l, -T::one());
    let not_l = tape.add_scalar(neg_l, T::one());
    let pos = tape.mul(l, log_p)?;
    let neg = tape.mul(not_l, log_q)?;
    let total = tape.add(pos, neg)?;
    let mean = tape.mean(total);
    Ok(tape.scale(mean, -T::one()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimWindow {
    /// Gaussian-weighted `window×window` sliding windows.
    Gaussian,
    /// Flat `window×window` sliding windows.
    Uniform,
    /// One window covering the whole image.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub kind: SsimWindow,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            kind: SsimWindow::Gaussian,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized kernel and its `(rows, cols)` for an `h×w` image.
    pub fn kernel(&self, h: usize, w: usize) -> Result<(Vec<f64>, usize, usize)> {
        const OP: &str = "ssim_loss";
        if self.c1() <= 0.0 || self.c2() <= 0.0 {
            return Err(invalid(OP, "C1 and C2 must be positive"));
        }
        match self.kind {
            SsimWindow::Global => Ok((vec![1.0 / (h * w) as f64; h * w], h, w)),
            SsimWindow::Gaussian | SsimWindow::Uniform => {
                let k = self.window;
                if k == 0 || k % 2 == 0 {
                    return Err(invalid(OP, format!("window must be odd, got {k}")));
                }
                if k > h.min(w) {
                    return Err(invalid(OP, format!("image {h}×{w} smaller than window {k}")));
                }
                let one_d: Vec<f64> = if self.kind == SsimWindow::Gaussian {
                    let c = (k / 2) as f64;
                    let g: Vec<f64> = (0..k)
                        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
                        .collect();
                    let s: f64 = g.iter().sum();
                    g.into_iter().map(|v| v / s).collect()
                } else {
                    vec![1.0 / k as f64; k]
                };
                let kernel = one_d
                    .iter()
                    .flat_map(|&a| one_d.iter().map(move |&b| a * b))
                    .collect();
                Ok((kernel, k, k))
            }
        }
    }
}

struct Filter2dValid<T> {
    kernel: Vec<T>,
    kh: usize,
    kw: usize,
}

impl<T: Scalar> Function<T> for Filter2dValid<T> {
    fn name(&self) -> &'static str {
        "filter2d_valid"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (out.shape()[2], out.shape()[3]);
        let mut gx = vec![T::zero(); inputs[0].len()];
        for (plane, gp) in gx.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let k = self.kernel[a * self.kw + b];
                    for i in 0..ho {
                        let dst = &mut plane[(i + a) * w + b..(i + a) * w + b + wo];
                        for (d, &v) in dst.iter_mut().zip(&gp[i * wo..(i + 1) * wo]) {
                            *d = *d + k * v;
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Correlates every plane with a fixed kernel, keeping only positions where
/// the kernel lies fully inside the image.
pub fn filter2d_valid<T: Scalar>(tape: &mut Tape<T>, x: NodeId, kernel: &[f64], kh: usize, kw: usize) -> Result<NodeId> {
    let (n, c, h, w) = tape.value(x).dims4("filter2d_valid")?;
    if kh > h || kw > w || kernel.len() != kh * kw {
        return Err(invalid("filter2d_valid", format!("kernel {kh}×{kw} does not fit {h}×{w}")));
    }
    let kernel: Vec<T> = kernel.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for (op, xp) in out.chunks_mut(ho * wo).zip(tape.value(x).data().chunks(h * w)) {
        for a in 0..kh {
            for b in 0..kw {
                let k = kernel[a * kw + b];
                for i in 0..ho {
                    let src = &xp[(i + a) * w + b..(i + a) * w + b + wo];
                    for (d, &v) in op[i * wo..(i + 1) * wo].iter_mut().zip(src) {
                        *d = *d + k * v;
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(vec![n, c, ho, wo], out);
    Ok(tape.record(Filter2dValid { kernel, kh, kw }, &[x], value))
}

/// Per-window SSIM map (`N×1×Ho×Wo`), symmetric in its two arguments.
pub fn ssim_map<T: Scalar>(tape: &mut Tape<T>, p: NodeId, l: NodeId, cfg: &SsimConfig) -> Result<NodeId> {
    check_pair(tape, "ssim_loss", p, l)?;
    let (_, _, h, w) = tape.value(p).dims4("ssim_loss")?;
    let (kernel, kh, kw) = cfg.kernel(h, w)?;
    let c1 = T::from_f64_lossy(cfg.c1());
    let c2 = T::from_f64_lossy(cfg.c2());
    let two = T::from_f64_lossy(2.0);

    let filt = |tape: &mut Tape<T>, x: NodeId| filter2d_valid(tape, x, &kernel, kh, kw);
    let mu_l = filt(tape, l)?;
    let mu_p = filt(tape, p)?;
    let ll = tape.mul(l, l)?;
    let pp = tape.mul(p, p)?;
    let lp = tape.mul(l, p)?;
    let e_ll = filt(tape, ll)?;
    let e_pp = filt(tape, pp)?;
    let e_lp = filt(tape, lp)?;

    let mu_l2 = tape.mul(mu_l, mu_l)?;
    let mu_p2 = tape.mul(mu_p, mu_p)?;
    let mu_lp = tape.mul(mu_l, mu_p)?;
    let var_l = tape.sub(e_ll, mu_l2)?;
    let var_p = tape.sub(e_pp, mu_p2)?;
    let cov = tape.sub(e_lp, mu_lp)?;

    let lum_num = tape.scale(mu_lp, two);
    let lum_num = tape.add_scalar(lum_num, c1);
    let lum_den = tape.add(mu_l2, mu_p2)?;
    let lum_den = tape.add_scalar(lum_den, c1);
    let cs_num = tape.scale(cov, two);
    let cs_num = tape.add_scalar(cs_num, c2);
    let cs_den = tape.add(var_l, var_p)?;
    let cs_den = tape.add_scalar(cs_den, c2);

    let num = tape.mul(lum_num, cs_num)?;
    let den = tape.mul(lum_den, cs_den)?;
    tape.div(num, den)
}

/// `1 − mean SSIM` over all windows and batch items.
pub fn ssim_loss<T: Scalar>(tape: &mut Tape<T>, p: NodeId, l: NodeId, cfg: &SsimConfig) -> Result<NodeId> {
    let map = ssim_map(tape, p, l, cfg)?;
    let mean = tape.mean(map);
    let neg = tape.scale(mean, -T::one());
    Ok(tape.add_scalar(neg, T::one()))
}
