//! Overlap metrics (Dice, IoU, pixel accuracy) and the modified Hausdorff
//! distance between mask boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(label: &BinaryMask, seg: &BinaryMask) -> Result<ConfusionCounts> {
    if label.dims() != seg.dims() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![label.height(), label.width()],
            rhs: vec![seg.height(), seg.width()],
        });
    }
    let mut c = ConfusionCounts::default();
    for (&l, &s) in label.data().iter().zip(seg.data()) {
        match (l, s) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub iou: f64,
    pub acc: f64,
    /// Both masks empty: Dice and IoU are reported as 1 by convention.
    pub degenerate: bool,
}

pub fn overlap_metrics(c: &ConfusionCounts) -> Overlap {
    let total = c.total();
    assert!(total > 0, "confusion counts over an empty image");
    let acc = (c.tp + c.tn) as f64 / total as f64;
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return Overlap {
            dice: 1.0,
            iou: 1.0,
            acc,
            degenerate: true,
        };
    }
    Overlap {
        dice: 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64,
        iou: c.tp as f64 / union as f64,
        acc,
        degenerate: false,
    }
}

pub type Point = (usize, usize);

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the image, in row-major order.
pub fn boundary(m: &BinaryMask) -> Vec<Point> {
    let mut pts = Vec::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if !m.get(r, c) {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            let interior = m.get_signed(ri - 1, ci)
                && m.get_signed(ri + 1, ci)
                && m.get_signed(ri, ci - 1)
                && m.get_signed(ri, ci + 1);
            if !interior {
                pts.push((r, c));
            }
        }
    }
    pts
}

fn directed_mean_distance(a: &[Point], b: &[Point]) -> f64 {
    let total: f64 = a
        .iter()
        .map(|&(ar, ac)| {
            b.iter()
                .map(|&(br, bc)| {
                    let dr = ar as f64 - br as f64;
                    let dc = ac as f64 - bc as f64;
                    dr * dr + dc * dc
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-point distances, in pixels.
pub fn mhd(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("modified Hausdorff distance of an empty point set"));
    }
    Ok(directed_mean_distance(a, b).max(directed_mean_distance(b, a)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub iou: f64,
    pub acc: f64,
    /// `None` when either mask is empty.
    pub mhd: Option<f64>,
    pub degenerate: bool,
}

impl MetricReport {
    pub fn flags(&self) -> String {
        let mut flags = Vec::new();
        if self.degenerate {
            flags.push("empty-pair");
        }
        if self.mhd.is_none() {
            flags.push("mhd-undefined");
        }
        flags.join("|")
    }
}

pub fn evaluate(label: &BinaryMask, seg: &BinaryMask) -> Result<MetricReport> {
    let o = overlap_metrics(&confusion(label, seg)?);
    let mhd = mhd(&boundary(label), &boundary(seg)).ok();
    Ok(MetricReport {
        dice: o.dice,
        iou: o.iou,
        acc: o.acc,
        mhd,
        degenerate: o.degenerate,
    })
}
