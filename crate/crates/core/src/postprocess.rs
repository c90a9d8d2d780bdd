//! Max-contour morphological refinement of a predicted plaque mask.
//!
//! The mask is eroded to cut thin bridges and drop speckle, its 8-connected
//! components are ranked by pixel area, and at most the two largest are kept:
//! both when the largest is no more than `area_ratio` times the second,
//! otherwise only the largest. Kept components are regrown inside the
//! original mask (geodesic reconstruction) and their holes filled.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mask::{BinaryMask, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuringElement {
    side: usize,
    kernel: Vec<bool>,
    pub iterations: usize,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(3, 1).expect("3×3 square is valid")
    }
}

impl StructuringElement {
    pub fn square(side: usize, iterations: usize) -> Result<Self> {
        Self::new(side, vec![true; side * side], iterations)
    }

    pub fn new(side: usize, kernel: Vec<bool>, iterations: usize) -> Result<Self> {
        if side % 2 == 0 || kernel.len() != side * side {
            return Err(invalid("structuring_element", format!("kernel side must be odd, got {side}")));
        }
        if !kernel.iter().any(|&k| k) {
            return Err(invalid("structuring_element", "kernel has no active entry"));
        }
        if iterations == 0 {
            return Err(invalid("structuring_element", "iterations must be positive"));
        }
        Ok(Self {
            side,
            kernel,
            iterations,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub area_ratio: f64,
    pub element: StructuringElement,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            area_ratio: 5.0,
            element: StructuringElement::default(),
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.area_ratio.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater) {
            return Err(invalid("postprocess", format!("area_ratio must exceed 1, got {}", self.area_ratio)));
        }
        Ok(())
    }
}

/// A pixel survives iff every active kernel tap centred on it lands on
/// foreground; taps outside the image count as background.
pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = m.dims();
    let half = (se.side / 2) as isize;
    let taps: Vec<(isize, isize)> = (0..se.side)
        .flat_map(|i| (0..se.side).map(move |j| (i, j)))
        .filter(|&(i, j)| se.kernel[i * se.side + j])
        .map(|(i, j)| (i as isize - half, j as isize - half))
        .collect();
    let mut cur = m.clone();
    for _ in 0..se.iterations {
        let prev = cur.clone();
        cur = BinaryMask::from_fn(h, w, |r, c| {
            taps.iter()
                .all(|&(dr, dc)| prev.get_signed(r as isize + dr, c as isize + dc))
        });
    }
    cur.provenance = m.provenance;
    cur
}

const NEIGHBOURS_8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
const NEIGHBOURS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledComponents {
    pub height: usize,
    pub width: usize,
    /// 0 for background, `1..=num` for components.
    pub labels: Vec<u32>,
    /// `areas[k]` is the pixel count of label `k + 1`.
    pub areas: Vec<usize>,
}

impl LabeledComponents {
    pub fn num(&self) -> usize {
        self.areas.len()
    }

    /// `(label, area)` sorted by descending area; equal areas keep the lower
    /// label first.
    pub fn ranked(&self) -> Vec<(u32, usize)> {
        let mut r: Vec<(u32, usize)> = self
            .areas
            .iter()
            .enumerate()
            .map(|(i, &a)| (i as u32 + 1, a))
            .collect();
        r.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }

    pub fn mask_of(&self, labels: &[u32]) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| {
            let l = self.labels[r * self.width + c];
            l != 0 && labels.contains(&l)
        })
    }
}

/// 8-connected component labelling; labels follow the row-major order in
/// which each component is first met.
pub fn label_components(m: &BinaryMask) -> LabeledComponents {
    let (h, w) = m.dims();
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if m.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut area = 0;
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for (dr, dc) in NEIGHBOURS_8 {
                let (nr, nc) = (r + dr, c + dc);
                if m.get_signed(nr, nc) {
                    let q = nr as usize * w + nc as usize;
                    if labels[q] == 0 {
                        labels[q] = label;
                        queue.push_back(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    LabeledComponents {
        height: h,
        width: w,
        labels,
        areas,
    }
}

/// Ranks (0 = largest) retained from areas already sorted in descending order.
pub fn retained_ranks(sorted_areas: &[usize], area_ratio: f64) -> Vec<usize> {
    match sorted_areas {
        [] => vec![],
        [_] => vec![0],
        [c1, c2, ..] => {
            if *c1 as f64 <= area_ratio * *c2 as f64 {
                vec![0, 1]
            } else {
                vec![0]
            }
        }
    }
}

pub fn select_components(lc: &LabeledComponents, cfg: &PostprocessConfig) -> Vec<u32> {
    let ranked = lc.ranked();
    let areas: Vec<usize> = ranked.iter().map(|&(_, a)| a).collect();
    retained_ranks(&areas, cfg.area_ratio)
        .into_iter()
        .map(|i| ranked[i].0)
        .collect()
}

/// Background pixels with no 4-connected background path to the image
/// border become foreground.
pub fn fill_holes(m: &BinaryMask) -> BinaryMask {
    let (h, w) = m.dims();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if (r == 0 || c == 0 || r == h - 1 || c == w - 1) && !m.get(r, c) {
                outside[r * w + c] = true;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for (dr, dc) in NEIGHBOURS_4 {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if !m.get(nr, nc) && !outside[nr * w + nc] {
                outside[nr * w + nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    let mut out = BinaryMask::from_fn(h, w, |r, c| !outside[r * w + c]);
    out.provenance = m.provenance;
    out
}

/// Grows `seeds` through 8-connected foreground of `bound`.
pub fn reconstruct(seeds: &BinaryMask, bound: &BinaryMask) -> BinaryMask {
    let (h, w) = bound.dims();
    let mut out = BinaryMask::zeros(h, w);
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if seeds.get(r, c) && bound.get(r, c) {
                out.set(r, c, true);
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for (dr, dc) in NEIGHBOURS_8 {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if bound.get_signed(nr, nc) && !out.get_signed(nr, nc) {
                out.set(nr as usize, nc as usize, true);
                queue.push_back((nr as usize, nc as usize));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostprocessOutcome {
    pub mask: BinaryMask,
    /// Components found after erosion.
    pub num_components: usize,
    /// Pixel areas (after erosion) of the retained components, largest first.
    pub retained_areas: Vec<usize>,
    /// Erosion removed everything; the output is empty.
    pub empty_after_erosion: bool,
}

pub fn postprocess(m: &BinaryMask, cfg: &PostprocessConfig) -> PostprocessOutcome {
    let (h, w) = m.dims();
    let eroded = erode(m, &cfg.element);
    let lc = label_components(&eroded);
    if lc.num() == 0 {
        return PostprocessOutcome {
            mask: BinaryMask::zeros(h, w).with_provenance(Provenance::PostProcessed),
            num_components: 0,
            retained_areas: vec![],
            empty_after_erosion: true,
        };
    }
    let keep = select_components(&lc, cfg);
    let seeds = lc.mask_of(&keep);
    let grown = reconstruct(&seeds, m);
    PostprocessOutcome {
        mask: fill_holes(&grown).with_provenance(Provenance::PostProcessed),
        num_components: lc.num(),
        retained_areas: keep.iter().map(|&l| lc.areas[l as usize - 1]).collect(),
        empty_after_erosion: false,
    }
}
