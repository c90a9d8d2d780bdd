//! Naive reference implementations shared by the oracle tests and the
//! acceptance runner.
#![allow(dead_code)]

use panet::autograd::Tape;
use panet::metrics::{boundary, confusion, evaluate, mhd, overlap_metrics, ConfusionCounts};
use panet::nn::{conv2d, ConvSpec};
use panet::postprocess::label_components;
use panet::rng::SplitMix64;
use panet::{BinaryMask, Tensor};

pub struct ConvCase {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub spec: ConvSpec,
}

pub fn random_case(rng: &mut SplitMix64) -> ConvCase {
    let k = [1, 3, 3, 5][rng.below(4)];
    let dilation = 1 + rng.below(3);
    let stride = 1 + rng.below(2);
    let padding = rng.below(dilation * (k / 2) + 2);
    let extent = dilation * (k - 1) + 1;
    ConvCase {
        n: 1 + rng.below(2),
        cin: 1 + rng.below(4),
        cout: 1 + rng.below(4),
        h: extent + rng.below(6),
        w: extent + rng.below(6),
        k,
        spec: ConvSpec {
            stride,
            padding,
            dilation,
        },
    }
}

/// Seven nested loops straight from the definition of dilated
/// cross-correlation with zero padding.
pub fn direct_conv(x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64], spec: ConvSpec) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let ws = wt.shape();
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let ho = (h + 2 * spec.padding - spec.dilation * (kh - 1) - 1) / spec.stride + 1;
    let wo = (w + 2 * spec.padding - spec.dilation * (kw - 1) - 1) / spec.stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for a in 0..kh {
                            for e in 0..kw {
                                let r = (i * spec.stride + a * spec.dilation) as isize - spec.padding as isize;
                                let q = (j * spec.stride + e * spec.dilation) as isize - spec.padding as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + c) * h + r as usize) * w + q as usize];
                                let wv = wt.data()[((o * cin + c) * kh + a) * kw + e];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (vec![n, cout, ho, wo], out)
}

pub fn run_conv(case: &ConvCase, draw: &mut dyn FnMut() -> f64) -> (Tensor<f64>, Vec<usize>, Vec<f64>) {
    let x = Tensor::from_fn(&[case.n, case.cin, case.h, case.w], |_| draw()).unwrap();
    let wt = Tensor::from_fn(&[case.cout, case.cin, case.k, case.k], |_| draw()).unwrap();
    let b: Vec<f64> = (0..case.cout).map(|_| draw()).collect();
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let wn = tape.constant(wt.clone());
    let bn = tape.constant(Tensor::new(&[case.cout], b.clone()).unwrap());
    let y = conv2d(&mut tape, xn, wn, bn, case.spec).unwrap();
    let (shape, want) = direct_conv(&x, &wt, &b, case.spec);
    (tape.value(y).clone(), shape, want)
}

pub fn random_mask(rng: &mut SplitMix64, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.next_f64() < density)
}

/// Recursive depth-first flood fill; labels in row-major discovery order.
pub fn flood_labels(m: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    fn fill(m: &BinaryMask, labels: &mut [u32], r: usize, c: usize, label: u32, area: &mut usize) {
        let w = m.width();
        if !m.get(r, c) || labels[r * w + c] != 0 {
            return;
        }
        labels[r * w + c] = label;
        *area += 1;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < m.height() && (nc as usize) < w {
                    fill(m, labels, nr as usize, nc as usize, label, area);
                }
            }
        }
    }
    let (h, w) = m.dims();
    let mut labels = vec![0; h * w];
    let mut areas = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if m.get(r, c) && labels[r * w + c] == 0 {
                let mut area = 0;
                fill(m, &mut labels, r, c, areas.len() as u32 + 1, &mut area);
                areas.push(area);
            }
        }
    }
    (labels, areas)
}

pub fn brute_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = m.dims();
    let on = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && m.get(r as usize, c as usize);
    let mut pts = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            if m.get(r, c) && !(on(ri - 1, ci) && on(ri + 1, ci) && on(ri, ci - 1) && on(ri, ci + 1)) {
                pts.push((r, c));
            }
        }
    }
    pts
}

pub fn brute_mhd(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let directed = |x: &[(usize, usize)], y: &[(usize, usize)]| {
        let mut total = 0.0;
        for &(xr, xc) in x {
            let mut best = f64::INFINITY;
            for &(yr, yc) in y {
                let d2 = (xr as i64 - yr as i64).pow(2) + (xc as i64 - yc as i64).pow(2);
                best = best.min((d2 as f64).sqrt());
            }
            total += best;
        }
        total / x.len() as f64
    };
    directed(a, b).max(directed(b, a))
}

/// 50 random conv cases on small-integer data must match bit for bit.
pub fn conv_exact_cases(cases: u64) -> Result<(), String> {
    let mut rng = SplitMix64::new(2024);
    for case_no in 0..cases {
        let case = random_case(&mut rng);
        let mut vals = SplitMix64::new(case_no);
        let (got, shape, want) = run_conv(&case, &mut || vals.below(9) as f64 - 4.0);
        if got.shape() != &shape[..] || got.data() != &want[..] {
            return Err(format!("conv case {case_no} differs"));
        }
    }
    Ok(())
}

/// Random real-valued conv cases within 1e-12 relative error.
pub fn conv_real_cases(cases: u64) -> Result<(), String> {
    let mut rng = SplitMix64::new(99);
    for case_no in 0..cases {
        let case = random_case(&mut rng);
        let mut vals = SplitMix64::new(1000 + case_no);
        let (got, _, want) = run_conv(&case, &mut || vals.normal());
        for (g, w) in got.data().iter().zip(&want) {
            if (g - w).abs() > 1e-12 * w.abs().max(1.0) {
                return Err(format!("conv case {case_no}: {g} vs {w}"));
            }
        }
    }
    Ok(())
}

pub fn labelling_cases(masks: usize) -> Result<(), String> {
    let mut rng = SplitMix64::new(7);
    for i in 0..masks {
        let density = [0.2, 0.4, 0.5, 0.6][i % 4];
        let m = random_mask(&mut rng, 32, 32, density);
        let lc = label_components(&m);
        let (labels, areas) = flood_labels(&m);
        if lc.labels != labels || lc.areas != areas {
            return Err(format!("labelling of mask {i} differs"));
        }
    }
    Ok(())
}

pub fn mhd_cases(pairs: usize) -> Result<(), String> {
    let mut rng = SplitMix64::new(31);
    let mut compared = 0;
    while compared < pairs {
        let a = random_mask(&mut rng, 24, 24, 0.3);
        let b = random_mask(&mut rng, 24, 24, 0.3);
        let (ba, bb) = (brute_boundary(&a), brute_boundary(&b));
        if ba.is_empty() || bb.is_empty() {
            continue;
        }
        if boundary(&a) != ba {
            return Err(format!("boundary of pair {compared} differs"));
        }
        let got = mhd(&boundary(&a), &boundary(&b)).map_err(|e| e.to_string())?;
        let want = brute_mhd(&ba, &bb);
        if got != want {
            return Err(format!("mhd of pair {compared}: {got} vs {want}"));
        }
        compared += 1;
    }
    Ok(())
}

/// Panics on the first hand-counted case the library gets wrong.
pub fn hand_counted_cases() {
    // TP = 2, FP = 2, FN = 2, TN = 10 on a 4×4 grid.
    let label = BinaryMask::from_fn(4, 4, |r, c| r == 0 && c < 4);
    let seg = BinaryMask::from_fn(4, 4, |r, c| (r == 0 && c < 2) || (r == 1 && c < 2));
    let c = confusion(&label, &seg).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 2, tn: 10, fp: 2, fn_: 2 });
    let o = overlap_metrics(&c);
    assert_eq!((o.dice, o.iou, o.acc), (0.5, 1.0 / 3.0, 0.75));

    let perfect = evaluate(&label, &label).unwrap();
    assert_eq!((perfect.dice, perfect.iou, perfect.acc, perfect.mhd), (1.0, 1.0, 1.0, Some(0.0)));

    let disjoint = overlap_metrics(&ConfusionCounts { tp: 0, tn: 12, fp: 2, fn_: 2 });
    assert_eq!((disjoint.dice, disjoint.iou, disjoint.acc), (0.0, 0.0, 0.75));

    let empty = BinaryMask::zeros(4, 4);
    let both_empty = evaluate(&empty, &empty).unwrap();
    assert!(both_empty.degenerate);
    assert_eq!(both_empty.mhd, None);
}
