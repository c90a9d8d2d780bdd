//! Dilated 2-D cross-correlation and the 2×2 stride-2 transposed
//! convolution used for learnable upsampling.
//!
//! Both lower to a matrix product per batch item: the convolution through an
//! im2col buffer of shape `(Cin·kh·kw) × (Hout·Wout)`, the transposed
//! convolution directly on the `Cin × (H·W)` input because its taps never
//! overlap.

use crate::autograd::{Function, NodeId, ParamId, ParamStore, Tape};
use crate::error::{invalid, Error, Result};
use crate::nn::init;
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvSpec {
    /// Stride 1 with padding equal to the dilation, which preserves the
    /// spatial size of a 3×3 kernel.
    pub fn same3x3(dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation,
            dilation,
        }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (ho, wo) = (self.ho, self.wo);
        let ConvSpec {
            stride,
            padding,
            dilation,
        } = self.spec;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * ho * wo;
                    for oy in 0..ho {
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let (ho, wo) = (self.ho, self.wo);
        let ConvSpec {
            stride,
            padding,
            dilation,
        } = self.spec;
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((ci * self.kh + ki) * self.kw + kj) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dFn {
    geom: Geometry,
}

impl<T: Scalar> Function<T> for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let n = x.shape()[0];
        let cout = out.shape()[1];
        let geo = &self.geom;
        let k = geo.cin * geo.kh * geo.kw;
        let hwo = geo.ho * geo.wo;
        let in_len = geo.cin * geo.h * geo.w;

        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut gb = needs[2].then(|| vec![T::zero(); cout]);
        let mut cols = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * hwo]
        };
        let mut gcols = vec![T::zero(); if geo.is_pointwise() { 0 } else { k * hwo }];

        for b in 0..n {
            let xb = &x.data()[b * in_len..(b + 1) * in_len];
            let gb_out = &g[b * cout * hwo..(b + 1) * cout * hwo];
            if let Some(gbias) = gb.as_mut() {
                for (co, acc) in gbias.iter_mut().enumerate() {
                    *acc = *acc + gb_out[co * hwo..(co + 1) * hwo].iter().copied().sum::<T>();
                }
            }
            if let Some(gw) = gw.as_mut() {
                let cols_b: &[T] = if geo.is_pointwise() {
                    xb
                } else {
                    geo.im2col(xb, &mut cols);
                    &cols
                };
                // gW (cout×k) += gOut (cout×hwo) · colsᵀ (hwo×k)
                T::gemm(
                    cout,
                    hwo,
                    k,
                    T::one(),
                    (gb_out, hwo as isize, 1),
                    (cols_b, 1, hwo as isize),
                    T::one(),
                    (gw, k as isize, 1),
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[b * in_len..(b + 1) * in_len];
                // gCols (k×hwo) = Wᵀ (k×cout) · gOut (cout×hwo)
                if geo.is_pointwise() {
                    T::gemm(
                        k,
                        cout,
                        hwo,
                        T::one(),
                        (w.data(), 1, k as isize),
                        (gb_out, hwo as isize, 1),
                        T::zero(),
                        (gxb, hwo as isize, 1),
                    );
                } else {
                    T::gemm(
                        k,
                        cout,
                        hwo,
                        T::one(),
                        (w.data(), 1, k as isize),
                        (gb_out, hwo as isize, 1),
                        T::zero(),
                        (&mut gcols, hwo as isize, 1),
                    );
                    geo.col2im(&gcols, gxb);
                }
            }
        }
        vec![gx, gw, gb]
    }
}

/// Dilated cross-correlation of `x` (`N×Cin×H×W`) with `weight`
/// (`Cout×Cin×kh×kw`) plus a per-output-channel `bias`.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    spec: ConvSpec,
) -> Result<NodeId> {
    const OP: &str = "conv2d";
    let (n, cin, h, w) = tape.value(x).dims4(OP)?;
    let (cout, wcin, kh, kw) = tape.value(weight).dims4(OP)?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: OP,
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(weight).to_vec(),
        });
    }
    if tape.shape(bias) != [cout] {
        return Err(Error::ShapeMismatch {
            op: OP,
            lhs: vec![cout],
            rhs: tape.shape(bias).to_vec(),
        });
    }
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(invalid(OP, "stride and dilation must be positive"));
    }
    let (Some(ho), Some(wo)) = (spec.output_len(h, kh), spec.output_len(w, kw)) else {
        return Err(invalid(OP, format!("output size < 1 for input {h}×{w}, kernel {kh}×{kw}, {spec:?}")));
    };
    let geom = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        spec,
    };
    let k = cin * kh * kw;
    let hwo = ho * wo;
    let in_len = cin * h * w;
    let xs = tape.value(x).data();
    let ws = tape.value(weight).data();
    let bs = tape.value(bias).data();
    let mut out = vec![T::zero(); n * cout * hwo];
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hwo]
    };
    for b in 0..n {
        let xb = &xs[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * cout * hwo..(b + 1) * cout * hwo];
        for (co, &bv) in bs.iter().enumerate() {
            ob[co * hwo..(co + 1) * hwo].fill(bv);
        }
        let cols_b: &[T] = if geom.is_pointwise() {
            xb
        } else {
            geom.im2col(xb, &mut cols);
            &cols
        };
        T::gemm(
            cout,
            k,
            hwo,
            T::one(),
            (ws, k as isize, 1),
            (cols_b, hwo as isize, 1),
            T::one(),
            (ob, hwo as isize, 1),
        );
    }
    let value = Tensor::from_parts(vec![n, cout, ho, wo], out);
    Ok(tape.record(Conv2dFn { geom }, &[x, weight, bias], value))
}

struct Upsample2xFn;

impl<T: Scalar> Function<T> for Upsample2xFn {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let s = x.shape();
        let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
        let cout = out.shape()[1];
        let hw = h * wd;
        let k4 = cout * 4;
        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut gb = needs[2].then(|| vec![T::zero(); cout]);
        let mut gathered = vec![T::zero(); k4 * hw];
        for b in 0..n {
            let gout = &g[b * cout * 4 * hw..(b + 1) * cout * 4 * hw];
            gather_blocks(gout, cout, h, wd, &mut gathered);
            if let Some(gb) = gb.as_mut() {
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc = *acc + gout[co * 4 * hw..(co + 1) * 4 * hw].iter().copied().sum::<T>();
                }
            }
            let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
            if let Some(gw) = gw.as_mut() {
                // gW (cin×k4) += X (cin×hw) · gYᵀ (hw×k4)
                T::gemm(
                    cin,
                    hw,
                    k4,
                    T::one(),
                    (xb, hw as isize, 1),
                    (&gathered, 1, hw as isize),
                    T::one(),
                    (gw, k4 as isize, 1),
                );
            }
            if let Some(gx) = gx.as_mut() {
                // gX (cin×hw) = W (cin×k4) · gY (k4×hw)
                T::gemm(
                    cin,
                    k4,
                    hw,
                    T::one(),
                    (w.data(), k4 as isize, 1),
                    (&gathered, hw as isize, 1),
                    T::zero(),
                    (&mut gx[b * cin * hw..(b + 1) * cin * hw], hw as isize, 1),
                );
            }
        }
        vec![gx, gw, gb]
    }
}

/// `out[co, 2i+a, 2j+b]` → `gathered[(co·4 + a·2 + b), i·W + j]`
fn gather_blocks<T: Scalar>(out: &[T], cout: usize, h: usize, w: usize, gathered: &mut [T]) {
    let hw = h * w;
    let w2 = 2 * w;
    for co in 0..cout {
        let plane = &out[co * 4 * hw..(co + 1) * 4 * hw];
        for a in 0..2 {
            for bb in 0..2 {
                let row = &mut gathered[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        row[i * w + j] = plane[(2 * i + a) * w2 + 2 * j + bb];
                    }
                }
            }
        }
    }
}

/// Learnable 2× upsampling: transposed convolution with a 2×2 kernel and
/// stride 2. `weight` is `Cin×Cout×2×2`, `bias` is `[Cout]`.
pub fn upsample2x<T: Scalar>(tape: &mut Tape<T>, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    const OP: &str = "upsample2x";
    let (n, cin, h, w) = tape.value(x).dims4(OP)?;
    let (wcin, cout, kh, kw) = tape.value(weight).dims4(OP)?;
    if wcin != cin || (kh, kw) != (2, 2) {
        return Err(Error::ShapeMismatch {
            op: OP,
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(weight).to_vec(),
        });
    }
    if tape.shape(bias) != [cout] {
        return Err(Error::ShapeMismatch {
            op: OP,
            lhs: vec![cout],
            rhs: tape.shape(bias).to_vec(),
        });
    }
    let hw = h * w;
    let k4 = cout * 4;
    let xs = tape.value(x).data();
    let ws = tape.value(weight).data();
    let bs = tape.value(bias).data();
    let mut y = vec![T::zero(); k4 * hw];
    let mut out = vec![T::zero(); n * cout * 4 * hw];
    let w2 = 2 * w;
    for b in 0..n {
        // Y (k4×hw) = Wᵀ (k4×cin) · X (cin×hw)
        T::gemm(
            k4,
            cin,
            hw,
            T::one(),
            (ws, 1, k4 as isize),
            (&xs[b * cin * hw..(b + 1) * cin * hw], hw as isize, 1),
            T::zero(),
            (&mut y, hw as isize, 1),
        );
        let ob = &mut out[b * cout * 4 * hw..(b + 1) * cout * 4 * hw];
        for co in 0..cout {
            let plane = &mut ob[co * 4 * hw..(co + 1) * 4 * hw];
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &y[(co * 4 + a * 2 + bb) * hw..(co * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            plane[(2 * i + a) * w2 + 2 * j + bb] = row[i * w + j] + bs[co];
                        }
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(vec![n, cout, 2 * h, 2 * w], out);
    Ok(tape.record(Upsample2xFn, &[x, weight, bias], value))
}

/// Convolution layer with parameters held in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let shape = [cout, cin, kernel, kernel];
        let weight = store.add(format!("{name}.weight"), init::he_normal(&shape, cin * kernel * kernel, rng)?, true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout])?, true)?;
        Ok(Self { weight, bias, spec })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        conv2d(tape, x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Upsample2x {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample2x {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init::he_normal(&[cin, cout, 2, 2], cin, rng)?, true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout])?, true)?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        upsample2x(tape, x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_conv(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = conv2d(&mut tape, x, w, b, spec).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_weight_gives_bias() {
        let x = Tensor::from_fn(&[2, 3, 5, 5], |i| i as f64 * 0.1).unwrap();
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        let b = Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = run_conv(x, w, b, ConvSpec::same3x3(1));
        assert_eq!(y.shape(), &[2, 4, 5, 5]);
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, [1.0, -2.0, 0.5, 3.0][(i / 25) % 4]);
        }
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(&[1, 1, 6, 7], |i| (i as f64).sqrt()).unwrap();
        let mut w = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        w.data_mut()[4] = 1.0;
        let y = run_conv(x.clone(), w, Tensor::zeros(&[1]).unwrap(), ConvSpec::same3x3(1));
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_impulse_hits_nine_positions() {
        let mut x = Tensor::zeros(&[1, 1, 5, 5]).unwrap();
        x.data_mut()[12] = 1.0;
        let y = run_conv(
            x,
            Tensor::ones(&[1, 1, 3, 3]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            ConvSpec::same3x3(2),
        );
        for r in 0..5 {
            for c in 0..5 {
                let expect = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(y.data()[r * 5 + c], expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]).unwrap());
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]).unwrap());
        assert!(conv2d(&mut tape, x, w, b, ConvSpec::default()).is_err());
        let x = tape.constant(Tensor::zeros(&[1, 3, 2, 2]).unwrap());
        let err = conv2d(&mut tape, x, w, b, ConvSpec::default()).unwrap_err();
        assert!(err.to_string().contains("output size"), "{err}");
    }

    fn run_up(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = upsample2x(&mut tape, x, w, b).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn upsample_single_pixel_with_unit_kernel() {
        let y = run_up(
            Tensor::ones(&[1, 1, 1, 1]).unwrap(),
            Tensor::ones(&[1, 1, 2, 2]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        );
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);
    }

    #[test]
    fn upsample_scatters_disjoint_blocks() {
        let y = run_up(
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::ones(&[1, 1, 2, 2]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        );
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn upsample_zero_weight_gives_bias() {
        let y = run_up(
            Tensor::from_fn(&[2, 3, 3, 2], |i| i as f64).unwrap(),
            Tensor::zeros(&[3, 2, 2, 2]).unwrap(),
            Tensor::new(&[2], vec![0.25, -1.0]).unwrap(),
        );
        assert_eq!(y.shape(), &[2, 2, 6, 4]);
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, if (i / 24) % 2 == 0 { 0.25 } else { -1.0 });
        }
    }
}
