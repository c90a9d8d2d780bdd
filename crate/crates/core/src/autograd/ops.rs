//! Elementwise arithmetic, reductions and channel plumbing on the tape.

use crate::autograd::tape::{Function, NodeId, Tape};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Scalar> Function<T> for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let ga = needs[0].then(|| match self {
            Binary::Add | Binary::Sub => g.to_vec(),
            Binary::Mul => g.iter().zip(b).map(|(&g, &b)| g * b).collect(),
            Binary::Div => g.iter().zip(b).map(|(&g, &b)| g / b).collect(),
        });
        let gb = needs[1].then(|| match self {
            Binary::Add => g.to_vec(),
            Binary::Sub => g.iter().map(|&g| -g).collect(),
            Binary::Mul => g.iter().zip(a).map(|(&g, &a)| g * a).collect(),
            Binary::Div => g
                .iter()
                .zip(a)
                .zip(b)
                .map(|((&g, &a), &b)| -g * a / (b * b))
                .collect(),
        });
        vec![ga, gb]
    }
}

struct AddScalar;

impl<T: Scalar> Function<T> for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

struct Scale<T>(T);

impl<T: Scalar> Function<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&g| g * self.0).collect())]
    }
}

struct Ln;

impl<T: Scalar> Function<T> for Ln {
    fn name(&self) -> &'static str {
        "ln"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter().zip(inputs[0].data()).map(|(&g, &x)| g / x).collect(),
        )]
    }
}

struct Clamp<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Function<T> for Clamp<T> {
    fn name(&self) -> &'static str {
        "clamp"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x >= self.lo && x <= self.hi { g } else { T::zero() })
                .collect(),
        )]
    }
}

enum Reduce {
    Sum,
    Mean,
    PerSample,
}

impl<T: Scalar> Function<T> for Reduce {
    fn name(&self) -> &'static str {
        match self {
            Reduce::Sum => "sum",
            Reduce::Mean => "mean",
            Reduce::PerSample => "sum_per_sample",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].len();
        let grad = match self {
            Reduce::Sum => vec![g[0]; n],
            Reduce::Mean => vec![g[0] / T::from_usize(n).unwrap(); n],
            Reduce::PerSample => {
                let per = n / g.len();
                g.iter().flat_map(|&v| std::iter::repeat_n(v, per)).collect()
            }
        };
        vec![Some(grad)]
    }
}

struct SelectChannel {
    channel: usize,
}

impl<T: Scalar> Function<T> for SelectChannel {
    fn name(&self) -> &'static str {
        "select_channel"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut grad = vec![T::zero(); inputs[0].len()];
        for b in 0..n {
            let dst = (b * c + self.channel) * hw;
            grad[dst..dst + hw].copy_from_slice(&g[b * hw..(b + 1) * hw]);
        }
        vec![Some(grad)]
    }
}

struct ConcatChannels;

impl<T: Scalar> Function<T> for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = out.shape();
        let (n, c_total, hw) = (s[0], s[1], s[2] * s[3]);
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let c = x.shape()[1];
                let grad = need.then(|| {
                    let mut grad = Vec::with_capacity(x.len());
                    for b in 0..n {
                        let start = (b * c_total + offset) * hw;
                        grad.extend_from_slice(&g[start..start + c * hw]);
                    }
                    grad
                });
                offset += c;
                grad
            })
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, op: Binary, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self, Function::<T>::name(&op), a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match op {
            Binary::Add => x.iter().zip(y).map(|(&a, &b)| a + b).collect(),
            Binary::Sub => x.iter().zip(y).map(|(&a, &b)| a - b).collect(),
            Binary::Mul => x.iter().zip(y).map(|(&a, &b)| a * b).collect(),
            Binary::Div => x.iter().zip(y).map(|(&a, &b)| a / b).collect(),
        };
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.record(op, &[a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Div, a, b)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> NodeId {
        let value = self.value(a).map(|v| v + s);
        self.record(AddScalar, &[a], value)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let value = self.value(a).map(|v| v * s);
        self.record(Scale(s), &[a], value)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.ln());
        self.record(Ln, &[a], value)
    }

    /// Clamps into `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        let value = self.value(a).map(|v| v.max(lo).min(hi));
        self.record(Clamp { lo, hi }, &[a], value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(Reduce::Sum, &[a], value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / T::from_usize(t.len()).unwrap());
        self.record(Reduce::Mean, &[a], value)
    }

    /// Sums everything except the leading axis: `N×…` → `[N]`.
    pub fn sum_per_sample(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let n = t.shape()[0];
        let per = t.len() / n;
        let data = t.data().chunks(per).map(|c| c.iter().copied().sum()).collect();
        let value = Tensor::from_parts(vec![n], data);
        self.record(Reduce::PerSample, &[a], value)
    }

    /// Picks one channel of an NCHW tensor as `N×1×H×W`.
    pub fn select_channel(&mut self, a: NodeId, channel: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4("select_channel")?;
        if channel >= c {
            return Err(invalid("select_channel", format!("channel {channel} of {c}")));
        }
        let hw = h * w;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * hw);
        for b in 0..n {
            let start = (b * c + channel) * hw;
            data.extend_from_slice(&src[start..start + hw]);
        }
        let value = Tensor::from_parts(vec![n, 1, h, w], data);
        Ok(self.record(SelectChannel { channel }, &[a], value))
    }

    /// Concatenates NCHW tensors along the channel axis in argument order.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| invalid("concat_channels", "empty input list"))?;
        let (n, _, h, w) = self.value(first).dims4("concat_channels")?;
        let mut c_total = 0;
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4("concat_channels")?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            c_total += xc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for &x in xs {
                let t = self.value(x);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::from_parts(vec![n, c_total, h, w], data);
        Ok(self.record(ConcatChannels, xs, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(tape: &mut Tape<f64>, shape: &[usize], f: impl Fn(usize) -> f64) -> NodeId {
        tape.variable(Tensor::from_fn(shape, f).unwrap())
    }

    #[test]
    fn concat_shapes_and_identity() {
        let mut tape = Tape::<f64>::new();
        let a = var(&mut tape, &[2, 2, 3, 3], |i| i as f64);
        let b = var(&mut tape, &[2, 3, 3, 3], |i| -(i as f64));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 5, 3, 3]);
        let single = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
    }

    #[test]
    fn concat_backward_splits_by_channel_range() {
        let mut tape = Tape::<f64>::new();
        let a = var(&mut tape, &[2, 1, 2, 2], |_| 0.0);
        let b = var(&mut tape, &[2, 2, 2, 2], |_| 0.0);
        let c = tape.concat_channels(&[a, b]).unwrap();
        let weights = tape.constant(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64).unwrap());
        let p = tape.mul(c, weights).unwrap();
        let loss = tape.sum(p);
        let g = tape.gradients(loss).unwrap();
        // Sample 0 owns indices 0..12 of the concatenated tensor, sample 1 12..24.
        assert_eq!(g.get(a).unwrap(), &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
        let gb = g.get(b).unwrap();
        assert_eq!(&gb[..8], &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert_eq!(&gb[8..], &[16.0, 17.0, 18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = var(&mut tape, &[1, 1, 2, 2], |_| 0.0);
        let b = var(&mut tape, &[1, 1, 3, 2], |_| 0.0);
        assert!(tape.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn div_and_ln_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = var(&mut tape, &[2], |i| 1.0 + i as f64);
        let b = var(&mut tape, &[2], |i| 2.0 + i as f64);
        let q = tape.div(a, b).unwrap();
        let l = tape.ln(q);
        let loss = tape.sum(l);
        let g = tape.gradients(loss).unwrap();
        // d/da ln(a/b) = 1/a, d/db = -1/b
        assert_eq!(g.get(a).unwrap(), &[1.0, 0.5]);
        assert_eq!(g.get(b).unwrap(), &[-0.5, -1.0 / 3.0]);
    }

    #[test]
    fn select_channel_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let x = var(&mut tape, &[2, 2, 1, 2], |i| i as f64);
        let fg = tape.select_channel(x, 1).unwrap();
        assert_eq!(tape.value(fg).data(), &[2.0, 3.0, 6.0, 7.0]);
        let loss = tape.sum(fg);
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
