use crate::autograd::{Function, NodeId, Tape};
use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax across the channel axis of an NCHW tensor, per pixel.
    SoftmaxChannels,
}

struct Relu;

impl<T: Scalar> Function<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
        )]
    }
}

struct Sigmoid;

impl<T: Scalar> Function<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            g.iter()
                .zip(out.data())
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect(),
        )]
    }
}

struct SoftmaxChannels;

impl<T: Scalar> Function<T> for SoftmaxChannels {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = out.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let y = out.data();
        let mut gx = vec![T::zero(); y.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut dot = T::zero();
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    dot = dot + g[i] * y[i];
                }
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    gx[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.record(Relu, &[x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(sigmoid_scalar);
        self.record(Sigmoid, &[x], value)
    }

    /// Per-pixel softmax over the channel axis, with max subtraction.
    pub fn softmax_channels(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4("softmax_channels")?;
        if c < 2 {
            return Err(invalid("softmax_channels", format!("need at least 2 channels, got {c}")));
        }
        let hw = h * w;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut max = T::neg_infinity();
                for ch in 0..c {
                    max = max.max(xs[base + ch * hw + p]);
                }
                let mut total = T::zero();
                for ch in 0..c {
                    let e = (xs[base + ch * hw + p] - max).exp();
                    out[base + ch * hw + p] = e;
                    total = total + e;
                }
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    out[i] = out[i] / total;
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.record(SoftmaxChannels, &[x], value))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId> {
        match kind {
            Activation::Relu => Ok(self.relu(x)),
            Activation::Sigmoid => Ok(self.sigmoid(x)),
            Activation::SoftmaxChannels => self.softmax_channels(x),
        }
    }
}
