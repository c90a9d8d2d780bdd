//! Squeeze-excitation channel attention.

use crate::autograd::{Function, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::init;
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

struct LinearFn;

impl<T: Scalar> Function<T> for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, cin) = (x.shape()[0], x.shape()[1]);
        let cout = out.shape()[1];
        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            // gX (n×cin) = G (n×cout) · W (cout×cin)
            T::gemm(n, cout, cin, T::one(), (g, cout as isize, 1), (w.data(), cin as isize, 1), T::zero(), (&mut gx, cin as isize, 1));
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); w.len()];
            // gW (cout×cin) = Gᵀ (cout×n) · X (n×cin)
            T::gemm(cout, n, cin, T::one(), (g, 1, cout as isize), (x.data(), cin as isize, 1), T::zero(), (&mut gw, cin as isize, 1));
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = vec![T::zero(); cout];
            for row in g.chunks(cout) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// Dense layer `x·Wᵀ + b` for `x: N×Cin`, `W: Cout×Cin`, `b: [Cout]`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(weight).to_vec();
    let (n, cin, cout) = match (xs.as_slice(), ws.as_slice()) {
        ([n, cin], [cout, wcin]) if cin == wcin => (*n, *cin, *cout),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: ws,
            })
        }
    };
    if tape.shape(bias) != [cout] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: vec![cout],
            rhs: tape.shape(bias).to_vec(),
        });
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| tape.value(bias).data().iter().copied()).collect();
    T::gemm(
        n,
        cin,
        cout,
        T::one(),
        (tape.value(x).data(), cin as isize, 1),
        (tape.value(weight).data(), 1, cin as isize),
        T::one(),
        (&mut out, cout as isize, 1),
    );
    let value = Tensor::from_parts(vec![n, cout], out);
    Ok(tape.record(LinearFn, &[x, weight, bias], value))
}

struct ChannelGateFn;

impl<T: Scalar> Function<T> for ChannelGateFn {
    fn name(&self) -> &'static str {
        "channel_gate"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, gate) = (inputs[0], inputs[1]);
        let hw = x.shape()[2] * x.shape()[3];
        let gx = needs[0].then(|| {
            g.chunks(hw)
                .zip(gate.data())
                .flat_map(|(gp, &s)| gp.iter().map(move |&v| v * s))
                .collect()
        });
        let gg = needs[1].then(|| {
            g.chunks(hw)
                .zip(x.data().chunks(hw))
                .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                .collect()
        });
        vec![gx, gg]
    }
}

/// Multiplies every `H×W` plane of `x: N×C×H×W` by `gate[n, c]`.
pub fn channel_gate<T: Scalar>(tape: &mut Tape<T>, x: NodeId, gate: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = tape.value(x).dims4("channel_gate")?;
    if tape.shape(gate) != [n, c] {
        return Err(Error::ShapeMismatch {
            op: "channel_gate",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(gate).to_vec(),
        });
    }
    let hw = h * w;
    let data = tape
        .value(x)
        .data()
        .chunks(hw)
        .zip(tape.value(gate).data())
        .flat_map(|(p, &s)| p.iter().map(move |&v| v * s))
        .collect();
    let value = Tensor::from_parts(vec![n, c, h, w], data);
    Ok(tape.record(ChannelGateFn, &[x, gate], value))
}

#[derive(Clone, Debug)]
pub struct SeBlock {
    pub channels: usize,
    pub hidden: usize,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

impl SeBlock {
    pub const MIN_HIDDEN: usize = 4;

    pub fn bottleneck(channels: usize, reduction: usize) -> usize {
        (channels / reduction.max(1)).max(Self::MIN_HIDDEN)
    }

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let hidden = Self::bottleneck(channels, reduction);
        Ok(Self {
            channels,
            hidden,
            fc1_weight: store.add(format!("{name}.fc1.weight"), init::he_normal(&[hidden, channels], channels, rng)?, true)?,
            fc1_bias: store.add(format!("{name}.fc1.bias"), Tensor::zeros(&[hidden])?, true)?,
            fc2_weight: store.add(format!("{name}.fc2.weight"), init::he_normal(&[channels, hidden], hidden, rng)?, true)?,
            fc2_bias: store.add(format!("{name}.fc2.bias"), Tensor::zeros(&[channels])?, true)?,
        })
    }

    /// `sigmoid(fc2(relu(fc1(GAP(x)))))` as an `N×C` tensor.
    pub fn gates<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let c = tape.value(x).dims4("se_block")?.1;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "se_block",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.channels],
            });
        }
        let squeezed = tape.global_avg_pool(x)?;
        let w1 = tape.param(store, self.fc1_weight);
        let b1 = tape.param(store, self.fc1_bias);
        let h = linear(tape, squeezed, w1, b1)?;
        let h = tape.relu(h);
        let w2 = tape.param(store, self.fc2_weight);
        let b2 = tape.param(store, self.fc2_bias);
        let e = linear(tape, h, w2, b2)?;
        Ok(tape.sigmoid(e))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let g = self.gates(tape, store, x)?;
        channel_gate(tape, x, g)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels * self.hidden + self.hidden + self.channels
    }
}
