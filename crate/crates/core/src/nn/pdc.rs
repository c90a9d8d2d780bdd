//! Pyramid dilated convolution: parallel 3×3 branches at dilation 1, 2 and
//! 3, each followed by ReLU, concatenated and fused back to the input width
//! by a 1×1 convolution.

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::conv::{Conv2d, ConvSpec};
use crate::rng::SplitMix64;
use crate::tensor::Scalar;

pub const PDC_DILATIONS: [usize; 3] = [1, 2, 3];

#[derive(Clone, Debug)]
pub struct PdcBlock {
    pub channels: usize,
    pub branches: Vec<Conv2d>,
    pub fuse: Conv2d,
}

impl PdcBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut SplitMix64) -> Result<Self> {
        let branches = PDC_DILATIONS
            .iter()
            .map(|&d| {
                Conv2d::new(
                    store,
                    &format!("{name}.branch_d{d}"),
                    channels,
                    channels,
                    3,
                    ConvSpec::same3x3(d),
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv2d::new(
            store,
            &format!("{name}.fuse"),
            channels * PDC_DILATIONS.len(),
            channels,
            1,
            ConvSpec::default(),
            rng,
        )?;
        Ok(Self {
            channels,
            branches,
            fuse,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let c = tape.value(x).dims4("pdc_block")?.1;
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "pdc_block",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.channels],
            });
        }
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(tape, store, x)?;
            outs.push(tape.relu(y));
        }
        let cat = tape.concat_channels(&outs)?;
        self.fuse.forward(tape, store, cat)
    }

    pub fn param_count(channels: usize) -> usize {
        3 * (channels * channels * 9 + channels) + 3 * channels * channels + channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn preserves_shape() {
        let mut store = ParamStore::<f32>::new();
        let pdc = PdcBlock::new(&mut store, "pdc", 4, &mut SplitMix64::new(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 4, 32, 32], |i| (i % 7) as f32).unwrap());
        let y = pdc.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 32, 32]);
        let total: usize = store.iter().map(|(_, p)| p.value.len()).sum();
        assert_eq!(total, PdcBlock::param_count(4));
    }

    #[test]
    fn identity_branches_with_averaging_fusion_reproduce_input() {
        let c = 3;
        let mut store = ParamStore::<f64>::new();
        let pdc = PdcBlock::new(&mut store, "pdc", c, &mut SplitMix64::new(0)).unwrap();
        for branch in &pdc.branches {
            let w = store.get_mut(branch.weight).value.data_mut();
            w.fill(0.0);
            for ch in 0..c {
                w[(ch * c + ch) * 9 + 4] = 1.0;
            }
        }
        let w = store.get_mut(pdc.fuse.weight).value.data_mut();
        w.fill(0.0);
        for out in 0..c {
            for branch in 0..3 {
                w[out * 3 * c + branch * c + out] = 1.0 / 3.0;
            }
        }
        let x = Tensor::from_fn(&[2, c, 6, 6], |i| ((i * 13) % 11) as f64 * 0.25).unwrap();
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let y = pdc.forward(&mut tape, &store, xn).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(x.data()) {
            assert!((o - i).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let pdc = PdcBlock::new(&mut store, "pdc", 2, &mut SplitMix64::new(0)).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let xn = tape.constant(Tensor::from_fn(&[1, 2, 5, 5], |i| i as f64).unwrap());
        let y = pdc.forward(&mut tape, &store, xn).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
