use crate::autograd::{Function, NodeId, ParamId, ParamStore, RunningStatUpdate, Tape};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and queue running-stat updates.
    Training,
    /// Normalize with running statistics only.
    Inference,
}

struct BatchNormFn<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
}

impl<T: Scalar> Function<T> for BatchNormFn<T> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let gamma = inputs[1].data();
        let m = T::from_usize(n * hw).unwrap();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    sum_g[ch] = sum_g[ch] + g[i];
                    sum_gx[ch] = sum_gx[ch] + g[i] * self.xhat[i];
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); g.len()];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in off..off + hw {
                        gx[i] = if self.training {
                            k * (g[i] - (sum_g[ch] + self.xhat[i] * sum_gx[ch]) / m)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            gx
        });
        vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
    }
}

/// Per-channel batch normalization of an NCHW tensor.
///
/// `gamma`/`beta` are tape nodes of shape `[C]`; `running` holds the
/// `(mean, var)` parameter ids and their current values.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running: (ParamId, ParamId),
    store: &ParamStore<T>,
    momentum: T,
    eps: T,
    mode: Mode,
) -> Result<NodeId> {
    const OP: &str = "batchnorm2d";
    let (n, c, h, w) = tape.value(x).dims4(OP)?;
    if tape.shape(gamma) != [c] || tape.shape(beta) != [c] {
        return Err(Error::ShapeMismatch {
            op: OP,
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(gamma).to_vec(),
        });
    }
    let hw = h * w;
    let count = n * hw;
    if count == 0 {
        return Err(invalid(OP, "no elements per channel"));
    }
    let xs = tape.value(x).data();
    let (mean, var) = match mode {
        Mode::Training => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let m = T::from_usize(count).unwrap();
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    mean[ch] = mean[ch] + xs[off..off + hw].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v = *v / m);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let mu = mean[ch];
                    var[ch] = var[ch] + xs[off..off + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v = *v / m);
            (mean, var)
        }
        Mode::Inference => (
            store.get(running.0).value.data().to_vec(),
            store.get(running.1).value.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gs = tape.value(gamma).data();
    let bs = tape.value(beta).data();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = vec![T::zero(); xs.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let z = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = z;
                out[i] = gs[ch] * z + bs[ch];
            }
        }
    }
    if mode == Mode::Training {
        let unbias = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        tape.push_running_update(RunningStatUpdate {
            mean: running.0,
            var: running.1,
            batch_mean: mean,
            batch_var: var.iter().map(|&v| v * unbias).collect(),
            momentum,
        });
    }
    let value = Tensor::from_parts(vec![n, c, h, w], out);
    Ok(tape.record(
        BatchNormFn {
            xhat,
            inv_std,
            training: mode == Mode::Training,
        },
        &[x, gamma, beta],
        value,
    ))
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])?, true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])?, true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])?, false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels])?, false)?,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        batchnorm2d(
            tape,
            x,
            g,
            b,
            (self.running_mean, self.running_var),
            store,
            T::from_f64_lossy(self.momentum),
            T::from_f64_lossy(self.eps),
            mode,
        )
    }
}
