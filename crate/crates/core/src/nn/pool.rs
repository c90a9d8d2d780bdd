use crate::autograd::{Function, NodeId, Tape};
use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

struct MaxPool2 {
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

impl<T: Scalar> Function<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); inputs[0].len()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            gx[src] = gx[src] + gv;
        }
        vec![Some(gx)]
    }
}

struct GlobalAvgPool;

impl<T: Scalar> Function<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        vec![Some(
            g.iter()
                .flat_map(|&v| std::iter::repeat_n(v * inv, hw))
                .collect(),
        )]
    }
}

impl<T: Scalar> Tape<T> {
    /// 2×2 max pooling with stride 2. Ties go to the first element in
    /// row-major order within the window, which also receives the gradient.
    pub fn maxpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4("maxpool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("maxpool2d", format!("spatial size {h}×{w} must be even")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ] {
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.record(MaxPool2 { argmax }, &[x], value))
    }

    /// Spatial mean per channel: `N×C×H×W` → `N×C`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_parts(vec![n, c], data);
        Ok(self.record(GlobalAvgPool, &[x], value))
    }
}
