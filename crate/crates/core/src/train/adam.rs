use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.v[index]
    }

    /// One update of every trainable parameter from its stored gradient.
    /// Gradients are checked before anything is modified, so a non-finite
    /// gradient leaves both the store and the state untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument {
                op: "adam_step",
                msg: format!("state tracks {} parameters, store has {}", self.m.len(), store.len()),
            });
        }
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64_lossy(lr / c1);
        let inv_sqrt_c2 = T::from_f64_lossy(1.0 / c2.sqrt());
        let eps = T::from_f64_lossy(self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                value[i] = value[i] - step * m[i] / (v[i].sqrt() * inv_sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true).unwrap();
        s.add("buf", Tensor::new(&[1], vec![7.0]).unwrap(), false).unwrap();
        s.get_mut(id).grad = Tensor::full(&[3], grad).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store(0.0);
        let before = s.clone();
        let mut st = AdamState::new(&s);
        st.step(&mut s, 0.001).unwrap();
        assert_eq!(st.t, 1);
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.25] {
            let mut s = store(g);
            let mut st = AdamState::new(&s);
            st.step(&mut s, 0.01).unwrap();
            let w = s.get(s.id("w").unwrap()).value.data();
            // m̂ = g and v̂ = g², so the update is lr·g/(|g| + eps).
            let expect = 0.01 * g / (g.abs() + 1e-8);
            for (x, x0) in w.iter().zip([1.0, -2.0, 0.5]) {
                assert!((x0 - x - expect).abs() < 1e-15, "{x} {x0}");
            }
            assert_eq!(s.get(s.id("buf").unwrap()).value.data(), &[7.0]);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(f64::NAN);
        let mut st = AdamState::new(&s);
        let err = st.step(&mut s, 0.001).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(n) if n == "w"), "{err}");
        assert_eq!(st.t, 0);
    }
}
