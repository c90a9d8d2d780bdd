use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

/// He (Kaiming) normal initialization: N(0, 2 / fan_in).
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Result<Tensor<T>> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.normal() * std))
}
