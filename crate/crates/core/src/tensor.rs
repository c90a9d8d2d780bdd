//! Dense row-major tensors of rank 1 to 4.
//!
//! Segmentation tensors are laid out `N×C×H×W`. The element type is any
//! [`Scalar`]; training runs in `f32`, gradient checks in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

use crate::error::{invalid, Error, Result};

/// Floating-point element type with a BLAS-style matrix product.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    /// `c = alpha * a·b + beta * c`, where `a` is `m×k`, `b` is `k×n` and
    /// `c` is `m×n`, each addressed through (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "gemm: negative stride for {what}");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm: {what} buffer too small ({last} >= {len})");
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                check_extent(a.0.len(), m, k, a.1, a.2, "a");
                check_extent(b.0.len(), k, n, b.1, b.2, "b");
                check_extent(c.0.len(), m, n, c.1, c.2, "c");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index reachable through the given strides was
                // bounds-checked above, and `c` is uniquely borrowed.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(invalid("tensor", format!("rank must be 1..=4, got {shape:?}")));
    }
    if shape.contains(&0) {
        return Err(invalid("tensor", format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        })
    }

    /// Builds a tensor from data already known to match the shape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(invalid(op, format!("expected NCHW tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped rank-4 tensors along the batch axis.
    pub fn stack_batch(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| invalid("stack_batch", "no tensors given"))?;
        let (_, c, h, w) = first.dims4("stack_batch")?;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            let (tn, tc, th, tw) = t.dims4("stack_batch")?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Self::from_parts(vec![n, c, h, w], data))
    }

    /// Extracts sample `index` of a rank-4 tensor as a `1×C×H×W` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4("batch_item")?;
        if index >= n {
            return Err(invalid("batch_item", format!("index {index} out of {n}")));
        }
        let len = c * h * w;
        Ok(Self::from_parts(
            vec![1, c, h, w],
            self.data[index * len..(index + 1) * len].to_vec(),
        ))
    }
}
