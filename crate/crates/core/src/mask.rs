use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Label,
    Prediction,
    PostProcessed,
}

/// `H×W` mask over `{0, 1}`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    pub provenance: Provenance,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "mask",
                lhs: vec![height, width],
                rhs: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(invalid("mask", format!("value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
            provenance: Provenance::Label,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            data: vec![0; height * width],
            provenance: Provenance::Label,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                m.data[r * width + c] = f(r, c) as u8;
            }
        }
        m
    }

    /// Foreground where the probability exceeds 0.5, the argmax of a
    /// two-class softmax with ties going to background.
    pub fn from_probabilities<T: Scalar>(height: usize, width: usize, probs: &[T]) -> Result<Self> {
        if probs.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "mask",
                lhs: vec![height, width],
                rhs: vec![probs.len()],
            });
        }
        let half = T::from_f64_lossy(0.5);
        let mut m = Self::new(height, width, probs.iter().map(|&p| (p > half) as u8).collect())?;
        m.provenance = Provenance::Prediction;
        Ok(m)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    /// Out-of-bounds positions read as background.
    pub fn get_signed(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width && self.get(r as usize, c as usize)
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.width + c] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// `self ⊆ other`, pixelwise.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.data[r * self.width + c] = self.data[r * self.width + self.width - 1 - c];
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            let src = (self.height - 1 - r) * self.width;
            out.data[r * self.width..(r + 1) * self.width].copy_from_slice(&self.data[src..src + self.width]);
        }
        out
    }
}
