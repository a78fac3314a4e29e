use thiserror::Error;

use crate::tape::TapeId;

pub const MAX_RANK: usize = 5;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op} expects a scalar tensor, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("tape error: {0}")]
    Tape(String),
    #[error("gradient-check oracle error: {0}")]
    Oracle(String),
}

/// Dense row-major tensor of 64-bit reals, rank 1..=5.
///
/// `tape_id` marks participation in the currently recording tape; it is set
/// by [`crate::tape::watch`] for leaves and by ops for results. A stale id
/// from an earlier tape is harmless: ids carry a generation counter.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) tape_id: Option<TapeId>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> crate::Result<Self> {
        Self::check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("product is {numel} but data has {} elements", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            tape_id: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::check_shape(shape).expect("invalid tensor shape");
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            tape_id: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(&[1], value)
    }

    /// A leaf parameter: eligible for gradients once watched on a tape.
    pub fn param(shape: &[usize], data: Vec<f64>) -> crate::Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    fn check_shape(shape: &[usize]) -> crate::Result<()> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("rank must be 1..={MAX_RANK}"),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "extents must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Must not be called on a tensor that
    /// participates in an active recording (saved values would go stale).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, v: bool) {
        self.requires_grad = v;
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Element lookup by multi-index; test/debug convenience.
    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.rank());
        let mut flat = 0usize;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            flat = flat * self.shape[i] + ix;
        }
        self.data[flat]
    }

    /// Detached copy: same values, no grad flag, no tape id.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            tape_id: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_tape_id(mut self, id: Option<TapeId>) -> Tensor {
        self.requires_grad = self.requires_grad || id.is_some();
        self.tape_id = id;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_agreement_enforced() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::from_vec(&[1, 1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn at_indexes_row_major() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }
}
