//! Tensor operations. Each op evaluates eagerly and, when a tape is active
//! and an input participates, records a backward closure alongside.
//!
//! Broadcasting is restricted to leading-extent-1 expansion: operands must
//! have equal rank, and one side's shape must equal the other's with some
//! prefix of axes set to 1. Under row-major layout the smaller operand then
//! tiles whole blocks, which keeps the backward reduction a plain chunked
//! sum.

mod conv;
mod elementwise;
mod linalg;
mod loss_ops;
mod norm;
mod reduce;
mod resize;

pub use conv::conv2d;
pub use elementwise::{add, add_scalar, div, gelu, mul, relu, scale, sigmoid, sub};
pub use linalg::{
    concat_axis0, concat_cols, matmul, permute, reshape, slice_axis0, slice_cols, transpose,
};
pub use loss_ops::{bce_with_logits, softmax_cross_entropy};
pub use norm::{channel_norm, layer_norm, softmax};
pub use reduce::{mean_all, sum_all};
pub use resize::bilinear_resize;

use crate::tensor::{Tensor, TensorError};

/// In-place add used by the tape's gradient accumulation.
pub(crate) fn accumulate(acc: &mut Tensor, g: &Tensor) {
    debug_assert_eq!(acc.shape(), g.shape());
    let gd = g.data();
    for (a, b) in acc.data_mut().iter_mut().zip(gd) {
        *a += b;
    }
}

/// Broadcast plan for a pair of shapes under the leading-extent-1 rule.
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    /// numel of lhs / rhs; the smaller one tiles.
    pub lhs_numel: usize,
    pub rhs_numel: usize,
}

pub(crate) fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> crate::Result<Broadcast> {
    let (sa, sb) = (a.shape(), b.shape());
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    if sa.len() != sb.len() {
        return Err(mismatch());
    }
    let expandable = |small: &[usize], big: &[usize]| {
        let mut k = 0;
        while k < small.len() && small[k] == 1 && small[k] != big[k] {
            k += 1;
        }
        small[k..] == big[k..]
    };
    let out = if sa == sb || expandable(sb, sa) {
        sa.to_vec()
    } else if expandable(sa, sb) {
        sb.to_vec()
    } else {
        return Err(mismatch());
    };
    Ok(Broadcast {
        out_shape: out,
        lhs_numel: a.numel(),
        rhs_numel: b.numel(),
    })
}

/// Reduce a gradient of the broadcast output back to an operand's shape by
/// summing over the tiled repetitions.
pub(crate) fn reduce_to(grad: &[f64], operand_shape: &[usize], operand_numel: usize) -> Tensor {
    if grad.len() == operand_numel {
        return Tensor::from_vec(operand_shape, grad.to_vec()).expect("reduce_to shape");
    }
    let mut out = vec![0.0; operand_numel];
    for (i, g) in grad.iter().enumerate() {
        out[i % operand_numel] += g;
    }
    Tensor::from_vec(operand_shape, out).expect("reduce_to shape")
}
