use crate::tape;
use crate::tensor::{Tensor, TensorError};

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax(a: &Tensor, axis: usize) -> crate::Result<Tensor> {
    if axis >= a.rank() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: a.rank(),
        });
    }
    let shape = a.shape().to_vec();
    let reduce = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let data = a.data();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * reduce + l) * inner + i;
            let mut maxv = f64::NEG_INFINITY;
            for l in 0..reduce {
                maxv = maxv.max(data[idx(l)]);
            }
            let mut denom = 0.0;
            for l in 0..reduce {
                let e = (data[idx(l)] - maxv).exp();
                out[idx(l)] = e;
                denom += e;
            }
            for l in 0..reduce {
                out[idx(l)] /= denom;
            }
        }
    }
    let result = Tensor::from_vec(&shape, out)?;

    let y = result.data().to_vec();
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![0.0; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * reduce + l) * inner + i;
                    let mut dot = 0.0;
                    for l in 0..reduce {
                        dot += gd[idx(l)] * y[idx(l)];
                    }
                    for l in 0..reduce {
                        dx[idx(l)] = y[idx(l)] * (gd[idx(l)] - dot);
                    }
                }
            }
            vec![Tensor::from_vec(&shape, dx).expect("softmax grad")]
        }),
    );
    Ok(result.with_tape_id(id))
}

/// Layer norm over the last axis: zero mean, unit variance (population),
/// then `gamma * xhat + beta`. `gamma`/`beta` have the last-axis extent.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> crate::Result<Tensor> {
    let d = *x.shape().last().unwrap();
    if gamma.numel() != d || beta.numel() != d {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / d;
    let strided = StridedNorm {
        groups: rows,
        len: d,
        // contiguous rows: element l of row r sits at r*d + l
        index: |row: usize, l: usize, d: usize| row * d + l,
        stride_arg: d,
    };
    norm_impl(x, gamma, beta, eps, strided)
}

/// Norm over the channel axis of a `[C, H, W]` tensor: each spatial position
/// is normalized across channels. `gamma`/`beta` have extent `C`.
pub fn channel_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> crate::Result<Tensor> {
    if x.rank() != 3 {
        return Err(TensorError::Dimension {
            op: "channel_norm",
            detail: format!("expects [C,H,W], got {:?}", x.shape()),
        });
    }
    let c = x.shape()[0];
    if gamma.numel() != c || beta.numel() != c {
        return Err(TensorError::ShapeMismatch {
            op: "channel_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let hw = x.numel() / c;
    let strided = StridedNorm {
        groups: hw,
        len: c,
        // channel l at spatial position p sits at l*hw + p
        index: |pos: usize, l: usize, hw: usize| l * hw + pos,
        stride_arg: hw,
    };
    norm_impl(x, gamma, beta, eps, strided)
}

struct StridedNorm {
    groups: usize,
    len: usize,
    index: fn(usize, usize, usize) -> usize,
    stride_arg: usize,
}

fn norm_impl(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    plan: StridedNorm,
) -> crate::Result<Tensor> {
    let StridedNorm {
        groups,
        len,
        index,
        stride_arg,
    } = plan;
    let data = x.data();
    let gm = gamma.data().to_vec();
    let mut out = vec![0.0; data.len()];
    let mut xhat = vec![0.0; data.len()];
    let mut invs = vec![0.0; groups];
    for g in 0..groups {
        let mut mean = 0.0;
        for l in 0..len {
            mean += data[index(g, l, stride_arg)];
        }
        mean /= len as f64;
        let mut var = 0.0;
        for l in 0..len {
            let dv = data[index(g, l, stride_arg)] - mean;
            var += dv * dv;
        }
        var /= len as f64;
        let inv = 1.0 / (var + eps).sqrt();
        invs[g] = inv;
        for l in 0..len {
            let i = index(g, l, stride_arg);
            xhat[i] = (data[i] - mean) * inv;
            out[i] = gm[l] * xhat[i] + beta.data()[l];
        }
    }
    let result = Tensor::from_vec(x.shape(), out)?;

    let shape = x.shape().to_vec();
    let gshape = gamma.shape().to_vec();
    let bshape = beta.shape().to_vec();
    let id = tape::record(
        &[x.tape_id, gamma.tape_id, beta.tape_id],
        Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![0.0; gd.len()];
            let mut dgamma = vec![0.0; len];
            let mut dbeta = vec![0.0; len];
            for grp in 0..groups {
                let mut m1 = 0.0; // mean of gamma*g
                let mut m2 = 0.0; // mean of gamma*g*xhat
                for l in 0..len {
                    let i = index(grp, l, stride_arg);
                    let gg = gm[l] * gd[i];
                    m1 += gg;
                    m2 += gg * xhat[i];
                    dgamma[l] += gd[i] * xhat[i];
                    dbeta[l] += gd[i];
                }
                m1 /= len as f64;
                m2 /= len as f64;
                for l in 0..len {
                    let i = index(grp, l, stride_arg);
                    dx[i] = invs[grp] * (gm[l] * gd[i] - m1 - xhat[i] * m2);
                }
            }
            vec![
                Tensor::from_vec(&shape, dx).expect("norm dx"),
                Tensor::from_vec(&gshape, dgamma).expect("norm dgamma"),
                Tensor::from_vec(&bshape, dbeta).expect("norm dbeta"),
            ]
        }),
    );
    Ok(result.with_tape_id(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_constant_input() {
        let x = Tensor::full(&[4], 3.7);
        let y = softmax(&x, 0).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_singleton_axis_is_one() {
        let x = Tensor::from_vec(&[1], vec![-11.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn softmax_closed_form_quarter_three_quarters() {
        let x = Tensor::from_vec(&[2], vec![0.0, 3.0_f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_input_maps_to_beta() {
        let x = Tensor::full(&[2, 3], 5.0);
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-5).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn channel_norm_matches_layer_norm_on_permuted_data() {
        // [C,H,W] channel-norm == permute-to-[H,W,C] layer-norm, permuted back.
        let c = 3;
        let (h, w) = (2, 2);
        let data: Vec<f64> = (0..c * h * w).map(|v| (v as f64).sin()).collect();
        let x = Tensor::from_vec(&[c, h, w], data).unwrap();
        let gamma = Tensor::from_vec(&[c], vec![1.5, 0.5, 2.0]).unwrap();
        let beta = Tensor::from_vec(&[c], vec![0.1, -0.2, 0.0]).unwrap();
        let direct = channel_norm(&x, &gamma, &beta, 1e-5).unwrap();
        let moved = crate::ops::permute(&x, &[1, 2, 0]).unwrap();
        let ln = layer_norm(&moved, &gamma, &beta, 1e-5).unwrap();
        let back = crate::ops::permute(&ln, &[2, 0, 1]).unwrap();
        for (a, b) in direct.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
