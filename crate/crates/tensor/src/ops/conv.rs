use super::linalg::matmul_raw;
use crate::tape;
use crate::tensor::{Tensor, TensorError};

/// 2-D cross-correlation with zero padding: `x [Cin,H,W]`, `w [Cout,Cin,k,k]`,
/// optional `bias [Cout]`. Odd kernel; output `[Cout,H',W']` with
/// `H' = (H + 2 pad - k) / stride + 1`.
///
/// Implemented as im2col + matmul so the arithmetic goes through the same
/// inner kernel as every other dense op.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> crate::Result<Tensor> {
    if x.rank() != 3 || w.rank() != 4 {
        return Err(TensorError::Dimension {
            op: "conv2d",
            detail: format!("x {:?}, w {:?}", x.shape(), w.shape()),
        });
    }
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, wcin, k, k2) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if wcin != cin || k != k2 || k % 2 == 0 {
        return Err(TensorError::Dimension {
            op: "conv2d",
            detail: format!("kernel {:?} incompatible with input {:?} (odd square kernel, matching channels)", w.shape(), x.shape()),
        });
    }
    if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
        return Err(TensorError::Dimension {
            op: "conv2d",
            detail: format!("non-positive output extent for input {:?}, k={k}, stride={stride}, pad={pad}", x.shape()),
        });
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;

    let col = im2col(x.data(), cin, h, wd, k, stride, pad, ho, wo);
    let ckk = cin * k * k;
    // out[cout, ho*wo] = w[cout, ckk] . col[ckk, ho*wo]
    let mut out = matmul_raw(w.data(), &col, cout, ckk, ho * wo);
    if let Some(b) = bias {
        for c in 0..cout {
            let bv = b.data()[c];
            for v in out[c * ho * wo..(c + 1) * ho * wo].iter_mut() {
                *v += bv;
            }
        }
    }
    let result = Tensor::from_vec(&[cout, ho, wo], out)?;

    let wv = w.data().to_vec();
    let wshape = w.shape().to_vec();
    let xshape = x.shape().to_vec();
    let has_bias = bias.is_some();
    let parent_ids = [x.tape_id, w.tape_id, bias.and_then(|b| b.tape_id)];
    let id = tape::record(
        &parent_ids,
        Box::new(move |g| {
            let gd = g.data(); // [cout, ho*wo]
            // dW = g . col^T
            let colt = transpose_raw(&col, ckk, ho * wo);
            let dw = matmul_raw(gd, &colt, cout, ho * wo, ckk);
            // dX = col2im(w^T . g)
            let wt = transpose_raw(&wv, cout, ckk);
            let dcol = matmul_raw(&wt, gd, ckk, cout, ho * wo);
            let dx = col2im(&dcol, cin, h, wd, k, stride, pad, ho, wo);
            let mut grads = vec![
                Tensor::from_vec(&xshape, dx).expect("conv dx"),
                Tensor::from_vec(&wshape, dw).expect("conv dw"),
            ];
            if has_bias {
                let mut db = vec![0.0; cout];
                for c in 0..cout {
                    db[c] = gd[c * ho * wo..(c + 1) * ho * wo].iter().sum();
                }
                grads.push(Tensor::from_vec(&[cout], db).expect("conv db"));
            } else {
                grads.push(Tensor::scalar(0.0)); // routed out by the tape
            }
            grads
        }),
    );
    Ok(result.with_tape_id(id))
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut col = vec![0.0; cin * k * k * ho * wo];
    let cols = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[row * cols + oy * wo + ox] =
                            x[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; cin * h * w];
    let cols = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c * h + iy as usize) * w + ix as usize] +=
                            dcol[row * cols + oy * wo + ox];
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let x = Tensor::from_vec(&[2, 3, 3], (0..18).map(|v| v as f64).collect()).unwrap();
        // w[cout=2, cin=2, 1, 1] selecting each channel
        let w = Tensor::from_vec(&[2, 2, 1, 1], vec![1., 0., 0., 1.]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_kernel_center_sums_to_nine() {
        let x = Tensor::full(&[1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        // interior outputs see the full 3x3 window
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(y.at(&[0, r, c]), 9.0);
            }
        }
        // corners see 2x2
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
    }

    #[test]
    fn rejects_even_kernel_and_bad_extents() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let even = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&x, &even, None, 1, 0).is_err());
        let w = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err()); // 4 < 5, no output
    }
}
