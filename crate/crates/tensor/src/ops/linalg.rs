use crate::tape;
use crate::tensor::{Tensor, TensorError};

/// Row-major 2-D multiply kernel shared by forward and backward passes.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += ap * brow[j];
            }
        }
    }
    c
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

pub fn matmul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let out = Tensor::from_vec(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))?;

    let (av, bv) = (a.data().to_vec(), b.data().to_vec());
    let id = tape::record(
        &[a.tape_id, b.tape_id],
        Box::new(move |g| {
            let gd = g.data();
            // dA = g . B^T, dB = A^T . g
            let bt = transpose_raw(&bv, k, n);
            let at = transpose_raw(&av, m, k);
            let da = matmul_raw(gd, &bt, m, n, k);
            let db = matmul_raw(&at, gd, k, m, n);
            vec![
                Tensor::from_vec(&[m, k], da).expect("matmul da"),
                Tensor::from_vec(&[k, n], db).expect("matmul db"),
            ]
        }),
    );
    Ok(out.with_tape_id(id))
}

pub fn transpose(a: &Tensor) -> crate::Result<Tensor> {
    if a.rank() != 2 {
        return Err(TensorError::Dimension {
            op: "transpose",
            detail: format!("expects rank 2, got {:?}", a.shape()),
        });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let out = Tensor::from_vec(&[n, m], transpose_raw(a.data(), m, n))?;
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            vec![Tensor::from_vec(&[m, n], transpose_raw(g.data(), n, m)).expect("transpose grad")]
        }),
    );
    Ok(out.with_tape_id(id))
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> crate::Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != a.numel() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("cannot reshape {:?} ({} elements)", a.shape(), a.numel()),
        });
    }
    let out = Tensor::from_vec(shape, a.data().to_vec())?;
    let orig = a.shape().to_vec();
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            vec![Tensor::from_vec(&orig, g.data().to_vec()).expect("reshape grad")]
        }),
    );
    Ok(out.with_tape_id(id))
}

fn permute_raw(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = vec![0.0; data.len()];
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut src = 0;
        for (o, &p) in perm.iter().enumerate() {
            src += idx[o] * in_strides[p];
        }
        *slot = data[src];
        for o in (0..rank).rev() {
            idx[o] += 1;
            if idx[o] < out_shape[o] {
                break;
            }
            idx[o] = 0;
        }
    }
    (out_shape, out)
}

/// Reorder axes; full copy. `perm[i]` names the source axis placed at `i`.
pub fn permute(a: &Tensor, perm: &[usize]) -> crate::Result<Tensor> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::Dimension {
            op: "permute",
            detail: format!("{perm:?} is not a permutation of 0..{rank}"),
        });
    }
    let (out_shape, out) = permute_raw(a.data(), a.shape(), perm);
    let result = Tensor::from_vec(&out_shape, out)?;
    let inverse: Vec<usize> = {
        let mut inv = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    };
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let (gs, gd) = permute_raw(g.data(), g.shape(), &inverse);
            vec![Tensor::from_vec(&gs, gd).expect("permute grad")]
        }),
    );
    Ok(result.with_tape_id(id))
}

/// Contiguous block along axis 0, any rank.
pub fn slice_axis0(a: &Tensor, start: usize, len: usize) -> crate::Result<Tensor> {
    let extent = a.shape()[0];
    if len == 0 || start + len > extent {
        return Err(TensorError::Dimension {
            op: "slice_axis0",
            detail: format!("range {start}..{} out of extent {extent}", start + len),
        });
    }
    let row = a.numel() / extent;
    let mut shape = a.shape().to_vec();
    shape[0] = len;
    let out = Tensor::from_vec(&shape, a.data()[start * row..(start + len) * row].to_vec())?;
    let full_shape = a.shape().to_vec();
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let mut buf = vec![0.0; full_shape.iter().product()];
            buf[start * row..(start + len) * row].copy_from_slice(g.data());
            vec![Tensor::from_vec(&full_shape, buf).expect("slice grad")]
        }),
    );
    Ok(out.with_tape_id(id))
}

/// Stack tensors along axis 0; trailing shapes must agree.
pub fn concat_axis0(parts: &[&Tensor]) -> crate::Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Dimension {
        op: "concat_axis0",
        detail: "empty part list".into(),
    })?;
    let tail = &first.shape()[1..];
    let mut total0 = 0;
    for p in parts {
        if &p.shape()[1..] != tail {
            return Err(TensorError::ShapeMismatch {
                op: "concat_axis0",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        total0 += p.shape()[0];
    }
    let mut shape = first.shape().to_vec();
    shape[0] = total0;
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let out = Tensor::from_vec(&shape, data)?;
    let sizes: Vec<(usize, Vec<usize>)> = parts
        .iter()
        .map(|p| (p.numel(), p.shape().to_vec()))
        .collect();
    let ids: Vec<_> = parts.iter().map(|p| p.tape_id).collect();
    let id = tape::record(
        &ids,
        Box::new(move |g| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|(n, s)| {
                    let part = Tensor::from_vec(s, g.data()[offset..offset + n].to_vec())
                        .expect("concat grad");
                    offset += n;
                    part
                })
                .collect()
        }),
    );
    Ok(out.with_tape_id(id))
}

/// Column range of a rank-2 tensor.
pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> crate::Result<Tensor> {
    if a.rank() != 2 {
        return Err(TensorError::Dimension {
            op: "slice_cols",
            detail: format!("expects rank 2, got {:?}", a.shape()),
        });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if len == 0 || start + len > n {
        return Err(TensorError::Dimension {
            op: "slice_cols",
            detail: format!("range {start}..{} out of {n} columns", start + len),
        });
    }
    let mut data = Vec::with_capacity(m * len);
    for r in 0..m {
        data.extend_from_slice(&a.data()[r * n + start..r * n + start + len]);
    }
    let out = Tensor::from_vec(&[m, len], data)?;
    let id = tape::record(
        &[a.tape_id],
        Box::new(move |g| {
            let mut buf = vec![0.0; m * n];
            for r in 0..m {
                buf[r * n + start..r * n + start + len]
                    .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            vec![Tensor::from_vec(&[m, n], buf).expect("slice_cols grad")]
        }),
    );
    Ok(out.with_tape_id(id))
}

/// Concatenate rank-2 tensors with equal row counts along columns.
pub fn concat_cols(parts: &[&Tensor]) -> crate::Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Dimension {
        op: "concat_cols",
        detail: "empty part list".into(),
    })?;
    let m = first.shape()[0];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != 2 || p.shape()[0] != m {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(p.shape()[1]);
    }
    let n: usize = widths.iter().sum();
    let mut data = vec![0.0; m * n];
    let mut col = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        for r in 0..m {
            data[r * n + col..r * n + col + w].copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        col += w;
    }
    let out = Tensor::from_vec(&[m, n], data)?;
    let ids: Vec<_> = parts.iter().map(|p| p.tape_id).collect();
    let id = tape::record(
        &ids,
        Box::new(move |g| {
            let mut col = 0;
            widths
                .iter()
                .map(|&w| {
                    let mut part = vec![0.0; m * w];
                    for r in 0..m {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * n + col..r * n + col + w]);
                    }
                    col += w;
                    Tensor::from_vec(&[m, w], part).expect("concat_cols grad")
                })
                .collect()
        }),
    );
    Ok(out.with_tape_id(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_preserves_rhs() {
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![5., -1., 2., 0.5, 7., 3.]).unwrap();
        let c = matmul(&eye, &b).unwrap();
        assert_eq!(c.data(), b.data());
    }

    #[test]
    fn zero_lhs_annihilates() {
        let a = Tensor::zeros(&[2, 4]);
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert_eq!(c.shape(), &[2, 3]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let p = permute(&t, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[1, 0, 2]), t.at(&[0, 2, 1]));
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn slice_concat_axis0_roundtrip() {
        let t = Tensor::from_vec(&[4, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let a = slice_axis0(&t, 0, 1).unwrap();
        let b = slice_axis0(&t, 1, 3).unwrap();
        let joined = concat_axis0(&[&a, &b]).unwrap();
        assert_eq!(joined.data(), t.data());
    }

    #[test]
    fn slice_concat_cols_roundtrip() {
        let t = Tensor::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let a = slice_cols(&t, 0, 1).unwrap();
        let b = slice_cols(&t, 1, 3).unwrap();
        let joined = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(joined.data(), t.data());
    }
}
