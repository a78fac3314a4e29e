use crate::tape;
use crate::tensor::{Tensor, TensorError};

/// Per-axis sample positions and lerp weights for align-corners-false
/// bilinear resizing: `src = (dst + 0.5) * in/out - 0.5`, edges clamped.
fn axis_plan(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            let clamped = src.clamp(0.0, (n_in - 1) as f64);
            let lo = clamped.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, clamped - lo as f64)
        })
        .collect()
}

/// Bilinear resample of `x [C,H,W]` to `[C,H2,W2]`, align-corners-false.
pub fn bilinear_resize(x: &Tensor, h2: usize, w2: usize) -> crate::Result<Tensor> {
    if x.rank() != 3 {
        return Err(TensorError::Dimension {
            op: "bilinear_resize",
            detail: format!("expects [C,H,W], got {:?}", x.shape()),
        });
    }
    if h2 == 0 || w2 == 0 {
        return Err(TensorError::Dimension {
            op: "bilinear_resize",
            detail: "target extents must be >= 1".into(),
        });
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h2 == h && w2 == w {
        // exact identity, bit-for-bit
        let out = Tensor::from_vec(x.shape(), x.data().to_vec())?;
        let shape = x.shape().to_vec();
        let id = tape::record(
            &[x.tape_id],
            Box::new(move |g| {
                vec![Tensor::from_vec(&shape, g.data().to_vec()).expect("resize grad")]
            }),
        );
        return Ok(out.with_tape_id(id));
    }

    let ys = axis_plan(h, h2);
    let xs = axis_plan(w, w2);
    let data = x.data();
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v = (1.0 - fy) * (1.0 - fx) * plane[y0 * w + x0]
                    + (1.0 - fy) * fx * plane[y0 * w + x1]
                    + fy * (1.0 - fx) * plane[y1 * w + x0]
                    + fy * fx * plane[y1 * w + x1];
                out[(ch * h2 + oy) * w2 + ox] = v;
            }
        }
    }
    let result = Tensor::from_vec(&[c, h2, w2], out)?;

    let xshape = x.shape().to_vec();
    let id = tape::record(
        &[x.tape_id],
        Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let gv = gd[(ch * h2 + oy) * w2 + ox];
                        let base = ch * h * w;
                        dx[base + y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * gv;
                        dx[base + y0 * w + x1] += (1.0 - fy) * fx * gv;
                        dx[base + y1 * w + x0] += fy * (1.0 - fx) * gv;
                        dx[base + y1 * w + x1] += fy * fx * gv;
                    }
                }
            }
            vec![Tensor::from_vec(&xshape, dx).expect("resize grad")]
        }),
    );
    Ok(result.with_tape_id(id))
}
