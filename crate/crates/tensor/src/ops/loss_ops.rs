use super::elementwise::sigmoid_scalar;
use crate::tape;
use crate::tensor::{Tensor, TensorError};

/// Mean binary cross-entropy with logits, computed in the stable form
/// `softplus(z) - t*z` (softplus(z) = max(z,0) + ln(1 + exp(-|z|))).
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> crate::Result<Tensor> {
    if logits.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_with_logits",
            lhs: logits.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let n = logits.numel() as f64;
    let mut total = 0.0;
    for (&z, &t) in logits.data().iter().zip(target.data()) {
        total += softplus(z) - t * z;
    }
    let result = Tensor::scalar(total / n);

    let zv = logits.data().to_vec();
    let tv = target.data().to_vec();
    let shape = logits.shape().to_vec();
    let id = tape::record(
        &[logits.tape_id, target.tape_id],
        Box::new(move |g| {
            let gv = g.scalar_value() / n;
            let dz: Vec<f64> = zv
                .iter()
                .zip(&tv)
                .map(|(&z, &t)| gv * (sigmoid_scalar(z) - t))
                .collect();
            let dt: Vec<f64> = zv.iter().map(|&z| -gv * z).collect();
            vec![
                Tensor::from_vec(&shape, dz).expect("bce dz"),
                Tensor::from_vec(&shape, dt).expect("bce dt"),
            ]
        }),
    );
    Ok(result.with_tape_id(id))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Weighted-mean softmax cross-entropy over rows of `logits [n, c]`:
/// `sum_i w_{y_i} * (-log softmax(logits_i)[y_i]) / sum_i w_{y_i}`
/// with `w` indexed by label (the PyTorch class-weight convention).
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> crate::Result<Tensor> {
    if logits.rank() != 2 {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("expects [n, c], got {:?}", logits.shape()),
        });
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("{} labels for {n} rows", labels.len()),
        });
    }
    if class_weights.len() != c {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("{} class weights for {c} classes", class_weights.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("label {bad} out of range 0..{c}"),
        });
    }

    let data = logits.data();
    let mut probs = vec![0.0; n * c];
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for i in 0..n {
        let row = &data[i * c..(i + 1) * c];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c {
            let e = (row[j] - maxv).exp();
            probs[i * c + j] = e;
            denom += e;
        }
        for j in 0..c {
            probs[i * c + j] /= denom;
        }
        let w = class_weights[labels[i]];
        weight_sum += w;
        // -log p = log denom - (z_y - max)
        total += w * (denom.ln() - (row[labels[i]] - maxv));
    }
    let result = Tensor::scalar(total / weight_sum);

    let labels = labels.to_vec();
    let weights = class_weights.to_vec();
    let shape = logits.shape().to_vec();
    let id = tape::record(
        &[logits.tape_id],
        Box::new(move |g| {
            let gv = g.scalar_value() / weight_sum;
            let mut dz = vec![0.0; n * c];
            for i in 0..n {
                let w = weights[labels[i]];
                for j in 0..c {
                    let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                    dz[i * c + j] = gv * w * (probs[i * c + j] - onehot);
                }
            }
            vec![Tensor::from_vec(&shape, dz).expect("ce dz")]
        }),
    );
    Ok(result.with_tape_id(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_ln2_per_pixel() {
        let z = Tensor::zeros(&[2, 4]);
        let t = Tensor::from_vec(&[2, 4], vec![1., 0., 1., 0., 0., 1., 0., 1.]).unwrap();
        let loss = bce_with_logits(&z, &t).unwrap();
        assert!((loss.scalar_value() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_vanish() {
        let z = Tensor::from_vec(&[4], vec![30.0, -30.0, 30.0, -30.0]).unwrap();
        let t = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let loss = bce_with_logits(&z, &t).unwrap();
        assert!(loss.scalar_value() < 1e-8);
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let z = Tensor::zeros(&[3, 6]);
        let loss = softmax_cross_entropy(&z, &[0, 3, 5], &[1.0; 6]).unwrap();
        assert!((loss.scalar_value() - 6.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_matches_hand_computation() {
        // Rows: saturated-correct (≈0 loss), uniform (ln 3), class weights (1, 0.1, 1).
        let z = Tensor::from_vec(&[2, 3], vec![40.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let loss = softmax_cross_entropy(&z, &[0, 1], &[1.0, 0.1, 1.0]).unwrap();
        let expect = (1.0 * 0.0 + 0.1 * 3.0_f64.ln()) / 1.1;
        assert!((loss.scalar_value() - expect).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let z = Tensor::zeros(&[1, 3]);
        assert!(softmax_cross_entropy(&z, &[3], &[1.0; 3]).is_err());
    }
}
