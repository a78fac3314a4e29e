//! Shared weight-bearing building blocks: linear maps, norm affines, sigmoid
//! gates, multi-head self-attention, feed-forward blocks, and the per-stage
//! prediction head (mask embedding projection + classifier).

use miniseg_tensor::{ops, Tensor};

use crate::error::Result;
use crate::init::{ones_param, trunc_normal, zeros_param, Rng8};
use crate::params::{join, ParamVisit};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [din, dout]
    pub b: Tensor, // [1, dout]
}

impl Linear {
    pub fn new(din: usize, dout: usize, rng: &mut Rng8) -> Self {
        Linear {
            w: trunc_normal(&[din, dout], 0.02, rng),
            b: zeros_param(&[1, dout]),
        }
    }

    /// Attention-projection init (scale-preserving).
    pub fn new_xavier(din: usize, dout: usize, rng: &mut Rng8) -> Self {
        Linear {
            w: crate::init::xavier_normal(din, dout, rng),
            b: zeros_param(&[1, dout]),
        }
    }

    /// Identity init: the positional-correlation kernel between query and
    /// key encodings is visible to the softmax from the first step.
    pub fn new_identity(d: usize) -> Self {
        Linear {
            w: crate::init::identity_param(d),
            b: zeros_param(&[1, d]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::add(&ops::matmul(x, &self.w)?, &self.b)?)
    }
}

impl ParamVisit for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Norm affine pair, usable for last-axis layer norm or channel norm.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    pub fn new(d: usize) -> Self {
        Norm {
            gamma: ones_param(&[d]),
            beta: zeros_param(&[d]),
        }
    }

    pub fn layer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::layer_norm(x, &self.gamma, &self.beta, LN_EPS)?)
    }

    pub fn channel(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::channel_norm(x, &self.gamma, &self.beta, LN_EPS)?)
    }
}

impl ParamVisit for Norm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// One gating function: fully connected layer, layer norm, sigmoid.
#[derive(Debug, Clone)]
pub struct Gate {
    pub fc: Linear,
    pub ln: Norm,
}

impl Gate {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        Gate {
            fc: Linear::new(d, d, rng),
            ln: Norm::new(d),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::sigmoid(&self.ln.layer(&self.fc.forward(x)?)?))
    }
}

impl ParamVisit for Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc.visit(&join(prefix, "fc"), f);
        self.ln.visit(&join(prefix, "ln"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.ln.visit_mut(&join(prefix, "ln"), f);
    }
}

/// The two gate functions of the dynamic convolution update.
#[derive(Debug, Clone)]
pub struct GatePair {
    pub gate_x: Gate,
    pub gate_q: Gate,
}

impl GatePair {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        GatePair {
            gate_x: Gate::new(d, rng),
            gate_q: Gate::new(d, rng),
        }
    }

    /// `sigma(LN(FC_x(X))) .* X + sigma(LN(FC_q(X))) .* Q_prev`.
    pub fn dynamic_conv(&self, x: &Tensor, q_prev: &Tensor) -> Result<Tensor> {
        let gx = self.gate_x.forward(x)?;
        let gq = self.gate_q.forward(x)?;
        gated_combine(&gx, &gq, x, q_prev)
    }
}

/// The combine step alone, so tests can pin the gate activations.
pub fn gated_combine(gx: &Tensor, gq: &Tensor, x: &Tensor, q_prev: &Tensor) -> Result<Tensor> {
    Ok(ops::add(&ops::mul(gx, x)?, &ops::mul(gq, q_prev)?)?)
}

impl ParamVisit for GatePair {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.gate_x.visit(&join(prefix, "gate_x"), f);
        self.gate_q.visit(&join(prefix, "gate_q"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.gate_x.visit_mut(&join(prefix, "gate_x"), f);
        self.gate_q.visit_mut(&join(prefix, "gate_q"), f);
    }
}

/// Multi-head self-attention with scaled dot-product weights.
#[derive(Debug, Clone)]
pub struct Mhsa {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl Mhsa {
    pub fn new(d: usize, heads: usize, rng: &mut Rng8) -> Self {
        debug_assert_eq!(d % heads, 0);
        Mhsa {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.shape()[1];
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ops::slice_cols(&q, h * dh, dh)?;
            let kh = ops::slice_cols(&k, h * dh, dh)?;
            let vh = ops::slice_cols(&v, h * dh, dh)?;
            let logits = ops::scale(&ops::matmul(&qh, &ops::transpose(&kh)?)?, scale);
            let attn = ops::softmax(&logits, 1)?;
            head_outs.push(ops::matmul(&attn, &vh)?);
        }
        let refs: Vec<&Tensor> = head_outs.iter().collect();
        let merged = ops::concat_cols(&refs)?;
        self.wo.forward(&merged)
    }
}

impl ParamVisit for Mhsa {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}

/// Two-layer feed-forward block with GELU, hidden width 2d.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        Ffn {
            fc1: Linear::new(d, 2 * d, rng),
            fc2: Linear::new(2 * d, d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&ops::gelu(&self.fc1.forward(x)?))
    }
}

impl ParamVisit for Ffn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Per-stage outputs: learned mask-embedding projection and the two-layer
/// classifier producing `C + 1` logits (last slot = no-object).
#[derive(Debug, Clone)]
pub struct PredictionHead {
    pub mask_proj: Linear,
    pub cls1: Linear,
    pub cls2: Linear,
}

impl PredictionHead {
    pub fn new(d: usize, classes: usize, rng: &mut Rng8) -> Self {
        PredictionHead {
            mask_proj: Linear::new(d, d, rng),
            cls1: Linear::new(d, d, rng),
            cls2: Linear::new(d, classes + 1, rng),
        }
    }

    /// Mask logits by dot product of projected queries with the flattened
    /// feature pixels: `[n, d] . [d, pixels] -> [n, pixels]`.
    pub fn mask_logits(&self, queries: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
        let projected = self.mask_proj.forward(queries)?;
        predict_masks(&projected, feat_flat)
    }

    pub fn classify(&self, queries: &Tensor) -> Result<Tensor> {
        self.cls2.forward(&ops::gelu(&self.cls1.forward(queries)?))
    }
}

/// Raw dot-product mask prediction for already-projected queries.
pub fn predict_masks(projected_queries: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
    Ok(ops::matmul(
        projected_queries,
        &ops::transpose(feat_flat)?,
    )?)
}

impl ParamVisit for PredictionHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mask_proj.visit(&join(prefix, "mask_proj"), f);
        self.cls1.visit(&join(prefix, "cls1"), f);
        self.cls2.visit(&join(prefix, "cls2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mask_proj.visit_mut(&join(prefix, "mask_proj"), f);
        self.cls1.visit_mut(&join(prefix, "cls1"), f);
        self.cls2.visit_mut(&join(prefix, "cls2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gated_combine_pins() {
        let x = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let q = Tensor::from_vec(&[2, 3], vec![-1., -2., -3., -4., -5., -6.]).unwrap();
        let zeros = Tensor::zeros(&[2, 3]);
        let ones = Tensor::full(&[2, 3], 1.0);
        // g_x = 0, g_q = 1 -> Q_prev
        let out = gated_combine(&zeros, &ones, &x, &q).unwrap();
        assert_eq!(out.data(), q.data());
        // g_x = 1, g_q = 0 -> X
        let out = gated_combine(&ones, &zeros, &x, &q).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn mhsa_singleton_softmax_weight_is_one() {
        let mut rng = Rng8::seed_from_u64(3);
        let d = 8;
        let mhsa = Mhsa::new(d, 2, &mut rng);
        let x = trunc_normal(&[1, d], 1.0, &mut rng).detached();
        let got = mhsa.forward(&x).unwrap();
        // with one row, attention collapses to the value path: Wo(Wv x)
        let v = mhsa.wv.forward(&x).unwrap();
        let want = mhsa.wo.forward(&v).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mhsa_is_permutation_equivariant() {
        let mut rng = Rng8::seed_from_u64(4);
        let d = 8;
        let mhsa = Mhsa::new(d, 4, &mut rng);
        let x = trunc_normal(&[5, d], 1.0, &mut rng).detached();
        let base = mhsa.forward(&x).unwrap();
        // rotate rows by 2
        let lo = ops::slice_axis0(&x, 0, 2).unwrap();
        let hi = ops::slice_axis0(&x, 2, 3).unwrap();
        let rotated = ops::concat_axis0(&[&hi, &lo]).unwrap();
        let rotated_out = mhsa.forward(&rotated).unwrap();
        for r in 0..5 {
            let src = (r + 2) % 5;
            for c in 0..d {
                assert!((rotated_out.at(&[r, c]) - base.at(&[src, c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_rows_stay_identical_through_mhsa() {
        let mut rng = Rng8::seed_from_u64(5);
        let d = 8;
        let mhsa = Mhsa::new(d, 2, &mut rng);
        let row = trunc_normal(&[1, d], 1.0, &mut rng).detached();
        let x = ops::concat_axis0(&[&row, &row]).unwrap();
        let y = mhsa.forward(&x).unwrap();
        for c in 0..d {
            assert_eq!(y.at(&[0, c]).to_bits(), y.at(&[1, c]).to_bits());
        }
    }

    #[test]
    fn classifier_shape_contract() {
        let mut rng = Rng8::seed_from_u64(6);
        let head = PredictionHead::new(16, 5, &mut rng);
        let q = Tensor::zeros(&[20, 16]);
        let logits = head.classify(&q).unwrap();
        assert_eq!(logits.shape(), &[20, 6]);
        // zero queries + zero bias: logits equal the bias row (all zeros)
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }
}
