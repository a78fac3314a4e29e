//! Query-update strategies, one per decoder design under comparison:
//!
//! * `pool_dcg` — mask pooling + dynamic convolution with learned gates
//!   (the default path).
//! * `pool_dc`  — mask pooling + a static learned combination, no gate
//!   networks.
//! * `per_pixel_ca` — single-head cross-attention from queries to every
//!   stride-4 pixel, the heavier design the pooling path replaces.
//!
//! Strategies live behind `dyn QueryUpdate` and are selected by name from
//! config (`model.decoder`) or the CLI (`--decoder`).

use miniseg_tensor::{ops, Tensor};

use crate::error::{Error, Result};
use crate::init::Rng8;
use crate::layers::{GatePair, Linear};
use crate::params::{join, ParamVisit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    PoolDcg,
    PoolDc,
    PerPixelCa,
}

/// Name table for runtime selection.
pub const UPDATE_REGISTRY: [(&str, UpdateKind); 3] = [
    ("pool_dcg", UpdateKind::PoolDcg),
    ("pool_dc", UpdateKind::PoolDc),
    ("per_pixel_ca", UpdateKind::PerPixelCa),
];

impl UpdateKind {
    pub fn from_name(name: &str) -> Result<Self> {
        UPDATE_REGISTRY
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| *k)
            .ok_or_else(|| {
                let names: Vec<&str> = UPDATE_REGISTRY.iter().map(|(n, _)| *n).collect();
                Error::Config(format!(
                    "unknown decoder kind '{name}' (expected one of {})",
                    names.join("|")
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        UPDATE_REGISTRY
            .iter()
            .find(|(_, k)| k == self)
            .map(|(n, _)| *n)
            .unwrap()
    }
}

/// One decoder-stage query refinement: takes the queries, the previous
/// stage's mask logits over the feature pixels, and the flattened features.
pub trait QueryUpdate: ParamVisit + QueryUpdateClone {
    fn kind(&self) -> UpdateKind;
    fn update(
        &self,
        queries: &Tensor,       // [n, d]
        prev_mask_logits: &Tensor, // [n, pixels]
        feat_flat: &Tensor,     // [pixels, d]
    ) -> Result<Tensor>;
}

pub trait QueryUpdateClone {
    fn clone_box(&self) -> Box<dyn QueryUpdate>;
}

impl<T: 'static + QueryUpdate + Clone> QueryUpdateClone for T {
    fn clone_box(&self) -> Box<dyn QueryUpdate> {
        Box::new(self.clone())
    }
}

impl Clone for Box<dyn QueryUpdate> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub fn build_update(kind: UpdateKind, d: usize, rng: &mut Rng8) -> Box<dyn QueryUpdate> {
    match kind {
        UpdateKind::PoolDcg => Box::new(PoolDcg::new(d, rng)),
        UpdateKind::PoolDc => Box::new(PoolDc::new(d)),
        UpdateKind::PerPixelCa => Box::new(PerPixelCa::new(d, rng)),
    }
}

/// Mask-weighted feature pooling over flattened pixels, no normalization:
/// `X = weights . feat`.
pub fn pool_flat(weights: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
    Ok(ops::matmul(weights, feat_flat)?)
}

/// Pooling + gated dynamic convolution.
#[derive(Debug, Clone)]
pub struct PoolDcg {
    pub gates: GatePair,
}

impl PoolDcg {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        PoolDcg {
            gates: GatePair::new(d, rng),
        }
    }
}

impl QueryUpdate for PoolDcg {
    fn kind(&self) -> UpdateKind {
        UpdateKind::PoolDcg
    }

    fn update(&self, queries: &Tensor, prev_mask_logits: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
        let weights = ops::sigmoid(prev_mask_logits);
        let pooled = pool_flat(&weights, feat_flat)?;
        self.gates.dynamic_conv(&pooled, queries)
    }
}

impl ParamVisit for PoolDcg {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.gates.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.gates.visit_mut(prefix, f);
    }
}

/// Pooling + static per-channel combination weights (no gate networks).
#[derive(Debug, Clone)]
pub struct PoolDc {
    pub wx: Tensor, // [1, d]
    pub wq: Tensor, // [1, d]
}

impl PoolDc {
    pub fn new(d: usize) -> Self {
        let mut wx = Tensor::full(&[1, d], 0.5);
        wx.set_requires_grad(true);
        let mut wq = Tensor::full(&[1, d], 0.5);
        wq.set_requires_grad(true);
        PoolDc { wx, wq }
    }
}

impl QueryUpdate for PoolDc {
    fn kind(&self) -> UpdateKind {
        UpdateKind::PoolDc
    }

    fn update(&self, queries: &Tensor, prev_mask_logits: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
        let weights = ops::sigmoid(prev_mask_logits);
        let pooled = pool_flat(&weights, feat_flat)?;
        crate::layers::gated_combine(&self.wx, &self.wq, &pooled, queries)
    }
}

impl ParamVisit for PoolDc {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "wx"), &self.wx);
        f(&join(prefix, "wq"), &self.wq);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "wx"), &mut self.wx);
        f(&join(prefix, "wq"), &mut self.wq);
    }
}

/// Single-head cross-attention from queries to all feature pixels.
#[derive(Debug, Clone)]
pub struct PerPixelCa {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    d: usize,
}

impl PerPixelCa {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        PerPixelCa {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            d,
        }
    }
}

impl QueryUpdate for PerPixelCa {
    fn kind(&self) -> UpdateKind {
        UpdateKind::PerPixelCa
    }

    fn update(&self, queries: &Tensor, _prev_mask_logits: &Tensor, feat_flat: &Tensor) -> Result<Tensor> {
        let q = self.wq.forward(queries)?;
        let k = self.wk.forward(feat_flat)?;
        let v = self.wv.forward(feat_flat)?;
        let scale = 1.0 / (self.d as f64).sqrt();
        let logits = ops::scale(&ops::matmul(&q, &ops::transpose(&k)?)?, scale);
        let attn = ops::softmax(&logits, 1)?;
        self.wo.forward(&ops::matmul(&attn, &v)?)
    }
}

impl ParamVisit for PerPixelCa {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn registry_roundtrip() {
        for (name, kind) in UPDATE_REGISTRY {
            assert_eq!(UpdateKind::from_name(name).unwrap(), kind);
            assert_eq!(kind.name(), name);
        }
        assert!(UpdateKind::from_name("nope").is_err());
    }

    #[test]
    fn every_strategy_preserves_query_shape() {
        let mut rng = Rng8::seed_from_u64(20);
        let (n, d, pixels) = (4, 8, 12);
        let queries = crate::init::trunc_normal(&[n, d], 1.0, &mut rng).detached();
        let logits = crate::init::trunc_normal(&[n, pixels], 1.0, &mut rng).detached();
        let feat = crate::init::trunc_normal(&[pixels, d], 1.0, &mut rng).detached();
        for (_, kind) in UPDATE_REGISTRY {
            let s = build_update(kind, d, &mut rng);
            let out = s.update(&queries, &logits, &feat).unwrap();
            assert_eq!(out.shape(), &[n, d], "{:?}", kind);
        }
    }
}
