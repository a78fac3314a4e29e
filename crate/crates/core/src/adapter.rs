//! Post-decoder adapters. The object and prompt branches each get one,
//! selected independently by name: `none` (identity), `dc` (one extra
//! pooling + gated dynamic convolution round), or `ca` (single-head
//! cross-attention over all stride-4 pixels, with a fixed 2-D sine
//! positional encoding added to the keys).
//!
//! The asymmetric default pairs `dc` for objects with `ca` for prompts.

use miniseg_tensor::{ops, Tensor};

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::init::Rng8;
use crate::layers::{GatePair, Linear};
use crate::params::{join, ParamVisit};
use crate::prompt::positional_encoding;
use crate::update::pool_flat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    None,
    Dc,
    Ca,
}

pub const ADAPTER_REGISTRY: [(&str, AdapterKind); 3] = [
    ("none", AdapterKind::None),
    ("dc", AdapterKind::Dc),
    ("ca", AdapterKind::Ca),
];

impl AdapterKind {
    pub fn from_name(name: &str) -> Result<Self> {
        if name == "-" {
            return Ok(AdapterKind::None);
        }
        ADAPTER_REGISTRY
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| *k)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown adapter kind '{name}' (expected none|dc|ca)"
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        ADAPTER_REGISTRY
            .iter()
            .find(|(_, k)| k == self)
            .map(|(n, _)| *n)
            .unwrap()
    }
}

pub trait Adapter: ParamVisit + AdapterClone {
    fn kind(&self) -> AdapterKind;
    /// Refine `queries [n, d]` given the final-stage mask logits
    /// `[n, pixels]` and the feature map. `query_pos` carries the queries'
    /// own positional encodings when they have any (prompt queries); the
    /// cross-attention path adds it on the query side, mirroring the fixed
    /// grid encoding on the key side.
    fn adapt(
        &self,
        queries: &Tensor,
        query_pos: Option<&Tensor>,
        mask_logits: &Tensor,
        feat: &FeatureMap,
    ) -> Result<Tensor>;
}

pub trait AdapterClone {
    fn clone_box(&self) -> Box<dyn Adapter>;
}

impl<T: 'static + Adapter + Clone> AdapterClone for T {
    fn clone_box(&self) -> Box<dyn Adapter> {
        Box::new(self.clone())
    }
}

impl Clone for Box<dyn Adapter> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub fn build_adapter(kind: AdapterKind, d: usize, rng: &mut Rng8) -> Box<dyn Adapter> {
    match kind {
        AdapterKind::None => Box::new(NoneAdapter),
        AdapterKind::Dc => Box::new(DcAdapter {
            gates: GatePair::new(d, rng),
        }),
        AdapterKind::Ca => Box::new(CaAdapter {
            // identity q/k: attention starts as the positional-correlation
            // kernel between the query's encoding and the key grid
            wq: Linear::new_identity(d),
            wk: Linear::new_identity(d),
            wv: Linear::new_xavier(d, d, rng),
            wo: Linear::new_xavier(d, d, rng),
            d,
        }),
    }
}

#[derive(Clone)]
pub struct NoneAdapter;

impl Adapter for NoneAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::None
    }

    fn adapt(
        &self,
        queries: &Tensor,
        _pos: Option<&Tensor>,
        _m: &Tensor,
        _f: &FeatureMap,
    ) -> Result<Tensor> {
        Ok(queries.clone())
    }
}

impl ParamVisit for NoneAdapter {
    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

/// One more pooling + gated dynamic-convolution round.
#[derive(Clone)]
pub struct DcAdapter {
    pub gates: GatePair,
}

impl Adapter for DcAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Dc
    }

    fn adapt(
        &self,
        queries: &Tensor,
        _pos: Option<&Tensor>,
        mask_logits: &Tensor,
        feat: &FeatureMap,
    ) -> Result<Tensor> {
        let weights = ops::sigmoid(mask_logits);
        let pooled = pool_flat(&weights, &feat.flat()?)?;
        self.gates.dynamic_conv(&pooled, queries)
    }
}

impl ParamVisit for DcAdapter {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.gates.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.gates.visit_mut(prefix, f);
    }
}

/// Single-head cross-attention from queries to every feature pixel. Keys get
/// a fixed 2-D sine positional encoding (pixel centers, same band layout as
/// the prompt encoder); values are the raw pixels.
#[derive(Clone)]
pub struct CaAdapter {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    d: usize,
}

/// Positional grid for the stride-4 pixels, repeated per frame for clips.
fn pixel_grid_pe(feat: &FeatureMap, d: usize) -> Tensor {
    let (h, w) = feat.hw();
    let t = feat.frames();
    let mut data = Vec::with_capacity(t * h * w * d);
    for _ in 0..t {
        for u in 0..h {
            for v in 0..w {
                data.extend(positional_encoding(
                    v as f64 + 0.5,
                    u as f64 + 0.5,
                    w,
                    h,
                    d,
                ));
            }
        }
    }
    Tensor::from_vec(&[t * h * w, d], data).expect("pe grid shape")
}

impl Adapter for CaAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Ca
    }

    fn adapt(
        &self,
        queries: &Tensor,
        query_pos: Option<&Tensor>,
        _m: &Tensor,
        feat: &FeatureMap,
    ) -> Result<Tensor> {
        let flat = feat.flat()?;
        let keyed = ops::add(&flat, &pixel_grid_pe(feat, self.d))?;
        let q_in = match query_pos {
            Some(pos) => ops::add(queries, pos)?,
            None => queries.clone(),
        };
        let q = self.wq.forward(&q_in)?;
        let k = self.wk.forward(&keyed)?;
        let v = self.wv.forward(&flat)?;
        let scale = 1.0 / (self.d as f64).sqrt();
        let logits = ops::scale(&ops::matmul(&q, &ops::transpose(&k)?)?, scale);
        let attn = ops::softmax(&logits, 1)?;
        self.wo.forward(&ops::matmul(&attn, &v)?)
    }
}

impl ParamVisit for CaAdapter {
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
    use crate::init::trunc_normal;
    use crate::layers::gated_combine;
    use rand::SeedableRng;

    fn setup(d: usize, seed: u64) -> (FeatureMap, Tensor, Tensor, Rng8) {
        let mut rng = Rng8::seed_from_u64(seed);
        let feat = FeatureMap::image(trunc_normal(&[4, 4, d], 1.0, &mut rng).detached());
        let queries = trunc_normal(&[3, d], 1.0, &mut rng).detached();
        let masks = trunc_normal(&[3, 16], 1.0, &mut rng).detached();
        (feat, queries, masks, rng)
    }

    #[test]
    fn none_is_bit_identity() {
        let (feat, q, m, _) = setup(8, 40);
        let a = NoneAdapter;
        let out = a.adapt(&q, None, &m, &feat).unwrap();
        assert_eq!(out.data(), q.data());
    }

    #[test]
    fn dc_with_pinned_gates_is_identity_on_queries() {
        let (feat, q, m, _) = setup(8, 41);
        // pinned activations g_x = 0, g_q = 1 reduce the combine to Q_prev
        let weights = ops::sigmoid(&m);
        let pooled = pool_flat(&weights, &feat.flat().unwrap()).unwrap();
        let zeros = Tensor::zeros(&[3, 8]);
        let ones = Tensor::full(&[3, 8], 1.0);
        let out = gated_combine(&zeros, &ones, &pooled, &q).unwrap();
        assert_eq!(out.data(), q.data());
    }

    fn fresh_ca(d: usize, rng: &mut Rng8) -> CaAdapter {
        CaAdapter {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            d,
        }
    }

    #[test]
    fn ca_uniform_attention_yields_pixel_mean_values() {
        let (feat, q, m, mut rng) = setup(8, 42);
        let mut ca = fresh_ca(8, &mut rng);
        // zero the key projection: every key equals the bias -> uniform attn
        for v in ca.wk.w.data_mut() {
            *v = 0.0;
        }
        let out = ca.adapt(&q, None, &m, &feat).unwrap();

        // direct mean computation over value vectors
        let flat = feat.flat().unwrap();
        let v = ca.wv.forward(&flat).unwrap();
        let hw = flat.shape()[0];
        let mut mean = vec![0.0; 8];
        for p in 0..hw {
            for c in 0..8 {
                mean[c] += v.at(&[p, c]) / hw as f64;
            }
        }
        let want = ca
            .wo
            .forward(&Tensor::from_vec(&[1, 8], mean).unwrap())
            .unwrap();
        for row in 0..3 {
            for c in 0..8 {
                assert!((out.at(&[row, c]) - want.at(&[0, c])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn saturated_key_selects_single_pixel_value() {
        let d = 4;
        let (h, w) = (2, 2);
        let mut rng = Rng8::seed_from_u64(43);
        let feat = FeatureMap::image(trunc_normal(&[h, w, d], 0.5, &mut rng).detached());
        let mut ca = fresh_ca(d, &mut rng);
        // identity query projection so the attention logits are
        // q . k_p / sqrt(d) for a hand-built q.
        for (i, v) in ca.wq.w.data_mut().iter_mut().enumerate() {
            *v = if i % (d + 1) == 0 { 1.0 } else { 0.0 };
        }
        for v in ca.wq.b.data_mut() {
            *v = 0.0;
        }
        let flat = feat.flat().unwrap();
        let keyed = ops::add(&flat, &super::pixel_grid_pe(&feat, d)).unwrap();
        let keys = ca.wk.forward(&keyed).unwrap();
        let hw = h * w;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let key_row = |p: usize| (0..d).map(|c| keys.at(&[p, c])).collect::<Vec<f64>>();
        // target the largest-norm key; scale q along it until the logit
        // margin over every other pixel is at least 20
        let target = (0..hw)
            .max_by(|&a, &b| {
                dot(&key_row(a), &key_row(a))
                    .partial_cmp(&dot(&key_row(b), &key_row(b)))
                    .unwrap()
            })
            .unwrap();
        let kt = key_row(target);
        let self_dot = dot(&kt, &kt);
        let runner_up = (0..hw)
            .filter(|&p| p != target)
            .map(|p| dot(&kt, &key_row(p)))
            .fold(f64::NEG_INFINITY, f64::max);
        let gap = self_dot - runner_up;
        assert!(gap > 0.0, "degenerate test geometry");
        let c = 25.0 * (d as f64).sqrt() / gap;
        let q = Tensor::from_vec(&[1, d], kt.iter().map(|v| c * v).collect()).unwrap();

        let out = ca.adapt(&q, None, &Tensor::zeros(&[1, hw]), &feat).unwrap();
        let v = ca.wv.forward(&flat).unwrap();
        let vt: Vec<f64> = (0..d).map(|ch| v.at(&[target, ch])).collect();
        let want = ca
            .wo
            .forward(&Tensor::from_vec(&[1, d], vt).unwrap())
            .unwrap();
        for ch in 0..d {
            assert!(
                (out.at(&[0, ch]) - want.at(&[0, ch])).abs() < 1e-6,
                "channel {ch}"
            );
        }
    }

    #[test]
    fn removing_a_prompt_leaves_others_bit_identical() {
        let (feat, q, m, mut rng) = setup(8, 44);
        let ca = build_adapter(AdapterKind::Ca, 8, &mut rng);
        let all = ca.adapt(&q, None, &m, &feat).unwrap();
        let q1 = ops::slice_axis0(&q, 0, 1).unwrap().detached();
        let m1 = ops::slice_axis0(&m, 0, 1).unwrap().detached();
        let solo = ca.adapt(&q1, None, &m1, &feat).unwrap();
        assert_eq!(&all.data()[..8], solo.data());
    }
}
