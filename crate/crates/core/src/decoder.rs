//! The shared three-stage decoder: per-stage mask prediction by dot product,
//! mask pooling, a query-update strategy, self-attention + FFN for object
//! queries, and per-stage classification.
//!
//! Prompt queries run the same per-stage update with shared weights but stay
//! out of the self-attention mix (each prompt must be independent of the
//! others), unless `prompt_in_mhsa` is explicitly enabled.

use miniseg_tensor::{ops, Tensor};

use crate::backbone::{FeatMode, FeatureMap};
use crate::config::DECODER_STAGES;
use crate::error::{Error, Result};
use crate::init::Rng8;
use crate::layers::{Ffn, Mhsa, PredictionHead};
use crate::params::{join, ParamVisit};
use crate::update::{build_update, pool_flat, QueryUpdate, UpdateKind};

/// Eq. 1: image mask pooling, `X[q] = sum_uv weights[q,u,v] * F[u,v]`.
pub fn mask_pool_image(weights: &Tensor, feat: &FeatureMap) -> Result<Tensor> {
    if feat.mode != FeatMode::Image {
        return Err(Error::Contract("mask_pool_image wants image features".into()));
    }
    let (h, w) = feat.hw();
    if weights.rank() != 3 || weights.shape()[1] != h || weights.shape()[2] != w {
        return Err(Error::Input(format!(
            "pooling weights {:?} do not match features {}x{}",
            weights.shape(),
            h,
            w
        )));
    }
    let n = weights.shape()[0];
    let flat_w = ops::reshape(weights, &[n, h * w])?;
    pool_flat(&flat_w, &feat.flat()?)
}

/// Eq. 2: spatio-temporal pooling over tube masks.
pub fn mask_pool_video(weights: &Tensor, feat: &FeatureMap) -> Result<Tensor> {
    if feat.mode != FeatMode::Video {
        return Err(Error::Contract("mask_pool_video wants video features".into()));
    }
    let t = feat.frames();
    let (h, w) = feat.hw();
    if weights.rank() != 4
        || weights.shape()[1] != t
        || weights.shape()[2] != h
        || weights.shape()[3] != w
    {
        return Err(Error::Input(format!(
            "tube pooling weights {:?} do not match features {}x{}x{}",
            weights.shape(),
            t,
            h,
            w
        )));
    }
    let n = weights.shape()[0];
    let flat_w = ops::reshape(weights, &[n, t * h * w])?;
    pool_flat(&flat_w, &feat.flat()?)
}

/// Self-attention + feed-forward for object queries. The written form has
/// the residual inside the FFN argument only; `extra_residual` switches to
/// the conventional placement with a second residual around the FFN.
#[derive(Debug, Clone)]
pub struct QueryMix {
    pub mhsa: Mhsa,
    pub ffn: Ffn,
}

impl QueryMix {
    pub fn new(d: usize, heads: usize, rng: &mut Rng8) -> Self {
        QueryMix {
            mhsa: Mhsa::new(d, heads, rng),
            ffn: Ffn::new(d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, extra_residual: bool) -> Result<Tensor> {
        let y = ops::add(&self.mhsa.forward(x)?, x)?;
        let f = self.ffn.forward(&y)?;
        if extra_residual {
            Ok(ops::add(&y, &f)?)
        } else {
            Ok(f)
        }
    }
}

impl ParamVisit for QueryMix {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mhsa.visit(&join(prefix, "mhsa"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mhsa.visit_mut(&join(prefix, "mhsa"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

#[derive(Clone)]
pub struct DecoderStage {
    pub update: Box<dyn QueryUpdate>,
    pub mix: QueryMix,
    pub head: PredictionHead,
}

impl ParamVisit for DecoderStage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.update.visit(&join(prefix, "update"), f);
        self.mix.visit(&join(prefix, "mix"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.update.visit_mut(&join(prefix, "update"), f);
        self.mix.visit_mut(&join(prefix, "mix"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// One prediction set. Object masks and class logits are present whenever
/// object queries ran; prompt masks whenever prompt queries ran. Mask logits
/// stay flat (`[n, pixels]`) inside the decoder.
#[derive(Debug, Clone, Default)]
pub struct StagePrediction {
    pub obj_masks: Option<Tensor>,
    pub class_logits: Option<Tensor>,
    pub prompt_masks: Option<Tensor>,
}

pub struct DecoderOutputs {
    /// Initial predictions plus one set per stage (1 + 3).
    pub stages: Vec<StagePrediction>,
    pub obj_queries: Option<Tensor>,
    pub prompt_queries: Option<Tensor>,
}

#[derive(Clone)]
pub struct Decoder {
    pub init_head: PredictionHead,
    pub stages: Vec<DecoderStage>,
}

impl Decoder {
    pub fn new(d: usize, heads: usize, classes: usize, kind: UpdateKind, rng: &mut Rng8) -> Self {
        let init_head = PredictionHead::new(d, classes, rng);
        let stages = (0..DECODER_STAGES)
            .map(|_| DecoderStage {
                update: build_update(kind, d, rng),
                mix: QueryMix::new(d, heads, rng),
                head: PredictionHead::new(d, classes, rng),
            })
            .collect();
        Decoder { init_head, stages }
    }

    /// Run the shared stages. Either query set may be absent; prompt queries
    /// skip the mix unless `prompt_in_mhsa`.
    pub fn forward(
        &self,
        feat: &FeatureMap,
        obj_queries: Option<&Tensor>,
        prompt_queries: Option<&Tensor>,
        prompt_in_mhsa: bool,
        eq5_residual: bool,
    ) -> Result<DecoderOutputs> {
        let flat = feat.flat()?;
        let mut q = obj_queries.cloned();
        let mut p = prompt_queries.cloned();
        let mut q_masks: Option<Tensor> = None;
        let mut p_masks: Option<Tensor> = None;
        let mut outputs = Vec::with_capacity(1 + self.stages.len());

        // initial predictions from the raw queries
        let mut first = StagePrediction::default();
        if let Some(q0) = &q {
            let masks = self.init_head.mask_logits(q0, &flat)?;
            first.class_logits = Some(self.init_head.classify(q0)?);
            q_masks = Some(masks.clone());
            first.obj_masks = Some(masks);
        }
        if let Some(p0) = &p {
            let masks = self.init_head.mask_logits(p0, &flat)?;
            p_masks = Some(masks.clone());
            first.prompt_masks = Some(masks);
        }
        outputs.push(first);

        for stage in &self.stages {
            let mut pred = StagePrediction::default();
            if let Some(q_prev) = &q {
                let refined = stage
                    .update
                    .update(q_prev, q_masks.as_ref().unwrap(), &flat)?;
                let mixed = if prompt_in_mhsa && p.is_some() {
                    let p_prev = p.as_ref().unwrap();
                    let p_refined = stage
                        .update
                        .update(p_prev, p_masks.as_ref().unwrap(), &flat)?;
                    let n = refined.shape()[0];
                    let k = p_refined.shape()[0];
                    let joined = ops::concat_axis0(&[&refined, &p_refined])?;
                    let mixed_all = stage.mix.forward(&joined, eq5_residual)?;
                    let q_new = ops::slice_axis0(&mixed_all, 0, n)?;
                    let p_new = ops::slice_axis0(&mixed_all, n, k)?;
                    let masks = stage.head.mask_logits(&p_new, &flat)?;
                    p_masks = Some(masks.clone());
                    pred.prompt_masks = Some(masks);
                    p = Some(p_new);
                    q_new
                } else {
                    stage.mix.forward(&refined, eq5_residual)?
                };
                let masks = stage.head.mask_logits(&mixed, &flat)?;
                pred.class_logits = Some(stage.head.classify(&mixed)?);
                q_masks = Some(masks.clone());
                pred.obj_masks = Some(masks);
                q = Some(mixed);
            }
            if !(prompt_in_mhsa && pred.prompt_masks.is_some()) {
                if let Some(p_prev) = &p {
                    let refined = stage
                        .update
                        .update(p_prev, p_masks.as_ref().unwrap(), &flat)?;
                    let masks = stage.head.mask_logits(&refined, &flat)?;
                    p_masks = Some(masks.clone());
                    pred.prompt_masks = Some(masks);
                    p = Some(refined);
                }
            }
            outputs.push(pred);
        }

        Ok(DecoderOutputs {
            stages: outputs,
            obj_queries: q,
            prompt_queries: p,
        })
    }

    pub fn last_head(&self) -> &PredictionHead {
        &self.stages.last().unwrap().head
    }
}

impl ParamVisit for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.init_head.visit(&join(prefix, "init_head"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.init_head.visit_mut(&join(prefix, "init_head"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}

/// Reshape flat mask logits to spatial form.
pub fn masks_to_image(flat: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let n = flat.shape()[0];
    Ok(ops::reshape(flat, &[n, h, w])?)
}

pub fn masks_to_video(flat: &Tensor, t: usize, h: usize, w: usize) -> Result<Tensor> {
    let n = flat.shape()[0];
    Ok(ops::reshape(flat, &[n, t, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::trunc_normal;
    use rand::SeedableRng;

    fn image_feat(h: usize, w: usize, d: usize, rng: &mut Rng8) -> FeatureMap {
        FeatureMap::image(trunc_normal(&[h, w, d], 1.0, rng).detached())
    }

    #[test]
    fn pooling_matches_triple_loop() {
        let mut rng = Rng8::seed_from_u64(30);
        let (n, h, w, d) = (4, 8, 8, 16);
        let feat = image_feat(h, w, d, &mut rng);
        let weights = trunc_normal(&[n, h, w], 1.0, &mut rng).detached();
        let pooled = mask_pool_image(&weights, &feat).unwrap();
        for q in 0..n {
            for c in 0..d {
                let mut want = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        want += weights.at(&[q, u, v]) * feat.data.at(&[u, v, c]);
                    }
                }
                assert!((pooled.at(&[q, c]) - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn pooling_all_ones_is_global_sum() {
        let mut rng = Rng8::seed_from_u64(31);
        let (n, h, w, d) = (3, 4, 5, 8);
        let feat = image_feat(h, w, d, &mut rng);
        let ones = Tensor::full(&[n, h, w], 1.0);
        let pooled = mask_pool_image(&ones, &feat).unwrap();
        for c in 0..d {
            let total: f64 = (0..h)
                .flat_map(|u| (0..w).map(move |v| (u, v)))
                .map(|(u, v)| feat.data.at(&[u, v, c]))
                .sum();
            for q in 0..n {
                assert!((pooled.at(&[q, c]) - total).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pooling_indicator_selects_pixel() {
        let mut rng = Rng8::seed_from_u64(32);
        let (h, w, d) = (4, 4, 8);
        let feat = image_feat(h, w, d, &mut rng);
        let mut weights = Tensor::zeros(&[1, h, w]);
        weights.data_mut()[2 * w + 3] = 1.0;
        let pooled = mask_pool_image(&weights, &feat).unwrap();
        for c in 0..d {
            assert!((pooled.at(&[0, c]) - feat.data.at(&[2, 3, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn video_pooling_matches_quadruple_loop_and_t1_image() {
        let mut rng = Rng8::seed_from_u64(33);
        let (n, t, h, w, d) = (3, 2, 4, 4, 8);
        let vid = FeatureMap::video(trunc_normal(&[t, h, w, d], 1.0, &mut rng).detached());
        let weights = trunc_normal(&[n, t, h, w], 1.0, &mut rng).detached();
        let pooled = mask_pool_video(&weights, &vid).unwrap();
        for q in 0..n {
            for c in 0..d {
                let mut want = 0.0;
                for ti in 0..t {
                    for u in 0..h {
                        for v in 0..w {
                            want += weights.at(&[q, ti, u, v]) * vid.data.at(&[ti, u, v, c]);
                        }
                    }
                }
                assert!((pooled.at(&[q, c]) - want).abs() <= 1e-10);
            }
        }

        // T=1 equals image pooling on the single frame
        let frame = FeatureMap::image(
            ops::reshape(&ops::slice_axis0(&vid.data, 0, 1).unwrap(), &[h, w, d]).unwrap(),
        );
        let w1 = trunc_normal(&[n, 1, h, w], 1.0, &mut rng).detached();
        let as_img = ops::reshape(&w1, &[n, h, w]).unwrap();
        let vid1 = FeatureMap::video(ops::slice_axis0(&vid.data, 0, 1).unwrap());
        let a = mask_pool_video(&w1, &vid1).unwrap();
        let b = mask_pool_image(&as_img, &frame).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn one_hot_query_one_hot_feature_gives_unit_logits() {
        let d = 8;
        let (h, w) = (3, 3);
        // feature map one-hot in channel 2 everywhere
        let mut fdata = vec![0.0; h * w * d];
        for p in 0..h * w {
            fdata[p * d + 2] = 1.0;
        }
        let feat = FeatureMap::image(Tensor::from_vec(&[h, w, d], fdata).unwrap());
        let mut q = Tensor::zeros(&[1, d]);
        q.data_mut()[2] = 1.0;
        let logits = crate::layers::predict_masks(&q, &feat.flat().unwrap()).unwrap();
        assert!(logits.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // zero queries -> zero logits
        let z = Tensor::zeros(&[2, d]);
        let logits = crate::layers::predict_masks(&z, &feat.flat().unwrap()).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_emits_one_initial_plus_three_stage_sets() {
        let mut rng = Rng8::seed_from_u64(35);
        let d = 16;
        let dec = Decoder::new(d, 4, 5, UpdateKind::PoolDcg, &mut rng);
        let feat = image_feat(8, 8, d, &mut rng);
        let q = trunc_normal(&[6, d], 1.0, &mut rng).detached();
        let out = dec.forward(&feat, Some(&q), None, false, false).unwrap();
        assert_eq!(out.stages.len(), 1 + DECODER_STAGES);
        for s in &out.stages {
            assert!(s.obj_masks.is_some());
            assert!(s.class_logits.is_some());
            assert!(s.prompt_masks.is_none());
        }
        assert_eq!(out.stages[0].obj_masks.as_ref().unwrap().shape(), &[6, 64]);
        assert_eq!(out.stages[1].class_logits.as_ref().unwrap().shape(), &[6, 6]);
    }

    #[test]
    fn object_path_is_independent_of_prompts() {
        let mut rng = Rng8::seed_from_u64(36);
        let d = 16;
        let dec = Decoder::new(d, 4, 5, UpdateKind::PoolDcg, &mut rng);
        let feat = image_feat(8, 8, d, &mut rng);
        let q = trunc_normal(&[6, d], 1.0, &mut rng).detached();
        let p = trunc_normal(&[2, d], 1.0, &mut rng).detached();

        let without = dec.forward(&feat, Some(&q), None, false, false).unwrap();
        let with = dec.forward(&feat, Some(&q), Some(&p), false, false).unwrap();
        for (a, b) in without.stages.iter().zip(&with.stages) {
            let (ma, mb) = (a.obj_masks.as_ref().unwrap(), b.obj_masks.as_ref().unwrap());
            assert_eq!(ma.data(), mb.data());
            let (ca, cb) = (
                a.class_logits.as_ref().unwrap(),
                b.class_logits.as_ref().unwrap(),
            );
            assert_eq!(ca.data(), cb.data());
        }
    }

    #[test]
    fn per_prompt_masks_are_independent_of_other_prompts() {
        let mut rng = Rng8::seed_from_u64(37);
        let d = 16;
        let dec = Decoder::new(d, 4, 5, UpdateKind::PoolDcg, &mut rng);
        let feat = image_feat(8, 8, d, &mut rng);
        let p_both = trunc_normal(&[2, d], 1.0, &mut rng).detached();
        let p_first = ops::slice_axis0(&p_both, 0, 1).unwrap().detached();

        let both = dec.forward(&feat, None, Some(&p_both), false, false).unwrap();
        let solo = dec.forward(&feat, None, Some(&p_first), false, false).unwrap();
        for (a, b) in both.stages.iter().zip(&solo.stages) {
            let ma = a.prompt_masks.as_ref().unwrap();
            let mb = b.prompt_masks.as_ref().unwrap();
            let pixels = mb.numel();
            assert_eq!(&ma.data()[..pixels], mb.data());
        }
    }

    #[test]
    fn video_t1_matches_image_mode_bitwise() {
        let mut rng = Rng8::seed_from_u64(38);
        let d = 16;
        let dec = Decoder::new(d, 4, 5, UpdateKind::PoolDcg, &mut rng);
        let img = image_feat(8, 8, d, &mut rng);
        let vid = FeatureMap::video(ops::reshape(&img.data, &[1, 8, 8, d]).unwrap());
        let q = trunc_normal(&[5, d], 1.0, &mut rng).detached();
        let a = dec.forward(&img, Some(&q), None, false, false).unwrap();
        let b = dec.forward(&vid, Some(&q), None, false, false).unwrap();
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            assert_eq!(
                sa.obj_masks.as_ref().unwrap().data(),
                sb.obj_masks.as_ref().unwrap().data()
            );
        }
    }
}
