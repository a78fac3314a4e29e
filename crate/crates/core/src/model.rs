//! Model assembly over the four meta-architectures:
//!
//! (a) one shared decoder, no adapters; (b) decoupled object/prompt decoders;
//! (c) shared decoder with the decoupled adapters (default); (d) decoupled
//! decoders with adapters. Architectures (a) and (b) ignore the configured
//! adapter kinds.
//!
//! The final (post-adapter) prediction set reuses the last stage's head, so
//! `(c)` with `(none, none)` adapters is weight-for-weight identical to `(a)`.

use rand::SeedableRng;

use miniseg_tensor::Tensor;

use crate::adapter::{build_adapter, Adapter, AdapterKind};
use crate::backbone::{Backbone, FeatureMap};
use crate::config::ModelConfig;
use crate::decoder::{Decoder, StagePrediction};
use crate::error::{Error, Result};
use crate::init::{unit_normal, Rng8};
use crate::params::{join, ParamVisit};
use crate::prompt::{PromptEncoder, VisualPrompt};

#[derive(Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub prompt_encoder: PromptEncoder,
    pub decoder: Decoder,
    pub prompt_decoder: Option<Decoder>,
    pub adapter_obj: Box<dyn Adapter>,
    pub adapter_prompt: Box<dyn Adapter>,
    pub object_queries: Tensor, // [N, d]
}

pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = Rng8::seed_from_u64(seed);
    let backbone = Backbone::new(cfg.d, &mut rng);
    let prompt_encoder = PromptEncoder::new(cfg.d, &mut rng);
    let decoder = Decoder::new(cfg.d, cfg.heads, cfg.classes, cfg.decoder_kind, &mut rng);
    let prompt_decoder = cfg
        .meta_arch
        .decoupled()
        .then(|| Decoder::new(cfg.d, cfg.heads, cfg.classes, cfg.decoder_kind, &mut rng));
    let (obj_kind, prompt_kind) = if cfg.meta_arch.has_adapters() {
        (cfg.adapter_obj, cfg.adapter_prompt)
    } else {
        (AdapterKind::None, AdapterKind::None)
    };
    let adapter_obj = build_adapter(obj_kind, cfg.d, &mut rng);
    let adapter_prompt = build_adapter(prompt_kind, cfg.d, &mut rng);
    let object_queries = unit_normal(&[cfg.n_queries, cfg.d], &mut rng);
    Ok(Model {
        cfg: cfg.clone(),
        backbone,
        prompt_encoder,
        decoder,
        prompt_decoder,
        adapter_obj,
        adapter_prompt,
        object_queries,
    })
}

pub enum ModelInput<'a> {
    /// `[3, H, W]`
    Image(&'a Tensor),
    /// `[T, 3, H, W]`
    Clip(&'a Tensor),
}

pub struct ForwardOut {
    /// Supervised prediction sets: initial + one per stage, plus the final
    /// post-adapter set when any adapter is active. The last entry is what
    /// inference consumes.
    pub stages: Vec<StagePrediction>,
    /// Final refined object queries (post adapter), when the object path ran.
    pub obj_queries: Option<Tensor>,
    pub prompt_queries: Option<Tensor>,
    pub feat: FeatureMap,
}

impl Model {
    pub fn encode_input(&self, input: &ModelInput) -> Result<FeatureMap> {
        match input {
            ModelInput::Image(img) => self.backbone.forward(img),
            ModelInput::Clip(clip) => self.backbone.forward_video(clip),
        }
    }

    /// Full forward pass. `run_obj` gates the object-query path (prompt-only
    /// batches skip it); prompts are encoded when provided.
    pub fn forward(
        &self,
        input: &ModelInput,
        prompts: Option<&[VisualPrompt]>,
        run_obj: bool,
    ) -> Result<ForwardOut> {
        let feat = self.encode_input(input)?;
        self.forward_features(&feat, prompts, run_obj)
    }

    /// Forward from precomputed features (used by the latency harness too).
    pub fn forward_features(
        &self,
        feat: &FeatureMap,
        prompts: Option<&[VisualPrompt]>,
        run_obj: bool,
    ) -> Result<ForwardOut> {
        if !run_obj && prompts.is_none() {
            return Err(Error::Contract(
                "forward needs the object path, prompts, or both".into(),
            ));
        }
        let (prompt_q, prompt_pos) = match prompts {
            Some(list) => (
                Some(self.prompt_encoder.encode_prompts(list)?),
                Some(self.prompt_encoder.pe_rows(list)?),
            ),
            None => (None, None),
        };
        let obj_q = run_obj.then(|| self.object_queries.clone());

        let mut stages: Vec<StagePrediction>;
        let obj_out;
        let prompt_out;

        match (&self.prompt_decoder, &prompt_q) {
            // decoupled prompt path
            (Some(pdec), Some(pq)) => {
                let p_run = pdec.forward(feat, None, Some(pq), false, self.cfg.eq5_residual)?;
                if let Some(q) = &obj_q {
                    let o_run =
                        self.decoder
                            .forward(feat, Some(q), None, false, self.cfg.eq5_residual)?;
                    stages = o_run
                        .stages
                        .into_iter()
                        .zip(p_run.stages)
                        .map(|(mut o, p)| {
                            o.prompt_masks = p.prompt_masks;
                            o
                        })
                        .collect();
                    obj_out = o_run.obj_queries;
                } else {
                    stages = p_run.stages;
                    obj_out = None;
                }
                prompt_out = p_run.prompt_queries;
            }
            _ => {
                let run = self.decoder.forward(
                    feat,
                    obj_q.as_ref(),
                    prompt_q.as_ref(),
                    self.cfg.prompt_in_mhsa,
                    self.cfg.eq5_residual,
                )?;
                stages = run.stages;
                obj_out = run.obj_queries;
                prompt_out = run.prompt_queries;
            }
        }

        let mut final_obj = obj_out;
        let mut final_prompt = prompt_out;

        let adapters_active = self.adapter_obj.kind() != AdapterKind::None
            || self.adapter_prompt.kind() != AdapterKind::None;
        if adapters_active {
            let last = stages.last().expect("decoder emitted stages");
            let mut final_pred = StagePrediction::default();
            if let (Some(q), Some(masks)) = (&final_obj, &last.obj_masks) {
                let adapted = self.adapter_obj.adapt(q, None, masks, feat)?;
                let head = self.decoder.last_head();
                final_pred.obj_masks = Some(head.mask_logits(&adapted, &feat.flat()?)?);
                final_pred.class_logits = Some(head.classify(&adapted)?);
                final_obj = Some(adapted);
            }
            if let (Some(p), Some(masks)) = (&final_prompt, &last.prompt_masks) {
                let adapted = self
                    .adapter_prompt
                    .adapt(p, prompt_pos.as_ref(), masks, feat)?;
                let head = self
                    .prompt_decoder
                    .as_ref()
                    .unwrap_or(&self.decoder)
                    .last_head();
                final_pred.prompt_masks = Some(head.mask_logits(&adapted, &feat.flat()?)?);
                final_prompt = Some(adapted);
            }
            stages.push(final_pred);
        }

        Ok(ForwardOut {
            stages,
            obj_queries: final_obj,
            prompt_queries: final_prompt,
            feat: feat.clone(),
        })
    }
}

impl ParamVisit for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.prompt_encoder.visit(&join(prefix, "prompt_enc"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        if let Some(pd) = &self.prompt_decoder {
            pd.visit(&join(prefix, "prompt_decoder"), f);
        }
        self.adapter_obj.visit(&join(prefix, "adapter_obj"), f);
        self.adapter_prompt.visit(&join(prefix, "adapter_prompt"), f);
        f(&join(prefix, "queries"), &self.object_queries);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.prompt_encoder
            .visit_mut(&join(prefix, "prompt_enc"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        if let Some(pd) = &mut self.prompt_decoder {
            pd.visit_mut(&join(prefix, "prompt_decoder"), f);
        }
        self.adapter_obj.visit_mut(&join(prefix, "adapter_obj"), f);
        self.adapter_prompt
            .visit_mut(&join(prefix, "adapter_prompt"), f);
        f(&join(prefix, "queries"), &mut self.object_queries);
    }
}
