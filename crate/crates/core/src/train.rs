//! Joint co-training: one batch type per step (panoptic scene, pseudo-video
//! clip, or prompt-annotated scene), the matched lambda-weighted loss, and a
//! decoupled-weight-decay adaptive optimizer with linear warmup and stepped
//! decay.

use std::collections::BTreeMap;

use miniseg_tensor::{ops, tape, Tensor};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::{clip_targets, prompt_targets, scene_targets, Batch, ClipSample};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::model::{Model, ModelInput};
use crate::params::ParamVisit;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// AdamW with per-parameter moments keyed by canonical parameter name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: TrainConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(cfg: TrainConfig) -> Self {
        AdamW {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Learning rate for a 1-based step: linear warmup then two x0.1 decays
    /// at the configured fractions of the total step budget.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = if self.cfg.warmup == 0 {
            1.0
        } else {
            (step as f64 / self.cfg.warmup as f64).min(1.0)
        };
        let total = self.cfg.steps as f64;
        let mut decay = 1.0;
        if step as f64 > self.cfg.decay_frac1 * total {
            decay *= 0.1;
        }
        if step as f64 > self.cfg.decay_frac2 * total {
            decay *= 0.1;
        }
        self.cfg.lr * warm * decay
    }

    /// One decoupled-weight-decay update over every parameter that received
    /// a gradient this step.
    pub fn apply(&mut self, model: &mut Model, grads: &tape::Gradients) {
        self.step += 1;
        let lr = self.lr_at(self.step);
        let wd = self.cfg.weight_decay;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, p| {
            let Some(g) = grads.get(p) else {
                return;
            };
            let slot = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            });
            let gd = g.data();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                slot.m[i] = ADAM_BETA1 * slot.m[i] + (1.0 - ADAM_BETA1) * gd[i];
                slot.v[i] = ADAM_BETA2 * slot.v[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
                let mhat = slot.m[i] / bias1;
                let vhat = slot.v[i] / bias2;
                pd[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * pd[i]);
            }
        });
    }
}

/// Stack clip frame images into a `[T, 3, H, W]` tensor.
pub fn clip_tensor(clip: &ClipSample) -> Result<Tensor> {
    let t = clip.frames.len();
    let size = clip.frames[0].size;
    let refs: Vec<Tensor> = clip
        .frames
        .iter()
        .map(|f| ops::reshape(&f.image, &[1, 3, size, size]))
        .collect::<std::result::Result<_, _>>()?;
    let borrowed: Vec<&Tensor> = refs.iter().collect();
    let out = ops::concat_axis0(&borrowed)?;
    debug_assert_eq!(out.shape(), &[t, 3, size, size]);
    Ok(out)
}

/// One training step: forward the batch's task path, compute the matched
/// loss, backpropagate, and update. Returns the scalar loss.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    opt: &mut AdamW,
    cfg: &ModelConfig,
) -> Result<f64> {
    tape::start_recording().map_err(Error::from)?;
    let result = train_step_inner(model, batch, cfg);
    match result {
        Ok(loss) => {
            let grads = tape::backward(&loss)?;
            opt.apply(model, &grads);
            Ok(loss.scalar_value())
        }
        Err(e) => {
            tape::abandon();
            Err(e)
        }
    }
}

fn train_step_inner(model: &mut Model, batch: &Batch, cfg: &ModelConfig) -> Result<Tensor> {
    let mut watch_err = None;
    model.visit_mut("", &mut |_, t| {
        if watch_err.is_none() {
            if let Err(e) = tape::watch(t) {
                watch_err = Some(e);
            }
        }
    });
    if let Some(e) = watch_err {
        return Err(e.into());
    }

    match batch {
        Batch::Panoptic(scene) => {
            if scene.size != cfg.input_size {
                return Err(Error::Contract(format!(
                    "scene size {} does not match model input size {}",
                    scene.size, cfg.input_size
                )));
            }
            let targets = scene_targets(scene)?;
            let out = model.forward(&ModelInput::Image(&scene.image), None, true)?;
            total_loss(&out.stages, Some(&targets), None, &cfg.loss)
        }
        Batch::Video(clip) => {
            let input = clip_tensor(clip)?;
            let targets = clip_targets(clip)?;
            let out = model.forward(&ModelInput::Clip(&input), None, true)?;
            total_loss(&out.stages, Some(&targets), None, &cfg.loss)
        }
        Batch::Prompt(scene, samples) => {
            if samples.is_empty() {
                return Err(Error::Contract("prompt batch without prompts".into()));
            }
            let prompts: Vec<_> = samples.iter().map(|s| s.prompt).collect();
            let targets = prompt_targets(samples, scene.size)?;
            let out = model.forward(&ModelInput::Image(&scene.image), Some(&prompts), false)?;
            total_loss(&out.stages, None, Some(&targets), &cfg.loss)
        }
    }
}
