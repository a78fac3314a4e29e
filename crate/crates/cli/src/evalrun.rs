//! Held-out evaluation drivers shared by `miniseg eval` and the acceptance
//! suite. Scene seeds are derived from the eval seed with a fixed mixer, so
//! runs are deterministic given (flags, seed).

use miniseg_core::config::DataConfig;
use miniseg_core::data::{gen_pseudo_video, gen_scene, sample_prompts, PromptMode};
use miniseg_core::error::Result;
use miniseg_core::infer::{infer_interactive, infer_panoptic, infer_prompt_video, infer_vis};
use miniseg_core::metrics::{
    clip_gt_tubes, default_tube_thresholds, scene_to_panoptic, tube_map_dataset, PqAccumulator,
    PqReport, TubeApReport,
};
use miniseg_core::model::Model;
use miniseg_core::prompt::PromptKind;
use miniseg_core::train::clip_tensor;

fn scene_seed(eval_seed: u64, index: u64) -> u64 {
    eval_seed
        .wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Dataset-level PQ over `scenes` held-out scenes.
pub fn eval_panoptic(model: &Model, scenes: u64, seed: u64, data: &DataConfig) -> Result<PqReport> {
    let mut acc = PqAccumulator::new();
    for i in 0..scenes {
        let scene = gen_scene(scene_seed(seed, i), model.cfg.input_size, data)?;
        let pred = infer_panoptic(model, &scene.image, &model.cfg.infer)?;
        acc.add(&pred, &scene_to_panoptic(&scene))?;
    }
    Ok(acc.report())
}

/// Tube mAP over `clips` held-out pseudo-video clips of the configured length.
pub fn eval_vis(model: &Model, clips: u64, seed: u64, data: &DataConfig) -> Result<TubeApReport> {
    let mut pairs = Vec::with_capacity(clips as usize);
    for i in 0..clips {
        let scene = gen_scene(scene_seed(seed, i), model.cfg.input_size, data)?;
        let clip = gen_pseudo_video(&scene, model.cfg.clip_len, scene_seed(seed, i) ^ 0x71d)?;
        let input = clip_tensor(&clip)?;
        let tracks = infer_vis(model, &input, &model.cfg.infer)?;
        pairs.push((tracks, clip_gt_tubes(&clip)));
    }
    tube_map_dataset(&pairs, &default_tube_thresholds())
}

/// Single-click mIoU: center-point prompts for every entity of every scene,
/// pooled over prompts.
pub fn eval_interactive(model: &Model, scenes: u64, seed: u64, data: &DataConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..scenes {
        let scene = gen_scene(scene_seed(seed, i), model.cfg.input_size, data)?;
        let (samples, _) = sample_prompts(&scene, PromptMode::Test, scene_seed(seed, i) ^ 0xcafe);
        if samples.is_empty() {
            continue;
        }
        let prompts: Vec<_> = samples.iter().map(|s| s.prompt).collect();
        let masks = infer_interactive(model, &scene.image, &prompts)?;
        for (mask, sample) in masks.iter().zip(&samples) {
            let gt = &scene.entities[sample.target_index].mask;
            let mut inter = 0usize;
            let mut union = 0usize;
            for (p, g) in mask.iter().zip(gt.iter()) {
                inter += (*p && *g) as usize;
                union += (*p || *g) as usize;
            }
            total += if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Prompt-driven video segmentation: one center-point prompt per thing on
/// frame 0; the score is the mean tube IoU of the per-frame masks against
/// that thing's ground-truth tube.
pub fn eval_prompt_video(model: &Model, clips: u64, seed: u64, data: &DataConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..clips {
        let scene = gen_scene(scene_seed(seed, i), model.cfg.input_size, data)?;
        let clip = gen_pseudo_video(&scene, model.cfg.clip_len, scene_seed(seed, i) ^ 0x3c)?;
        let input = clip_tensor(&clip)?;
        let frame0 = &clip.frames[0];
        let (samples, _) =
            sample_prompts(frame0, PromptMode::Test, scene_seed(seed, i) ^ 0x77);
        for sample in samples {
            let entity = &frame0.entities[sample.target_index];
            let Some(instance_id) = entity.instance_id else {
                continue; // stuff is not tracked
            };
            debug_assert!(matches!(sample.prompt.kind, PromptKind::Point { .. }));
            let masks = infer_prompt_video(model, &input, &sample.prompt)?;
            let mut inter = 0usize;
            let mut union = 0usize;
            for (t, frame) in clip.frames.iter().enumerate() {
                let gt = frame
                    .entities
                    .iter()
                    .find(|e| e.instance_id == Some(instance_id))
                    .map(|e| e.mask.as_slice());
                for (p_idx, &p) in masks[t].iter().enumerate() {
                    let g = gt.map(|m| m[p_idx]).unwrap_or(false);
                    inter += (p && g) as usize;
                    union += (p || g) as usize;
                }
            }
            total += if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
