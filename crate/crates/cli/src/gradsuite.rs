//! Gradient-check suites behind `miniseg gradcheck --scope {ops|decoder|loss}`.
//!
//! Each suite returns one report per checked operation; the CLI prints them
//! and fails the process if any report fails.

use miniseg_core::config::{MetaArch, ModelConfig};
use miniseg_core::data::{gen_scene, sample_prompts, scene_targets, PromptMode};
use miniseg_core::error::Result;
use miniseg_core::loss::{cls_loss, dice_loss, mask_ce_loss, stage_assignments, total_loss, total_loss_assigned, MatchTargets};
use miniseg_core::model::{build_model, Model, ModelInput};
use miniseg_core::params::ParamVisit;
use miniseg_core::update::UpdateKind;
use miniseg_tensor::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use miniseg_tensor::{ops, SplitMix64, Tensor, TensorError};

fn random_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn binary_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| (rng.next_f64() > 0.5) as u8 as f64)
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Finite-difference checks for every differentiable tensor op.
pub fn ops_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = SplitMix64::new(0xa11);
    let opts = GradCheckOptions::default();
    let mut reports = Vec::new();

    let a = random_tensor(&[3, 4], &mut rng);
    let b = random_tensor(&[3, 4], &mut rng);
    let bias = random_tensor(&[1, 4], &mut rng);
    let denom = {
        let mut d = random_tensor(&[3, 4], &mut rng);
        for v in d.data_mut() {
            *v = 1.5 + v.abs();
        }
        d
    };
    let relu_in = {
        let mut t = random_tensor(&[3, 4], &mut rng);
        for v in t.data_mut() {
            *v += if *v >= 0.0 { 0.05 } else { -0.05 };
        }
        t
    };

    type CheckFn = Box<dyn Fn(&[Tensor]) -> miniseg_tensor::Result<Tensor>>;
    let mut checks: Vec<(&str, Vec<Tensor>, CheckFn)> = Vec::new();
    checks.push((
        "add",
        vec![a.clone(), bias.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::add(&p[0], &p[1])?)))),
    ));
    checks.push((
        "sub",
        vec![a.clone(), b.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::sub(&p[0], &p[1])?)))),
    ));
    checks.push((
        "mul",
        vec![a.clone(), bias.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::mul(&p[0], &p[1])?))),
    ));
    checks.push((
        "div",
        vec![a.clone(), denom],
        Box::new(|p| Ok(ops::sum_all(&ops::div(&p[0], &p[1])?))),
    ));
    checks.push((
        "scale",
        vec![a.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::scale(&p[0], -1.7))))),
    ));
    checks.push((
        "add_scalar",
        vec![a.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::add_scalar(&p[0], 0.4))))),
    ));
    checks.push((
        "sigmoid",
        vec![a.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::mul(&ops::sigmoid(&p[0]), &ops::sigmoid(&p[0]))?))),
    ));
    checks.push((
        "relu",
        vec![relu_in],
        Box::new(|p| Ok(ops::sum_all(&ops::relu(&p[0])))),
    ));
    checks.push((
        "gelu",
        vec![a.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&p[0])))),
    ));
    let m1 = random_tensor(&[3, 5], &mut rng);
    let m2 = random_tensor(&[5, 2], &mut rng);
    checks.push((
        "matmul",
        vec![m1.clone(), m2],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::matmul(&p[0], &p[1])?)))),
    ));
    checks.push((
        "transpose",
        vec![m1.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::transpose(&p[0])?)))),
    ));
    checks.push((
        "reshape",
        vec![m1.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::reshape(&p[0], &[5, 3])?)))),
    ));
    checks.push((
        "permute",
        vec![random_tensor(&[2, 3, 4], &mut rng)],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::permute(&p[0], &[2, 0, 1])?)))),
    ));
    checks.push((
        "slice_concat_axis0",
        vec![m1.clone()],
        Box::new(|p| {
            let top = ops::slice_axis0(&p[0], 0, 1)?;
            let rest = ops::slice_axis0(&p[0], 1, 2)?;
            Ok(ops::sum_all(&ops::gelu(&ops::concat_axis0(&[&rest, &top])?)))
        }),
    ));
    checks.push((
        "slice_concat_cols",
        vec![m1.clone()],
        Box::new(|p| {
            let left = ops::slice_cols(&p[0], 0, 2)?;
            let right = ops::slice_cols(&p[0], 2, 3)?;
            Ok(ops::sum_all(&ops::gelu(&ops::concat_cols(&[&right, &left])?)))
        }),
    ));
    checks.push((
        "softmax",
        vec![a.clone()],
        Box::new(|p| {
            let s = ops::softmax(&p[0], 1)?;
            Ok(ops::sum_all(&ops::mul(&s, &s)?))
        }),
    ));
    let gamma = random_tensor(&[4], &mut rng);
    let beta = random_tensor(&[4], &mut rng);
    checks.push((
        "layer_norm",
        vec![a.clone(), gamma, beta],
        Box::new(|p| {
            Ok(ops::sum_all(&ops::gelu(&ops::layer_norm(
                &p[0], &p[1], &p[2], 1e-5,
            )?)))
        }),
    ));
    let img = random_tensor(&[3, 6, 5], &mut rng);
    let cg = random_tensor(&[3], &mut rng);
    let cb = random_tensor(&[3], &mut rng);
    checks.push((
        "channel_norm",
        vec![img.clone(), cg, cb],
        Box::new(|p| {
            Ok(ops::sum_all(&ops::gelu(&ops::channel_norm(
                &p[0], &p[1], &p[2], 1e-5,
            )?)))
        }),
    ));
    let kern = random_tensor(&[2, 3, 3, 3], &mut rng);
    let cbias = random_tensor(&[2], &mut rng);
    checks.push((
        "conv2d",
        vec![img.clone(), kern, cbias],
        Box::new(|p| {
            Ok(ops::sum_all(&ops::gelu(&ops::conv2d(
                &p[0],
                &p[1],
                Some(&p[2]),
                2,
                1,
            )?)))
        }),
    ));
    checks.push((
        "bilinear_resize",
        vec![img.clone()],
        Box::new(|p| Ok(ops::sum_all(&ops::gelu(&ops::bilinear_resize(&p[0], 9, 4)?)))),
    ));
    checks.push((
        "sum_mean",
        vec![a.clone()],
        Box::new(|p| Ok(ops::mean_all(&ops::gelu(&p[0])))),
    ));
    let target = binary_tensor(&[3, 4], &mut rng);
    checks.push((
        "bce_with_logits",
        vec![a.clone(), target],
        Box::new(|p| ops::bce_with_logits(&ops::scale(&p[0], 3.0), &p[1])),
    ));
    checks.push((
        "softmax_cross_entropy",
        vec![random_tensor(&[3, 4], &mut rng)],
        Box::new(|p| ops::softmax_cross_entropy(&p[0], &[0, 2, 1], &[1.0, 0.5, 1.0, 0.1])),
    ));

    for (name, params, f) in checks {
        reports.push(grad_check(name, f, &params, opts)?);
    }
    Ok(reports)
}

fn set_params<C: ParamVisit>(component: &mut C, params: &[Tensor]) {
    let mut i = 0;
    component.visit_mut("", &mut |_, t| {
        *t = params[i].clone();
        i += 1;
    });
}

fn component_params<C: ParamVisit>(component: &C) -> Vec<Tensor> {
    let mut out = Vec::new();
    component.visit("", &mut |_, t| {
        let mut t = t.detached();
        t.set_requires_grad(true);
        out.push(t);
    });
    out
}

fn oracle_err(e: miniseg_core::Error) -> TensorError {
    TensorError::Oracle(e.to_string())
}

fn seed_of(name: &str) -> u64 {
    name.bytes().fold(0u64, |acc, b| {
        acc.wrapping_mul(131).wrapping_add(b as u64)
    })
}

fn small_cfg() -> ModelConfig {
    let mut cfg = ModelConfig {
        d: 16,
        n_queries: 6,
        input_size: 32,
        ..ModelConfig::default()
    };
    // N = 6 queries wants scenes with at most 5 entities (3 things + 2 bands)
    cfg.data.things_max = 3;
    cfg
}

/// The production init (sigma 0.02) leaves some layers with gradients near
/// the f64 finite-difference noise floor; structural checks instead run at
/// O(0.5) random weights so every path carries measurable gradient.
fn randomize_weights(model: &mut Model, seed: u64) {
    let mut rng = SplitMix64::new(seed);
    model.visit_mut("", &mut |name, t| {
        let gamma = name.ends_with(".gamma");
        for v in t.data_mut() {
            *v = if gamma {
                0.9 + 0.2 * rng.next_f64()
            } else {
                rng.next_f64() * 0.3 - 0.15
            };
        }
    });
}

/// Full-model matched loss for gradient checking: panoptic matching loss
/// plus the prompt branch. The Hungarian assignment is frozen at the base
/// point; the matched loss agrees with this frozen form (value and gradient)
/// in a neighborhood, while staying smooth under finite differences.
fn check_model(name: &str, cfg: &ModelConfig, samples: usize) -> Result<GradCheckReport> {
    let mut model = build_model(cfg, 31)?;
    randomize_weights(&mut model, 0xfeed ^ seed_of(name));
    let scene = gen_scene(1009, cfg.input_size, &cfg.data)?;
    let targets = scene_targets(&scene)?;
    let (prompt_samples, _) = sample_prompts(&scene, PromptMode::Test, 3);
    let prompt_samples: Vec<_> = prompt_samples.into_iter().take(2).collect();
    let prompts: Vec<_> = prompt_samples.iter().map(|s| s.prompt).collect();
    let ptargets = miniseg_core::data::prompt_targets(&prompt_samples, scene.size)?;
    let image = scene.image.clone();
    let lw = cfg.loss;

    let base_out = model.forward(&ModelInput::Image(&image), Some(&prompts), true)?;
    let assignments = stage_assignments(&base_out.stages, Some(&targets), &lw)?;
    let base_loss = total_loss_assigned(
        &base_out.stages,
        Some(&targets),
        &assignments,
        Some(&ptargets),
        &lw,
    )?
    .scalar_value();
    // Normalize the checked loss to ~0.01: the central-difference noise floor
    // scales with ulp(|loss|), and a small loss keeps near-zero gradients
    // under the comparison's absolute floor without touching relative errors.
    let norm = 0.01 / base_loss.abs().max(1e-3);

    let params = component_params(&model);
    let base = model.clone();
    let report = grad_check(
        name,
        move |ps| {
            let mut m = base.clone();
            set_params(&mut m, ps);
            let out = m
                .forward(&ModelInput::Image(&image), Some(&prompts), true)
                .map_err(oracle_err)?;
            let loss = total_loss_assigned(
                &out.stages,
                Some(&targets),
                &assignments,
                Some(&ptargets),
                &lw,
            )
            .map_err(oracle_err)?;
            Ok(ops::scale(&loss, norm))
        },
        &params,
        GradCheckOptions {
            max_samples: samples,
            ..Default::default()
        },
    )?;
    Ok(report)
}

/// Backbone, the full three-stage decoder under every update strategy, and
/// both adapter orientations, each checked end to end through the loss.
pub fn decoder_suite() -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();

    // backbone alone: mean of the fused features
    {
        let cfg = small_cfg();
        let model = build_model(&cfg, 8)?;
        let backbone = model.backbone.clone();
        let scene = gen_scene(77, cfg.input_size, &cfg.data)?;
        let image = scene.image.clone();
        let params = component_params(&backbone);
        reports.push(grad_check(
            "backbone",
            move |ps| {
                let mut bb = backbone.clone();
                set_params(&mut bb, ps);
                let feat = bb.forward(&image).map_err(oracle_err)?;
                Ok(ops::scale(&ops::mean_all(&feat.data), 0.05))
            },
            &params,
            GradCheckOptions {
                max_samples: 4,
                ..Default::default()
            },
        )?);
    }

    for kind in [UpdateKind::PoolDcg, UpdateKind::PoolDc, UpdateKind::PerPixelCa] {
        let cfg = ModelConfig {
            meta_arch: MetaArch::A,
            decoder_kind: kind,
            ..small_cfg()
        };
        reports.push(check_model(
            &format!("decoder_{}", kind.name()),
            &cfg,
            2,
        )?);
    }

    // adapter variants in both orientations (object, prompt)
    for (obj, prompt) in [("dc", "ca"), ("ca", "dc")] {
        let cfg = ModelConfig {
            meta_arch: MetaArch::C,
            adapter_obj: miniseg_core::adapter::AdapterKind::from_name(obj)?,
            adapter_prompt: miniseg_core::adapter::AdapterKind::from_name(prompt)?,
            ..small_cfg()
        };
        reports.push(check_model(&format!("adapters_{obj}_{prompt}"), &cfg, 2)?);
    }

    Ok(reports)
}

/// Loss-level checks: each term alone plus the matched total.
pub fn loss_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = SplitMix64::new(0x1055);
    let opts = GradCheckOptions::default();
    let mut reports = Vec::new();

    let gt_mask = binary_tensor(&[1, 64], &mut rng);
    let logits = random_tensor(&[1, 64], &mut rng);
    {
        let gt = gt_mask.clone();
        reports.push(grad_check(
            "dice_loss",
            move |p| dice_loss(&p[0], &gt).map_err(oracle_err),
            &[logits.clone()],
            opts,
        )?);
    }
    {
        let gt = gt_mask.clone();
        reports.push(grad_check(
            "mask_ce_loss",
            move |p| mask_ce_loss(&p[0], &gt).map_err(oracle_err),
            &[logits.clone()],
            opts,
        )?);
    }
    {
        let cls_logits = random_tensor(&[6, 6], &mut rng);
        reports.push(grad_check(
            "cls_loss",
            |p| cls_loss(&p[0], &[0, 5, 2, 5, 4, 5]).map_err(oracle_err),
            &[cls_logits],
            opts,
        )?);
    }
    {
        // matched total over one synthetic stage: N=6 predictions, G=3 targets
        let (n, g, hw, c1) = (6usize, 3usize, 64usize, 6usize);
        let mask_logits = random_tensor(&[n, hw], &mut rng);
        let class_logits = random_tensor(&[n, c1], &mut rng);
        let prompt_masks = random_tensor(&[2, hw], &mut rng);
        let gt = MatchTargets {
            masks_flat: binary_tensor(&[g, hw], &mut rng),
            classes: vec![0, 2, 4],
        };
        let ptargets = binary_tensor(&[2, hw], &mut rng);
        let lw = ModelConfig::default().loss;
        reports.push(grad_check(
            "total_loss",
            move |p| {
                let stage = miniseg_core::decoder::StagePrediction {
                    obj_masks: Some(p[0].clone()),
                    class_logits: Some(p[1].clone()),
                    prompt_masks: Some(p[2].clone()),
                };
                total_loss(&[stage], Some(&gt), Some(&ptargets), &lw).map_err(oracle_err)
            },
            &[mask_logits, class_logits, prompt_masks],
            GradCheckOptions {
                max_samples: 32,
                ..opts
            },
        )?);
    }
    Ok(reports)
}
