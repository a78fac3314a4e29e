//! Set-prediction losses: dice + mask BCE + classification, Hungarian-matched
//! per stage, lambda-weighted and averaged over the supervised stages.
//!
//! The cost matrix is plain (untaped) arithmetic; gradients flow only through
//! the losses of the matched pairs.

use miniseg_tensor::{ops, Tensor};

use crate::config::LossWeights;
use crate::decoder::StagePrediction;
use crate::error::{Error, Result};
use crate::hungarian::{hungarian, Assignment};

pub const DICE_EPS: f64 = 1.0;
pub const NO_OBJECT_WEIGHT: f64 = 0.1;

/// Ground-truth entities for matching: stride-4 binary masks flattened to
/// `[G, pixels]` plus one class id per entity.
#[derive(Debug, Clone)]
pub struct MatchTargets {
    pub masks_flat: Tensor,
    pub classes: Vec<usize>,
}

impl MatchTargets {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// `1 - (2 sum(p g) + eps) / (sum p + sum g + eps)` with `p = sigmoid(logits)`.
pub fn dice_loss(pred_logits: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred_logits.shape() != gt.shape() {
        return Err(Error::Input(format!(
            "dice shapes differ: {:?} vs {:?}",
            pred_logits.shape(),
            gt.shape()
        )));
    }
    let p = ops::sigmoid(pred_logits);
    let inter = ops::sum_all(&ops::mul(&p, gt)?);
    let num = ops::add_scalar(&ops::scale(&inter, 2.0), DICE_EPS);
    let denom = ops::add_scalar(&ops::add(&ops::sum_all(&p), &ops::sum_all(gt))?, DICE_EPS);
    let ratio = ops::div(&num, &denom)?;
    Ok(ops::add_scalar(&ops::scale(&ratio, -1.0), 1.0))
}

/// Mean binary cross-entropy with logits over pixels.
pub fn mask_ce_loss(pred_logits: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred_logits.shape() != gt.shape() {
        return Err(Error::Input(format!(
            "mask ce shapes differ: {:?} vs {:?}",
            pred_logits.shape(),
            gt.shape()
        )));
    }
    Ok(ops::bce_with_logits(pred_logits, gt)?)
}

/// Softmax cross-entropy over all queries; the no-object class (last slot)
/// is down-weighted to 0.1 in the weighted mean.
pub fn cls_loss(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let classes_plus_one = logits.shape()[1];
    let mut weights = vec![1.0; classes_plus_one];
    weights[classes_plus_one - 1] = NO_OBJECT_WEIGHT;
    Ok(ops::softmax_cross_entropy(logits, targets, &weights)?)
}

/// Matching cost: `lambda_cls * (-prob of the gt class) + lambda_ce * bce +
/// lambda_dice * dice`, all plain arithmetic on stride-4 masks.
pub fn build_cost_matrix(
    class_logits: &Tensor, // [N, C+1]
    mask_logits: &Tensor,  // [N, pixels]
    gt: &MatchTargets,
    lw: &LossWeights,
) -> Result<Tensor> {
    if gt.is_empty() {
        return Err(Error::Input("cost matrix needs G >= 1".into()));
    }
    let n = class_logits.shape()[0];
    let c1 = class_logits.shape()[1];
    let pixels = mask_logits.shape()[1];
    let g = gt.len();
    if gt.masks_flat.shape() != [g, pixels] {
        return Err(Error::Input(format!(
            "gt masks {:?} do not match predictions [{g}, {pixels}]",
            gt.masks_flat.shape()
        )));
    }

    // class probabilities per prediction
    let cl = class_logits.data();
    let mut probs = vec![0.0; n * c1];
    for i in 0..n {
        let row = &cl[i * c1..(i + 1) * c1];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c1 {
            let e = (row[j] - maxv).exp();
            probs[i * c1 + j] = e;
            denom += e;
        }
        for j in 0..c1 {
            probs[i * c1 + j] /= denom;
        }
    }

    let ml = mask_logits.data();
    let gm = gt.masks_flat.data();
    let sig = |z: f64| {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    };
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();

    let mut sig_rows = vec![0.0; n * pixels];
    let mut sum_p = vec![0.0; n];
    for i in 0..n {
        for px in 0..pixels {
            let s = sig(ml[i * pixels + px]);
            sig_rows[i * pixels + px] = s;
            sum_p[i] += s;
        }
    }
    let sum_g: Vec<f64> = (0..g)
        .map(|j| gm[j * pixels..(j + 1) * pixels].iter().sum())
        .collect();

    let mut costs = vec![0.0; n * g];
    for i in 0..n {
        for j in 0..g {
            let mut inter = 0.0;
            let mut ce = 0.0;
            for px in 0..pixels {
                let z = ml[i * pixels + px];
                let t = gm[j * pixels + px];
                inter += sig_rows[i * pixels + px] * t;
                ce += softplus(z) - t * z;
            }
            ce /= pixels as f64;
            let dice = 1.0 - (2.0 * inter + DICE_EPS) / (sum_p[i] + sum_g[j] + DICE_EPS);
            let cls = -probs[i * c1 + gt.classes[j]];
            costs[i * g + j] = lw.cls * cls + lw.ce * ce + lw.dice * dice;
        }
    }
    Ok(Tensor::from_vec(&[n, g], costs)?)
}

/// Match one stage's object predictions against the ground truth.
pub fn match_stage(
    class_logits: &Tensor,
    mask_logits: &Tensor,
    gt: &MatchTargets,
    lw: &LossWeights,
) -> Result<Assignment> {
    let costs = build_cost_matrix(
        &class_logits.detached(),
        &mask_logits.detached(),
        gt,
        lw,
    )?;
    hungarian(&costs)
}

/// Per-stage Hungarian assignments for the object branch (`None` where a
/// stage has no object predictions or no ground truth).
pub fn stage_assignments(
    stages: &[StagePrediction],
    obj_gt: Option<&MatchTargets>,
    lw: &LossWeights,
) -> Result<Vec<Option<Assignment>>> {
    stages
        .iter()
        .map(|stage| {
            if let (Some(gt), Some(masks), Some(cls)) =
                (obj_gt, &stage.obj_masks, &stage.class_logits)
            {
                Ok(Some(match_stage(cls, masks, gt, lw)?))
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Lambda-weighted loss over every supervised prediction set, divided by the
/// set count. Object sets are Hungarian-matched independently per stage;
/// prompt sets have fixed targets (prompt row k supervises against target k)
/// and contribute mask terms only.
pub fn total_loss(
    stages: &[StagePrediction],
    obj_gt: Option<&MatchTargets>,
    prompt_gt: Option<&Tensor>,
    lw: &LossWeights,
) -> Result<Tensor> {
    let assignments = stage_assignments(stages, obj_gt, lw)?;
    total_loss_assigned(stages, obj_gt, &assignments, prompt_gt, lw)
}

/// [`total_loss`] with the matching fixed by the caller. Gradient checks use
/// this form: freezing the base-point assignment makes the loss smooth in a
/// neighborhood while agreeing with the matched loss and its gradient there.
pub fn total_loss_assigned(
    stages: &[StagePrediction],
    obj_gt: Option<&MatchTargets>,
    assignments: &[Option<Assignment>],
    prompt_gt: Option<&Tensor>,
    lw: &LossWeights,
) -> Result<Tensor> {
    if stages.is_empty() {
        return Err(Error::Contract("total_loss needs >= 1 prediction set".into()));
    }
    if assignments.len() != stages.len() {
        return Err(Error::Contract(format!(
            "{} assignments for {} prediction sets",
            assignments.len(),
            stages.len()
        )));
    }
    let mut total = Tensor::scalar(0.0);
    for (stage, slot) in stages.iter().zip(assignments) {
        let mut stage_loss = Tensor::scalar(0.0);
        if let (Some(gt), Some(masks), Some(cls), Some(assignment)) =
            (obj_gt, &stage.obj_masks, &stage.class_logits, slot)
        {
            let n = cls.shape()[0];
            let no_object = cls.shape()[1] - 1;
            let mut targets = vec![no_object; n];
            for &(pred, gtime) in &assignment.pairs {
                targets[pred] = gt.classes[gtime];
            }
            let l_cls = cls_loss(cls, &targets)?;
            stage_loss = ops::add(&stage_loss, &ops::scale(&l_cls, lw.cls))?;

            if !assignment.pairs.is_empty() {
                let mut ce_sum = Tensor::scalar(0.0);
                let mut dice_sum = Tensor::scalar(0.0);
                for &(pred, gti) in &assignment.pairs {
                    let pred_row = ops::slice_axis0(masks, pred, 1)?;
                    let gt_row = ops::slice_axis0(&gt.masks_flat, gti, 1)?;
                    ce_sum = ops::add(&ce_sum, &mask_ce_loss(&pred_row, &gt_row)?)?;
                    dice_sum = ops::add(&dice_sum, &dice_loss(&pred_row, &gt_row)?)?;
                }
                let inv = 1.0 / assignment.pairs.len() as f64;
                stage_loss = ops::add(&stage_loss, &ops::scale(&ce_sum, lw.ce * inv))?;
                stage_loss = ops::add(&stage_loss, &ops::scale(&dice_sum, lw.dice * inv))?;
            }
        }
        if let (Some(targets), Some(masks)) = (prompt_gt, &stage.prompt_masks) {
            let k = masks.shape()[0];
            if targets.shape() != masks.shape() {
                return Err(Error::Input(format!(
                    "prompt targets {:?} do not match prompt masks {:?}",
                    targets.shape(),
                    masks.shape()
                )));
            }
            let mut ce_sum = Tensor::scalar(0.0);
            let mut dice_sum = Tensor::scalar(0.0);
            for row in 0..k {
                let pred_row = ops::slice_axis0(masks, row, 1)?;
                let gt_row = ops::slice_axis0(targets, row, 1)?;
                ce_sum = ops::add(&ce_sum, &mask_ce_loss(&pred_row, &gt_row)?)?;
                dice_sum = ops::add(&dice_sum, &dice_loss(&pred_row, &gt_row)?)?;
            }
            let inv = 1.0 / k as f64;
            stage_loss = ops::add(&stage_loss, &ops::scale(&ce_sum, lw.ce * inv))?;
            stage_loss = ops::add(&stage_loss, &ops::scale(&dice_sum, lw.dice * inv))?;
        }
        total = ops::add(&total, &stage_loss)?;
    }
    Ok(ops::scale(&total, 1.0 / stages.len() as f64))
}
