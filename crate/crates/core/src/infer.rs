//! Inference procedures over the final (post-adapter) prediction set:
//! score-merged panoptic maps, near-online query-matched tracking for clips,
//! and prompt-conditioned binary masks.

use miniseg_tensor::{ops, Tensor};

use crate::config::InferConfig;
use crate::data::is_thing_class;
use crate::error::{Error, Result};
use crate::hungarian::hungarian;
use crate::model::{Model, ModelInput};
use crate::prompt::VisualPrompt;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInfo {
    pub id: u32,
    pub class_id: usize,
    pub is_thing: bool,
    pub score: f64,
}

/// A panoptic partition: per-pixel segment ids (0 = void) plus the segment
/// table. Every nonzero map value has exactly one table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticResult {
    pub size: usize,
    pub map: Vec<u32>,
    pub segments: Vec<SegmentInfo>,
}

impl PanopticResult {
    pub fn segment(&self, id: u32) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Ids renumbered by first appearance in row-major order; segment table
    /// reordered to match. Canonical form for permutation-invariance checks.
    pub fn canonical_relabel(&self) -> PanopticResult {
        let mut mapping: Vec<(u32, u32)> = Vec::new();
        let mut map = vec![0u32; self.map.len()];
        for (i, &id) in self.map.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let new = match mapping.iter().find(|(old, _)| *old == id) {
                Some((_, new)) => *new,
                None => {
                    let new = mapping.len() as u32 + 1;
                    mapping.push((id, new));
                    new
                }
            };
            map[i] = new;
        }
        let mut segments: Vec<SegmentInfo> = mapping
            .iter()
            .map(|(old, new)| {
                let mut s = self.segment(*old).expect("table covers map ids").clone();
                s.id = *new;
                s
            })
            .collect();
        segments.sort_by_key(|s| s.id);
        PanopticResult {
            size: self.size,
            map,
            segments,
        }
    }

    /// Partition check: every pixel is void or carries a tabled id.
    pub fn is_partition(&self) -> bool {
        self.map
            .iter()
            .all(|&id| id == 0 || self.segment(id).is_some())
    }
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - maxv).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

/// Per-query full-resolution foreground probability: logits upsampled
/// bilinearly to `H x W`, then sigmoid.
fn upsampled_prob(flat_logits: &Tensor, row: usize, h: usize, w: usize, out: usize) -> Result<Vec<f64>> {
    let hw = h * w;
    let logits = &flat_logits.data()[row * hw..(row + 1) * hw];
    let small = Tensor::from_vec(&[1, h, w], logits.to_vec())?;
    let big = ops::bilinear_resize(&small, out, out)?;
    Ok(big
        .data()
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()))
        .collect())
}

/// Merge the final prediction set into a panoptic map: keep confident
/// queries, assign each pixel to the best score-weighted mask probability,
/// drop washed-out or tiny segments, and merge stuff by class.
pub fn infer_panoptic(model: &Model, image: &Tensor, infer_cfg: &InferConfig) -> Result<PanopticResult> {
    let out = model.forward(&ModelInput::Image(image), None, true)?;
    let size = image.shape()[1];
    let feat_h = out.feat.hw().0;
    let feat_w = out.feat.hw().1;
    let last = out.stages.last().expect("forward emits stages");
    let class_logits = last
        .class_logits
        .as_ref()
        .ok_or_else(|| Error::Contract("panoptic inference needs class logits".into()))?;
    let masks = last
        .obj_masks
        .as_ref()
        .ok_or_else(|| Error::Contract("panoptic inference needs object masks".into()))?;

    let n = class_logits.shape()[0];
    let c1 = class_logits.shape()[1];
    let mut kept: Vec<(usize, usize, f64)> = Vec::new(); // (query, label, score)
    for i in 0..n {
        let probs = softmax_row(&class_logits.data()[i * c1..(i + 1) * c1]);
        let (label, score) = probs[..c1 - 1]
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (j, &p)| {
                if p > acc.1 {
                    (j, p)
                } else {
                    acc
                }
            });
        if score >= infer_cfg.s_min {
            kept.push((i, label, score));
        }
    }

    let npx = size * size;
    let mut map = vec![0u32; npx];
    let mut segments = Vec::new();
    if kept.is_empty() {
        return Ok(PanopticResult {
            size,
            map,
            segments,
        });
    }

    let probs: Vec<Vec<f64>> = kept
        .iter()
        .map(|&(q, _, _)| upsampled_prob(masks, q, feat_h, feat_w, size))
        .collect::<Result<_>>()?;

    // per-pixel argmax of score * prob over kept queries (first wins ties)
    let mut assignment = vec![usize::MAX; npx];
    for p in 0..npx {
        let mut best = f64::NEG_INFINITY;
        let mut win = usize::MAX;
        for (ki, &(_, _, score)) in kept.iter().enumerate() {
            let v = score * probs[ki][p];
            if v > best {
                best = v;
                win = ki;
            }
        }
        assignment[p] = win;
    }

    let retained: Vec<usize> = (0..kept.len())
        .map(|ki| assignment.iter().filter(|&&a| a == ki).count())
        .collect();
    let original: Vec<usize> = (0..kept.len())
        .map(|ki| probs[ki].iter().filter(|&&v| v > 0.5).count())
        .collect();

    let mut id_of_kept: Vec<Option<u32>> = vec![None; kept.len()];
    let mut stuff_ids: Vec<(usize, u32)> = Vec::new(); // class -> id
    let mut next_id = 1u32;
    for (ki, &(_, label, score)) in kept.iter().enumerate() {
        let keep = retained[ki] >= infer_cfg.min_area
            && (retained[ki] as f64) >= infer_cfg.keep_frac * original[ki] as f64;
        if !keep {
            continue;
        }
        let is_thing = is_thing_class(label);
        if !is_thing {
            if let Some(&(_, id)) = stuff_ids.iter().find(|(c, _)| *c == label) {
                id_of_kept[ki] = Some(id);
                // keep the strongest score in the merged table entry
                if let Some(seg) = segments.iter_mut().find(|s: &&mut SegmentInfo| s.id == id) {
                    seg.score = score.max(seg.score);
                }
                continue;
            }
            stuff_ids.push((label, next_id));
        }
        id_of_kept[ki] = Some(next_id);
        segments.push(SegmentInfo {
            id: next_id,
            class_id: label,
            is_thing,
            score,
        });
        next_id += 1;
    }

    for p in 0..npx {
        let ki = assignment[p];
        if ki != usize::MAX {
            if let Some(id) = id_of_kept[ki] {
                map[p] = id;
            }
        }
    }

    // prune table entries whose pixels were all taken over by merging
    let used: std::collections::BTreeSet<u32> = map.iter().copied().filter(|&v| v != 0).collect();
    segments.retain(|s| used.contains(&s.id));

    Ok(PanopticResult {
        size,
        map,
        segments,
    })
}

/// One tracked thing across a clip.
#[derive(Debug, Clone)]
pub struct TrackedInstance {
    pub id: u32,
    pub class_id: usize,
    pub score: f64,
    /// Per-frame masks aligned to the full clip; empty where absent.
    pub masks: Vec<Vec<bool>>,
    pub present: Vec<bool>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub const TRACK_SIM_MIN: f64 = 0.5;

/// Near-online video instance segmentation: the clip is processed in
/// disjoint windows of the configured length; tube masks give identities
/// within a window and query embeddings are cosine-matched across windows.
pub fn infer_vis(model: &Model, clip: &Tensor, infer_cfg: &InferConfig) -> Result<Vec<TrackedInstance>> {
    if clip.rank() != 4 {
        return Err(Error::Input(format!(
            "expected [T, 3, H, W] clip, got {:?}",
            clip.shape()
        )));
    }
    let t_full = clip.shape()[0];
    let size = clip.shape()[2];
    let window = model.cfg.clip_len.max(1);

    let mut tracks: Vec<TrackedInstance> = Vec::new();
    let mut prev: Vec<(usize, Vec<f64>)> = Vec::new(); // (track slot, embedding)
    let mut next_id = 1u32;

    let mut start = 0usize;
    while start < t_full {
        let len = window.min(t_full - start);
        let chunk = ops::slice_axis0(clip, start, len)?;
        let out = model.forward(&ModelInput::Clip(&chunk), None, true)?;
        let (fh, fw) = out.feat.hw();
        let last = out.stages.last().unwrap();
        let class_logits = last.class_logits.as_ref().unwrap();
        let masks = last.obj_masks.as_ref().unwrap(); // [N, len*fh*fw]
        let queries = out.obj_queries.as_ref().unwrap();
        let d = queries.shape()[1];

        let n = class_logits.shape()[0];
        let c1 = class_logits.shape()[1];
        let mut kept: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
        for i in 0..n {
            let probs = softmax_row(&class_logits.data()[i * c1..(i + 1) * c1]);
            let (label, score) = probs[..c1 - 1]
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (j, &p)| {
                    if p > acc.1 {
                        (j, p)
                    } else {
                        acc
                    }
                });
            if score >= infer_cfg.s_min && is_thing_class(label) {
                let emb = queries.data()[i * d..(i + 1) * d].to_vec();
                kept.push((i, label, score, emb));
            }
        }

        // cross-window identity: hungarian on (1 - cosine similarity)
        let mut slot_of_kept: Vec<Option<usize>> = vec![None; kept.len()];
        if !prev.is_empty() && !kept.is_empty() {
            let mut costs = Vec::with_capacity(prev.len() * kept.len());
            for (_, pe) in &prev {
                for (_, _, _, ce) in &kept {
                    costs.push(1.0 - cosine(pe, ce));
                }
            }
            let costs = Tensor::from_vec(&[prev.len(), kept.len()], costs)?;
            let assignment = hungarian(&costs)?;
            for &(pi, ki) in &assignment.pairs {
                let sim = cosine(&prev[pi].1, &kept[ki].3);
                if sim >= TRACK_SIM_MIN {
                    slot_of_kept[ki] = Some(prev[pi].0);
                }
            }
        }

        let hw = fh * fw;
        let mut new_prev: Vec<(usize, Vec<f64>)> = Vec::new();
        for (ki, (qi, label, score, emb)) in kept.iter().enumerate() {
            let slot = match slot_of_kept[ki] {
                Some(slot) => slot,
                None => {
                    tracks.push(TrackedInstance {
                        id: next_id,
                        class_id: *label,
                        score: *score,
                        masks: vec![Vec::new(); t_full],
                        present: vec![false; t_full],
                    });
                    next_id += 1;
                    tracks.len() - 1
                }
            };
            for f in 0..len {
                // frame f of this window within the tube row
                let hwlen = hw;
                let row_logits = &masks.data()[qi * (len * hwlen) + f * hwlen..][..hwlen];
                let small = Tensor::from_vec(&[1, fh, fw], row_logits.to_vec())?;
                let big = ops::bilinear_resize(&small, size, size)?;
                let mask: Vec<bool> = big.data().iter().map(|&z| z > 0.0).collect();
                tracks[slot].masks[start + f] = mask;
                tracks[slot].present[start + f] = true;
            }
            tracks[slot].score = tracks[slot].score.max(*score);
            new_prev.push((slot, emb.clone()));
        }
        prev = new_prev;
        start += len;
    }

    Ok(tracks)
}

/// Class-agnostic prompt masks at image resolution, in prompt order.
pub fn infer_interactive(
    model: &Model,
    image: &Tensor,
    prompts: &[VisualPrompt],
) -> Result<Vec<Vec<bool>>> {
    if prompts.is_empty() {
        return Err(Error::Input("interactive inference needs K >= 1".into()));
    }
    let out = model.forward(&ModelInput::Image(image), Some(prompts), false)?;
    let size = image.shape()[1];
    let (fh, fw) = out.feat.hw();
    let masks = out
        .stages
        .last()
        .unwrap()
        .prompt_masks
        .as_ref()
        .ok_or_else(|| Error::Contract("prompt path produced no masks".into()))?;
    (0..prompts.len())
        .map(|k| {
            let prob = upsampled_prob(masks, k, fh, fw, size)?;
            Ok(prob.iter().map(|&p| p > 0.5).collect())
        })
        .collect()
}

/// Prompt-driven video object segmentation: encode the frame-0 prompt once,
/// decode against the clip features, threshold the tube mask per frame.
pub fn infer_prompt_video(
    model: &Model,
    clip: &Tensor,
    prompt: &VisualPrompt,
) -> Result<Vec<Vec<bool>>> {
    if clip.rank() != 4 {
        return Err(Error::Input(format!(
            "expected [T, 3, H, W] clip, got {:?}",
            clip.shape()
        )));
    }
    let t = clip.shape()[0];
    let size = clip.shape()[2];
    let out = model.forward(&ModelInput::Clip(clip), Some(&[*prompt]), false)?;
    let (fh, fw) = out.feat.hw();
    let masks = out
        .stages
        .last()
        .unwrap()
        .prompt_masks
        .as_ref()
        .ok_or_else(|| Error::Contract("prompt path produced no masks".into()))?;
    let hw = fh * fw;
    (0..t)
        .map(|f| {
            let row = &masks.data()[f * hw..(f + 1) * hw];
            let small = Tensor::from_vec(&[1, fh, fw], row.to_vec())?;
            let big = ops::bilinear_resize(&small, size, size)?;
            Ok(big
                .data()
                .iter()
                .map(|&z| 1.0 / (1.0 + (-z).exp()) > 0.5)
                .collect())
        })
        .collect()
}
