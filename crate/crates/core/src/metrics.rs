//! Evaluation metrics: panoptic quality (PQ/SQ/RQ with thing/stuff splits),
//! tube mAP over spatio-temporal masks, and single-click mIoU.

use std::collections::BTreeMap;

use crate::data::{is_thing_class, ClipSample, Scene};
use crate::error::{Error, Result};
use crate::infer::{PanopticResult, SegmentInfo, TrackedInstance};

/// Ground-truth panoptic form of a synthetic scene (ids 1.., no void).
pub fn scene_to_panoptic(scene: &Scene) -> PanopticResult {
    let npx = scene.size * scene.size;
    let mut map = vec![0u32; npx];
    let mut segments = Vec::new();
    for (i, e) in scene.entities.iter().enumerate() {
        let id = (i + 1) as u32;
        for (p, &m) in e.mask.iter().enumerate() {
            if m {
                map[p] = id;
            }
        }
        segments.push(SegmentInfo {
            id,
            class_id: e.class_id,
            is_thing: e.is_thing,
            score: 1.0,
        });
    }
    PanopticResult {
        size: scene.size,
        map,
        segments,
    }
}

#[derive(Debug, Clone)]
pub struct ClassPq {
    pub class_id: usize,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Aggregates are reported x100; `PQ = SQ x RQ` holds per class with TP > 0.
#[derive(Debug, Clone)]
pub struct PqReport {
    pub per_class: Vec<ClassPq>,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PqReport {
    pub fn kv_lines(&self) -> String {
        format!(
            "pq={:.4} sq={:.4} rq={:.4} pq_th={:.4} pq_st={:.4} tp={} fp={} fn={}\n",
            self.pq, self.sq, self.rq, self.pq_things, self.pq_stuff, self.tp, self.fp, self.fn_
        )
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str("class        pq      sq      rq    tp  fp  fn\n");
        for c in &self.per_class {
            s.push_str(&format!(
                "{:<10} {:>6.2} {:>6.2} {:>6.2}  {:>3} {:>3} {:>3}\n",
                crate::data::CLASS_NAMES[c.class_id],
                c.pq,
                c.sq,
                c.rq,
                c.tp,
                c.fp,
                c.fn_
            ));
        }
        s.push_str(&format!(
            "{:<10} {:>6.2} {:>6.2} {:>6.2}  {:>3} {:>3} {:>3}\n",
            "all", self.pq, self.sq, self.rq, self.tp, self.fp, self.fn_
        ));
        s
    }
}

#[derive(Default, Clone)]
struct ClassAcc {
    iou_sum: f64,
    tp: usize,
    fp: usize,
    fn_: usize,
}

/// Accumulates matches over many scenes; per-class counts are pooled before
/// the averages (dataset-level PQ).
#[derive(Default, Clone)]
pub struct PqAccumulator {
    acc: BTreeMap<usize, ClassAcc>,
}

impl PqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Match one scene: segments pair when class agrees and IoU > 0.5, with
    /// ground-truth void excluded from the IoU denominator; such matches are
    /// unique.
    pub fn add(&mut self, pred: &PanopticResult, gt: &PanopticResult) -> Result<()> {
        if pred.size != gt.size {
            return Err(Error::Input(format!(
                "extent mismatch {} vs {}",
                pred.size, gt.size
            )));
        }
        let npx = pred.size * pred.size;

        let mut pred_area: BTreeMap<u32, usize> = BTreeMap::new();
        let mut gt_area: BTreeMap<u32, usize> = BTreeMap::new();
        let mut pred_void_overlap: BTreeMap<u32, usize> = BTreeMap::new();
        let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for p in 0..npx {
            let (pi, gi) = (pred.map[p], gt.map[p]);
            if pi != 0 {
                *pred_area.entry(pi).or_default() += 1;
                if gi == 0 {
                    *pred_void_overlap.entry(pi).or_default() += 1;
                }
            }
            if gi != 0 {
                *gt_area.entry(gi).or_default() += 1;
            }
            if pi != 0 && gi != 0 {
                *inter.entry((pi, gi)).or_default() += 1;
            }
        }

        let mut matched_pred: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
        let mut matched_gt: BTreeMap<u32, u32> = BTreeMap::new();
        for (&(pi, gi), &i) in &inter {
            let (Some(ps), Some(gs)) = (pred.segment(pi), gt.segment(gi)) else {
                continue;
            };
            if ps.class_id != gs.class_id {
                continue;
            }
            let void = pred_void_overlap.get(&pi).copied().unwrap_or(0);
            let union = pred_area[&pi] + gt_area[&gi] - i - void;
            let iou = i as f64 / union as f64;
            if iou > 0.5 {
                matched_pred.insert(pi, (gi, iou));
                matched_gt.insert(gi, pi);
            }
        }

        for seg in &pred.segments {
            if pred_area.get(&seg.id).copied().unwrap_or(0) == 0 {
                continue; // merged-away table entries carry no pixels
            }
            let slot = self.acc.entry(seg.class_id).or_default();
            match matched_pred.get(&seg.id) {
                Some((_, iou)) => {
                    slot.tp += 1;
                    slot.iou_sum += iou;
                }
                None => slot.fp += 1,
            }
        }
        for seg in &gt.segments {
            if gt_area.get(&seg.id).copied().unwrap_or(0) == 0 {
                continue;
            }
            if !matched_gt.contains_key(&seg.id) {
                self.acc.entry(seg.class_id).or_default().fn_ += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> PqReport {
        let mut per_class = Vec::new();
        let (mut pq_sum, mut sq_sum, mut rq_sum) = (0.0, 0.0, 0.0);
        let (mut th_sum, mut th_n) = (0.0, 0usize);
        let (mut st_sum, mut st_n) = (0.0, 0usize);
        let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
        for (class_id, a) in &self.acc {
            let denom = a.tp as f64 + 0.5 * a.fp as f64 + 0.5 * a.fn_ as f64;
            let pq = if denom > 0.0 { a.iou_sum / denom } else { 0.0 };
            let sq = if a.tp > 0 {
                a.iou_sum / a.tp as f64
            } else {
                0.0
            };
            let rq = if denom > 0.0 {
                a.tp as f64 / denom
            } else {
                0.0
            };
            per_class.push(ClassPq {
                class_id: *class_id,
                pq: 100.0 * pq,
                sq: 100.0 * sq,
                rq: 100.0 * rq,
                tp: a.tp,
                fp: a.fp,
                fn_: a.fn_,
            });
            pq_sum += pq;
            sq_sum += sq;
            rq_sum += rq;
            if is_thing_class(*class_id) {
                th_sum += pq;
                th_n += 1;
            } else {
                st_sum += pq;
                st_n += 1;
            }
            tp_all += a.tp;
            fp_all += a.fp;
            fn_all += a.fn_;
        }
        let n = per_class.len().max(1) as f64;
        PqReport {
            pq: 100.0 * pq_sum / n,
            sq: 100.0 * sq_sum / n,
            rq: 100.0 * rq_sum / n,
            pq_things: 100.0 * th_sum / th_n.max(1) as f64,
            pq_stuff: 100.0 * st_sum / st_n.max(1) as f64,
            per_class,
            tp: tp_all,
            fp: fp_all,
            fn_: fn_all,
        }
    }
}

/// Single-scene panoptic quality.
pub fn panoptic_quality(pred: &PanopticResult, gt: &PanopticResult) -> Result<PqReport> {
    let mut acc = PqAccumulator::new();
    acc.add(pred, gt)?;
    Ok(acc.report())
}

/// Ground-truth tube: one tracked thing with per-frame full-res masks.
#[derive(Debug, Clone)]
pub struct GtTube {
    pub class_id: usize,
    pub masks: Vec<Vec<bool>>,
}

/// Extract thing tubes from a clip, keyed by instance id.
pub fn clip_gt_tubes(clip: &ClipSample) -> Vec<GtTube> {
    let t = clip.frames.len();
    let npx = clip.frames[0].size * clip.frames[0].size;
    let mut ids: Vec<(u32, usize)> = Vec::new();
    for frame in &clip.frames {
        for e in &frame.entities {
            if let Some(id) = e.instance_id {
                if !ids.iter().any(|(i, _)| *i == id) {
                    ids.push((id, e.class_id));
                }
            }
        }
    }
    ids.sort_unstable();
    ids.iter()
        .map(|&(id, class_id)| {
            let masks = (0..t)
                .map(|f| {
                    clip.frames[f]
                        .entities
                        .iter()
                        .find(|e| e.instance_id == Some(id))
                        .map(|e| e.mask.clone())
                        .unwrap_or_else(|| vec![false; npx])
                })
                .collect();
            GtTube { class_id, masks }
        })
        .collect()
}

fn tube_iou(pred: &TrackedInstance, gt: &GtTube) -> f64 {
    let t = gt.masks.len();
    let mut inter = 0usize;
    let mut union = 0usize;
    for f in 0..t {
        let pm = pred.masks.get(f).map(|m| m.as_slice()).unwrap_or(&[]);
        let gm = &gt.masks[f];
        for (i, &g) in gm.iter().enumerate() {
            let p = pm.get(i).copied().unwrap_or(false);
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
        if pm.len() > gm.len() {
            union += pm[gm.len()..].iter().filter(|&&p| p).count();
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct TubeApReport {
    pub thresholds: Vec<f64>,
    pub ap_per_threshold: Vec<f64>,
    pub mean_ap: f64,
}

impl TubeApReport {
    pub fn kv_lines(&self) -> String {
        let mut s = format!("map={:.4}", self.mean_ap);
        for (t, ap) in self.thresholds.iter().zip(&self.ap_per_threshold) {
            s.push_str(&format!(" ap{}={:.4}", (t * 100.0).round() as u32, ap));
        }
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::from("iou_thr      ap\n");
        for (t, ap) in self.thresholds.iter().zip(&self.ap_per_threshold) {
            s.push_str(&format!("{t:<8.2} {ap:>6.2}\n"));
        }
        s.push_str(&format!("{:<8} {:>6.2}\n", "mean", self.mean_ap));
        s
    }
}

pub fn default_tube_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Tube mAP over a dataset of clips: greedy score-ordered matching per clip
/// per class per threshold (a tube counts as TP only when IoU > tau,
/// strictly), then one 101-point interpolated AP per class over the pooled
/// score ranking, averaged over classes that have ground truth, then over
/// thresholds.
pub fn tube_map_dataset(
    clips: &[(Vec<TrackedInstance>, Vec<GtTube>)],
    thresholds: &[f64],
) -> Result<TubeApReport> {
    if thresholds.is_empty() {
        return Err(Error::Input("tube_map needs thresholds".into()));
    }
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = clips
            .iter()
            .flat_map(|(_, gts)| gts.iter().map(|g| g.class_id))
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut ap_per_threshold = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        if classes.is_empty() {
            ap_per_threshold.push(0.0);
            continue;
        }
        let mut ap_sum = 0.0;
        for &class in &classes {
            // matching stays within each clip; the ranking pools every clip
            let mut ranked: Vec<(f64, bool)> = Vec::new();
            let mut num_gt = 0usize;
            for (preds, gts) in clips {
                let gt_idx: Vec<usize> = gts
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.class_id == class)
                    .map(|(i, _)| i)
                    .collect();
                num_gt += gt_idx.len();
                let mut pred_idx: Vec<usize> = preds
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.class_id == class)
                    .map(|(i, _)| i)
                    .collect();
                pred_idx.sort_by(|&a, &b| {
                    preds[b]
                        .score
                        .partial_cmp(&preds[a].score)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let mut taken = vec![false; gt_idx.len()];
                for &pi in &pred_idx {
                    let mut best = -1.0;
                    let mut best_g = usize::MAX;
                    for (slot, &gi) in gt_idx.iter().enumerate() {
                        if taken[slot] {
                            continue;
                        }
                        let iou = tube_iou(&preds[pi], &gts[gi]);
                        if iou > best {
                            best = iou;
                            best_g = slot;
                        }
                    }
                    let is_tp = best_g != usize::MAX && best > tau;
                    if is_tp {
                        taken[best_g] = true;
                    }
                    ranked.push((preds[pi].score, is_tp));
                }
            }
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
            let tp_flags: Vec<bool> = ranked.iter().map(|(_, tp)| *tp).collect();
            ap_sum += interpolated_ap(&tp_flags, num_gt);
        }
        ap_per_threshold.push(100.0 * ap_sum / classes.len() as f64);
    }
    let mean_ap = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
    Ok(TubeApReport {
        thresholds: thresholds.to_vec(),
        ap_per_threshold,
        mean_ap,
    })
}

/// Single-clip tube mAP.
pub fn tube_map(
    preds: &[TrackedInstance],
    gts: &[GtTube],
    thresholds: &[f64],
) -> Result<TubeApReport> {
    tube_map_dataset(&[(preds.to_vec(), gts.to_vec())], thresholds)
}

/// 101-point interpolated AP from ranked TP flags.
fn interpolated_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let recall = tp as f64 / num_gt as f64;
        let precision = tp as f64 / (rank + 1) as f64;
        points.push((recall, precision));
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 101.0
}

/// Mean IoU of predicted masks against their prompted target entities.
pub fn one_click_miou(pred_masks: &[Vec<bool>], gt_masks: &[&[bool]]) -> Result<f64> {
    if pred_masks.len() != gt_masks.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} targets",
            pred_masks.len(),
            gt_masks.len()
        )));
    }
    if pred_masks.is_empty() {
        return Err(Error::Input("no prompts to evaluate".into()));
    }
    let mut total = 0.0;
    for (pred, gt) in pred_masks.iter().zip(gt_masks) {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (p, g) in pred.iter().zip(gt.iter()) {
            inter += (*p && *g) as usize;
            union += (*p || *g) as usize;
        }
        total += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    Ok(total / pred_masks.len() as f64)
}
