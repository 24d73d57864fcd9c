use serde::{Deserialize, Serialize};

use crate::detector::{compute_iou, BBox};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class: usize,
    pub bbox: BBox,
}

/// Precision-recall integration rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    #[default]
    AllPoint,
    ElevenPoint,
}

/// Greedy matching in descending score order (stable among ties). Each
/// detection claims the highest-IoU ground truth of its image and class; it
/// is a true positive iff that IoU reaches `iou_threshold` and the ground
/// truth is still unclaimed. Returns one flag per detection in sorted order.
pub fn match_detections(detections: &[DetectionRecord], gts: &[GroundTruth], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut claimed = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let det = &detections[d];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.image_id == det.image_id && g.class == det.class)
                .map(|(j, g)| (j, compute_iou(&det.bbox, &g.bbox)))
                .fold(None, |best: Option<(usize, f64)>, (j, iou)| match best {
                    Some((_, b)) if b >= iou => best,
                    _ => Some((j, iou)),
                });
            match best {
                Some((j, iou)) if iou >= iou_threshold && !claimed[j] => {
                    claimed[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the interpolated precision-recall curve for `tp` flags in rank
/// order against `num_gt` ground truths. Zero when there is nothing to find.
pub fn ap_from_flags(tp: &[bool], num_gt: usize, method: ApMethod) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (rank, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (rank + 1) as f64);
    }
    match method {
        ApMethod::AllPoint => {
            // precision envelope, then sum rectangles where recall steps up
            let mut env = precision.clone();
            for i in (0..env.len().saturating_sub(1)).rev() {
                env[i] = env[i].max(env[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&env) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Average precision of one class's detections with all-point interpolation.
pub fn average_precision(detections: &[DetectionRecord], gts: &[GroundTruth], iou_threshold: f64) -> f64 {
    average_precision_with(detections, gts, iou_threshold, ApMethod::AllPoint)
}

pub fn average_precision_with(
    detections: &[DetectionRecord],
    gts: &[GroundTruth],
    iou_threshold: f64,
    method: ApMethod,
) -> f64 {
    let tp = match_detections(detections, gts, iou_threshold);
    ap_from_flags(&tp, gts.len(), method)
}
