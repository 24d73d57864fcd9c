//! Detection quality and uncertainty analysis: mAP, the true-positive
//! selection count, and uncertainty heatmaps.

mod ap;
mod heatmap;

use serde::{Deserialize, Serialize};

pub use ap::{
    ap_from_flags, average_precision, average_precision_with, match_detections, ApMethod, DetectionRecord, GroundTruth,
};
pub use heatmap::{dump_heatmap, heatmap_fields, to_gray, HeatmapFields};

use crate::detector::{
    compute_iou, decode_and_nms, forward_many, AnchorGrid, DetectorModel, ForwardOutput, DEFAULT_NMS_IOU,
    DEFAULT_SCORE_THRESHOLD, POSITIVE_IOU,
};
use crate::error::{Error, Result};
use crate::losses::instance_uncertainty;
use crate::synthdata::ImageSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            method: ApMethod::AllPoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub per_class_ap: Vec<f64>,
    pub map: f64,
}

/// Per-cycle measurements of one active-learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub labeled_fraction: f64,
    pub per_class_ap: Vec<f64>,
    pub map: f64,
    pub mean_selected_uncertainty: f64,
    pub tp_selected: usize,
    /// Mean objective over the last label-set training epoch.
    pub train_loss: f64,
}

pub fn map_from_records(
    detections: &[DetectionRecord],
    gts: &[GroundTruth],
    num_classes: usize,
    cfg: &EvalConfig,
) -> MapResult {
    let per_class_ap: Vec<f64> = (0..num_classes)
        .map(|c| {
            let d: Vec<DetectionRecord> = detections.iter().filter(|d| d.class == c).cloned().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.class == c).cloned().collect();
            average_precision_with(&d, &g, cfg.iou_threshold, cfg.method)
        })
        .collect();
    let map = if num_classes == 0 { 0.0 } else { per_class_ap.iter().sum::<f64>() / num_classes as f64 };
    MapResult { per_class_ap, map }
}

pub fn ground_truths(images: &[&ImageSample]) -> Vec<GroundTruth> {
    images
        .iter()
        .flat_map(|s| {
            s.gt_boxes
                .iter()
                .zip(&s.gt_classes)
                .map(|(b, &c)| GroundTruth { image_id: s.id.clone(), class: c, bbox: *b })
        })
        .collect()
}

/// Post-NMS detections for images whose head outputs are already computed.
pub fn detections_from_outputs(
    images: &[&ImageSample],
    outputs: &[ForwardOutput],
    grid: &AnchorGrid,
    cfg: &EvalConfig,
) -> Vec<DetectionRecord> {
    images
        .iter()
        .zip(outputs)
        .flat_map(|(s, out)| {
            decode_and_nms(out, grid, cfg.score_threshold, cfg.nms_iou).into_iter().map(|d| DetectionRecord {
                image_id: s.id.clone(),
                class: d.class,
                bbox: d.bbox,
                score: d.score,
            })
        })
        .collect()
}

pub fn evaluate_map(model: &DetectorModel, test: &[&ImageSample], cfg: &EvalConfig) -> Result<MapResult> {
    let grid = model.grid()?;
    let outputs = forward_many(model, &grid, test)?;
    let dets = detections_from_outputs(test, &outputs, &grid, cfg);
    Ok(map_from_records(&dets, &ground_truths(test), model.num_classes, cfg))
}

/// Indices of the `k` largest values, descending; ties keep the lower index first.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Among the `k` most uncertain anchors, those overlapping a ground-truth box
/// at IoU >= 0.5.
pub fn tp_count(uncertainty: &[f64], grid: &AnchorGrid, image: &ImageSample, k: usize) -> usize {
    top_k_indices(uncertainty, k)
        .into_iter()
        .filter(|&i| {
            let a = grid.anchors[i].bbox();
            image.gt_boxes.iter().any(|g| compute_iou(&a, g) >= POSITIVE_IOU)
        })
        .count()
}

/// Sum of [`tp_count`] over the selected images, using unweighted discrepancy.
pub fn tp_selected(model: &DetectorModel, selected: &[&ImageSample], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let grid = model.grid()?;
    let outputs = forward_many(model, &grid, selected)?;
    let mut total = 0;
    for (img, out) in selected.iter().zip(&outputs) {
        let u = instance_uncertainty(&out.y_f1, &out.y_f2, None)?;
        total += tp_count(&u, &grid, img, k);
    }
    Ok(total)
}
