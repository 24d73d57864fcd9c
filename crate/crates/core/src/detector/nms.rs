use super::{compute_iou, decode_box, AnchorGrid, BBox, ForwardOutput};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class: usize,
    pub bbox: BBox,
    pub score: f64,
}

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_NMS_IOU: f64 = 0.5;
/// Detections kept per image after suppression.
pub const MAX_DETECTIONS: usize = 100;

/// Greedy per-class suppression. Input must be sorted by descending score.
pub fn nms(sorted: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && compute_iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

fn by_score_desc(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score)
}

/// Scores each (anchor, class) by the mean of the two classifiers, decodes
/// boxes, and suppresses overlaps per class.
pub fn decode_and_nms(
    output: &ForwardOutput,
    grid: &AnchorGrid,
    score_threshold: f64,
    iou_threshold: f64,
) -> Vec<Detection> {
    let c = output.y_f1.shape()[1];
    let mut cands = Vec::new();
    for (i, anchor) in grid.anchors.iter().enumerate() {
        for class in 0..c {
            let score = 0.5 * (output.y_f1.at(i, class) + output.y_f2.at(i, class));
            if score > score_threshold {
                cands.push(Detection { class, bbox: decode_box(anchor, output.y_fr.row(i)), score });
            }
        }
    }
    // stable sort keeps anchor order among equal scores
    cands.sort_by(by_score_desc);
    let mut kept = nms(&cands, iou_threshold);
    kept.truncate(MAX_DETECTIONS);
    kept
}
