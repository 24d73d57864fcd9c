use super::{compute_iou, Anchor, AnchorGrid, BBox};
use crate::autodiff::Tensor;

pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorFlag {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentResult {
    /// `N×C`, one-hot on positive rows and zero elsewhere.
    pub y_cls: Tensor,
    /// `N×4` regression targets, zero on non-positive rows.
    pub y_loc: Tensor,
    pub flags: Vec<AnchorFlag>,
}

impl AssignmentResult {
    pub fn num_positive(&self) -> usize {
        self.flags.iter().filter(|f| **f == AnchorFlag::Positive).count()
    }

    /// 1 for anchors that enter the classification loss, 0 for ignored ones.
    pub fn valid_mask(&self) -> Vec<f64> {
        self.flags.iter().map(|f| if *f == AnchorFlag::Ignore { 0.0 } else { 1.0 }).collect()
    }

    pub fn positive_mask(&self) -> Vec<f64> {
        self.flags.iter().map(|f| if *f == AnchorFlag::Positive { 1.0 } else { 0.0 }).collect()
    }
}

pub fn encode_box(anchor: &Anchor, gt: &BBox) -> [f64; 4] {
    let (gx, gy) = gt.center();
    [
        (gx - anchor.cx) / anchor.w,
        (gy - anchor.cy) / anchor.h,
        (gt.width() / anchor.w).ln(),
        (gt.height() / anchor.h).ln(),
    ]
}

/// Largest log-scale offset honoured when decoding.
const MAX_LOG_SCALE: f64 = 4.0;

pub fn decode_box(anchor: &Anchor, offsets: &[f64]) -> BBox {
    let cx = anchor.cx + offsets[0] * anchor.w;
    let cy = anchor.cy + offsets[1] * anchor.h;
    let w = anchor.w * offsets[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let h = anchor.h * offsets[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}

/// IoU-threshold assignment with a forced best-anchor match per object.
pub fn assign_targets(
    grid: &AnchorGrid,
    gt_boxes: &[BBox],
    gt_classes: &[usize],
    num_classes: usize,
) -> AssignmentResult {
    let n = grid.len();
    let ious: Vec<Vec<f64>> =
        grid.anchors.iter().map(|a| gt_boxes.iter().map(|g| compute_iou(&a.bbox(), g)).collect()).collect();

    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut flags = vec![AnchorFlag::Negative; n];
    for (i, row) in ious.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in row.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            if v >= POSITIVE_IOU {
                flags[i] = AnchorFlag::Positive;
                owner[i] = Some(j);
            } else if v >= NEGATIVE_IOU {
                flags[i] = AnchorFlag::Ignore;
            }
        }
    }

    let mut forced = vec![false; n];
    for j in 0..gt_boxes.len() {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in ious.iter().enumerate() {
            if forced[i] {
                continue;
            }
            if best.is_none_or(|(_, b)| row[j] > b) {
                best = Some((i, row[j]));
            }
        }
        if let Some((i, _)) = best {
            forced[i] = true;
            flags[i] = AnchorFlag::Positive;
            owner[i] = Some(j);
        }
    }

    let mut y_cls = Tensor::zeros(&[n, num_classes]);
    let mut y_loc = Tensor::zeros(&[n, 4]);
    for i in 0..n {
        if let (AnchorFlag::Positive, Some(j)) = (flags[i], owner[i]) {
            y_cls.data_mut()[i * num_classes + gt_classes[j]] = 1.0;
            y_loc.data_mut()[i * 4..i * 4 + 4].copy_from_slice(&encode_box(&grid.anchors[i], &gt_boxes[j]));
        }
    }
    AssignmentResult { y_cls, y_loc, flags }
}
