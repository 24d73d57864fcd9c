//! Anchor-based patch detector with two adversarial instance classifiers,
//! a box regressor and a multiple-instance scoring head.

mod anchors;
mod assign;
mod boxes;
mod model;
mod nms;

pub use anchors::{build_anchors, Anchor, AnchorGrid};
pub use assign::{assign_targets, decode_box, encode_box, AnchorFlag, AssignmentResult, NEGATIVE_IOU, POSITIVE_IOU};
pub use boxes::{compute_iou, BBox};
pub use model::{
    anchor_inputs, forward, forward_many, forward_tape, BatchForward, DetectorConfig, DetectorModel, ForwardOutput,
    ForwardVars, Layer, LayerVars, ModelVars, ParamGroup,
};
pub use nms::{decode_and_nms, nms, Detection, DEFAULT_NMS_IOU, DEFAULT_SCORE_THRESHOLD, MAX_DETECTIONS};
