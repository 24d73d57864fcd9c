//! Training objectives: detection loss, classifier discrepancy, MIL image
//! scores and image classification loss, and the max/min objectives that
//! combine them over labeled and unlabeled batches.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::detector::{AnchorFlag, AssignmentResult, ForwardVars};
use crate::error::{Error, Result};

/// How per-instance discrepancies are aggregated into one image term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceNorm {
    Sum,
    Mean,
}

/// Per-instance weights used by the re-weighted discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// MIL image-classification scores.
    Mil,
    /// First classifier's probabilities.
    F1,
    /// Constant 1.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub clamp_eps: f64,
    pub instance_norm: InstanceNorm,
    pub weight_variant: WeightVariant,
    /// Include image classification terms in the re-weighted objectives.
    pub image_cls_terms: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            clamp_eps: 1e-12,
            instance_norm: InstanceNorm::Mean,
            weight_variant: WeightVariant::Mil,
            image_cls_terms: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("focal_gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("focal_alpha must be in (0,1), got {}", self.focal_alpha)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidArgument(format!("clamp_eps must be in (0,0.5), got {}", self.clamp_eps)));
        }
        Ok(())
    }
}

fn check_rows(op: &'static str, tape: &Tape, v: Var, rows: usize, cols: usize) -> Result<()> {
    let shape = tape.shape(v)?;
    if shape != [rows, cols] {
        return Err(Error::ShapeMismatch { op, detail: format!("expected [{rows}, {cols}], got {shape:?}") });
    }
    Ok(())
}

fn num_positive(flags: &[AnchorFlag]) -> usize {
    flags.iter().filter(|f| **f == AnchorFlag::Positive).count()
}

/// Focal loss over non-ignored anchors, normalized by `max(1, #positives)`.
pub fn focal_loss(tape: &Tape, p: Var, y_cls: &Tensor, flags: &[AnchorFlag], cfg: &LossConfig) -> Result<Var> {
    let (n, c) = y_cls.dims2()?;
    if flags.len() != n {
        return Err(Error::ShapeMismatch { op: "focal_loss", detail: format!("{} flags for {n} anchors", flags.len()) });
    }
    check_rows("focal_loss", tape, p, n, c)?;
    let (alpha, gamma) = (cfg.focal_alpha, cfg.focal_gamma);
    let mut pos_w = vec![0.0; n * c];
    let mut neg_w = vec![0.0; n * c];
    for i in 0..n {
        if flags[i] == AnchorFlag::Ignore {
            continue;
        }
        for k in 0..c {
            let y = y_cls.at(i, k);
            pos_w[i * c + k] = alpha * y;
            neg_w[i * c + k] = (1.0 - alpha) * (1.0 - y);
        }
    }
    let pos_w = tape.constant(Tensor::matrix(n, c, pos_w)?)?;
    let neg_w = tape.constant(Tensor::matrix(n, c, neg_w)?)?;
    let q = tape.one_minus(p)?;
    let pos = tape.mul(tape.mul(pos_w, tape.pow(q, gamma)?)?, tape.log(p)?)?;
    let neg = tape.mul(tape.mul(neg_w, tape.pow(p, gamma)?)?, tape.log(q)?)?;
    let total = tape.sum(tape.add(pos, neg)?)?;
    let norm = num_positive(flags).max(1) as f64;
    tape.scale(total, -1.0 / norm)
}

/// Smooth-L1 over positive anchors' coordinates, normalized by `max(1, #positives)`.
pub fn smooth_l1(tape: &Tape, pred: Var, target: &Tensor, flags: &[AnchorFlag]) -> Result<Var> {
    let (n, w) = target.dims2()?;
    check_rows("smooth_l1", tape, pred, n, w)?;
    let mut mask = vec![0.0; n * w];
    for (i, f) in flags.iter().enumerate() {
        if *f == AnchorFlag::Positive {
            mask[i * w..(i + 1) * w].iter_mut().for_each(|m| *m = 1.0);
        }
    }
    let masked_target: Vec<f64> = target.data().iter().zip(&mask).map(|(t, m)| t * m).collect();
    let mask = tape.constant(Tensor::matrix(n, w, mask)?)?;
    let target = tape.constant(Tensor::matrix(n, w, masked_target)?)?;
    let diff = tape.sub(tape.mul(pred, mask)?, target)?;
    let total = tape.sum(tape.huber(diff)?)?;
    tape.scale(total, 1.0 / num_positive(flags).max(1) as f64)
}

/// Focal loss of both classifiers plus box regression.
pub fn detection_loss(tape: &Tape, out: &ForwardVars, assignment: &AssignmentResult, cfg: &LossConfig) -> Result<Var> {
    let fl1 = focal_loss(tape, out.y_f1, &assignment.y_cls, &assignment.flags, cfg)?;
    let fl2 = focal_loss(tape, out.y_f2, &assignment.y_cls, &assignment.flags, cfg)?;
    let reg = smooth_l1(tape, out.y_fr, &assignment.y_loc, &assignment.flags)?;
    tape.add(tape.add(fl1, fl2)?, reg)
}

fn aggregate(tape: &Tape, u: Var, norm: InstanceNorm) -> Result<Var> {
    match norm {
        InstanceNorm::Mean => tape.mean(u),
        InstanceNorm::Sum => tape.sum(u),
    }
}

/// Returns `(l_dis, u)` where `u_i` is the L1 gap between the classifiers'
/// class probabilities for instance `i`.
pub fn discrepancy(tape: &Tape, y_f1: Var, y_f2: Var, cfg: &LossConfig) -> Result<(Var, Var)> {
    let u = tape.sum_axis(tape.abs(tape.sub(y_f1, y_f2)?)?, 1)?;
    Ok((aggregate(tape, u, cfg.instance_norm)?, u))
}

/// As [`discrepancy`], with each class gap scaled by `w` before the absolute value.
pub fn weighted_discrepancy(tape: &Tape, y_f1: Var, y_f2: Var, w: Var, cfg: &LossConfig) -> Result<(Var, Var)> {
    let diff = tape.sub(y_f1, y_f2)?;
    let u = tape.sum_axis(tape.abs(tape.mul(w, diff)?)?, 1)?;
    Ok((aggregate(tape, u, cfg.instance_norm)?, u))
}

/// Image classification score per instance and class: class-softmax of the
/// MIL scores times instance-softmax of the mean classifier probability.
pub fn mil_image_score(tape: &Tape, y_fmil: Var, y_f1: Var, y_f2: Var) -> Result<Var> {
    let class_part = tape.softmax(y_fmil, 1)?;
    let mean_prob = tape.scale(tape.add(y_f1, y_f2)?, 0.5)?;
    let instance_part = tape.softmax(mean_prob, 0)?;
    tape.mul(class_part, instance_part)
}

/// Binary cross-entropy of the per-class instance sums of `score` against
/// image labels, summed over classes. Sums are clamped to `[eps, 1-eps]`.
pub fn image_cls_loss(tape: &Tape, score: Var, labels: &[f64], cfg: &LossConfig) -> Result<Var> {
    let shape = tape.shape(score)?;
    if shape.len() != 2 || shape[1] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "image_cls_loss",
            detail: format!("score {shape:?} vs {} labels", labels.len()),
        });
    }
    let eps = cfg.clamp_eps;
    let s = tape.clamp(tape.sum_axis(score, 0)?, eps, 1.0 - eps)?;
    let y = tape.constant(Tensor::vector(labels.to_vec()))?;
    let not_y = tape.constant(Tensor::vector(labels.iter().map(|v| 1.0 - v).collect()))?;
    let pos = tape.mul(y, tape.log(s)?)?;
    let neg = tape.mul(not_y, tape.log(tape.one_minus(s)?)?)?;
    tape.scale(tape.sum(tape.add(pos, neg)?)?, -1.0)
}

/// Image labels for an unlabeled image: class `c` is present iff the largest
/// mean classifier probability for `c` is strictly above 0.5.
pub fn pseudo_labels(y_f1: &Tensor, y_f2: &Tensor) -> Result<Vec<f64>> {
    if y_f1.shape() != y_f2.shape() {
        return Err(Error::ShapeMismatch {
            op: "pseudo_labels",
            detail: format!("{:?} vs {:?}", y_f1.shape(), y_f2.shape()),
        });
    }
    let (n, c) = y_f1.dims2()?;
    Ok((0..c)
        .map(|k| {
            let best = (0..n).map(|i| (y_f1.at(i, k) + y_f2.at(i, k)) / 2.0).fold(f64::NEG_INFINITY, f64::max);
            if best > 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Plain-value instance uncertainties `u_i = sum_c |w_ic (f1_ic - f2_ic)|`;
/// `weights = None` is the unweighted discrepancy.
pub fn instance_uncertainty(y_f1: &Tensor, y_f2: &Tensor, weights: Option<&Tensor>) -> Result<Vec<f64>> {
    let (n, c) = y_f1.dims2()?;
    if y_f2.shape() != y_f1.shape() || weights.is_some_and(|w| w.shape() != y_f1.shape()) {
        return Err(Error::ShapeMismatch { op: "instance_uncertainty", detail: format!("{:?}", y_f1.shape()) });
    }
    Ok((0..n)
        .map(|i| {
            (0..c)
                .map(|k| {
                    let d = y_f1.at(i, k) - y_f2.at(i, k);
                    match weights {
                        Some(w) => (w.at(i, k) * d).abs(),
                        None => d.abs(),
                    }
                })
                .sum()
        })
        .collect())
}

/// Plain-value [`mil_image_score`].
pub fn mil_scores(y_fmil: &Tensor, y_f1: &Tensor, y_f2: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let s = mil_image_score(
        &tape,
        tape.constant(y_fmil.clone())?,
        tape.constant(y_f1.clone())?,
        tape.constant(y_f2.clone())?,
    )?;
    tape.value(s)
}

/// Instance weights for the re-weighted discrepancy.
pub fn instance_weights(tape: &Tape, out: &ForwardVars, variant: WeightVariant) -> Result<Var> {
    match variant {
        WeightVariant::Mil => mil_image_score(tape, out.y_fmil, out.y_f1, out.y_f2),
        WeightVariant::F1 => Ok(out.y_f1),
        WeightVariant::Unit => {
            let shape = tape.shape(out.y_f1)?;
            tape.constant(Tensor::filled(&shape, 1.0))
        }
    }
}

/// A labeled image's head outputs with its targets.
#[derive(Clone, Copy, Debug)]
pub struct LabeledItem<'a> {
    pub out: ForwardVars,
    pub assignment: &'a AssignmentResult,
    pub image_labels: &'a [f64],
}

/// Components shared by the max and min objectives.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveParts {
    /// Sum over labeled images of the detection loss, plus the image
    /// classification loss when re-weighting.
    pub labeled: Var,
    /// Sum over unlabeled images of the (re-weighted) discrepancy, if any.
    pub discrepancy: Option<Var>,
    /// Sum over unlabeled images of the pseudo-labeled image classification
    /// loss; only present for the re-weighted min objective.
    pub unlabeled_cls: Option<Var>,
}

fn sum_all(tape: &Tape, terms: impl IntoIterator<Item = Result<Var>>) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for t in terms {
        let t = t?;
        acc = Some(match acc {
            None => t,
            Some(a) => tape.add(a, t)?,
        });
    }
    Ok(acc)
}

/// Labeled-side term: detection loss, plus the image classification loss when `with_mil`.
pub fn labeled_term(tape: &Tape, item: &LabeledItem<'_>, cfg: &LossConfig, with_mil: bool) -> Result<Var> {
    let det = detection_loss(tape, &item.out, item.assignment, cfg)?;
    if with_mil {
        let score = mil_image_score(tape, item.out.y_fmil, item.out.y_f1, item.out.y_f2)?;
        tape.add(det, image_cls_loss(tape, score, item.image_labels, cfg)?)
    } else {
        Ok(det)
    }
}

pub fn objective_parts(
    tape: &Tape,
    labeled: &[LabeledItem<'_>],
    unlabeled: &[ForwardVars],
    cfg: &LossConfig,
    reweight: bool,
    unlabeled_cls: bool,
) -> Result<ObjectiveParts> {
    let with_mil = reweight && cfg.image_cls_terms;
    let labeled = sum_all(tape, labeled.iter().map(|item| labeled_term(tape, item, cfg, with_mil)))?
        .ok_or_else(|| Error::InvalidArgument("objective needs at least one labeled image".into()))?;
    let discrepancy = sum_all(
        tape,
        unlabeled.iter().map(|out| {
            let l = if reweight {
                let w = instance_weights(tape, out, cfg.weight_variant)?;
                weighted_discrepancy(tape, out.y_f1, out.y_f2, w, cfg)?.0
            } else {
                discrepancy(tape, out.y_f1, out.y_f2, cfg)?.0
            };
            Ok(l)
        }),
    )?;
    let unlabeled_cls = if unlabeled_cls && with_mil {
        sum_all(
            tape,
            unlabeled.iter().map(|out| {
                let labels = pseudo_labels(&tape.value(out.y_f1)?, &tape.value(out.y_f2)?)?;
                let score = mil_image_score(tape, out.y_fmil, out.y_f1, out.y_f2)?;
                image_cls_loss(tape, score, &labels, cfg)
            }),
        )?
    } else {
        None
    };
    Ok(ObjectiveParts { labeled, discrepancy, unlabeled_cls })
}

/// Objective minimized while maximizing discrepancy:
/// labeled loss minus `lambda` times the unlabeled discrepancy.
pub fn objective_max(
    tape: &Tape,
    labeled: &[LabeledItem<'_>],
    unlabeled: &[ForwardVars],
    cfg: &LossConfig,
    reweight: bool,
) -> Result<Var> {
    let parts = objective_parts(tape, labeled, unlabeled, cfg, reweight, false)?;
    match parts.discrepancy {
        None => Ok(parts.labeled),
        Some(d) => tape.add(parts.labeled, tape.scale(d, -cfg.lambda)?),
    }
}

/// Objective minimized while minimizing discrepancy: labeled loss plus
/// `lambda` times the unlabeled discrepancy, plus the pseudo-labeled image
/// classification loss when re-weighting.
pub fn objective_min(
    tape: &Tape,
    labeled: &[LabeledItem<'_>],
    unlabeled: &[ForwardVars],
    cfg: &LossConfig,
    reweight: bool,
) -> Result<Var> {
    let parts = objective_parts(tape, labeled, unlabeled, cfg, reweight, true)?;
    let mut total = parts.labeled;
    if let Some(d) = parts.discrepancy {
        total = tape.add(total, tape.scale(d, cfg.lambda)?)?;
    }
    if let Some(c) = parts.unlabeled_cls {
        total = tape.add(total, c)?;
    }
    Ok(total)
}
