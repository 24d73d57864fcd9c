use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use super::ActiveConfig;
use crate::autodiff::{Tape, Var};
use crate::detector::{
    assign_targets, forward_many, forward_tape, AnchorGrid, AssignmentResult, DetectorModel, ForwardVars, ModelVars,
    ParamGroup,
};
use crate::error::{Error, Result};
use crate::losses::{instance_uncertainty, labeled_term, objective_max, objective_min, InstanceNorm, LabeledItem, LossConfig};
use crate::rng;
use crate::synthdata::ImageSample;

/// Training images with their anchor targets, computed once.
pub struct TrainData<'a> {
    pub samples: &'a [ImageSample],
    pub grid: AnchorGrid,
    pub assignments: Vec<AssignmentResult>,
    index: BTreeMap<&'a str, usize>,
}

impl<'a> TrainData<'a> {
    pub fn new(samples: &'a [ImageSample], grid: AnchorGrid, num_classes: usize) -> Self {
        let assignments =
            samples.iter().map(|s| assign_targets(&grid, &s.gt_boxes, &s.gt_classes, num_classes)).collect();
        let index = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        TrainData { samples, grid, assignments, index }
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::MissingSample { id: id.to_string() })
    }

    pub fn indices<'i>(&self, ids: impl IntoIterator<Item = &'i String>) -> Result<Vec<usize>> {
        ids.into_iter().map(|id| self.index_of(id)).collect()
    }
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + grad; p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<(ParamGroup, usize, bool), Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: BTreeMap::new() }
    }

    /// Applies the gradients accumulated on `tape` to the trainable groups of `model`.
    pub fn step(&mut self, tape: &Tape, vars: &ModelVars, model: &mut DetectorModel) -> Result<()> {
        for &group in &vars.trainable {
            let lvars = vars.layers(group);
            for (li, (lv, layer)) in lvars.iter().zip(model.layers_mut(group)).enumerate() {
                for (is_bias, var, param) in [(false, lv.weight, &mut layer.weight), (true, lv.bias, &mut layer.bias)] {
                    let Some(grad) = tape.grad(var)? else { continue };
                    if !grad.is_finite() {
                        return Err(Error::NonFinite { op: "gradient" });
                    }
                    let v = self.velocity.entry((group, li, is_bias)).or_insert_with(|| vec![0.0; grad.len()]);
                    for ((p, vi), g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                        *vi = self.momentum * *vi + g;
                        *p -= self.lr * *vi;
                    }
                    if !param.is_finite() {
                        return Err(Error::NonFinite { op: "sgd update" });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean objective per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseReport {
    pub epoch_losses: Vec<f64>,
}

impl PhaseReport {
    pub fn last(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
enum Objective {
    Detection { with_mil: bool },
    Max { reweight: bool },
    Min { reweight: bool },
}

/// Records one batch objective on `tape`.
fn batch_objective(
    tape: &Tape,
    vars: &ModelVars,
    model: &DetectorModel,
    data: &TrainData,
    labeled: &[usize],
    unlabeled: &[usize],
    loss: &LossConfig,
    objective: Objective,
) -> Result<Var> {
    let images: Vec<&ImageSample> = labeled.iter().chain(unlabeled).map(|&i| &data.samples[i]).collect();
    let fw = forward_tape(tape, vars, model, &data.grid, &images)?;
    let items: Vec<LabeledItem> = labeled
        .iter()
        .enumerate()
        .map(|(b, &i)| {
            Ok(LabeledItem {
                out: fw.image(tape, b)?,
                assignment: &data.assignments[i],
                image_labels: &data.samples[i].image_labels,
            })
        })
        .collect::<Result<_>>()?;
    let outs: Vec<ForwardVars> =
        (0..unlabeled.len()).map(|b| fw.image(tape, labeled.len() + b)).collect::<Result<_>>()?;
    match objective {
        Objective::Detection { with_mil } => {
            let mut total: Option<Var> = None;
            for item in &items {
                let t = labeled_term(tape, item, loss, with_mil && loss.image_cls_terms)?;
                total = Some(match total {
                    None => t,
                    Some(a) => tape.add(a, t)?,
                });
            }
            total.ok_or_else(|| Error::InvalidArgument("empty labeled batch".into()))
        }
        Objective::Max { reweight } => objective_max(tape, &items, &outs, loss, reweight),
        Objective::Min { reweight } => objective_min(tape, &items, &outs, loss, reweight),
    }
}

struct PhasePlan<'p> {
    objective: Objective,
    trainable: &'p [ParamGroup],
    epochs: usize,
    with_unlabeled: bool,
}

fn run_phase(
    model: &mut DetectorModel,
    data: &TrainData,
    labeled: &[usize],
    unlabeled: &[usize],
    cfg: &ActiveConfig,
    plan: PhasePlan,
    lr_at: impl Fn(usize) -> f64,
    key: &[u64],
) -> Result<PhaseReport> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("labeled set is empty".into()));
    }
    let cc = &cfg.cycle;
    let mut sgd = Sgd::new(lr_at(0), cc.momentum);
    let mut report = PhaseReport::default();
    for epoch in 0..plan.epochs {
        sgd.lr = lr_at(epoch);
        let mut path = vec![rng::BATCHES];
        path.extend_from_slice(key);
        path.push(epoch as u64);
        let mut rng = rng::stream(cc.seed, &path);
        let mut order = labeled.to_vec();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cc.batch_size) {
            let ubatch: Vec<usize> = if plan.with_unlabeled && !unlabeled.is_empty() {
                index::sample(&mut rng, unlabeled.len(), cc.batch_size.min(unlabeled.len()))
                    .into_iter()
                    .map(|j| unlabeled[j])
                    .collect()
            } else {
                Vec::new()
            };
            let tape = Tape::new();
            let vars = ModelVars::register(&tape, model, plan.trainable)?;
            // per-image average keeps the step size independent of batch_size
            let loss = batch_objective(&tape, &vars, model, data, batch, &ubatch, &cfg.loss, plan.objective)
                .and_then(|l| {
                    let l = tape.scale(l, 1.0 / batch.len() as f64)?;
                    tape.backward(l)?;
                    tape.item(l)
                })
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            sgd.step(&tape, &vars, model).map_err(|e| e.context(format!("epoch {epoch}")))?;
            total += loss;
            steps += 1;
        }
        report.epoch_losses.push(total / steps.max(1) as f64);
    }
    Ok(report)
}

fn check_frozen(model: &DetectorModel, before: &[(ParamGroup, Vec<crate::detector::Layer>)], phase: &str) -> Result<()> {
    for (group, snap) in before {
        if !model.group_bits_eq(*group, snap) {
            return Err(Error::FreezeViolation(format!("{phase} changed frozen group {group:?}")));
        }
    }
    Ok(())
}

fn snapshot(model: &DetectorModel, groups: &[ParamGroup]) -> Vec<(ParamGroup, Vec<crate::detector::Layer>)> {
    groups.iter().map(|&g| (g, model.snapshot(g))).collect()
}

/// Label-set training over all parameters; the rate drops by `lr_decay`
/// after `lr_decay_at` of the epochs.
pub fn train_label_set(
    model: &mut DetectorModel,
    data: &TrainData,
    labeled: &[usize],
    cfg: &ActiveConfig,
    with_mil: bool,
    key: &[u64],
) -> Result<PhaseReport> {
    let cc = &cfg.cycle;
    let epochs = cc.epochs.label_set;
    let decay_from = (cc.lr_decay_at * epochs as f64).ceil() as usize;
    let trainable: &[ParamGroup] = if with_mil {
        &ParamGroup::ALL
    } else {
        &[ParamGroup::Features, ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor]
    };
    let plan = PhasePlan { objective: Objective::Detection { with_mil }, trainable, epochs, with_unlabeled: false };
    let lr = |e: usize| if e >= decay_from { cc.learning_rate * cc.lr_decay } else { cc.learning_rate };
    run_phase(model, data, labeled, &[], cfg, plan, lr, key)
}

/// Trains every head against the max objective with the feature extractor frozen.
pub fn max_step(
    model: &mut DetectorModel,
    data: &TrainData,
    labeled: &[usize],
    unlabeled: &[usize],
    cfg: &ActiveConfig,
    reweight: bool,
    key: &[u64],
) -> Result<PhaseReport> {
    let trainable: &[ParamGroup] = if reweight {
        &[ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor, ParamGroup::Mil]
    } else {
        &[ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor]
    };
    let frozen = snapshot(model, &[ParamGroup::Features]);
    let plan = PhasePlan {
        objective: Objective::Max { reweight },
        trainable,
        epochs: cfg.cycle.epochs.max_step,
        with_unlabeled: true,
    };
    let lr = cfg.cycle.maxmin_learning_rate;
    let report = run_phase(model, data, labeled, unlabeled, cfg, plan, |_| lr, key)?;
    check_frozen(model, &frozen, "max_step")?;
    Ok(report)
}

/// Trains the feature extractor (and the MIL head when re-weighting) against
/// the min objective with both instance classifiers and the regressor frozen.
pub fn min_step(
    model: &mut DetectorModel,
    data: &TrainData,
    labeled: &[usize],
    unlabeled: &[usize],
    cfg: &ActiveConfig,
    reweight: bool,
    key: &[u64],
) -> Result<PhaseReport> {
    let (trainable, frozen_groups): (&[ParamGroup], &[ParamGroup]) = if reweight {
        (&[ParamGroup::Features, ParamGroup::Mil], &[ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor])
    } else {
        (&[ParamGroup::Features], &[ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor, ParamGroup::Mil])
    };
    let frozen = snapshot(model, frozen_groups);
    let plan = PhasePlan {
        objective: Objective::Min { reweight },
        trainable,
        epochs: cfg.cycle.epochs.min_step,
        with_unlabeled: true,
    };
    let lr = cfg.cycle.maxmin_learning_rate;
    let report = run_phase(model, data, labeled, unlabeled, cfg, plan, |_| lr, key)?;
    check_frozen(model, &frozen, "min_step")?;
    Ok(report)
}

/// Sum over `images` of the unweighted discrepancy loss.
pub fn discrepancy_sum(model: &DetectorModel, images: &[&ImageSample], loss: &LossConfig) -> Result<f64> {
    let grid = model.grid()?;
    let mut total = 0.0;
    for out in forward_many(model, &grid, images)? {
        let u = instance_uncertainty(&out.y_f1, &out.y_f2, None)?;
        let s: f64 = u.iter().sum();
        total += match loss.instance_norm {
            InstanceNorm::Sum => s,
            InstanceNorm::Mean => s / u.len().max(1) as f64,
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::synthdata::{generate_dataset, SceneSpec};

    fn setup(n: usize) -> (crate::synthdata::Dataset, DetectorModel) {
        let data = generate_dataset(&SceneSpec::default(), n, 21).unwrap();
        let model = DetectorModel::new(&DetectorConfig::default(), 64, 3, 4).unwrap();
        (data, model)
    }

    fn small_cfg(epochs: usize) -> ActiveConfig {
        let mut cfg = ActiveConfig::default();
        cfg.cycle.epochs.label_set = epochs;
        cfg.cycle.epochs.max_step = 1;
        cfg.cycle.epochs.min_step = 1;
        cfg
    }

    #[test]
    fn label_set_training_is_deterministic() {
        let (data, model) = setup(8);
        let td = TrainData::new(&data.samples, model.grid().unwrap(), 3);
        let idx: Vec<usize> = (0..8).collect();
        let cfg = small_cfg(1);
        let mut a = model.clone();
        let mut b = model.clone();
        train_label_set(&mut a, &td, &idx, &cfg, true, &[0]).unwrap();
        train_label_set(&mut b, &td, &idx, &cfg, true, &[0]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model);
    }

    #[test]
    fn label_set_training_reduces_loss() {
        let (data, mut model) = setup(16);
        let td = TrainData::new(&data.samples, model.grid().unwrap(), 3);
        let idx: Vec<usize> = (0..16).collect();
        let r = train_label_set(&mut model, &td, &idx, &small_cfg(10), false, &[0]).unwrap();
        assert!(r.epoch_losses[9] < r.epoch_losses[0], "{:?}", r.epoch_losses);
    }

    #[test]
    fn without_mil_leaves_mil_head_alone() {
        let (data, model) = setup(8);
        let td = TrainData::new(&data.samples, model.grid().unwrap(), 3);
        let mut m = model.clone();
        train_label_set(&mut m, &td, &[0, 1, 2], &small_cfg(1), false, &[0]).unwrap();
        assert_eq!(m.fmil, model.fmil);
    }

    #[test]
    fn freeze_contracts_hold() {
        let (data, mut model) = setup(16);
        let td = TrainData::new(&data.samples, model.grid().unwrap(), 3);
        let cfg = small_cfg(1);
        let (lab, unl): (Vec<usize>, Vec<usize>) = ((0..8).collect(), (8..16).collect());
        train_label_set(&mut model, &td, &lab, &cfg, true, &[0]).unwrap();
        for reweight in [false, true] {
            let g = model.snapshot(ParamGroup::Features);
            max_step(&mut model, &td, &lab, &unl, &cfg, reweight, &[1]).unwrap();
            assert!(model.group_bits_eq(ParamGroup::Features, &g));
            let f1 = model.snapshot(ParamGroup::F1);
            let f2 = model.snapshot(ParamGroup::F2);
            let fr = model.snapshot(ParamGroup::Regressor);
            min_step(&mut model, &td, &lab, &unl, &cfg, reweight, &[2]).unwrap();
            assert!(model.group_bits_eq(ParamGroup::F1, &f1));
            assert!(model.group_bits_eq(ParamGroup::F2, &f2));
            assert!(model.group_bits_eq(ParamGroup::Regressor, &fr));
        }
    }

    #[test]
    fn zero_lambda_ignores_unlabeled_in_max_step() {
        let (data, mut model) = setup(24);
        let td = TrainData::new(&data.samples, model.grid().unwrap(), 3);
        let mut cfg = small_cfg(1);
        cfg.loss.lambda = 0.0;
        let lab: Vec<usize> = (0..8).collect();
        train_label_set(&mut model, &td, &lab, &cfg, false, &[0]).unwrap();
        let mut a = model.clone();
        let mut b = model.clone();
        max_step(&mut a, &td, &lab, &(8..16).collect::<Vec<_>>(), &cfg, false, &[1]).unwrap();
        max_step(&mut b, &td, &lab, &(16..24).collect::<Vec<_>>(), &cfg, false, &[1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_momentum_update() {
        let model = DetectorModel::zeros(&DetectorConfig::default(), 64, 1).unwrap();
        let mut m = model.clone();
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, &m, &[ParamGroup::Regressor]).unwrap();
        let s = tape.sum(vars.fr.bias).unwrap();
        tape.backward(s).unwrap();
        let mut sgd = Sgd::new(0.1, 0.9);
        sgd.step(&tape, &vars, &mut m).unwrap();
        assert!(m.fr.bias.data().iter().all(|&b| (b + 0.1).abs() < 1e-15));
        sgd.step(&tape, &vars, &mut m).unwrap();
        // second step: v = 0.9 + 1 = 1.9
        assert!(m.fr.bias.data().iter().all(|&b| (b + 0.1 + 0.19).abs() < 1e-15));
        assert_eq!(m.fr.weight, model.fr.weight);
    }
}
