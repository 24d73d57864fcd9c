use super::select::{select_images, topk_mean};
use super::train::{max_step, min_step, train_label_set, TrainData};
use super::{init_pool, ActiveConfig, CycleRecord, PoolState};
use crate::detector::{forward_many, DetectorModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_map, tp_selected, CycleMetrics};
use crate::losses::instance_uncertainty;
use crate::synthdata::{Dataset, ImageSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    LabelSet,
    Max { repeat: usize },
    Min { repeat: usize },
}

/// Parameters around one training phase, handed to run observers.
pub struct PhaseEvent<'a> {
    pub cycle: usize,
    pub phase: Phase,
    pub before: &'a DetectorModel,
    pub after: &'a DetectorModel,
}

pub struct CycleOutcome {
    pub model: DetectorModel,
    pub record: CycleRecord,
}

fn observed(
    model: &mut DetectorModel,
    cycle: usize,
    phase: Phase,
    observer: &mut dyn FnMut(&PhaseEvent),
    step: impl FnOnce(&mut DetectorModel) -> Result<f64>,
) -> Result<f64> {
    let before = model.clone();
    let loss = step(model)?;
    observer(&PhaseEvent { cycle, phase, before: &before, after: model });
    Ok(loss)
}

/// One cycle: fresh model, label-set training, the max/min phases for MI-AOD
/// strategies, evaluation on `test`, then selection into the labeled pool.
pub fn run_cycle(
    pool: &mut PoolState,
    data: &TrainData,
    test: &[&ImageSample],
    cfg: &ActiveConfig,
    observer: &mut dyn FnMut(&PhaseEvent),
) -> Result<CycleOutcome> {
    let cycle = pool.cycle;
    run_cycle_inner(pool, data, test, cfg, observer).map_err(|e| e.context(format!("cycle {cycle}")))
}

fn run_cycle_inner(
    pool: &mut PoolState,
    data: &TrainData,
    test: &[&ImageSample],
    cfg: &ActiveConfig,
    observer: &mut dyn FnMut(&PhaseEvent),
) -> Result<CycleOutcome> {
    let cc = &cfg.cycle;
    let cycle = pool.cycle;
    let total = data.samples.len();
    let expected = cc.init_count(total) + cycle * cc.step_count(total);
    if pool.labeled.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "labeled pool has {} images, schedule expects {expected}",
            pool.labeled.len()
        )));
    }
    let first = data.samples.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let num_classes = first.image_labels.len();
    let mut model = DetectorModel::new(&cfg.detector, first.size, num_classes, cc.seed)?;
    let labeled = data.indices(&pool.labeled)?;
    let unlabeled = data.indices(&pool.unlabeled)?;
    let strategy = cc.strategy;
    let c = cycle as u64;

    let train_loss = observed(&mut model, cycle, Phase::LabelSet, observer, |m| {
        Ok(train_label_set(m, data, &labeled, cfg, strategy.reweights(), &[c, 0])?.last())
    })?;
    if strategy.is_miaod() {
        let reweight = strategy.reweights();
        for r in 0..cc.maxmin_repeats {
            observed(&mut model, cycle, Phase::Max { repeat: r }, observer, |m| {
                Ok(max_step(m, data, &labeled, &unlabeled, cfg, reweight, &[c, 1, r as u64])?.last())
            })?;
            observed(&mut model, cycle, Phase::Min { repeat: r }, observer, |m| {
                Ok(min_step(m, data, &labeled, &unlabeled, cfg, reweight, &[c, 2, r as u64])?.last())
            })?;
        }
    }

    let map = evaluate_map(&model, test, &cfg.eval)?;
    let selected = select_images(&model, pool, data, cfg, cycle)?;
    let sel_images: Vec<&ImageSample> = data.indices(&selected)?.into_iter().map(|i| &data.samples[i]).collect();
    let grid = model.grid()?;
    let mut unc = 0.0;
    for out in forward_many(&model, &grid, &sel_images)? {
        unc += topk_mean(&instance_uncertainty(&out.y_f1, &out.y_f2, None)?, cc.k);
    }
    let mean_selected_uncertainty = if sel_images.is_empty() { 0.0 } else { unc / sel_images.len() as f64 };
    let tp = if sel_images.is_empty() { 0 } else { tp_selected(&model, &sel_images, cc.k)? };

    let metrics = CycleMetrics {
        cycle,
        labeled_fraction: labeled.len() as f64 / total as f64,
        per_class_ap: map.per_class_ap,
        map: map.map,
        mean_selected_uncertainty,
        tp_selected: tp,
        train_loss,
    };
    pool.label(&selected)?;
    pool.cycle += 1;
    let record = CycleRecord { selected, metrics };
    pool.history.push(record.clone());
    Ok(CycleOutcome { model, record })
}

/// All cycles of one run from a fresh pool. Returns the final pool, whose
/// history holds every cycle's record, and the last cycle's model.
pub fn run_experiment(
    train: &Dataset,
    test: &Dataset,
    cfg: &ActiveConfig,
    observer: &mut dyn FnMut(&PhaseEvent),
) -> Result<(PoolState, Option<DetectorModel>)> {
    cfg.validate(train.spec.image_size)?;
    let grid = crate::detector::build_anchors(train.spec.image_size, cfg.detector.stride, &cfg.detector.anchor_sizes)?;
    let data = TrainData::new(&train.samples, grid, train.spec.num_classes());
    let test_refs: Vec<&ImageSample> = test.samples.iter().collect();
    let mut pool = init_pool(train, &cfg.cycle)?;
    let mut last = None;
    for _ in 0..cfg.cycle.num_cycles {
        let out = run_cycle(&mut pool, &data, &test_refs, cfg, observer)?;
        pool.check(train)?;
        last = Some(out.model);
    }
    Ok((pool, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activeloop::Strategy;
    use crate::synthdata::{generate_dataset, SceneSpec};

    fn tiny(strategy: Strategy) -> ActiveConfig {
        let mut cfg = ActiveConfig::default();
        cfg.cycle.strategy = strategy;
        cfg.cycle.num_cycles = 2;
        cfg.cycle.init_fraction = 0.25;
        cfg.cycle.step_fraction = 0.125;
        cfg.cycle.epochs.label_set = 1;
        cfg.cycle.epochs.max_step = 1;
        cfg.cycle.epochs.min_step = 1;
        cfg.cycle.maxmin_repeats = 1;
        cfg
    }

    #[test]
    fn every_strategy_runs_and_keeps_pool_invariants() {
        let train = generate_dataset(&SceneSpec::default(), 32, 1).unwrap();
        let test = generate_dataset(&SceneSpec::default(), 8, 2).unwrap();
        for s in super::super::Strategy::ALL {
            let cfg = tiny(s);
            let (pool, model) = run_experiment(&train, &test, &cfg, &mut |_| {}).unwrap();
            pool.check(&train).unwrap();
            assert_eq!(pool.labeled.len(), 8 + 2 * 4);
            assert_eq!(pool.history.len(), 2);
            assert!(model.is_some());
            let (a, b) = (&pool.history[0].selected, &pool.history[1].selected);
            assert!(a.iter().all(|id| !b.contains(id)), "{s}");
            for r in &pool.history {
                assert_eq!(r.selected.len(), 4);
                assert!(r.metrics.map.is_finite());
            }
        }
    }

    #[test]
    fn phases_are_reported_in_order() {
        let train = generate_dataset(&SceneSpec::default(), 32, 1).unwrap();
        let test = generate_dataset(&SceneSpec::default(), 4, 2).unwrap();
        let mut cfg = tiny(Strategy::MiaodIur);
        cfg.cycle.num_cycles = 1;
        cfg.cycle.maxmin_repeats = 2;
        let mut seen = Vec::new();
        run_experiment(&train, &test, &cfg, &mut |e| seen.push((e.cycle, e.phase))).unwrap();
        assert_eq!(
            seen,
            vec![
                (0, Phase::LabelSet),
                (0, Phase::Max { repeat: 0 }),
                (0, Phase::Min { repeat: 0 }),
                (0, Phase::Max { repeat: 1 }),
                (0, Phase::Min { repeat: 1 }),
            ]
        );
    }
}
