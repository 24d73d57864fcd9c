//! The active-learning cycle: pool bookkeeping, the three training phases,
//! image scoring and selection.

mod cycle;
mod select;
mod train;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::{CycleMetrics, EvalConfig};
use crate::losses::LossConfig;
use crate::rng;
use crate::synthdata::Dataset;

pub use cycle::{run_cycle, run_experiment, CycleOutcome, Phase, PhaseEvent};
pub use select::{
    baseline_score, entropy_score, image_uncertainty, k_center_greedy, score_images, select_images, select_top,
    topk_mean, UncertaintyMode,
};
pub use train::{discrepancy_sum, max_step, min_step, train_label_set, PhaseReport, Sgd, TrainData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Entropy,
    MeanUnc,
    MaxUnc,
    Coreset,
    MiaodIul,
    MiaodIur,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::MeanUnc,
        Strategy::MaxUnc,
        Strategy::Coreset,
        Strategy::MiaodIul,
        Strategy::MiaodIur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::MeanUnc => "mean_unc",
            Strategy::MaxUnc => "max_unc",
            Strategy::Coreset => "coreset",
            Strategy::MiaodIul => "miaod_iul",
            Strategy::MiaodIur => "miaod_iur",
        }
    }

    /// Runs the adversarial max/min phases.
    pub fn is_miaod(self) -> bool {
        matches!(self, Strategy::MiaodIul | Strategy::MiaodIur)
    }

    /// Uses MIL re-weighting and image classification terms.
    pub fn reweights(self) -> bool {
        self == Strategy::MiaodIur
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
            Error::InvalidArgument(format!("unknown strategy {s:?} (known: {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    pub label_set: usize,
    pub max_step: usize,
    pub min_step: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig { label_set: 10, max_step: 2, min_step: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub init_fraction: f64,
    pub step_fraction: f64,
    pub num_cycles: usize,
    pub epochs: EpochConfig,
    pub maxmin_repeats: usize,
    pub learning_rate: f64,
    /// Learning rate of the max and min phases.
    pub maxmin_learning_rate: f64,
    pub momentum: f64,
    /// Fraction of label-set epochs after which the rate is multiplied by `lr_decay`.
    pub lr_decay_at: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub k: usize,
    pub strategy: Strategy,
    /// Score selection with MIL-weighted discrepancy instead of the plain one.
    pub weighted_selection: bool,
    pub seed: u64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            init_fraction: 0.10,
            step_fraction: 0.05,
            num_cycles: 5,
            epochs: EpochConfig::default(),
            maxmin_repeats: 3,
            learning_rate: 0.01,
            maxmin_learning_rate: 0.01,
            momentum: 0.9,
            lr_decay_at: 0.8,
            lr_decay: 0.1,
            batch_size: 8,
            k: 20,
            strategy: Strategy::MiaodIur,
            weighted_selection: false,
            seed: 0,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.init_fraction) || !in_unit(self.step_fraction) {
            return bad(format!(
                "fractions must lie in (0,1], got init {} step {}",
                self.init_fraction, self.step_fraction
            ));
        }
        if self.init_fraction + self.num_cycles as f64 * self.step_fraction > 1.0 + 1e-9 {
            return bad(format!(
                "init_fraction + num_cycles * step_fraction exceeds 1 ({} + {} * {})",
                self.init_fraction, self.num_cycles, self.step_fraction
            ));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.maxmin_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) || !(self.lr_decay > 0.0) {
            return bad("lr_decay_at must lie in [0,1] and lr_decay be positive".into());
        }
        Ok(())
    }

    pub fn init_count(&self, total: usize) -> usize {
        (self.init_fraction * total as f64).round() as usize
    }

    pub fn step_count(&self, total: usize) -> usize {
        (self.step_fraction * total as f64).round() as usize
    }
}

/// Everything one active-learning run needs besides data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    pub detector: DetectorConfig,
    pub cycle: CycleConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl ActiveConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        self.detector.validate(image_size)?;
        self.cycle.validate()?;
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub selected: Vec<String>,
    pub metrics: CycleMetrics,
}

/// Labeled/unlabeled partition of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolState {
    pub labeled: BTreeSet<String>,
    pub unlabeled: BTreeSet<String>,
    pub cycle: usize,
    pub history: Vec<CycleRecord>,
}

impl PoolState {
    /// Moves `ids` from unlabeled to labeled.
    pub fn label(&mut self, ids: &[String]) -> Result<()> {
        for id in ids {
            if !self.unlabeled.remove(id) {
                return Err(Error::InvalidArgument(format!("id {id} is not in the unlabeled pool")));
            }
            self.labeled.insert(id.clone());
        }
        Ok(())
    }

    /// Checks disjointness and coverage of `dataset`.
    pub fn check(&self, dataset: &Dataset) -> Result<()> {
        let all: BTreeSet<&str> = dataset.samples.iter().map(|s| s.id.as_str()).collect();
        let ok = self.labeled.is_disjoint(&self.unlabeled)
            && self.labeled.len() + self.unlabeled.len() == all.len()
            && self.labeled.iter().chain(&self.unlabeled).all(|id| all.contains(id.as_str()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("pool no longer partitions the dataset".into()))
        }
    }
}

/// Seeded uniform choice of the initial labeled set.
pub fn init_pool(dataset: &Dataset, cfg: &CycleConfig) -> Result<PoolState> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let n = cfg.init_count(dataset.len());
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "init_fraction {} labels no images out of {}",
            cfg.init_fraction,
            dataset.len()
        )));
    }
    let mut ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();
    ids.shuffle(&mut rng::stream(cfg.seed, &[rng::POOL]));
    let labeled: BTreeSet<String> = ids[..n.min(ids.len())].iter().cloned().collect();
    let unlabeled = ids[n.min(ids.len())..].iter().cloned().collect();
    Ok(PoolState { labeled, unlabeled, cycle: 0, history: Vec::new() })
}
