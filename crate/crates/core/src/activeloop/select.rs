use rand::seq::SliceRandom;

use super::train::TrainData;
use super::{ActiveConfig, PoolState, Strategy};
use crate::detector::{forward, forward_many, DetectorModel, ForwardOutput};
use crate::error::{Error, Result};
use crate::eval::top_k_indices;
use crate::losses::{instance_uncertainty, mil_scores};
use crate::rng;
use crate::synthdata::ImageSample;

/// Aggregation of instance uncertainties into one image score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncertaintyMode {
    Mean,
    Max,
    TopK(usize),
}

/// Mean of the `k` largest values. The chosen values are summed in their
/// original order, so `k >= len` reproduces the plain mean bit for bit.
pub fn topk_mean(values: &[f64], k: usize) -> f64 {
    let mut idx = top_k_indices(values, k);
    if idx.is_empty() {
        return 0.0;
    }
    idx.sort_unstable();
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

fn aggregate(u: &[f64], mode: UncertaintyMode) -> f64 {
    match mode {
        UncertaintyMode::Mean => {
            if u.is_empty() {
                0.0
            } else {
                u.iter().sum::<f64>() / u.len() as f64
            }
        }
        UncertaintyMode::Max => u.iter().copied().fold(0.0, f64::max),
        UncertaintyMode::TopK(k) => topk_mean(u, k),
    }
}

fn output_uncertainty(out: &ForwardOutput, weighted: bool) -> Result<Vec<f64>> {
    if weighted {
        let w = mil_scores(&out.y_fmil, &out.y_f1, &out.y_f2)?;
        instance_uncertainty(&out.y_f1, &out.y_f2, Some(&w))
    } else {
        instance_uncertainty(&out.y_f1, &out.y_f2, None)
    }
}

/// Image uncertainty from the unweighted classifier discrepancy.
pub fn image_uncertainty(model: &DetectorModel, image: &ImageSample, mode: UncertaintyMode) -> Result<f64> {
    let out = forward(model, image, &model.grid()?)?;
    Ok(aggregate(&instance_uncertainty(&out.y_f1, &out.y_f2, None)?, mode))
}

/// Mean over instances of the summed binary entropy of the averaged classifiers.
pub fn entropy_score(out: &ForwardOutput) -> Result<f64> {
    let (n, c) = out.y_f1.dims2()?;
    if n == 0 {
        return Ok(0.0);
    }
    let h = |p: f64| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    };
    let total: f64 = (0..n)
        .map(|i| (0..c).map(|k| h(0.5 * (out.y_f1.at(i, k) + out.y_f2.at(i, k)))).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

/// Per-image score of a score-based strategy.
pub fn baseline_score(out: &ForwardOutput, strategy: Strategy, cfg: &ActiveConfig) -> Result<f64> {
    let weighted = cfg.cycle.weighted_selection;
    let mode = match strategy {
        Strategy::Entropy => return entropy_score(out),
        Strategy::MeanUnc => UncertaintyMode::Mean,
        Strategy::MaxUnc => UncertaintyMode::Max,
        Strategy::MiaodIul | Strategy::MiaodIur => UncertaintyMode::TopK(cfg.cycle.k),
        Strategy::Random | Strategy::Coreset => {
            return Err(Error::InvalidArgument(format!("{strategy} selects jointly, not by per-image score")))
        }
    };
    Ok(aggregate(&output_uncertainty(out, weighted)?, mode))
}

pub fn score_images(outputs: &[ForwardOutput], strategy: Strategy, cfg: &ActiveConfig) -> Result<Vec<f64>> {
    outputs.iter().map(|o| baseline_score(o, strategy, cfg)).collect()
}

/// The `m` highest-scoring ids; ties go to the lexicographically smaller id.
pub fn select_top(ids: &[String], scores: &[f64], m: usize) -> Vec<String> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order.into_iter().take(m).map(|i| ids[i].clone()).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center: repeatedly picks the candidate farthest from its nearest
/// center. With no initial centers the first pick is the candidate whose
/// largest distance to the others is smallest. Ties go to the lower index.
pub fn k_center_greedy(candidates: &[Vec<f64>], centers: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = candidates.len();
    let mut picked = Vec::with_capacity(m.min(n));
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|c| centers.iter().map(|z| dist2(c, z)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; n];
    while picked.len() < m.min(n) {
        let next = if centers.is_empty() && picked.is_empty() {
            let radius = |i: usize| candidates.iter().map(|c| dist2(&candidates[i], c)).fold(0.0, f64::max);
            (0..n).map(|i| (i, radius(i))).fold((0, f64::INFINITY), |b, (i, r)| if r < b.1 { (i, r) } else { b }).0
        } else {
            (0..n)
                .filter(|&i| !taken[i])
                .fold(None, |b: Option<usize>, i| match b {
                    Some(j) if nearest[j] >= nearest[i] => Some(j),
                    _ => Some(i),
                })
                .expect("candidates remain")
        };
        taken[next] = true;
        picked.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(&candidates[i], &candidates[next]));
        }
    }
    picked
}

/// Chooses `step_fraction` of the training set from the unlabeled pool.
/// The result is sorted by id.
pub fn select_images(
    model: &DetectorModel,
    pool: &PoolState,
    data: &TrainData,
    cfg: &ActiveConfig,
    cycle: usize,
) -> Result<Vec<String>> {
    let m = cfg.cycle.step_count(data.samples.len());
    let ids: Vec<String> = pool.unlabeled.iter().cloned().collect();
    if ids.len() < m {
        return Err(Error::PoolExhausted { needed: m, available: ids.len() });
    }
    let strategy = cfg.cycle.strategy;
    let grid = model.grid()?;
    let images = |ids: &[String]| -> Result<Vec<&ImageSample>> {
        Ok(data.indices(ids)?.into_iter().map(|i| &data.samples[i]).collect())
    };
    let mut chosen = match strategy {
        Strategy::Random => {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng::stream(cfg.cycle.seed, &[rng::RANDOM_SELECT, cycle as u64]));
            shuffled.truncate(m);
            shuffled
        }
        Strategy::Coreset => {
            let feats = |imgs: Vec<&ImageSample>| -> Result<Vec<Vec<f64>>> {
                Ok(forward_many(model, &grid, &imgs)?.into_iter().map(|o| o.pooled_features).collect())
            };
            let labeled: Vec<String> = pool.labeled.iter().cloned().collect();
            let cand = feats(images(&ids)?)?;
            let centers = feats(images(&labeled)?)?;
            k_center_greedy(&cand, &centers, m).into_iter().map(|i| ids[i].clone()).collect()
        }
        _ => {
            let outputs = forward_many(model, &grid, &images(&ids)?)?;
            let scores = score_images(&outputs, strategy, cfg)?;
            select_top(&ids, &scores, m)
        }
    };
    chosen.sort();
    Ok(chosen)
}
