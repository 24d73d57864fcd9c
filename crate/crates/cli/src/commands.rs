use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use miaod_core::activeloop::{init_pool, run_cycle, Strategy, TrainData};
use miaod_core::detector::build_anchors;
use miaod_core::eval::dump_heatmap;
use miaod_core::rng;
use miaod_core::synthdata::{generate_dataset, load_dataset, save_dataset, Dataset, ImageSample};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::metrics::{fmt_f, metrics_columns, write_metrics, write_table, MetricsRow};

/// Seeds of the training and test splits; the test split draws from its own stream.
pub fn split_seeds(seed: u64) -> (u64, u64) {
    (seed, rng::derive_seed(seed, &[rng::TEST_SET]))
}

/// Generates the training and test splits described by `cfg`.
pub fn generate_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let (train_seed, test_seed) = split_seeds(cfg.data.seed);
    let train = generate_dataset(&cfg.scene, cfg.data.train_count, train_seed)?;
    let test = generate_dataset(&cfg.scene, cfg.data.test_count, test_seed)?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutcome {
    pub train_checksum: String,
    pub test_checksum: String,
}

/// Writes `<out>/train` and `<out>/test`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateOutcome, CliError> {
    let (train, test) = generate_splits(cfg)?;
    let train_checksum = save_dataset(&train, &out.join("train"))?;
    let test_checksum = save_dataset(&test, &out.join("test"))?;
    Ok(GenerateOutcome { train_checksum, test_checksum })
}

pub fn load_splits(dir: &Path) -> Result<(Dataset, Dataset), CliError> {
    let train = load_dataset(&dir.join("train"))?;
    let test = load_dataset(&dir.join("test"))?;
    if train.spec != test.spec {
        return Err(CliError::Config(format!("{}: train and test splits use different scene specs", dir.display())));
    }
    Ok((train, test))
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.clone().ok_or_else(|| CliError::Config(format!("no {what} directory given (flag --{what} or [paths] {what})")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs all cycles of one configuration and writes its artifacts under the
/// configured output directory. Returns the metrics rows.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<MetricsRow>, CliError> {
    let dataset_dir = required(&cfg.paths.dataset, "dataset")?;
    let out = required(&cfg.paths.out, "out")?;
    let (train, test) = load_splits(&dataset_dir)?;
    run_on(cfg, &train, &test, &out)
}

/// [`cmd_run`] on datasets already in memory.
pub fn run_on(cfg: &RunConfig, train: &Dataset, test: &Dataset, out: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let spec = &train.spec;
    let active = cfg.active();
    active.validate(spec.image_size)?;
    let heat_dir = out.join("heatmaps");
    fs::create_dir_all(&heat_dir).map_err(|e| CliError::io(&heat_dir, e))?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;

    let grid = build_anchors(spec.image_size, active.detector.stride, &active.detector.anchor_sizes)?;
    let data = TrainData::new(&train.samples, grid, spec.num_classes());
    let test_refs: Vec<&ImageSample> = test.samples.iter().collect();
    let mut pool = init_pool(train, &active.cycle)?;
    let strategy = active.cycle.strategy;
    let mut log = String::new();
    let _ = writeln!(log, "strategy {strategy} seed {} train {} test {}", active.cycle.seed, train.len(), test.len());
    let mut rows = Vec::new();

    for cycle in 0..active.cycle.num_cycles {
        let started = Instant::now();
        log::info!("cycle {cycle}: {} labeled", pool.labeled.len());
        let outcome = run_cycle(&mut pool, &data, &test_refs, &active, &mut |_| {})?;
        let m = &outcome.record.metrics;
        let wall = if cfg.output.record_wall_time { started.elapsed().as_secs_f64() } else { 0.0 };
        let _ = writeln!(
            log,
            "cycle {cycle} labeled_fraction {} train_loss {} mAP {} tp_selected {} selected {}",
            fmt_f(m.labeled_fraction),
            fmt_f(m.train_loss),
            fmt_f(m.map),
            m.tp_selected,
            outcome.record.selected.len()
        );
        let sel_path = out.join(format!("selected_cycle{cycle}.txt"));
        let mut ids = outcome.record.selected.join("\n");
        ids.push('\n');
        write_file(&sel_path, &ids)?;
        for img in test.samples.iter().take(cfg.output.heatmap_images) {
            let path = heat_dir.join(format!("cycle{cycle}_{}.pgm", img.id));
            dump_heatmap(&outcome.model, img, &path, cfg.output.weighted_heatmaps)?;
        }
        rows.push(MetricsRow {
            cycle,
            labeled_fraction: m.labeled_fraction,
            strategy: strategy.name().to_string(),
            seed: active.cycle.seed,
            map: m.map,
            per_class_ap: m.per_class_ap.clone(),
            tp_selected: m.tp_selected,
            mean_selected_uncertainty: m.mean_selected_uncertainty,
            wall_seconds: wall,
        });
        write_metrics(&out.join("metrics.csv"), &spec.classes, &rows)?;
        pool.check(train)?;
    }
    write_file(&out.join("run.log"), &log)?;
    Ok(rows)
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub k: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl SweepCell {
    pub fn dir_name(&self) -> String {
        format!("lambda={}_k={}_strategy={}_seed={}", self.lambda, self.k, self.strategy, self.seed)
    }
}

/// Cartesian product of the sweep axes; an empty axis uses the run value.
pub fn sweep_grid(cfg: &RunConfig) -> Vec<SweepCell> {
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let lambdas = or(&cfg.sweep.lambdas, cfg.loss.lambda);
    let ks = if cfg.sweep.ks.is_empty() { vec![cfg.cycle.k] } else { cfg.sweep.ks.clone() };
    let strategies = if cfg.sweep.strategies.is_empty() { vec![cfg.cycle.strategy] } else { cfg.sweep.strategies.clone() };
    let seeds = if cfg.sweep.seeds.is_empty() { vec![cfg.cycle.seed] } else { cfg.sweep.seeds.clone() };
    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &k in &ks {
            for &strategy in &strategies {
                for &seed in &seeds {
                    cells.push(SweepCell { lambda, k, strategy, seed });
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub cell: String,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub cells: usize,
    pub failures: Vec<SweepFailure>,
}

/// Runs every grid cell into its own subdirectory, then writes the merged
/// `sweep.csv` sorted by (lambda, k, strategy, seed, cycle) and
/// `failures.csv`. Failed cells do not stop the sweep.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutcome, CliError> {
    let dataset_dir = required(&cfg.paths.dataset, "dataset")?;
    let out = required(&cfg.paths.out, "out")?;
    let (train, test) = load_splits(&dataset_dir)?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let cells = sweep_grid(cfg);
    let mut merged: Vec<(SweepCell, MetricsRow)> = Vec::new();
    let mut failures = Vec::new();
    for cell in &cells {
        let mut c = cfg.clone();
        c.apply(&Overrides {
            seed: Some(cell.seed),
            strategy: Some(cell.strategy),
            lambda: Some(cell.lambda),
            k: Some(cell.k),
            ..Overrides::default()
        });
        let dir = out.join(cell.dir_name());
        log::info!("sweep cell {}", cell.dir_name());
        match c.validate().and_then(|_| run_on(&c, &train, &test, &dir)) {
            Ok(rows) => merged.extend(rows.into_iter().map(|r| (cell.clone(), r))),
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.dir_name());
                failures.push(SweepFailure { cell: cell.dir_name(), exit_code: e.exit_code(), message: e.to_string() });
            }
        }
    }
    merged.sort_by(|(a, ra), (b, rb)| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.k.cmp(&b.k))
            .then(a.strategy.name().cmp(b.strategy.name()))
            .then(a.seed.cmp(&b.seed))
            .then(ra.cycle.cmp(&rb.cycle))
    });
    let mut columns = vec!["lambda".to_string(), "k".to_string()];
    columns.extend(metrics_columns(&train.spec.classes));
    let table: Vec<Vec<String>> = merged
        .iter()
        .map(|(cell, r)| {
            let mut f = vec![cell.lambda.to_string(), cell.k.to_string()];
            f.extend(r.fields());
            f
        })
        .collect();
    write_table(&out.join("sweep.csv"), &columns, &table)?;
    let mut fail_csv = String::from("cell,exit_code,message\n");
    for f in &failures {
        let _ = writeln!(fail_csv, "{},{},\"{}\"", f.cell, f.exit_code, f.message.replace('"', "'"));
    }
    write_file(&out.join("failures.csv"), &fail_csv)?;
    Ok(SweepOutcome { cells: cells.len(), failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let mut cfg = RunConfig::default();
        cfg.sweep.lambdas = vec![0.2, 0.5, 1.0, 2.0];
        cfg.sweep.ks = vec![1, 20, 192];
        let cells = sweep_grid(&cfg);
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].dir_name(), "lambda=0.2_k=1_strategy=miaod_iur_seed=0");
        let names: std::collections::BTreeSet<String> = cells.iter().map(SweepCell::dir_name).collect();
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn empty_axes_use_run_values() {
        let cells = sweep_grid(&RunConfig::default());
        assert_eq!(cells, vec![SweepCell { lambda: 0.5, k: 20, strategy: Strategy::MiaodIur, seed: 0 }]);
    }

    #[test]
    fn splits_use_distinct_streams() {
        let mut cfg = RunConfig::default();
        cfg.data.train_count = 3;
        cfg.data.test_count = 3;
        let (train, test) = generate_splits(&cfg).unwrap();
        assert_ne!(train.samples[0].pixels, test.samples[0].pixels);
    }
}
