use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::metrics::{fmt_f, read_table, write_table};

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// Strategy, plus lambda and k when the input came from a sweep.
    pub setting: String,
    pub cycle: usize,
    pub labeled_fraction: f64,
    pub runs: usize,
    pub map_mean: f64,
    pub map_std: f64,
    pub tp_mean: f64,
    pub tp_std: f64,
}

#[derive(Default)]
struct Acc {
    fraction: f64,
    map: Vec<f64>,
    tp: Vec<f64>,
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path, col: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::Config(format!("{}: bad value {s:?} in column {col}", path.display())))
}

/// Aggregates rows of every input across seeds, per setting and cycle.
pub fn summarize(paths: &[PathBuf]) -> Result<Vec<SummaryRow>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("report needs at least one CSV".into()));
    }
    let mut groups: BTreeMap<(String, usize), Acc> = BTreeMap::new();
    for path in paths {
        let t = read_table(path)?;
        let [c_cycle, c_frac, c_strat, c_map, c_tp] =
            ["cycle", "labeled_fraction", "strategy", "mAP", "tp_selected"].map(|c| t.require(c, path));
        let (c_cycle, c_frac, c_strat, c_map, c_tp) = (c_cycle?, c_frac?, c_strat?, c_map?, c_tp?);
        t.require("seed", path)?;
        let sweep_cols = t.column("lambda").zip(t.column("k"));
        for row in &t.rows {
            let mut setting = row[c_strat].clone();
            if let Some((l, k)) = sweep_cols {
                setting = format!("{setting} lambda={} k={}", row[l], row[k]);
            }
            let cycle: usize = parse(&row[c_cycle], path, "cycle")?;
            let acc = groups.entry((setting, cycle)).or_default();
            acc.fraction = parse(&row[c_frac], path, "labeled_fraction")?;
            acc.map.push(parse(&row[c_map], path, "mAP")?);
            acc.tp.push(parse::<f64>(&row[c_tp], path, "tp_selected")?);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((setting, cycle), acc)| {
            let (map_mean, map_std) = mean_std(&acc.map);
            let (tp_mean, tp_std) = mean_std(&acc.tp);
            SummaryRow { setting, cycle, labeled_fraction: acc.fraction, runs: acc.map.len(), map_mean, map_std, tp_mean, tp_std }
        })
        .collect())
}

/// Side-by-side table with one row per cycle and one column per setting.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut settings: Vec<&str> = rows.iter().map(|r| r.setting.as_str()).collect();
    settings.dedup();
    settings.sort();
    settings.dedup();
    let mut cycles: Vec<usize> = rows.iter().map(|r| r.cycle).collect();
    cycles.sort();
    cycles.dedup();
    let cell = |s: &str, c: usize, f: &dyn Fn(&SummaryRow) -> String| {
        rows.iter().find(|r| r.setting == s && r.cycle == c).map(f).unwrap_or_else(|| "-".into())
    };
    let mut out = String::new();
    for (title, f) in [
        ("mAP (mean ± std)", &(|r: &SummaryRow| format!("{:.4} ± {:.4}", r.map_mean, r.map_std)) as &dyn Fn(&SummaryRow) -> String),
        ("tp_selected (mean ± std)", &|r: &SummaryRow| format!("{:.1} ± {:.1}", r.tp_mean, r.tp_std)),
    ] {
        let _ = writeln!(out, "{title}");
        let mut header = vec!["cycle".to_string(), "labeled".to_string()];
        header.extend(settings.iter().map(|s| s.to_string()));
        let mut lines = vec![header];
        for &c in &cycles {
            let frac = rows.iter().find(|r| r.cycle == c).map(|r| r.labeled_fraction).unwrap_or(0.0);
            let mut line = vec![c.to_string(), format!("{:.0}%", frac * 100.0)];
            line.extend(settings.iter().map(|s| cell(s, c, f)));
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0)).collect();
        for l in &lines {
            let padded: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  "));
        }
        out.push('\n');
    }
    out
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let columns: Vec<String> = ["setting", "cycle", "labeled_fraction", "runs", "map_mean", "map_std", "tp_mean", "tp_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.setting.clone(),
                r.cycle.to_string(),
                fmt_f(r.labeled_fraction),
                r.runs.to_string(),
                fmt_f(r.map_mean),
                fmt_f(r.map_std),
                fmt_f(r.tp_mean),
                fmt_f(r.tp_std),
            ]
        })
        .collect();
    write_table(path, &columns, &table)
}

/// Prints the comparison tables and optionally writes the summary CSV.
pub fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<String, CliError> {
    let rows = summarize(paths)?;
    if let Some(out) = out {
        write_summary(out, &rows)?;
    }
    Ok(render_table(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{write_metrics, MetricsRow};

    fn row(strategy: &str, seed: u64, cycle: usize, map: f64, tp: usize) -> MetricsRow {
        MetricsRow {
            cycle,
            labeled_fraction: 0.1 + 0.05 * cycle as f64,
            strategy: strategy.into(),
            seed,
            map,
            per_class_ap: vec![map],
            tp_selected: tp,
            mean_selected_uncertainty: 0.0,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn single_and_duplicate_runs() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["square".to_string()];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_metrics(&a, &names, &[row("random", 0, 0, 0.3, 5), row("random", 0, 1, 0.4, 6)]).unwrap();
        std::fs::copy(&a, &b).unwrap();
        let one = summarize(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one[0].map_mean, 0.3);
        assert_eq!(one[0].map_std, 0.0);
        let two = summarize(&[a, b]).unwrap();
        assert_eq!(two[1].runs, 2);
        assert_eq!(two[1].map_std, 0.0);
        assert_eq!(two[1].tp_mean, 6.0);
    }

    #[test]
    fn table_has_a_column_per_strategy() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["square".to_string()];
        let mut paths = Vec::new();
        for (i, s) in ["miaod_iur", "random"].iter().enumerate() {
            let p = dir.path().join(format!("{i}.csv"));
            write_metrics(&p, &names, &[row(s, 0, 0, 0.2 + i as f64, 1)]).unwrap();
            paths.push(p);
        }
        let text = render_table(&summarize(&paths).unwrap());
        let header = text.lines().nth(1).unwrap();
        assert!(header.contains("miaod_iur") && header.contains("random"));
    }
}
