//! The versioned metrics CSV shared by `run`, `sweep` and `report`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::CliError;

pub const METRICS_HEADER: &str = "# miaod-metrics v1";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub cycle: usize,
    pub labeled_fraction: f64,
    pub strategy: String,
    pub seed: u64,
    pub map: f64,
    pub per_class_ap: Vec<f64>,
    pub tp_selected: usize,
    pub mean_selected_uncertainty: f64,
    pub wall_seconds: f64,
}

pub fn metrics_columns(class_names: &[String]) -> Vec<String> {
    let mut cols: Vec<String> =
        ["cycle", "labeled_fraction", "strategy", "seed", "mAP"].iter().map(|s| s.to_string()).collect();
    cols.extend(class_names.iter().map(|c| format!("ap_{c}")));
    cols.extend(["tp_selected", "mean_selected_uncertainty", "wall_seconds"].iter().map(|s| s.to_string()));
    cols
}

pub fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricsRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.cycle.to_string(),
            fmt_f(self.labeled_fraction),
            self.strategy.clone(),
            self.seed.to_string(),
            fmt_f(self.map),
        ];
        f.extend(self.per_class_ap.iter().map(|&a| fmt_f(a)));
        f.push(self.tp_selected.to_string());
        f.push(fmt_f(self.mean_selected_uncertainty));
        f.push(format!("{:.3}", self.wall_seconds));
        f
    }
}

/// Writes the version line followed by a CSV table.
pub fn write_table(path: &Path, columns: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "{METRICS_HEADER}").expect("in-memory write");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(|e| CliError::io(path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn write_metrics(path: &Path, class_names: &[String], rows: &[MetricsRow]) -> Result<(), CliError> {
    let table: Vec<Vec<String>> = rows.iter().map(MetricsRow::fields).collect();
    write_table(path, &metrics_columns(class_names), &table)
}

/// A metrics-style table read back as strings, keyed by column name.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<usize, CliError> {
        self.column(name)
            .ok_or_else(|| CliError::Config(format!("{}: schema mismatch, missing column {name:?}", path.display())))
    }
}

/// Reads a table written by [`write_table`]; a missing or different version
/// line is a schema mismatch.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| CliError::io(path, e))?;
    if first.trim_end() != METRICS_HEADER {
        return Err(CliError::Config(format!(
            "{}: schema mismatch, expected first line {METRICS_HEADER:?}",
            path.display()
        )));
    }
    let mut csv = csv::Reader::from_reader(reader);
    let columns = csv
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = csv
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Table { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cycle: usize) -> MetricsRow {
        MetricsRow {
            cycle,
            labeled_fraction: 0.1,
            strategy: "random".into(),
            seed: 3,
            map: 0.25,
            per_class_ap: vec![0.5, 0.25, 0.0],
            tp_selected: 7,
            mean_selected_uncertainty: 0.125,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let names: Vec<String> = ["square", "disc", "cross"].iter().map(|s| s.to_string()).collect();
        write_metrics(&p, &names, &[row(0), row(1)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# miaod-metrics v1\ncycle,labeled_fraction,strategy,seed,mAP,ap_square,"));
        let t = read_table(&p).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1][t.column("cycle").unwrap()], "1");
        assert_eq!(t.rows[0][t.column("mAP").unwrap()], "0.250000");
    }

    #[test]
    fn missing_version_line_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "cycle,mAP\n0,0.1\n").unwrap();
        assert_eq!(read_table(&p).unwrap_err().exit_code(), 2);
    }
}
