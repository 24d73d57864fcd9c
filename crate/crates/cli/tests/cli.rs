use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use miaod_cli::metrics::read_table;

const SMALL: &str = r#"
[data]
train_count = 60
test_count = 20

[cycle]
num_cycles = 2
batch_size = 4
k = 5
maxmin_repeats = 1

[cycle.epochs]
label_set = 2
max_step = 1
min_step = 1

[output]
heatmap_images = 2
"#;

fn miaod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miaod")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    fs::write(&config, format!("{SMALL}{extra}")).unwrap();
    let data = dir.path().join("data");
    let out = miaod(&["generate", "--config", s(&config), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Fixture { dir, config, data }
}

impl Fixture {
    fn run(&self, name: &str, strategy: &str) -> (Output, PathBuf) {
        let out = self.dir.path().join(name);
        let o = miaod(&[
            "run",
            "--config",
            s(&self.config),
            "--dataset",
            s(&self.data),
            "--out",
            s(&out),
            "--strategy",
            strategy,
        ]);
        (o, out)
    }
}

#[test]
fn missing_config_names_the_file() {
    let o = miaod(&["generate", "--config", "/nonexistent/cfg.toml", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/cfg.toml"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[cycle]\nbogus = 3\n").unwrap();
    let o = miaod(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = miaod(&["run", "--dataset", s(&dir.path().join("none")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn generate_is_deterministic() {
    let f = fixture("");
    assert!(f.data.join("train/manifest.txt").exists());
    let again = f.dir.path().join("data2");
    let a = miaod(&["generate", "--config", s(&f.config), "--out", s(&f.data)]);
    let b = miaod(&["generate", "--config", s(&f.config), "--out", s(&again)]);
    assert!(a.status.success() && b.status.success());
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.contains("train 60 images checksum"));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let f = fixture("");
    let (o1, d1) = f.run("r1", "random");
    assert!(o1.status.success(), "{}", String::from_utf8_lossy(&o1.stderr));
    let (o2, d2) = f.run("r2", "random");
    assert!(o2.status.success());

    let t = read_table(&d1.join("metrics.csv")).unwrap();
    assert_eq!(t.rows.len(), 2);
    for file in ["metrics.csv", "selected_cycle0.txt", "selected_cycle1.txt", "run.log"] {
        assert_eq!(fs::read(d1.join(file)).unwrap(), fs::read(d2.join(file)).unwrap(), "{file}");
    }
    let heat: Vec<_> = fs::read_dir(d1.join("heatmaps")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(heat.len(), 2 * 2 * 2);
    for name in heat {
        assert_eq!(fs::read(d1.join("heatmaps").join(&name)).unwrap(), fs::read(d2.join("heatmaps").join(&name)).unwrap());
    }
}

#[test]
fn selections_are_disjoint_across_cycles() {
    let f = fixture("");
    let (o, d) = f.run("iur", "miaod_iur");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |i: usize| -> Vec<String> {
        fs::read_to_string(d.join(format!("selected_cycle{i}.txt"))).unwrap().lines().map(String::from).collect()
    };
    let (a, b) = (read(0), read(1));
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|id| !b.contains(id)));
}

#[test]
fn sweep_isolates_failing_cells() {
    let f = fixture("[sweep]\nks = [0, 5]\nstrategies = [\"random\"]\n");
    let out = f.dir.path().join("sweep");
    let o = miaod(&["sweep", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.contains("k=0"));
    let t = read_table(&out.join("sweep.csv")).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert!(t.rows.iter().all(|r| r[t.column("k").unwrap()] == "5"));
}

#[test]
fn single_cell_sweep_matches_run() {
    let f = fixture("");
    let (o, run_dir) = f.run("run", "miaod_iur");
    assert!(o.status.success());
    let out = f.dir.path().join("sweep");
    let o = miaod(&["sweep", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_table(&run_dir.join("metrics.csv")).unwrap();
    let sweep = read_table(&out.join("sweep.csv")).unwrap();
    assert_eq!(&sweep.columns[2..], &run.columns[..]);
    let stripped: Vec<Vec<String>> = sweep.rows.iter().map(|r| r[2..].to_vec()).collect();
    assert_eq!(stripped, run.rows);
}

#[test]
fn report_of_duplicate_runs_has_zero_std() {
    let f = fixture("");
    let (o, d) = f.run("r", "random");
    assert!(o.status.success());
    let m = d.join("metrics.csv");
    let summary = f.dir.path().join("summary.csv");
    let o = miaod(&["report", s(&m), s(&m), "--out", s(&summary)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("random"));
    let t = read_table(&summary).unwrap();
    assert_eq!(t.rows.len(), 2);
    let raw = read_table(&m).unwrap();
    for (row, raw_row) in t.rows.iter().zip(&raw.rows) {
        assert_eq!(row[t.column("map_std").unwrap()], "0.000000");
        assert_eq!(row[t.column("runs").unwrap()], "2");
        assert_eq!(row[t.column("map_mean").unwrap()], raw_row[raw.column("mAP").unwrap()]);
    }
}

#[test]
fn report_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    assert_eq!(miaod(&["report", s(&p)]).status.code(), Some(2));
}
