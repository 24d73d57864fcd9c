use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use miaod_core::activeloop::{ActiveConfig, CycleConfig, Strategy};
use miaod_core::detector::DetectorConfig;
use miaod_core::eval::EvalConfig;
use miaod_core::losses::LossConfig;
use miaod_core::synthdata::SceneSpec;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_count: 600, test_count: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Number of test images (in id order) that get heatmaps after each cycle.
    pub heatmap_images: usize,
    /// Use MIL-weighted uncertainty for heatmaps.
    pub weighted_heatmaps: bool,
    /// Fill the `wall_seconds` column; off keeps metrics byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { heatmap_images: 4, weighted_heatmaps: false, record_wall_time: false }
    }
}

/// Grid axes for `sweep`; an empty axis falls back to the run's own value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub ks: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub data: DataConfig,
    pub detector: DetectorConfig,
    pub cycle: CycleConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate()?;
        self.active().validate(self.scene.image_size)?;
        if self.data.train_count == 0 || self.data.test_count == 0 {
            return Err(CliError::Config("data.train_count and data.test_count must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.cycle.seed = s;
        }
        if let Some(s) = o.strategy {
            self.cycle.strategy = s;
        }
        if let Some(l) = o.lambda {
            self.loss.lambda = l;
        }
        if let Some(k) = o.k {
            self.cycle.k = k;
        }
        if let Some(d) = &o.dataset {
            self.paths.dataset = Some(d.clone());
        }
        if let Some(d) = &o.out {
            self.paths.out = Some(d.clone());
        }
    }

    pub fn active(&self) -> ActiveConfig {
        ActiveConfig {
            detector: self.detector.clone(),
            cycle: self.cycle.clone(),
            loss: self.loss.clone(),
            eval: self.eval.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("[cycle]\nbogus = 1\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[nope]\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn numeric_constraints_revalidated() {
        assert!(RunConfig::parse("[cycle]\nk = 0\n").is_err());
        assert!(RunConfig::parse("[cycle]\ninit_fraction = 0.0\n").is_err());
        assert!(RunConfig::parse("[loss]\nlambda = -1.0\n").is_err());
        assert!(RunConfig::parse("[scene]\nclasses = [\"hexagon\"]\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::parse(
            "[scene]\nobjects_per_image = [1, 2]\n[cycle]\nstrategy = \"random\"\nk = 5\n[cycle.epochs]\nlabel_set = 3\n\
             [loss]\nlambda = 2.0\n[sweep]\nlambdas = [0.2, 0.5]\nstrategies = [\"miaod_iur\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.scene.objects_per_image, (1, 2));
        assert_eq!(cfg.cycle.strategy, Strategy::Random);
        assert_eq!(cfg.cycle.epochs.label_set, 3);
        assert_eq!(cfg.sweep.lambdas, vec![0.2, 0.5]);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { seed: Some(9), strategy: Some(Strategy::Entropy), lambda: Some(1.0), k: Some(3), ..Default::default() });
        assert_eq!((cfg.cycle.seed, cfg.cycle.strategy, cfg.loss.lambda, cfg.cycle.k), (9, Strategy::Entropy, 1.0, 3));
    }
}
