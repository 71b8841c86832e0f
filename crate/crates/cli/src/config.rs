//! Run configuration: a TOML file with one section per pipeline stage.
//! Every field has a default, and command-line flags override file values.

use std::path::{Path, PathBuf};

use holdgraph::evaluate::{KMeansOptions, SweepOptions};
use holdgraph::ingest::{CleanOptions, HoldingsFormat};
use holdgraph::trainer::{TrainOptions, TrainParams};
use holdgraph::walker::{WalkOptions, WalkParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Csv,
    Nport,
}

impl From<InputFormat> for HoldingsFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Csv => HoldingsFormat::EdgeCsv,
            InputFormat::Nport => HoldingsFormat::NportXml,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub workspace: Option<PathBuf>,
    /// `benchmark_name,fund_id` membership file.
    pub benchmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub coverage_threshold: f64,
    pub checksum: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        let d = CleanOptions::default();
        CleaningConfig {
            coverage_threshold: d.coverage_threshold,
            checksum: d.validate_checksum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub funds: usize,
    pub assets: usize,
    pub communities: usize,
    pub overlap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            funds: 200,
            assets: 1000,
            communities: 2,
            overlap: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub p: f64,
    pub q: f64,
    pub edge_table_budget: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        let w = WalkParams::default();
        WalkConfig {
            walks_per_node: w.walks_per_node,
            walk_length: w.walk_length,
            p: w.p,
            q: w.q,
            edge_table_budget: WalkOptions::default().edge_table_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainParams::default();
        TrainConfig {
            dim: t.dim,
            window: t.window,
            negatives: t.negatives,
            epochs: t.epochs,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub beta: f64,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let k = KMeansOptions::default();
        EvalConfig {
            k_min: 2,
            k_max: 10,
            beta: holdgraph::evaluate::DEFAULT_BETA,
            restarts: k.restarts,
            max_iters: k.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    /// `(walk_length, walks_per_node)` pairs.
    pub lengths: Vec<(usize, usize)>,
    /// `(p, q)` pairs.
    pub pq: Vec<(f64, f64)>,
    pub parallel_rows: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dims: vec![8, 16, 32],
            lengths: vec![(64, 64), (128, 128)],
            pq: vec![(0.1, 5.0), (5.0, 0.1)],
            parallel_rows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub m_values: Vec<usize>,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            m_values: vec![5, 10, 20, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub workers: usize,
    /// Forces single-worker training so repeated runs are bitwise equal.
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            workers: std::thread::available_parallelism().map_or(1, usize::from),
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub cleaning: CleaningConfig,
    pub synth: SynthConfig,
    pub walk: WalkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub similarity: SimilarityConfig,
    pub run: RunSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.paths.input);
        resolve(base, &mut cfg.paths.workspace);
        resolve(base, &mut cfg.paths.benchmarks);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if !(0.0..=100.0).contains(&self.cleaning.coverage_threshold) {
            return bad(format!(
                "coverage threshold {} outside [0, 100]",
                self.cleaning.coverage_threshold
            ));
        }
        self.walk_params().validate()?;
        self.train_params().validate()?;
        let e = &self.eval;
        if e.k_min < 2 || e.k_min > e.k_max {
            return bad(format!("eval k range [{}, {}] must satisfy 2 <= k_min <= k_max", e.k_min, e.k_max));
        }
        if !(e.beta > 0.0 && e.beta.is_finite()) {
            return bad(format!("eval beta {} must be positive", e.beta));
        }
        if e.restarts == 0 {
            return bad("eval restarts must be at least 1".into());
        }
        if self.similarity.m_values.is_empty() || self.similarity.m_values.contains(&0) {
            return bad("similarity m_values must be non-empty and positive".into());
        }
        let g = &self.grid;
        if g.dims.is_empty() || g.lengths.is_empty() || g.pq.is_empty() {
            return bad("grid dims, lengths and pq must all be non-empty".into());
        }
        if self.run.workers == 0 {
            return bad("run workers must be at least 1".into());
        }
        let s = &self.synth;
        if s.funds == 0 || s.assets == 0 || s.communities == 0 || !(0.0..=1.0).contains(&s.overlap) {
            return bad("synth needs positive counts and overlap in [0, 1]".into());
        }
        Ok(())
    }

    pub fn walk_params(&self) -> WalkParams {
        WalkParams {
            walks_per_node: self.walk.walks_per_node,
            walk_length: self.walk.walk_length,
            p: self.walk.p,
            q: self.walk.q,
            seed: self.run.seed,
        }
    }

    pub fn walk_options(&self) -> WalkOptions {
        WalkOptions {
            workers: self.run.workers,
            edge_table_budget: self.walk.edge_table_budget,
        }
    }

    pub fn train_params(&self) -> TrainParams {
        let t = &self.train;
        TrainParams {
            dim: t.dim,
            window: t.window,
            negatives: t.negatives,
            epochs: t.epochs,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
            seed: self.run.seed,
        }
    }

    /// Worker count used by the trainer; 1 in deterministic mode.
    pub fn train_workers(&self) -> usize {
        if self.run.deterministic {
            1
        } else {
            self.run.workers
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            workers: self.train_workers(),
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            k_range: self.eval.k_min..=self.eval.k_max,
            beta: self.eval.beta,
            kmeans: KMeansOptions {
                seed: self.run.seed,
                max_iters: self.eval.max_iters,
                restarts: self.eval.restarts,
            },
        }
    }

    pub fn clean_options(&self) -> CleanOptions {
        CleanOptions::from(&self.cleaning)
    }
}

impl From<&CleaningConfig> for CleanOptions {
    fn from(c: &CleaningConfig) -> Self {
        CleanOptions {
            coverage_threshold: c.coverage_threshold,
            validate_checksum: c.checksum,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train_params(), TrainParams { seed: 42, ..TrainParams::default() });
        assert_eq!(c.walk_params(), WalkParams::default());
        assert_eq!(c.similarity.m_values, vec![5, 10, 20, 50]);
        assert_eq!(c.sweep_options().k_range, 2..=10);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("[walk]\np = 0.1\nq = 5\n[grid]\nlengths = [[40, 10]]\n").unwrap();
        assert_eq!((c.walk.p, c.walk.q), (0.1, 5.0));
        assert_eq!(c.walk.walk_length, 80);
        assert_eq!(c.grid.lengths, vec![(40, 10)]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[walk]\nlength = 3\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.walk.p = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.eval.k_min = 1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.similarity.m_values = vec![];
        assert!(c.validate().is_err());
    }
}
