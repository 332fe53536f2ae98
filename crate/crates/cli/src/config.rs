//! Declarative run configuration. Every field has a default, so an empty file
//! (or no file at all) is a valid configuration.

use std::path::{Path, PathBuf};

use mesofolio::backtest::{PredictionBasis, StrategySpec, TargetGrid};
use mesofolio::market_data::{CsvLayout, ReturnKind};
use mesofolio::portfolio::{DiagonalConvention, Strategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub format: OutputFormat,
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
    pub input: InputConfig,
    pub filter: FilterConfig,
    pub communities: CommunityConfig,
    pub portfolio: PortfolioConfig,
    pub backtest: BacktestConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            format: OutputFormat::Both,
            workers: 0,
            input: InputConfig::default(),
            filter: FilterConfig::default(),
            communities: CommunityConfig::default(),
            portfolio: PortfolioConfig::default(),
            backtest: BacktestConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub layout: CsvLayout,
    pub returns: ReturnKind,
    /// Assets missing more than this fraction of prices are dropped.
    pub max_missing_fraction: f64,
    /// Optional `asset,sector` CSV.
    pub sectors: Option<PathBuf>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            layout: CsvLayout::Wide,
            returns: ReturnKind::Log,
            max_missing_fraction: 0.01,
            sectors: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub sign_threshold: f64,
    /// Consecutive equal windows compared by the stability norms; below 2 disables them.
    pub stability_windows: usize,
    pub norm_order: f64,
    pub epsilon: f64,
    pub fractions: Option<FractionsConfig>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sign_threshold: 0.95,
            stability_windows: 3,
            norm_order: 1.0,
            epsilon: 1e-12,
            fractions: None,
        }
    }
}

/// Rolling risk-fraction series.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FractionsConfig {
    pub length: usize,
    pub step: usize,
    /// Subsample size; defaults to all assets.
    pub size: Option<usize>,
    #[serde(default = "one")]
    pub draws: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityConfig {
    pub restarts: usize,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self { restarts: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub strategies: Vec<Strategy>,
    pub no_short: bool,
    pub target_return: Option<f64>,
    pub diagonal: DiagonalConvention,
    pub max_iter_factor: usize,
    pub kkt_tolerance: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            no_short: false,
            target_return: None,
            diagonal: DiagonalConvention::Empirical,
            max_iter_factor: 100,
            kkt_tolerance: 1e-8,
        }
    }
}

/// Split point given as an observation index or an ISO date.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum SplitPoint {
    Index(usize),
    Date(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub t0: SplitPoint,
    pub delta: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// Defaults to one split at the middle of the panel.
    pub windows: Vec<WindowConfig>,
    pub strategies: Vec<StrategySpec>,
    pub sizes: Vec<usize>,
    pub draws: usize,
    pub prediction: PredictionBasis,
    pub target_grid: TargetGrid,
    pub keep_weights: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            windows: vec![],
            strategies: Strategy::ALL
                .iter()
                .map(|&s| StrategySpec::gmv(s, false))
                .collect(),
            sizes: vec![],
            draws: 1,
            prediction: PredictionBasis::Strategy,
            target_grid: TargetGrid::Uniform,
            keep_weights: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub size: usize,
    pub intra_correlation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_obs: usize,
    pub blocks: Vec<BlockConfig>,
    /// Market loading in units of `noise_sd`.
    pub market_loading: f64,
    /// Idiosyncratic daily log-return volatility.
    pub noise_sd: f64,
    /// First price of every asset in the written price file.
    pub base_price: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_obs: 1000,
            blocks: (0..4)
                .map(|_| BlockConfig {
                    size: 25,
                    intra_correlation: 0.4,
                })
                .collect(),
            market_loading: 0.5,
            noise_sd: 0.01,
            base_price: 100.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Digest of everything that can change results; `out` and `workers` are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.workers = 0;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}
