use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("no usable assets remain after filtering")]
    NoUsableAssets,

    #[error("non-positive price {value} for asset {asset} at {date}")]
    NonPositivePrice {
        asset: String,
        date: String,
        value: f64,
    },

    #[error("need at least {required} observations, got {actual}")]
    InsufficientObservations { required: usize, actual: usize },

    #[error("window [{start}, {end}) is invalid for a panel of {len} observations")]
    InvalidWindow {
        start: isize,
        end: isize,
        len: usize,
    },

    #[error("subsample of {size} assets requested from a universe of {available}")]
    SubsampleTooLarge { size: usize, available: usize },

    #[error("invalid block specification: {0}")]
    InvalidBlocks(String),

    #[error("ratio T/N must exceed 1 (N = {n_assets}, T = {n_obs})")]
    RatioNotAboveOne { n_assets: usize, n_obs: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("zero-variance columns present: {0:?}")]
    ZeroVariance(Vec<usize>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("all entries were excluded by the denominator guard")]
    AllEntriesExcluded,

    #[error("community {0} is empty")]
    EmptyCommunity(usize),

    #[error("no mesoscopic structure: the mesoscopic component is identically zero")]
    NoMesoscopicStructure,

    #[error("partitions are defined over different asset sets")]
    MismatchedPartitions,

    #[error("total weight is zero")]
    ZeroTotalWeight,

    #[error("matrix is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("degenerate expected returns: all assets share the same mean")]
    DegenerateReturns,

    #[error("infeasible target return {target} (attainable range [{min}, {max}])")]
    Infeasible { target: f64, min: f64, max: f64 },

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("degenerate two-asset problem: denominator vanishes")]
    DegenerateDenominator,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stable machine-readable identifier for error records.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::NoUsableAssets => "no_usable_assets",
            Error::NonPositivePrice { .. } => "non_positive_price",
            Error::InsufficientObservations { .. } => "insufficient_observations",
            Error::InvalidWindow { .. } => "invalid_window",
            Error::SubsampleTooLarge { .. } => "subsample_too_large",
            Error::InvalidBlocks(_) => "invalid_blocks",
            Error::RatioNotAboveOne { .. } => "ratio_not_above_one",
            Error::NonFinite => "non_finite",
            Error::ZeroVariance(_) => "zero_variance",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::AllEntriesExcluded => "all_entries_excluded",
            Error::EmptyCommunity(_) => "empty_community",
            Error::NoMesoscopicStructure => "no_mesoscopic_structure",
            Error::MismatchedPartitions => "mismatched_partitions",
            Error::ZeroTotalWeight => "zero_total_weight",
            Error::Singular { .. } => "singular",
            Error::DegenerateReturns => "degenerate_returns",
            Error::Infeasible { .. } => "infeasible",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateDenominator => "degenerate_denominator",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Context { .. } => unreachable!("root never returns a context wrapper"),
        }
    }
}
