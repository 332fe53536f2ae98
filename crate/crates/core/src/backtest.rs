//! In-sample estimation, out-of-sample evaluation and reliability summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::community::{detect_communities, LouvainConfig, Partition};
use crate::error::{Error, Result};
use crate::market_data::{sample_sd, subsample_indices, ReturnPanel, WindowSpec};
use crate::portfolio::{
    community_gmv, effective_size, equal_weights, frontier_point, gmv, mean_vector,
    solve_constrained, CovarianceInput, CovarianceSource, DiagonalConvention, Strategy,
    WeightVector,
};
use crate::qp::SolverOptions;
use crate::spectral::{decompose_panel, CorrelationDecomposition, DecomposeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: Strategy,
    #[serde(default)]
    pub no_short: bool,
    #[serde(default)]
    pub target_return: Option<f64>,
    /// Number of frontier targets; `None` for a single portfolio.
    #[serde(default)]
    pub frontier: Option<usize>,
}

impl StrategySpec {
    pub fn gmv(name: Strategy, no_short: bool) -> Self {
        Self {
            name,
            no_short,
            target_return: None,
            frontier: None,
        }
    }
}

/// Covariance used to predict portfolio risk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionBasis {
    /// The matrix the strategy optimized on.
    #[default]
    Strategy,
    /// The in-sample sample covariance, for every strategy.
    Empirical,
}

/// Placement of frontier targets between the smallest and largest in-sample mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetGrid {
    /// Evenly spaced values.
    #[default]
    Uniform,
    /// Evenly spaced quantile levels of the mean-return distribution.
    Quantiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BacktestOptions {
    pub decompose: DecomposeOptions,
    pub restarts: usize,
    pub solver: SolverOptions,
    pub diagonal: DiagonalConvention,
    pub prediction: PredictionBasis,
    pub target_grid: TargetGrid,
    pub keep_weights: bool,
    pub fail_fast: bool,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            decompose: DecomposeOptions::default(),
            restarts: 20,
            solver: SolverOptions::default(),
            diagonal: DiagonalConvention::Empirical,
            prediction: PredictionBasis::Strategy,
            target_grid: TargetGrid::Uniform,
            keep_weights: false,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SubsamplingSpec {
    /// Subsample sizes; an empty list means the full universe.
    pub sizes: Vec<usize>,
    pub draws: usize,
    pub seed: u64,
}

impl SubsamplingSpec {
    pub fn full() -> Self {
        Self {
            sizes: vec![],
            draws: 1,
            seed: 0,
        }
    }
}

/// `sqrt(w' Sigma w)`; small negative variances from rounding are clamped to zero.
pub fn predicted_risk(w: &WeightVector, sigma: &DMatrix<f64>) -> Result<f64> {
    if w.len() != sigma.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sigma.nrows(),
            actual: w.len(),
        });
    }
    let var = w.variance(sigma);
    if var < 0.0 {
        if var < -1e-10 {
            warn!("negative predicted variance {var:e} clamped to zero");
        }
        return Ok(0.0);
    }
    Ok(var.sqrt())
}

/// Sample standard deviation of the buy-and-hold portfolio return series.
pub fn realized_risk(w: &WeightVector, rp_out: &ReturnPanel) -> Result<f64> {
    if rp_out.n_obs() < 2 {
        return Err(Error::InsufficientObservations {
            required: 2,
            actual: rp_out.n_obs(),
        });
    }
    if w.len() != rp_out.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: rp_out.n_assets(),
            actual: w.len(),
        });
    }
    let series = rp_out.returns() * w.as_dvector();
    Ok(sample_sd(series.as_slice()))
}

pub fn reliability(predicted: f64, realized: f64) -> f64 {
    (realized - predicted).abs() / predicted
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestRow {
    pub window: usize,
    pub t0: usize,
    pub size: usize,
    pub draw: usize,
    pub strategy: Strategy,
    pub no_short: bool,
    /// Position on the frontier grid, `None` for single portfolios.
    pub target_index: Option<usize>,
    pub target_return: Option<f64>,
    pub predicted: f64,
    pub realized: f64,
    pub reliability: f64,
    pub effective_size: f64,
    /// Covariance used for the prediction.
    pub prediction_source: CovarianceSource,
    pub weights_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub window: usize,
    pub size: usize,
    pub draw: usize,
    pub strategy: Option<Strategy>,
    pub no_short: Option<bool>,
    pub target_index: Option<usize>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    };
    Summary {
        count: v.len(),
        min: v.first().copied().unwrap_or(f64::NAN),
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        mean,
        q3: quantile(&v, 0.75),
        max: v.last().copied().unwrap_or(f64::NAN),
    }
}

/// Mean reliability over draws for one (window, size, strategy, constraint) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmvAggregate {
    pub window: usize,
    pub size: usize,
    pub strategy: Strategy,
    pub no_short: bool,
    pub draws: usize,
    pub mean_reliability: f64,
    pub mean_effective_size: f64,
    pub mean_predicted: f64,
    pub mean_realized: f64,
}

/// Better of the short and no-short mean reliabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestOfRow {
    pub window: usize,
    pub size: usize,
    pub strategy: Strategy,
    pub reliability: f64,
    pub no_short: bool,
}

/// Summary over frontier targets of the per-target mean reliability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierAggregate {
    pub window: usize,
    pub size: usize,
    pub strategy: Strategy,
    pub no_short: bool,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub rows: Vec<BacktestRow>,
    pub gmv: Vec<GmvAggregate>,
    pub best_of: Vec<BestOfRow>,
    pub frontier: Vec<FrontierAggregate>,
    pub failures: Vec<CellFailure>,
    pub skipped_targets: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, Vec<f64>>,
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        z ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(z << 6)
            .wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Frontier targets between the extreme in-sample means.
pub fn target_grid(mu: &[f64], n_targets: usize, grid: TargetGrid) -> Vec<f64> {
    if n_targets == 0 || mu.is_empty() {
        return vec![];
    }
    let mut sorted = mu.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    (0..n_targets)
        .map(|k| {
            let f = if n_targets == 1 {
                0.5
            } else {
                k as f64 / (n_targets - 1) as f64
            };
            match grid {
                TargetGrid::Uniform => lo + f * (hi - lo),
                TargetGrid::Quantiles => quantile(&sorted, f),
            }
        })
        .collect()
}

/// In-sample estimates shared by all strategies of one cell.
pub struct Estimates {
    pub empirical: CovarianceInput,
    pub std_devs: Vec<f64>,
    pub mu: Vec<f64>,
    decomposition: Option<Result<CorrelationDecomposition>>,
    partition: Option<Result<Partition>>,
}

impl Estimates {
    pub fn new(
        rp_in: &ReturnPanel,
        needs: &[Strategy],
        options: &BacktestOptions,
        louvain_seed: u64,
    ) -> Result<Self> {
        let empirical = CovarianceInput::empirical(rp_in)?;
        let std_devs = rp_in.std_devs();
        let mu = mean_vector(rp_in);
        let needs_dec = needs.iter().any(|s| {
            matches!(
                s,
                Strategy::Rmt | Strategy::Mesoscopic | Strategy::Community
            )
        });
        let decomposition = needs_dec.then(|| decompose_panel(rp_in, &options.decompose));
        let partition = if needs.contains(&Strategy::Community) {
            decomposition.as_ref().map(|d| match d {
                Ok(dec) => detect_communities(
                    dec,
                    &LouvainConfig {
                        restarts: options.restarts,
                        seed: louvain_seed,
                    },
                ),
                Err(e) => Err(Error::InvalidArgument(e.to_string())),
            })
        } else {
            None
        };
        Ok(Self {
            empirical,
            std_devs,
            mu,
            decomposition,
            partition,
        })
    }

    fn decomposition(&self) -> Result<&CorrelationDecomposition> {
        match &self.decomposition {
            Some(Ok(d)) => Ok(d),
            Some(Err(e)) => Err(Error::InvalidArgument(format!("decomposition failed: {e}"))),
            None => Err(Error::InvalidArgument("decomposition not computed".into())),
        }
    }

    pub fn partition(&self) -> Result<&Partition> {
        match &self.partition {
            Some(Ok(p)) => Ok(p),
            Some(Err(e)) => Err(match e.root() {
                Error::NoMesoscopicStructure => Error::NoMesoscopicStructure,
                other => Error::InvalidArgument(other.to_string()),
            }),
            None => Err(Error::InvalidArgument("partition not computed".into())),
        }
    }

    /// Covariance a strategy optimizes on.
    pub fn covariance(
        &self,
        strategy: Strategy,
        options: &BacktestOptions,
    ) -> Result<CovarianceInput> {
        let source = match strategy {
            Strategy::Equal | Strategy::Markowitz => return Ok(self.empirical.clone()),
            Strategy::Rmt => CovarianceSource::RmtNoiseFree,
            Strategy::Mesoscopic | Strategy::Community => CovarianceSource::Mesoscopic,
        };
        CovarianceInput::filtered(
            self.decomposition()?,
            &self.std_devs,
            source,
            options.diagonal,
            None,
        )
    }

    /// Weights of `strategy` under the given constraints.
    pub fn weights(
        &self,
        strategy: Strategy,
        no_short: bool,
        target: Option<f64>,
        sigma: &CovarianceInput,
        options: &BacktestOptions,
    ) -> Result<WeightVector> {
        let n = self.mu.len();
        let mu = target.map(|_| self.mu.as_slice());
        match strategy {
            Strategy::Equal => Ok(equal_weights(n)),
            Strategy::Community => {
                let p = self.partition()?;
                community_gmv(sigma, &p.assignment, mu, target, no_short, &options.solver)
            }
            _ => {
                let mut w = if no_short {
                    solve_constrained(sigma, mu, target, true, &options.solver)?
                } else if let Some(t) = target {
                    frontier_point(sigma, &self.mu, t)?.weights
                } else {
                    gmv(sigma)?
                };
                w.strategy = strategy;
                Ok(w)
            }
        }
    }
}

struct CellKey {
    window: usize,
    t0: usize,
    size: usize,
    draw: usize,
}

struct CellOutput {
    rows: Vec<BacktestRow>,
    failures: Vec<CellFailure>,
    skipped: usize,
    weights: Vec<(String, Vec<f64>)>,
}

fn weights_ref(
    key: &CellKey,
    strategy: Strategy,
    no_short: bool,
    target_index: Option<usize>,
) -> String {
    let target = target_index.map_or("gmv".to_string(), |k| format!("t{k}"));
    let constraint = if no_short { "long" } else { "short" };
    format!(
        "w{}-n{}-d{}-{}-{}-{}",
        key.window, key.size, key.draw, strategy, constraint, target
    )
}

fn failure(
    key: &CellKey,
    spec: Option<&StrategySpec>,
    target_index: Option<usize>,
    err: &Error,
) -> CellFailure {
    CellFailure {
        window: key.window,
        size: key.size,
        draw: key.draw,
        strategy: spec.map(|s| s.name),
        no_short: spec.map(|s| s.no_short),
        target_index,
        kind: err.kind().to_string(),
        message: err.to_string(),
    }
}

fn run_cell(
    key: &CellKey,
    rp_in: &ReturnPanel,
    rp_out: &ReturnPanel,
    strategies: &[StrategySpec],
    options: &BacktestOptions,
    louvain_seed: u64,
) -> CellOutput {
    let mut out = CellOutput {
        rows: vec![],
        failures: vec![],
        skipped: 0,
        weights: vec![],
    };
    let needs: Vec<Strategy> = strategies.iter().map(|s| s.name).collect();
    let est = match Estimates::new(rp_in, &needs, options, louvain_seed) {
        Ok(e) => e,
        Err(e) => {
            out.failures.push(failure(key, None, None, &e));
            return out;
        }
    };
    for spec in strategies {
        let sigma = match est.covariance(spec.name, options) {
            Ok(s) => s,
            Err(e) => {
                out.failures.push(failure(key, Some(spec), None, &e));
                continue;
            }
        };
        let prediction = match options.prediction {
            PredictionBasis::Strategy => &sigma,
            PredictionBasis::Empirical => &est.empirical,
        };
        let targets: Vec<(Option<usize>, Option<f64>)> = match (spec.name, spec.frontier) {
            (Strategy::Equal, _) => vec![(None, None)],
            (_, Some(k)) => target_grid(&est.mu, k, options.target_grid)
                .into_iter()
                .enumerate()
                .map(|(i, t)| (Some(i), Some(t)))
                .collect(),
            (_, None) => vec![(None, spec.target_return)],
        };
        for (target_index, target) in targets {
            let result = est
                .weights(spec.name, spec.no_short, target, &sigma, options)
                .and_then(|w| {
                    let predicted = predicted_risk(&w, &prediction.sigma)?;
                    let realized = realized_risk(&w, rp_out)?;
                    Ok((w, predicted, realized))
                });
            match result {
                Ok((w, predicted, realized)) => {
                    let reference = weights_ref(key, spec.name, spec.no_short, target_index);
                    out.rows.push(BacktestRow {
                        window: key.window,
                        t0: key.t0,
                        size: key.size,
                        draw: key.draw,
                        strategy: spec.name,
                        no_short: spec.no_short && spec.name != Strategy::Equal,
                        target_index,
                        target_return: target,
                        predicted,
                        realized,
                        reliability: reliability(predicted, realized),
                        effective_size: effective_size(&w),
                        prediction_source: prediction.source,
                        weights_ref: reference.clone(),
                    });
                    if options.keep_weights {
                        out.weights.push((reference, w.weights));
                    }
                }
                Err(e)
                    if target_index.is_some() && matches!(e.root(), Error::Infeasible { .. }) =>
                {
                    out.skipped += 1;
                }
                Err(e) => out
                    .failures
                    .push(failure(key, Some(spec), target_index, &e)),
            }
        }
    }
    out
}

/// Runs every (window, subsample size, draw, strategy) combination.
///
/// Cell-level errors are collected in `failures` unless `fail_fast` is set.
pub fn run_backtest(
    rp: &ReturnPanel,
    windows: &[WindowSpec],
    strategies: &[StrategySpec],
    subsampling: &SubsamplingSpec,
    options: &BacktestOptions,
) -> Result<BacktestReport> {
    let n = rp.n_assets();
    let sizes = if subsampling.sizes.is_empty() {
        vec![n]
    } else {
        subsampling.sizes.clone()
    };
    if subsampling.draws == 0 {
        return Err(Error::InvalidArgument("draws must be positive".into()));
    }
    let mut draws_by_size = BTreeMap::new();
    for &size in &sizes {
        let draws = if size == n {
            vec![(0..n).collect(); subsampling.draws]
        } else {
            subsample_indices(
                n,
                size,
                subsampling.draws,
                mix_seed(&[subsampling.seed, size as u64]),
            )?
        };
        draws_by_size.insert(size, draws);
    }
    let mut panels = Vec::with_capacity(windows.len());
    for (w, spec) in windows.iter().enumerate() {
        let in_range = WindowSpec::in_sample(spec.t0, spec.delta).ranges(rp.n_obs());
        let out_range = WindowSpec::out_of_sample(spec.t0, spec.delta).ranges(rp.n_obs());
        let (in_range, out_range) = match (in_range, out_range) {
            (Ok(a), Ok(b)) => (a[0].clone(), b[0].clone()),
            (Err(e), _) | (_, Err(e)) => return Err(e.context(format!("window {w}"))),
        };
        for &size in &sizes {
            if in_range.len() <= size {
                return Err(Error::RatioNotAboveOne {
                    n_assets: size,
                    n_obs: in_range.len(),
                }
                .context(format!("window {w}")));
            }
        }
        panels.push((rp.rows(in_range)?, rp.rows(out_range)?));
    }

    let mut cells = Vec::new();
    for (w, spec) in windows.iter().enumerate() {
        for &size in &sizes {
            for draw in 0..subsampling.draws {
                cells.push(CellKey {
                    window: w,
                    t0: spec.t0,
                    size,
                    draw,
                });
            }
        }
    }
    let outputs: Vec<CellOutput> = cells
        .par_iter()
        .map(|key| {
            let idx = &draws_by_size[&key.size][key.draw];
            let (full_in, full_out) = &panels[key.window];
            let louvain_seed = mix_seed(&[
                subsampling.seed,
                key.window as u64,
                key.size as u64,
                key.draw as u64,
            ]);
            match (full_in.select_assets(idx), full_out.select_assets(idx)) {
                (Ok(rp_in), Ok(rp_out)) => {
                    run_cell(key, &rp_in, &rp_out, strategies, options, louvain_seed)
                }
                (Err(e), _) | (_, Err(e)) => CellOutput {
                    rows: vec![],
                    failures: vec![failure(key, None, None, &e)],
                    skipped: 0,
                    weights: vec![],
                },
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut weights = BTreeMap::new();
    let mut skipped_targets = 0;
    for o in outputs {
        rows.extend(o.rows);
        failures.extend(o.failures);
        weights.extend(o.weights);
        skipped_targets += o.skipped;
    }
    if options.fail_fast {
        if let Some(f) = failures.first() {
            return Err(Error::InvalidArgument(format!(
                "window {} size {} draw {} strategy {:?}: {}",
                f.window, f.size, f.draw, f.strategy, f.message
            )));
        }
    }
    rows.sort_by(|a, b| {
        (
            a.window,
            a.size,
            a.draw,
            a.strategy,
            a.no_short,
            a.target_index,
        )
            .cmp(&(
                b.window,
                b.size,
                b.draw,
                b.strategy,
                b.no_short,
                b.target_index,
            ))
    });
    failures.sort_by(|a, b| {
        (
            a.window,
            a.size,
            a.draw,
            a.strategy,
            a.no_short,
            a.target_index,
        )
            .cmp(&(
                b.window,
                b.size,
                b.draw,
                b.strategy,
                b.no_short,
                b.target_index,
            ))
    });
    let (gmv, best_of, frontier) = aggregate(&rows);
    Ok(BacktestReport {
        rows,
        gmv,
        best_of,
        frontier,
        failures,
        skipped_targets,
        weights,
    })
}

/// Draw-averaged GMV table, its best-of-constraints view, and frontier summaries.
pub fn aggregate(
    rows: &[BacktestRow],
) -> (Vec<GmvAggregate>, Vec<BestOfRow>, Vec<FrontierAggregate>) {
    type Key = (usize, usize, Strategy, bool);
    let mut gmv_groups: BTreeMap<Key, Vec<&BacktestRow>> = BTreeMap::new();
    let mut frontier_groups: BTreeMap<Key, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let key = (r.window, r.size, r.strategy, r.no_short);
        match r.target_index {
            None if r.target_return.is_none() => gmv_groups.entry(key).or_default().push(r),
            None => {}
            Some(k) => frontier_groups
                .entry(key)
                .or_default()
                .entry(k)
                .or_default()
                .push(r.reliability),
        }
    }
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        s / c as f64
    };
    let gmv: Vec<GmvAggregate> = gmv_groups
        .iter()
        .map(|(&(window, size, strategy, no_short), rs)| GmvAggregate {
            window,
            size,
            strategy,
            no_short,
            draws: rs.len(),
            mean_reliability: mean(&mut rs.iter().map(|r| r.reliability)),
            mean_effective_size: mean(&mut rs.iter().map(|r| r.effective_size)),
            mean_predicted: mean(&mut rs.iter().map(|r| r.predicted)),
            mean_realized: mean(&mut rs.iter().map(|r| r.realized)),
        })
        .collect();
    let mut best: BTreeMap<(usize, usize, Strategy), BestOfRow> = BTreeMap::new();
    for g in &gmv {
        let entry = best
            .entry((g.window, g.size, g.strategy))
            .or_insert(BestOfRow {
                window: g.window,
                size: g.size,
                strategy: g.strategy,
                reliability: g.mean_reliability,
                no_short: g.no_short,
            });
        if g.mean_reliability < entry.reliability {
            entry.reliability = g.mean_reliability;
            entry.no_short = g.no_short;
        }
    }
    let frontier = frontier_groups
        .into_iter()
        .map(|((window, size, strategy, no_short), per_target)| {
            let means: Vec<f64> = per_target
                .values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            FrontierAggregate {
                window,
                size,
                strategy,
                no_short,
                summary: summarize(&means),
            }
        })
        .collect();
    (gmv, best.into_values().collect(), frontier)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierRow {
    pub target_index: usize,
    pub target_return: f64,
    pub predicted: f64,
    pub realized: f64,
    pub reliability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierReliability {
    pub rows: Vec<FrontierRow>,
    pub skipped: usize,
    pub summary: Summary,
}

/// Reliability along the frontier of one strategy over one in/out window pair.
pub fn frontier_reliability(
    rp: &ReturnPanel,
    window: &WindowSpec,
    strategy: Strategy,
    no_short: bool,
    targets: &[f64],
    options: &BacktestOptions,
    seed: u64,
) -> Result<FrontierReliability> {
    let rp_in =
        rp.rows(WindowSpec::in_sample(window.t0, window.delta).ranges(rp.n_obs())?[0].clone())?;
    let rp_out =
        rp.rows(WindowSpec::out_of_sample(window.t0, window.delta).ranges(rp.n_obs())?[0].clone())?;
    let est = Estimates::new(&rp_in, &[strategy], options, seed)?;
    let sigma = est.covariance(strategy, options)?;
    let prediction = match options.prediction {
        PredictionBasis::Strategy => &sigma,
        PredictionBasis::Empirical => &est.empirical,
    };
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (k, &t) in targets.iter().enumerate() {
        match est.weights(strategy, no_short, Some(t), &sigma, options) {
            Ok(w) => {
                let predicted = predicted_risk(&w, &prediction.sigma)?;
                let realized = realized_risk(&w, &rp_out)?;
                rows.push(FrontierRow {
                    target_index: k,
                    target_return: t,
                    predicted,
                    realized,
                    reliability: reliability(predicted, realized),
                });
            }
            Err(e) if matches!(e.root(), Error::Infeasible { .. }) => skipped += 1,
            Err(e) => return Err(e.context(format!("target {k}"))),
        }
    }
    let summary = summarize(&rows.iter().map(|r| r.reliability).collect::<Vec<_>>());
    Ok(FrontierReliability {
        rows,
        skipped,
        summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightComparison {
    pub labels: Vec<String>,
    /// Pairwise L1 distances.
    pub distances: Vec<Vec<f64>>,
    pub distance_to_equal: Vec<f64>,
    pub effective_sizes: Vec<f64>,
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn weight_comparison(weights: &[(String, WeightVector)]) -> Result<WeightComparison> {
    let n = weights.first().map_or(0, |(_, w)| w.len());
    if let Some((_, w)) = weights.iter().find(|(_, w)| w.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: w.len(),
        });
    }
    let equal = vec![1.0 / n as f64; n];
    let k = weights.len();
    let mut distances = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = l1_distance(&weights[i].1.weights, &weights[j].1.weights);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    Ok(WeightComparison {
        labels: weights.iter().map(|(l, _)| l.clone()).collect(),
        distances,
        distance_to_equal: weights
            .iter()
            .map(|(_, w)| l1_distance(&w.weights, &equal))
            .collect(),
        effective_sizes: weights.iter().map(|(_, w)| effective_size(w)).collect(),
    })
}

/// GMV weights of every strategy estimated on a single panel.
pub fn strategy_weights(
    rp: &ReturnPanel,
    strategies: &[StrategySpec],
    options: &BacktestOptions,
    seed: u64,
) -> Result<Vec<(StrategySpec, Result<WeightVector>)>> {
    let needs: Vec<Strategy> = strategies.iter().map(|s| s.name).collect();
    let est = Estimates::new(rp, &needs, options, seed)?;
    Ok(strategies
        .iter()
        .map(|spec| {
            let w = est.covariance(spec.name, options).and_then(|sigma| {
                est.weights(
                    spec.name,
                    spec.no_short,
                    spec.target_return,
                    &sigma,
                    options,
                )
            });
            (*spec, w)
        })
        .collect())
}

/// `w' x_t` for every row of the panel.
pub fn portfolio_returns(w: &WeightVector, rp: &ReturnPanel) -> DVector<f64> {
    rp.returns() * w.as_dvector()
}
