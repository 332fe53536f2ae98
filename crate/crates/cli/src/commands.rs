use std::collections::BTreeMap;

use chrono::NaiveDate;
use mesofolio::backtest::{
    run_backtest, strategy_weights, weight_comparison, BacktestOptions, StrategySpec,
    SubsamplingSpec,
};
use mesofolio::community::{
    community_signature, detect_communities, sector_composition, LouvainConfig,
};
use mesofolio::market_data::{
    load_prices, load_sectors, prices_from_log_returns, to_returns, LoadOptions, LoadReport,
    PricePanel, ReturnPanel, WindowMode, WindowSpec,
};
use mesofolio::portfolio::{effective_size, two_asset_shift, CovarianceSource, WeightVector};
use mesofolio::qp::SolverOptions;
use mesofolio::spectral::{
    correlation_matrix, decompose_panel, relative_change_norm, risk_fraction_series,
    risk_fractions, CorrelationDecomposition, DecomposeOptions, RelativeChange, RiskFractionSeries,
    RiskFractions, SubsampleSpec,
};
use mesofolio::synthetic::{generate_synthetic, Block};
use nalgebra::DMatrix;
use serde::Serialize;
use tracing::{info, warn};

use crate::config::{RunConfig, SplitPoint};
use crate::output::{num, opt, opt_num, OutDir};
use crate::CliError;

/// Whether a command finished cleanly or with some cells failed.
pub enum Outcome {
    Complete,
    Partial(usize),
}

struct Loaded {
    returns: ReturnPanel,
    report: LoadReport,
    sectors: Option<BTreeMap<String, String>>,
}

fn load(config: &RunConfig) -> Result<Loaded, CliError> {
    let path = config.input.path.as_ref().ok_or_else(|| {
        CliError::new(
            "missing_input",
            "no input file: set [input].path or pass --input",
        )
    })?;
    let options = LoadOptions {
        layout: config.input.layout,
        max_missing_fraction: config.input.max_missing_fraction,
    };
    let (prices, report) = load_prices(path, &options)?;
    if !report.dropped.is_empty() {
        warn!(
            dropped = report.dropped.len(),
            "assets dropped for missing data"
        );
    }
    let returns = to_returns(&prices, config.input.returns)?;
    let sectors = config
        .input
        .sectors
        .as_deref()
        .map(load_sectors)
        .transpose()?;
    info!(
        assets = returns.n_assets(),
        observations = returns.n_obs(),
        "loaded panel"
    );
    Ok(Loaded {
        returns,
        report,
        sectors,
    })
}

fn decompose_options(config: &RunConfig) -> DecomposeOptions {
    DecomposeOptions {
        sign_threshold: config.filter.sign_threshold,
    }
}

fn backtest_options(config: &RunConfig) -> BacktestOptions {
    BacktestOptions {
        decompose: decompose_options(config),
        restarts: config.communities.restarts,
        solver: SolverOptions {
            max_iter_factor: config.portfolio.max_iter_factor,
            kkt_tolerance: config.portfolio.kkt_tolerance,
        },
        diagonal: config.portfolio.diagonal,
        prediction: config.backtest.prediction,
        target_grid: config.backtest.target_grid,
        keep_weights: config.backtest.keep_weights,
        fail_fast: false,
    }
}

// ---------------------------------------------------------------------------
// filter

#[derive(Serialize)]
struct ComponentChanges {
    window_pair: [usize; 2],
    random: Option<RelativeChange>,
    mesoscopic: Option<RelativeChange>,
    market: Option<RelativeChange>,
}

#[derive(Serialize)]
struct Stability {
    windows: Vec<[usize; 2]>,
    fractions: Vec<RiskFractions>,
    changes: Vec<ComponentChanges>,
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    n_assets: usize,
    n_obs: usize,
    load: &'a LoadReport,
    mp_bounds: mesofolio::spectral::MpBounds,
    eigenvalues: &'a [f64],
    random_indices: &'a [usize],
    mesoscopic_indices: &'a [usize],
    market_indices: &'a [usize],
    leading_sign_share: f64,
    risk_fractions: RiskFractions,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stability: Option<Stability>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fraction_series: Option<RiskFractionSeries>,
}

fn class_of(dec: &CorrelationDecomposition, k: usize) -> &'static str {
    if dec.indices_m.contains(&k) {
        "market"
    } else if dec.indices_g.contains(&k) {
        "mesoscopic"
    } else {
        "random"
    }
}

fn stability(
    rp: &ReturnPanel,
    config: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<Stability>, CliError> {
    let k = config.filter.stability_windows;
    if k < 2 {
        return Ok(None);
    }
    let len = rp.n_obs() / k;
    if len <= rp.n_assets() {
        warnings.push(format!(
            "stability skipped: {k} windows of {len} observations do not exceed {} assets",
            rp.n_assets()
        ));
        return Ok(None);
    }
    let opts = decompose_options(config);
    let windows: Vec<[usize; 2]> = (0..k).map(|i| [i * len, (i + 1) * len]).collect();
    let decs = windows
        .iter()
        .map(|w| decompose_panel(&rp.rows(w[0]..w[1])?, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let (p, eps) = (config.filter.norm_order, config.filter.epsilon);
    let mut changes = Vec::new();
    for (i, pair) in decs.windows(2).enumerate() {
        let mut change = |name: &str, a: &DMatrix<f64>, b: &DMatrix<f64>| match relative_change_norm(
            a, b, p, eps,
        ) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!(
                    "{name} change between windows {i} and {}: {e}",
                    i + 1
                ));
                None
            }
        };
        changes.push(ComponentChanges {
            window_pair: [i, i + 1],
            random: change("random", &pair[0].c_r, &pair[1].c_r),
            mesoscopic: change("mesoscopic", &pair[0].c_g, &pair[1].c_g),
            market: change("market", &pair[0].c_m, &pair[1].c_m),
        });
    }
    Ok(Some(Stability {
        windows,
        fractions: decs.iter().map(risk_fractions).collect(),
        changes,
    }))
}

pub fn filter(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let data = load(config)?;
    let rp = &data.returns;
    let dec = decompose_panel(rp, &decompose_options(config))?;
    let labels = rp.assets();
    out.write_matrix("correlation.csv", labels, &dec.c)?;
    out.write_matrix("c_random.csv", labels, &dec.c_r)?;
    out.write_matrix("c_mesoscopic.csv", labels, &dec.c_g)?;
    out.write_matrix("c_market.csv", labels, &dec.c_m)?;
    let eig_rows: Vec<Vec<String>> = dec
        .eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            vec![
                k.to_string(),
                num(l),
                class_of(&dec, k).into(),
                num(dec.bounds.density(l)),
            ]
        })
        .collect();
    out.write_csv(
        "eigenvalues.csv",
        &["index", "eigenvalue", "class", "mp_density"],
        &eig_rows,
    )?;

    let mut warnings = dec.warnings.clone();
    let stab = stability(rp, config, &mut warnings)?;
    if let Some(s) = &stab {
        let rows: Vec<Vec<String>> = s
            .changes
            .iter()
            .flat_map(|c| {
                [
                    ("random", c.random),
                    ("mesoscopic", c.mesoscopic),
                    ("market", c.market),
                ]
                .into_iter()
                .filter_map(|(name, ch)| ch.map(|ch| (name, ch)))
                .map(|(name, ch)| {
                    vec![
                        c.window_pair[0].to_string(),
                        c.window_pair[1].to_string(),
                        name.to_string(),
                        num(ch.normalized),
                        num(ch.raw),
                        ch.excluded.to_string(),
                    ]
                })
            })
            .collect();
        out.write_csv(
            "stability.csv",
            &["from", "to", "component", "normalized", "raw", "excluded"],
            &rows,
        )?;
    }
    let series = match &config.filter.fractions {
        None => None,
        Some(f) => {
            let half = rp.n_obs() / 2;
            let spec = WindowSpec::rolling(half, half, f.length, f.step);
            let sub = SubsampleSpec {
                size: f.size.unwrap_or(rp.n_assets()),
                draws: f.draws,
                seed: config.seed,
            };
            let s = risk_fraction_series(rp, &spec, &sub, &decompose_options(config))?;
            let rows: Vec<Vec<String>> = s
                .windows
                .iter()
                .map(|w| {
                    let mut r = vec![
                        w.start.to_string(),
                        w.end.to_string(),
                        rp.dates()[w.end - 1].to_string(),
                    ];
                    r.extend(w.mean.iter().chain(&w.sd_over_draws).map(|v| num(*v)));
                    r
                })
                .collect();
            out.write_csv(
                "fractions.csv",
                &[
                    "start", "end", "end_date", "frac_r", "frac_g", "frac_m", "sd_r", "sd_g",
                    "sd_m",
                ],
                &rows,
            )?;
            Some(s)
        }
    };

    let summary = FilterSummary {
        n_assets: rp.n_assets(),
        n_obs: rp.n_obs(),
        load: &data.report,
        mp_bounds: dec.bounds,
        eigenvalues: dec.eig.eigenvalues.as_slice(),
        random_indices: &dec.indices_r,
        mesoscopic_indices: &dec.indices_g,
        market_indices: &dec.indices_m,
        leading_sign_share: dec.leading_sign_share,
        risk_fractions: risk_fractions(&dec),
        warnings,
        stability: stab,
        fraction_series: series,
    };
    out.write_json("filter.json", "filter", config.seed, &summary)?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------------------
// communities

#[derive(Serialize)]
struct CommunitySummary {
    n_assets: usize,
    n_communities: usize,
    modularity: f64,
    restarts: usize,
    sizes: Vec<usize>,
    members: Vec<Vec<String>>,
    /// Mean off-diagonal `C_g` entry within and between communities.
    within_mesoscopic: f64,
    between_mesoscopic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    composition: Option<Vec<BTreeMap<String, usize>>>,
    warnings: Vec<String>,
}

pub fn communities(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let data = load(config)?;
    let rp = &data.returns;
    let dec = decompose_panel(rp, &decompose_options(config))?;
    let partition = detect_communities(
        &dec,
        &LouvainConfig {
            restarts: config.communities.restarts,
            seed: config.seed,
        },
    )?;
    let assets = rp.assets();
    let rows: Vec<Vec<String>> = assets
        .iter()
        .zip(&partition.assignment)
        .map(|(a, c)| vec![a.clone(), c.to_string()])
        .collect();
    out.write_csv("partition.csv", &["asset", "community"], &rows)?;
    let composition = data
        .sectors
        .as_ref()
        .map(|s| sector_composition(&partition, assets, s));
    if let Some(comp) = &composition {
        let rows: Vec<Vec<String>> = comp
            .iter()
            .enumerate()
            .flat_map(|(c, m)| {
                m.iter()
                    .map(move |(s, n)| vec![c.to_string(), s.clone(), n.to_string()])
            })
            .collect();
        out.write_csv("composition.csv", &["community", "sector", "count"], &rows)?;
    }
    let (within, between) = community_signature(&dec.c_g, &partition.assignment);
    let summary = CommunitySummary {
        n_assets: assets.len(),
        n_communities: partition.n_communities,
        modularity: partition.modularity,
        restarts: partition.runs,
        sizes: partition.sizes(),
        members: (0..partition.n_communities)
            .map(|c| {
                partition
                    .members(c)
                    .into_iter()
                    .map(|i| assets[i].clone())
                    .collect()
            })
            .collect(),
        within_mesoscopic: within,
        between_mesoscopic: between,
        composition,
        warnings: dec.warnings.clone(),
    };
    out.write_json("communities.json", "communities", config.seed, &summary)?;
    Ok(Outcome::Complete)
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Serialize)]
struct StrategyResult {
    strategy: String,
    no_short: bool,
    target_return: Option<f64>,
    weights: BTreeMap<String, f64>,
    effective_size: f64,
    l1_to_equal: f64,
    diagnostics: Option<mesofolio::qp::KktDiagnostics>,
}

#[derive(Serialize)]
struct StrategyFailure {
    strategy: String,
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct TwoAsset {
    empirical_correlation: f64,
    mesoscopic_correlation: f64,
    w_star: f64,
    w_adj: f64,
    delta: f64,
    sign: i8,
}

#[derive(Serialize)]
struct OptimizeSummary {
    n_assets: usize,
    n_obs: usize,
    results: Vec<StrategyResult>,
    failures: Vec<StrategyFailure>,
}

fn two_asset(rp: &ReturnPanel, config: &RunConfig) -> Result<TwoAsset, mesofolio::Error> {
    let sds = rp.std_devs();
    let c = correlation_matrix(rp)?;
    let dec = decompose_panel(rp, &decompose_options(config))?;
    let shift = two_asset_shift(sds[0], sds[1], c[(0, 1)], dec.c_g[(0, 1)])?;
    Ok(TwoAsset {
        empirical_correlation: c[(0, 1)],
        mesoscopic_correlation: dec.c_g[(0, 1)],
        w_star: shift.w_star,
        w_adj: shift.w_adj,
        delta: shift.delta,
        sign: shift.sign(),
    })
}

pub fn optimize(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let data = load(config)?;
    let rp = &data.returns;
    let specs: Vec<StrategySpec> = config
        .portfolio
        .strategies
        .iter()
        .map(|&name| StrategySpec {
            name,
            no_short: config.portfolio.no_short,
            target_return: config.portfolio.target_return,
            frontier: None,
        })
        .collect();
    let results = strategy_weights(rp, &specs, &backtest_options(config), config.seed)?;
    let assets = rp.assets();
    let mut ok: Vec<(String, WeightVector)> = Vec::new();
    let mut failures = Vec::new();
    for (spec, res) in results {
        match res {
            Ok(w) => ok.push((spec.name.to_string(), w)),
            Err(e) => {
                warn!(strategy = %spec.name, error = %e, "strategy failed");
                failures.push(StrategyFailure {
                    strategy: spec.name.to_string(),
                    kind: e.kind().into(),
                    message: e.to_string(),
                });
            }
        }
    }
    let comparison = weight_comparison(&ok)?;
    let mut summary_rows = Vec::new();
    let mut results = Vec::new();
    for (k, (label, w)) in ok.iter().enumerate() {
        let rows: Vec<Vec<String>> = assets
            .iter()
            .zip(&w.weights)
            .map(|(a, x)| vec![a.clone(), num(*x)])
            .collect();
        out.write_csv(&format!("weights_{label}.csv"), &["asset", "weight"], &rows)?;
        summary_rows.push(vec![
            label.clone(),
            num(comparison.effective_sizes[k]),
            num(comparison.distance_to_equal[k]),
        ]);
        results.push(StrategyResult {
            strategy: label.clone(),
            no_short: !w.short_allowed,
            target_return: w.target_return,
            weights: assets
                .iter()
                .cloned()
                .zip(w.weights.iter().copied())
                .collect(),
            effective_size: effective_size(w),
            l1_to_equal: comparison.distance_to_equal[k],
            diagnostics: w.diagnostics,
        });
    }
    out.write_csv(
        "comparison.csv",
        &["strategy", "effective_size", "l1_to_equal"],
        &summary_rows,
    )?;
    if rp.n_assets() == 2 {
        match two_asset(rp, config) {
            Ok(t) => out.write_json("two_asset.json", "optimize", config.seed, &t)?,
            Err(e) => warn!(error = %e, "two-asset diagnostic unavailable"),
        }
    }
    let n_failed = failures.len();
    let summary = OptimizeSummary {
        n_assets: rp.n_assets(),
        n_obs: rp.n_obs(),
        results,
        failures,
    };
    out.write_json("weights.json", "optimize", config.seed, &summary)?;
    Ok(if n_failed == 0 {
        Outcome::Complete
    } else {
        Outcome::Partial(n_failed)
    })
}

// ---------------------------------------------------------------------------
// backtest

fn resolve_windows(rp: &ReturnPanel, config: &RunConfig) -> Result<Vec<WindowSpec>, CliError> {
    if config.backtest.windows.is_empty() {
        let half = rp.n_obs() / 2;
        return Ok(vec![WindowSpec::in_sample(half, half)]);
    }
    config
        .backtest
        .windows
        .iter()
        .map(|w| match &w.t0 {
            SplitPoint::Index(t0) => Ok(WindowSpec::in_sample(*t0, w.delta)),
            SplitPoint::Date(d) => {
                let date = NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| {
                    CliError::new("invalid_config", format!("window date {d:?}: {e}"))
                })?;
                Ok(WindowSpec::at_date(
                    rp,
                    date,
                    w.delta,
                    WindowMode::InSample,
                )?)
            }
        })
        .collect()
}

fn source_name(s: CovarianceSource) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn backtest(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let data = load(config)?;
    let rp = &data.returns;
    let windows = resolve_windows(rp, config)?;
    let subsampling = SubsamplingSpec {
        sizes: config.backtest.sizes.clone(),
        draws: config.backtest.draws,
        seed: config.seed,
    };
    let report = run_backtest(
        rp,
        &windows,
        &config.backtest.strategies,
        &subsampling,
        &backtest_options(config),
    )?;

    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.window.to_string(),
                r.t0.to_string(),
                rp.dates()[r.t0].to_string(),
                r.size.to_string(),
                r.draw.to_string(),
                r.strategy.to_string(),
                r.no_short.to_string(),
                opt(r.target_index),
                opt_num(r.target_return),
                num(r.predicted),
                num(r.realized),
                num(r.reliability),
                num(r.effective_size),
                source_name(r.prediction_source),
            ]
        })
        .collect();
    out.write_csv(
        "rows.csv",
        &[
            "window",
            "t0",
            "date",
            "size",
            "draw",
            "strategy",
            "no_short",
            "target_index",
            "target_return",
            "predicted",
            "realized",
            "reliability",
            "effective_size",
            "prediction_source",
        ],
        &rows,
    )?;
    let gmv: Vec<Vec<String>> = report
        .gmv
        .iter()
        .map(|g| {
            vec![
                g.window.to_string(),
                g.size.to_string(),
                g.strategy.to_string(),
                g.no_short.to_string(),
                g.draws.to_string(),
                num(g.mean_reliability),
                num(g.mean_effective_size),
                num(g.mean_predicted),
                num(g.mean_realized),
            ]
        })
        .collect();
    out.write_csv(
        "table_gmv.csv",
        &[
            "window",
            "size",
            "strategy",
            "no_short",
            "draws",
            "mean_reliability",
            "mean_effective_size",
            "mean_predicted",
            "mean_realized",
        ],
        &gmv,
    )?;
    let best: Vec<Vec<String>> = report
        .best_of
        .iter()
        .map(|b| {
            vec![
                b.window.to_string(),
                b.size.to_string(),
                b.strategy.to_string(),
                num(b.reliability),
                b.no_short.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "table_best.csv",
        &["window", "size", "strategy", "reliability", "no_short"],
        &best,
    )?;
    let frontier: Vec<Vec<String>> = report
        .frontier
        .iter()
        .map(|f| {
            let s = &f.summary;
            vec![
                f.window.to_string(),
                f.size.to_string(),
                f.strategy.to_string(),
                f.no_short.to_string(),
                s.count.to_string(),
                num(s.min),
                num(s.q1),
                num(s.median),
                num(s.mean),
                num(s.q3),
                num(s.max),
            ]
        })
        .collect();
    out.write_csv(
        "table_frontier.csv",
        &[
            "window", "size", "strategy", "no_short", "count", "min", "q1", "median", "mean", "q3",
            "max",
        ],
        &frontier,
    )?;
    let eff: Vec<Vec<String>> = report
        .rows
        .iter()
        .filter(|r| r.target_index.is_none())
        .map(|r| {
            vec![
                r.window.to_string(),
                r.size.to_string(),
                r.draw.to_string(),
                r.strategy.to_string(),
                r.no_short.to_string(),
                num(r.effective_size),
            ]
        })
        .collect();
    out.write_csv(
        "effective_size.csv",
        &[
            "window",
            "size",
            "draw",
            "strategy",
            "no_short",
            "effective_size",
        ],
        &eff,
    )?;

    #[derive(Serialize)]
    struct Body<'a> {
        n_assets: usize,
        n_obs: usize,
        windows: &'a [WindowSpec],
        #[serde(flatten)]
        report: &'a mesofolio::backtest::BacktestReport,
    }
    out.write_json(
        "backtest.json",
        "backtest",
        config.seed,
        &Body {
            n_assets: rp.n_assets(),
            n_obs: rp.n_obs(),
            windows: &windows,
            report: &report,
        },
    )?;
    Ok(if report.failures.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial(report.failures.len())
    })
}

// ---------------------------------------------------------------------------
// synth

fn price_rows(panel: &PricePanel, long: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let p = panel.prices();
    if long {
        let rows = panel
            .dates()
            .iter()
            .enumerate()
            .flat_map(|(t, d)| {
                panel
                    .assets()
                    .iter()
                    .enumerate()
                    .map(move |(i, a)| vec![d.to_string(), a.clone(), num(p[(t, i)])])
            })
            .collect();
        (vec!["date".into(), "ticker".into(), "close".into()], rows)
    } else {
        let mut header = vec!["date".to_string()];
        header.extend(panel.assets().iter().cloned());
        let rows = panel
            .dates()
            .iter()
            .enumerate()
            .map(|(t, d)| {
                let mut r = vec![d.to_string()];
                r.extend((0..panel.n_assets()).map(|i| num(p[(t, i)])));
                r
            })
            .collect();
        (header, rows)
    }
}

#[derive(Serialize)]
struct SynthSummary {
    n_assets: usize,
    n_obs: usize,
    blocks: Vec<Block>,
}

pub fn synth(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let s = &config.synth;
    let blocks: Vec<Block> = s
        .blocks
        .iter()
        .map(|b| Block::new(b.size, b.intra_correlation))
        .collect();
    let n: usize = blocks.iter().map(|b| b.size).sum();
    let loading = vec![s.market_loading * s.noise_sd; n];
    let panel = generate_synthetic(n, s.n_obs, &blocks, &loading, s.noise_sd, config.seed)?;
    let first = NaiveDate::from_ymd_opt(1999, 12, 31).expect("valid date");
    let prices = prices_from_log_returns(&panel.panel, s.base_price, first)?;
    let (header, rows) = price_rows(
        &prices,
        config.input.layout == mesofolio::market_data::CsvLayout::Long,
    );
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    // the price file is the product of this command, so it ignores --format
    let path = out.file("prices.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(&header)
        .map_err(|e| CliError::io(&path, e))?;
    for r in &rows {
        w.write_record(r).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let labels: Vec<Vec<String>> = panel
        .panel
        .assets()
        .iter()
        .zip(&panel.labels)
        .map(|(a, l)| vec![a.clone(), format!("block{l}")])
        .collect();
    let path = out.file("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(["asset", "sector"])
        .map_err(|e| CliError::io(&path, e))?;
    for r in &labels {
        w.write_record(r).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    out.write_json(
        "synth.json",
        "synth",
        config.seed,
        &SynthSummary {
            n_assets: n,
            n_obs: s.n_obs,
            blocks,
        },
    )?;
    Ok(Outcome::Complete)
}
