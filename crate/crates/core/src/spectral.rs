//! Correlation spectra, Marčenko–Pastur bounds and the split of a correlation
//! matrix into random, mesoscopic and market components.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::market_data::{
    slice_window, standardize, subsample_indices, symmetrize, ReturnPanel, WindowSpec,
};

/// Support of the Marčenko–Pastur law for an `N x T` panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MpBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `T / N`.
    pub kappa: f64,
    pub sigma2: f64,
}

impl MpBounds {
    /// Limiting spectral density at `lambda`; zero outside the support.
    pub fn density(&self, lambda: f64) -> f64 {
        if lambda < self.lambda_min || lambda > self.lambda_max || lambda <= 0.0 {
            return 0.0;
        }
        self.kappa / (2.0 * std::f64::consts::PI * lambda * self.sigma2)
            * ((self.lambda_max - lambda) * (lambda - self.lambda_min)).sqrt()
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lambda_min && lambda <= self.lambda_max
    }
}

pub fn mp_bounds(n_assets: usize, n_obs: usize, sigma2: f64) -> Result<MpBounds> {
    if n_assets == 0 || n_obs <= n_assets {
        return Err(Error::RatioNotAboveOne { n_assets, n_obs });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    let q = (n_assets as f64 / n_obs as f64).sqrt();
    Ok(MpBounds {
        lambda_min: sigma2 * (1.0 - q).powi(2),
        lambda_max: sigma2 * (1.0 + q).powi(2),
        kappa: n_obs as f64 / n_assets as f64,
        sigma2,
    })
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
///
/// Eigenvector signs are fixed so that each vector's entries sum to a
/// non-negative number, which makes outputs reproducible across platforms.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sym = matrix.clone();
        symmetrize(&mut sym);
        let eig = SymmetricEigen::new(sym);
        let n = matrix.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let mut v: DVector<f64> = eig.eigenvectors.column(src).into_owned();
            let sum = v.sum();
            let flip = if sum.abs() > 1e-12 {
                sum < 0.0
            } else {
                v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0)
            };
            if flip {
                v.neg_mut();
            }
            eigenvectors.set_column(dst, &v);
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum_k lambda_k v_k v_k^T` over `indices`.
    pub fn partial_sum(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for &k in indices {
            let v = self.eigenvectors.column(k);
            out.ger(self.eigenvalues[k], &v, &v, 1.0);
        }
        symmetrize(&mut out);
        out
    }
}

/// Pearson correlation matrix of the panel's columns.
///
/// Unstandardized panels are z-scored first; any zero-variance column is an error.
pub fn correlation_matrix(rp: &ReturnPanel) -> Result<DMatrix<f64>> {
    let t = rp.n_obs();
    if t < 2 {
        return Err(Error::InsufficientObservations {
            required: 2,
            actual: t,
        });
    }
    let (z, flagged) = if rp.is_standardized() {
        let flagged: Vec<usize> = rp
            .returns()
            .column_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().all(|v| *v == 0.0))
            .map(|(i, _)| i)
            .collect();
        (rp.clone(), flagged)
    } else {
        standardize(rp)?
    };
    if !flagged.is_empty() {
        return Err(Error::ZeroVariance(flagged));
    }
    let zr = z.returns();
    let mut c = zr.tr_mul(zr) / (t as f64 - 1.0);
    symmetrize(&mut c);
    c.fill_diagonal(1.0);
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Minimum share of leading-eigenvector entries that must share one sign
    /// for the leading eigenvalue to count as the market mode.
    pub sign_threshold: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            sign_threshold: 0.95,
        }
    }
}

/// Fraction of entries carrying the majority sign.
pub fn sign_share(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let pos = v.iter().filter(|x| **x > 0.0).count();
    let neg = v.iter().filter(|x| **x < 0.0).count();
    pos.max(neg) as f64 / v.len() as f64
}

/// Eigenvalue index sets of the three spectral components.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SpectralClasses {
    pub random: Vec<usize>,
    pub mesoscopic: Vec<usize>,
    pub market: Vec<usize>,
}

/// Random: `lambda <= lambda_max`. Market: the leading eigenvalue, if above
/// the bound with a sign-uniform eigenvector. Mesoscopic: everything else.
pub fn classify_spectrum(
    eig: &EigenSystem,
    lambda_max: f64,
    sign_threshold: f64,
) -> SpectralClasses {
    let mut classes = SpectralClasses::default();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= lambda_max {
            classes.random.push(k);
        } else if k == 0 && sign_share(eig.eigenvectors.column(0).as_slice()) >= sign_threshold {
            classes.market.push(k);
        } else {
            classes.mesoscopic.push(k);
        }
    }
    classes
}

#[derive(Debug, Clone)]
pub struct CorrelationDecomposition {
    pub c: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub c_g: DMatrix<f64>,
    pub c_m: DMatrix<f64>,
    pub bounds: MpBounds,
    pub eig: EigenSystem,
    pub indices_r: Vec<usize>,
    pub indices_g: Vec<usize>,
    pub indices_m: Vec<usize>,
    /// Sign share of the leading eigenvector.
    pub leading_sign_share: f64,
    pub warnings: Vec<String>,
}

impl CorrelationDecomposition {
    pub fn n_assets(&self) -> usize {
        self.c.nrows()
    }

    /// `C_r + C_m`, the null model whose subtraction leaves `C_g`.
    pub fn null_model(&self) -> DMatrix<f64> {
        &self.c_r + &self.c_m
    }

    pub fn has_mesoscopic(&self) -> bool {
        !self.indices_g.is_empty()
    }
}

pub fn decompose(c: &DMatrix<f64>, bounds: &MpBounds) -> Result<CorrelationDecomposition> {
    decompose_with(c, bounds, &DecomposeOptions::default())
}

pub fn decompose_with(
    c: &DMatrix<f64>,
    bounds: &MpBounds,
    options: &DecomposeOptions,
) -> Result<CorrelationDecomposition> {
    let eig = EigenSystem::new(c)?;
    let classes = classify_spectrum(&eig, bounds.lambda_max, options.sign_threshold);
    let leading_sign_share = sign_share(eig.eigenvectors.column(0).as_slice());
    let mut warnings = Vec::new();
    if eig.eigenvalues[0] > bounds.lambda_max && classes.market.is_empty() {
        let msg = format!(
            "leading eigenvector fails the sign test ({:.3} < {:.3}); no market mode extracted",
            leading_sign_share, options.sign_threshold
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(CorrelationDecomposition {
        c: c.clone(),
        c_r: eig.partial_sum(&classes.random),
        c_g: eig.partial_sum(&classes.mesoscopic),
        c_m: eig.partial_sum(&classes.market),
        bounds: *bounds,
        indices_r: classes.random,
        indices_g: classes.mesoscopic,
        indices_m: classes.market,
        leading_sign_share,
        eig,
        warnings,
    })
}

/// Correlation, bounds and decomposition of a return panel in one step.
pub fn decompose_panel(
    rp: &ReturnPanel,
    options: &DecomposeOptions,
) -> Result<CorrelationDecomposition> {
    let c = correlation_matrix(rp)?;
    let bounds = mp_bounds(rp.n_assets(), rp.n_obs(), 1.0)?;
    decompose_with(&c, &bounds, options)
}

/// Shares of total spectral weight carried by each component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskFractions {
    pub total: f64,
    pub frac_r: f64,
    pub frac_g: f64,
    pub frac_m: f64,
}

impl RiskFractions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.frac_r, self.frac_g, self.frac_m]
    }
}

pub fn risk_fractions(dec: &CorrelationDecomposition) -> RiskFractions {
    let lambda = &dec.eig.eigenvalues;
    let sum = |idx: &[usize]| idx.iter().map(|&k| lambda[k]).sum::<f64>();
    let (r, g, m) = (
        sum(&dec.indices_r),
        sum(&dec.indices_g),
        sum(&dec.indices_m),
    );
    let total = r + g + m;
    RiskFractions {
        total,
        frac_r: r / total,
        frac_g: g / total,
        frac_m: m / total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubsampleSpec {
    pub size: usize,
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowFractions {
    pub start: usize,
    pub end: usize,
    /// Mean `[r, g, m]` fractions over draws.
    pub mean: [f64; 3],
    /// Standard deviation over draws (zero for a single draw).
    pub sd_over_draws: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskFractionSeries {
    pub windows: Vec<WindowFractions>,
    /// Standard deviation of the per-window means, `[r, g, m]`.
    pub sd_across_windows: [f64; 3],
}

/// Per-window risk fractions averaged over random asset subsamples.
pub fn risk_fraction_series(
    rp: &ReturnPanel,
    window: &WindowSpec,
    subsample: &SubsampleSpec,
    options: &DecomposeOptions,
) -> Result<RiskFractionSeries> {
    let ranges: Vec<Range<usize>> = window.ranges(rp.n_obs())?;
    for r in &ranges {
        if r.len() <= subsample.size {
            return Err(Error::RatioNotAboveOne {
                n_assets: subsample.size,
                n_obs: r.len(),
            });
        }
    }
    if subsample.draws == 0 {
        return Err(Error::InvalidArgument("draws must be positive".into()));
    }
    let draws = subsample_indices(
        rp.n_assets(),
        subsample.size,
        subsample.draws,
        subsample.seed,
    )?;
    let panels = slice_window(rp, window)?;
    let windows = panels
        .par_iter()
        .zip(ranges.par_iter())
        .map(|(panel, range)| {
            let fractions = draws
                .iter()
                .map(|idx| {
                    let sub = panel.select_assets(idx)?;
                    Ok(risk_fractions(&decompose_panel(&sub, options)?).as_array())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut mean = [0.0; 3];
            let mut sd = [0.0; 3];
            for k in 0..3 {
                let xs: Vec<f64> = fractions.iter().map(|f| f[k]).collect();
                mean[k] = xs.iter().sum::<f64>() / xs.len() as f64;
                sd[k] = std_dev(&xs);
            }
            Ok(WindowFractions {
                start: range.start,
                end: range.end,
                mean,
                sd_over_draws: sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sd_across_windows = [0.0; 3];
    for (k, slot) in sd_across_windows.iter_mut().enumerate() {
        let xs: Vec<f64> = windows.iter().map(|w| w.mean[k]).collect();
        *slot = std_dev(&xs);
    }
    Ok(RiskFractionSeries {
        windows,
        sd_across_windows,
    })
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    crate::market_data::sample_sd(xs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeChange {
    /// `(sum |dC|^p / M)^(1/p)` over the `M` included entries.
    pub normalized: f64,
    /// `(sum |dC|^p)^(1/p)`.
    pub raw: f64,
    pub included: usize,
    pub excluded: usize,
}

/// Entry-by-entry relative change `(next - prev) / prev`, summarised by its p-norm.
///
/// Entries with `|prev| <= epsilon` are skipped and counted.
pub fn relative_change_norm(
    prev: &DMatrix<f64>,
    next: &DMatrix<f64>,
    p: f64,
    epsilon: f64,
) -> Result<RelativeChange> {
    if prev.shape() != next.shape() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            actual: next.len(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "norm order must be >= 1, got {p}"
        )));
    }
    let mut sum = 0.0;
    let mut included = 0;
    let mut excluded = 0;
    for (a, b) in prev.iter().zip(next.iter()) {
        if a.abs() > epsilon {
            sum += ((b - a) / a).abs().powf(p);
            included += 1;
        } else {
            excluded += 1;
        }
    }
    if included == 0 {
        return Err(Error::AllEntriesExcluded);
    }
    Ok(RelativeChange {
        normalized: (sum / included as f64).powf(1.0 / p),
        raw: sum.powf(1.0 / p),
        included,
        excluded,
    })
}

/// Replaces every community block of `c_g` with its average.
///
/// With `include_diagonal = false`, same-community blocks average their
/// off-diagonal entries only and the diagonal gets the mean of the block's
/// own diagonal.
pub fn block_average(
    c_g: &DMatrix<f64>,
    assignment: &[usize],
    include_diagonal: bool,
) -> Result<DMatrix<f64>> {
    let n = c_g.nrows();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: assignment.len(),
        });
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCommunity(empty));
    }
    let mut off_sum = DMatrix::<f64>::zeros(k, k);
    let mut off_count = DMatrix::<f64>::zeros(k, k);
    let mut diag_sum = vec![0.0; k];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (assignment[i], assignment[j]);
            if i == j {
                diag_sum[a] += c_g[(i, i)];
                if include_diagonal {
                    off_sum[(a, a)] += c_g[(i, i)];
                    off_count[(a, a)] += 1.0;
                }
            } else {
                off_sum[(a, b)] += c_g[(i, j)];
                off_count[(a, b)] += 1.0;
            }
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (assignment[i], assignment[j]);
        if i == j && !include_diagonal {
            diag_sum[a] / sizes[a] as f64
        } else if off_count[(a, b)] == 0.0 {
            // singleton block without its diagonal: nothing to average
            c_g[(i, j)]
        } else {
            off_sum[(a, b)] / off_count[(a, b)]
        }
    }))
}
