//! Minimum-variance portfolios on empirical and filtered covariance matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::market_data::{symmetrize, ReturnPanel};
use crate::qp::{solve_qp, KktDiagnostics, QpProblem, SolverOptions};
use crate::spectral::{
    block_average, classify_spectrum, CorrelationDecomposition, EigenSystem, MpBounds,
    SpectralClasses,
};

/// Condition number above which a filtered covariance gets a ridge.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Ridge size relative to `trace / N`.
pub const RIDGE_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceSource {
    Empirical,
    RmtNoiseFree,
    Mesoscopic,
    BlockAveraged,
}

/// Diagonal of a covariance built from a correlation component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalConvention {
    /// `sigma_ii = sigma_i^2`.
    #[default]
    Empirical,
    /// `sigma_ii = C_ii sigma_i^2` with the component's own diagonal.
    Component,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceInput {
    #[serde(skip)]
    pub sigma: DMatrix<f64>,
    pub source: CovarianceSource,
    /// Correlation components the matrix was assembled from.
    pub components: Vec<String>,
    pub diagonal: DiagonalConvention,
    /// Ridge added to the diagonal, zero if none.
    pub ridge: f64,
    pub condition: f64,
}

fn condition_number(m: &DMatrix<f64>) -> (f64, f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (cond, min, max)
}

impl CovarianceInput {
    pub fn from_matrix(sigma: DMatrix<f64>, source: CovarianceSource) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch {
                expected: sigma.nrows(),
                actual: sigma.ncols(),
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sigma = sigma;
        symmetrize(&mut sigma);
        let (condition, _, _) = condition_number(&sigma);
        Ok(Self {
            sigma,
            source,
            components: vec![],
            diagonal: DiagonalConvention::Empirical,
            ridge: 0.0,
            condition,
        })
    }

    /// Sample covariance of the panel (divisor `T - 1`).
    pub fn empirical(rp: &ReturnPanel) -> Result<Self> {
        let mut c = Self::from_matrix(rp.covariance(), CovarianceSource::Empirical)?;
        c.components = vec!["C".into()];
        Ok(c)
    }

    /// `sigma_ij = C_ij sigma_i sigma_j` off the diagonal, with a ridge when
    /// the result is ill-conditioned.
    pub fn from_correlation(
        corr: &DMatrix<f64>,
        std_devs: &[f64],
        source: CovarianceSource,
        diagonal: DiagonalConvention,
    ) -> Result<Self> {
        let n = corr.nrows();
        if std_devs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: std_devs.len(),
            });
        }
        let mut sigma = DMatrix::from_fn(n, n, |i, j| {
            if i == j && diagonal == DiagonalConvention::Empirical {
                std_devs[i] * std_devs[i]
            } else {
                corr[(i, j)] * std_devs[i] * std_devs[j]
            }
        });
        symmetrize(&mut sigma);
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let (mut condition, _, _) = condition_number(&sigma);
        let mut ridge = 0.0;
        if condition > RIDGE_CONDITION {
            ridge = RIDGE_SCALE * sigma.trace() / n as f64;
            for i in 0..n {
                sigma[(i, i)] += ridge;
            }
            condition = condition_number(&sigma).0;
        }
        Ok(Self {
            sigma,
            source,
            components: vec![],
            diagonal,
            ridge,
            condition,
        })
    }

    /// Covariance variant for `source` from a decomposition. `BlockAveraged`
    /// needs the community assignment.
    pub fn filtered(
        dec: &CorrelationDecomposition,
        std_devs: &[f64],
        source: CovarianceSource,
        diagonal: DiagonalConvention,
        assignment: Option<&[usize]>,
    ) -> Result<Self> {
        let (corr, components) = match source {
            CovarianceSource::Empirical => (dec.c.clone(), vec!["C"]),
            CovarianceSource::RmtNoiseFree => (&dec.c_g + &dec.c_m, vec!["C_g", "C_m"]),
            CovarianceSource::Mesoscopic => (dec.c_g.clone(), vec!["C_g"]),
            CovarianceSource::BlockAveraged => {
                let a = assignment.ok_or_else(|| {
                    Error::InvalidArgument("block averaging needs a partition".into())
                })?;
                (block_average(&dec.c_g, a, false)?, vec!["C_g", "partition"])
            }
        };
        let mut out = Self::from_correlation(&corr, std_devs, source, diagonal)?;
        out.components = components.into_iter().map(String::from).collect();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Equal,
    Markowitz,
    Rmt,
    Mesoscopic,
    Community,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Equal,
        Strategy::Markowitz,
        Strategy::Rmt,
        Strategy::Mesoscopic,
        Strategy::Community,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Equal => "equal",
            Strategy::Markowitz => "markowitz",
            Strategy::Rmt => "rmt",
            Strategy::Mesoscopic => "mesoscopic",
            Strategy::Community => "community",
        }
    }

    fn from_source(source: CovarianceSource) -> Self {
        match source {
            CovarianceSource::Empirical => Strategy::Markowitz,
            CovarianceSource::RmtNoiseFree => Strategy::Rmt,
            CovarianceSource::Mesoscopic | CovarianceSource::BlockAveraged => Strategy::Mesoscopic,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub strategy: Strategy,
    pub short_allowed: bool,
    pub target_return: Option<f64>,
    pub diagnostics: Option<KktDiagnostics>,
}

impl WeightVector {
    fn new(
        weights: Vec<f64>,
        strategy: Strategy,
        short_allowed: bool,
        target_return: Option<f64>,
    ) -> Self {
        Self {
            weights,
            strategy,
            short_allowed,
            target_return,
            diagnostics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn variance(&self, sigma: &DMatrix<f64>) -> f64 {
        let w = self.as_dvector();
        w.dot(&(sigma * &w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub target_return: f64,
    pub weights: WeightVector,
    pub predicted_variance: f64,
    /// Set when all expected returns coincide and the GMV portfolio was used.
    pub fell_back_to_gmv: bool,
}

/// Column means of the raw returns.
pub fn mean_vector(rp: &ReturnPanel) -> Vec<f64> {
    rp.means()
}

pub fn equal_weights(n: usize) -> WeightVector {
    WeightVector::new(vec![1.0 / n as f64; n], Strategy::Equal, true, None)
}

/// Condition number at which a covariance is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

fn inverse_times(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (condition, _, _) = condition_number(sigma);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let chol = sigma.clone().cholesky();
    match chol {
        Some(c) => Ok(c.solve(rhs)),
        None => sigma
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(Error::Singular { condition }),
    }
}

/// `Sigma^-1 1 / (1' Sigma^-1 1)`.
pub fn gmv_weights(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    let x = inverse_times(sigma, &DMatrix::from_element(n, 1, 1.0))?;
    let total = x.sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    Ok(x.iter().map(|v| v / total).collect())
}

pub fn gmv(sigma: &CovarianceInput) -> Result<WeightVector> {
    Ok(WeightVector::new(
        gmv_weights(&sigma.sigma)?,
        Strategy::from_source(sigma.source),
        true,
        None,
    ))
}

/// `(A, B, C, Delta)` with `A = mu' S^-1 mu`, `B = 1' S^-1 mu`, `C = 1' S^-1 1`.
pub fn frontier_constants(sigma: &DMatrix<f64>, mu: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = sigma.nrows();
    if mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: mu.len(),
        });
    }
    let mut rhs = DMatrix::from_element(n, 2, 1.0);
    rhs.set_column(1, &DVector::from_column_slice(mu));
    let x = inverse_times(sigma, &rhs)?;
    let mu_v = DVector::from_column_slice(mu);
    let a = mu_v.dot(&x.column(1));
    let b = x.column(1).sum();
    let c = x.column(0).sum();
    Ok((a, b, c, c * a - b * b))
}

/// Closed-form minimum-variance portfolio with expected return `target`.
pub fn frontier_point(sigma: &CovarianceInput, mu: &[f64], target: f64) -> Result<FrontierPoint> {
    let s = &sigma.sigma;
    let n = s.nrows();
    let (a, b, c, delta) = frontier_constants(s, mu)?;
    let spread = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - mu.iter().cloned().fold(f64::INFINITY, f64::min);
    let strategy = Strategy::from_source(sigma.source);
    if spread <= 1e-14 * mu.iter().map(|m| m.abs()).fold(1e-300, f64::max)
        || delta.abs() <= 1e-14 * (c * a).abs()
    {
        warn!("expected returns are degenerate; using the GMV portfolio");
        let w = gmv(sigma)?;
        let predicted_variance = w.variance(s);
        return Ok(FrontierPoint {
            target_return: target,
            weights: WeightVector::new(w.weights, strategy, true, Some(target)),
            predicted_variance,
            fell_back_to_gmv: true,
        });
    }
    let coef_ones = (a - target * b) / delta;
    let coef_mu = (target * c - b) / delta;
    let mut rhs = DMatrix::from_element(n, 2, 1.0);
    rhs.set_column(1, &DVector::from_column_slice(mu));
    let x = inverse_times(s, &rhs)?;
    let weights: Vec<f64> = (0..n)
        .map(|i| coef_ones * x[(i, 0)] + coef_mu * x[(i, 1)])
        .collect();
    let w = WeightVector::new(weights, strategy, true, Some(target));
    let predicted_variance = w.variance(s);
    Ok(FrontierPoint {
        target_return: target,
        weights: w,
        predicted_variance,
        fell_back_to_gmv: false,
    })
}

/// Feasible start for `a'x = 1, r'x = target, x >= 0`: a mix of the two
/// assets with the extreme return-per-budget ratios.
fn target_start(a: &[f64], r: &[f64], target: f64) -> Result<DVector<f64>> {
    let n = a.len();
    let ratio: Vec<f64> = (0..n).map(|i| r[i] / a[i]).collect();
    let lo = (0..n)
        .min_by(|&i, &j| ratio[i].total_cmp(&ratio[j]))
        .unwrap_or(0);
    let hi = (0..n)
        .max_by(|&i, &j| ratio[i].total_cmp(&ratio[j]))
        .unwrap_or(0);
    let (min, max) = (ratio[lo], ratio[hi]);
    let slack = 1e-12 * (1.0 + min.abs().max(max.abs()));
    if target < min - slack || target > max + slack {
        return Err(Error::Infeasible { target, min, max });
    }
    let mut x = DVector::zeros(n);
    if max - min <= slack {
        let total: f64 = a.iter().sum();
        x.fill(1.0 / total);
        return Ok(x);
    }
    let theta = ((target - min) / (max - min)).clamp(0.0, 1.0);
    // theta of the budget in the high-ratio asset
    x[hi] = theta / a[hi];
    x[lo] = (1.0 - theta) / a[lo];
    Ok(x)
}

/// Budget-only start: the unconstrained optimum clipped at zero and rescaled.
fn projected_start(h: &DMatrix<f64>, a: &[f64]) -> DVector<f64> {
    let n = a.len();
    let p = QpProblem {
        h,
        eq_rows: vec![DVector::from_column_slice(a)],
        eq_rhs: vec![1.0],
        nonneg: false,
    };
    let mut x = solve_qp(&p, None, &SolverOptions::default())
        .map(|s| s.x)
        .unwrap_or_else(|_| DVector::zeros(n));
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let budget: f64 = x.iter().zip(a).map(|(x, a)| x * a).sum();
    if budget > 0.0 && budget.is_finite() {
        x /= budget;
    } else {
        let total: f64 = a.iter().sum();
        x.fill(1.0 / total);
    }
    x
}

/// Minimizes `x'Hx` subject to `a'x = 1`, optionally `r'x = target` and `x >= 0`.
fn solve_general(
    h: &DMatrix<f64>,
    a: &[f64],
    r: Option<&[f64]>,
    target: Option<f64>,
    no_short: bool,
    options: &SolverOptions,
) -> Result<(Vec<f64>, KktDiagnostics)> {
    let n = h.nrows();
    let mut eq_rows = vec![DVector::from_column_slice(a)];
    let mut eq_rhs = vec![1.0];
    let mut start = None;
    if let Some(t) = target {
        let r = r.ok_or_else(|| {
            Error::InvalidArgument("a return target needs expected returns".into())
        })?;
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: r.len(),
            });
        }
        if no_short {
            start = Some(target_start(a, r, t)?);
        }
        let ratio: Vec<f64> = r.iter().zip(a).map(|(r, a)| r / a).collect();
        let lo = ratio.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            eq_rows.push(DVector::from_column_slice(r));
            eq_rhs.push(t);
        } else if (t - lo).abs() > 1e-12 * (1.0 + lo.abs()) {
            return Err(Error::DegenerateReturns);
        }
    }
    if no_short && start.is_none() {
        start = Some(projected_start(h, a));
    }
    let problem = QpProblem {
        h,
        eq_rows,
        eq_rhs,
        nonneg: no_short,
    };
    let sol = solve_qp(&problem, start, options)?;
    Ok((sol.x.iter().copied().collect(), sol.diagnostics))
}

pub fn solve_constrained(
    sigma: &CovarianceInput,
    mu: Option<&[f64]>,
    target: Option<f64>,
    no_short: bool,
    options: &SolverOptions,
) -> Result<WeightVector> {
    let n = sigma.dim();
    let ones = vec![1.0; n];
    let (weights, diag) = solve_general(&sigma.sigma, &ones, mu, target, no_short, options)?;
    let mut w = WeightVector::new(
        weights,
        Strategy::from_source(sigma.source),
        !no_short,
        target,
    );
    w.diagnostics = Some(diag);
    Ok(w)
}

/// Reduced community matrix `E' Sigma E`, where `E` maps communities to members.
pub fn community_matrix(
    sigma: &DMatrix<f64>,
    assignment: &[usize],
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = sigma.nrows();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: assignment.len(),
        });
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCommunity(empty));
    }
    let mut r = DMatrix::zeros(k, k);
    for j in 0..n {
        for i in 0..n {
            r[(assignment[i], assignment[j])] += sigma[(i, j)];
        }
    }
    symmetrize(&mut r);
    Ok((r, sizes))
}

/// Minimum-variance portfolio with one common weight per community.
pub fn community_gmv(
    sigma: &CovarianceInput,
    assignment: &[usize],
    mu: Option<&[f64]>,
    target: Option<f64>,
    no_short: bool,
    options: &SolverOptions,
) -> Result<WeightVector> {
    let (r, sizes) = community_matrix(&sigma.sigma, assignment)?;
    let k = sizes.len();
    let budget: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let returns = match mu {
        Some(mu) => {
            if mu.len() != assignment.len() {
                return Err(Error::DimensionMismatch {
                    expected: assignment.len(),
                    actual: mu.len(),
                });
            }
            let mut sums = vec![0.0; k];
            for (&c, m) in assignment.iter().zip(mu) {
                sums[c] += m;
            }
            // N_c times the community mean is the sum of member means
            Some(sums)
        }
        None => None,
    };
    let (condition, _, _) = condition_number(&r);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let (per_community, diag) =
        solve_general(&r, &budget, returns.as_deref(), target, no_short, options)?;
    let weights = assignment.iter().map(|&c| per_community[c]).collect();
    let mut w = WeightVector::new(weights, Strategy::Community, !no_short, target);
    w.diagnostics = Some(diag);
    Ok(w)
}

/// Inverse participation ratio `1 / sum w_i^2`.
pub fn effective_size(w: &WeightVector) -> f64 {
    1.0 / w.weights.iter().map(|x| x * x).sum::<f64>()
}

#[derive(Debug, Clone, Serialize)]
pub struct GmvSplit {
    pub random: Vec<f64>,
    pub mesoscopic: Vec<f64>,
    pub market: Vec<f64>,
    pub gmv: Vec<f64>,
    pub classes: SpectralClasses,
}

/// Splits the GMV weights over the random, mesoscopic and market parts of
/// the covariance spectrum.
///
/// `bounds` classifies the eigenvalues of `sigma` itself.
pub fn gmv_spectral_split(
    sigma: &DMatrix<f64>,
    bounds: &MpBounds,
    sign_threshold: f64,
) -> Result<GmvSplit> {
    let eig = EigenSystem::new(sigma)?;
    let n = eig.dim();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues[0];
    if !(min > 0.0) || max / min > SINGULAR_CONDITION {
        return Err(Error::Singular {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let classes = classify_spectrum(&eig, bounds.lambda_max, sign_threshold);
    let part = |idx: &[usize]| -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for &k in idx {
            let v = eig.eigenvectors.column(k);
            out += v * (v.sum() / eig.eigenvalues[k]);
        }
        out
    };
    let (r, g, m) = (
        part(&classes.random),
        part(&classes.mesoscopic),
        part(&classes.market),
    );
    let total = (&r + &g + &m).sum();
    let to_vec = |v: DVector<f64>| v.iter().map(|x| x / total).collect::<Vec<f64>>();
    let gmv = to_vec(&r + &g + &m);
    Ok(GmvSplit {
        random: to_vec(r),
        mesoscopic: to_vec(g),
        market: to_vec(m),
        gmv,
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoAssetShift {
    /// GMV weight of asset 1 with the full correlation.
    pub w_star: f64,
    /// GMV weight of asset 1 with the mesoscopic correlation only.
    pub w_adj: f64,
    pub delta: f64,
}

impl TwoAssetShift {
    pub fn sign(&self) -> i8 {
        if self.delta > 0.0 {
            1
        } else if self.delta < 0.0 {
            -1
        } else {
            0
        }
    }
}

fn two_asset_weight(var1: f64, var2: f64, cov: f64) -> Result<f64> {
    let denom = var1 + var2 - 2.0 * cov;
    if denom.abs() <= 1e-15 * (var1 + var2) {
        return Err(Error::DegenerateDenominator);
    }
    Ok((var2 - cov) / denom)
}

/// Shift in the asset-1 GMV weight when the market part of the correlation is dropped.
pub fn two_asset_shift(
    sigma1: f64,
    sigma2: f64,
    c12_empirical: f64,
    c12_mesoscopic: f64,
) -> Result<TwoAssetShift> {
    let s12 = sigma1 * sigma2;
    two_asset_shift_cov(
        sigma1 * sigma1,
        sigma2 * sigma2,
        c12_mesoscopic * s12,
        (c12_empirical - c12_mesoscopic) * s12,
    )
}

/// Covariance form: `cov_g` is the mesoscopic covariance, `cov_m` the market part.
pub fn two_asset_shift_cov(var1: f64, var2: f64, cov_g: f64, cov_m: f64) -> Result<TwoAssetShift> {
    let w_star = two_asset_weight(var1, var2, cov_g + cov_m)?;
    let w_adj = two_asset_weight(var1, var2, cov_g)?;
    Ok(TwoAssetShift {
        w_star,
        w_adj,
        delta: w_star - w_adj,
    })
}

/// Factorized closed form of the shift,
/// `m (var2 - var1) / ((S - 2g)(S - 2g - 2m))` with `S = var1 + var2`.
pub fn two_asset_shift_closed_form(var1: f64, var2: f64, cov_g: f64, cov_m: f64) -> Result<f64> {
    let s = var1 + var2;
    let d = (s - 2.0 * cov_g) * (s - 2.0 * cov_g - 2.0 * cov_m);
    if d.abs() <= 1e-15 * s * s {
        return Err(Error::DegenerateDenominator);
    }
    Ok(cov_m * (var2 - var1) / d)
}
