//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Oracles are written here from scratch (grid searches, exhaustive
//! partition enumeration, plain LU solves) and do not call back into the
//! code they check.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mesofolio::backtest::{
    run_backtest, strategy_weights, BacktestOptions, BacktestReport, PredictionBasis, StrategySpec,
    SubsamplingSpec,
};
use mesofolio::community::{
    adjusted_rand_index, detect_communities, detect_with_context, LouvainConfig, ModularityContext,
};
use mesofolio::market_data::{business_days, ReturnPanel, WindowSpec};
use mesofolio::portfolio::{
    community_gmv, frontier_point, gmv, gmv_spectral_split, solve_constrained,
    two_asset_shift_closed_form, two_asset_shift_cov, CovarianceInput, CovarianceSource, Strategy,
};
use mesofolio::qp::SolverOptions;
use mesofolio::spectral::{
    correlation_matrix, decompose_panel, mp_bounds, relative_change_norm, risk_fraction_series,
    DecomposeOptions, EigenSystem, SubsampleSpec,
};
use mesofolio::synthetic::{generate_regimes, generate_synthetic, Block, Regime};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (pass, detail) = f();
    let v = Verdict {
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {:<28} {} [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.detail,
        v.elapsed.as_secs_f64()
    );
    v
}

// ---------------------------------------------------------------------------
// shared fixtures

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn panel_from(m: DMatrix<f64>) -> ReturnPanel {
    let assets = (0..m.ncols()).map(|i| format!("A{i}")).collect();
    ReturnPanel::new(business_days(m.nrows()), assets, m).unwrap()
}

fn four_blocks() -> Vec<Block> {
    vec![Block::new(25, 0.4); 4]
}

fn base_loadings(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.8..1.2)).collect()
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Market loading rises then doubles across three equal windows.
const SCHEDULE: [f64; 3] = [0.3, 0.7, 1.4];
const SCHEDULE_WINDOW: usize = 750;

fn regime_switching_panel(seed: u64) -> ReturnPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = base_loadings(&mut rng, 100);
    let regimes: Vec<Regime> = SCHEDULE
        .iter()
        .map(|&l| Regime {
            n_obs: SCHEDULE_WINDOW,
            market_loading: scaled(&base, l),
        })
        .collect();
    generate_regimes(&four_blocks(), &regimes, 1.0, seed)
        .unwrap()
        .panel
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

fn quad(s: &DMatrix<f64>, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    w.dot(&(s * &w))
}

fn quad3(s: &DMatrix<f64>, w: Vector3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += w[i] * s[(i, j)] * w[j];
        }
    }
    acc
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

// ---------------------------------------------------------------------------
// spectral

fn mp_bulk_coverage() -> (bool, String) {
    let (n, t) = (100, 1000);
    let q = n as f64 / t as f64;
    // bounds written out independently of mp_bounds
    let (lo, hi) = ((1.0 - q.sqrt()).powi(2), (1.0 + q.sqrt()).powi(2));
    let mut worst: f64 = 1.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rp = panel_from(normal_matrix(&mut rng, t, n));
        let c = correlation_matrix(&rp).unwrap();
        let eig = EigenSystem::new(&c).unwrap();
        let inside = eig
            .eigenvalues
            .iter()
            .filter(|l| **l >= lo && **l <= hi)
            .count();
        worst = worst.min(inside as f64 / n as f64);
        let b = mp_bounds(n, t, 1.0).unwrap();
        if (b.lambda_min - lo).abs() > 1e-12 || (b.lambda_max - hi).abs() > 1e-12 {
            return (false, format!("bounds mismatch {:?}", b));
        }
    }
    (
        worst >= 0.95,
        format!("min coverage over 10 panels {:.3} (need >= 0.95)", worst),
    )
}

fn decomposition_exactness() -> (bool, String) {
    let mut worst_rec: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let n = rng.random_range(2..=50usize);
        let t = n + rng.random_range(1..=4 * n + 20);
        let rp = if seed % 2 == 0 {
            panel_from(normal_matrix(&mut rng, t, n))
        } else {
            let k = rng.random_range(1..=n.min(5));
            let mut sizes = vec![n / k; k];
            sizes[0] += n - (n / k) * k;
            let blocks: Vec<Block> = sizes
                .iter()
                .map(|&s| Block::new(s, rng.random_range(0.0..0.8)))
                .collect();
            let loading: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
            generate_synthetic(n, t, &blocks, &loading, 1.0, seed)
                .unwrap()
                .panel
        };
        let dec = decompose_panel(&rp, &DecomposeOptions::default()).unwrap();
        let rec = (&dec.c - (&dec.c_r + &dec.c_g + &dec.c_m)).amax();
        worst_rec = worst_rec.max(rec);
        worst_trace = worst_trace.max((dec.c.trace() - n as f64).abs());
    }
    (
        worst_rec < 1e-8 && worst_trace < 1e-8,
        format!("max reconstruction error {worst_rec:.2e}, max |trace - N| {worst_trace:.2e} (need < 1e-8)"),
    )
}

fn market_mode_sign() -> (bool, String) {
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let p = generate_synthetic(100, 1000, &four_blocks(), &[0.3; 100], 1.0, 20_000 + seed)
                .unwrap();
            let dec = decompose_panel(&p.panel, &DecomposeOptions::default()).unwrap();
            let v = dec.eig.eigenvectors.column(0);
            let pos = v.iter().filter(|x| **x > 0.0).count();
            let share = pos.max(v.len() - pos) as f64 / v.len() as f64;
            usize::from(share >= 0.95 && dec.indices_m == vec![0])
        })
        .sum();
    (
        hits >= 99,
        format!("{hits}/100 seeds with a sign-uniform market mode (need >= 99)"),
    )
}

fn stability_ordering() -> (bool, String) {
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let rp = regime_switching_panel(seed);
            let decs: Vec<_> = (0..SCHEDULE.len())
                .map(|k| {
                    let w = rp
                        .rows(k * SCHEDULE_WINDOW..(k + 1) * SCHEDULE_WINDOW)
                        .unwrap();
                    decompose_panel(&w, &DecomposeOptions::default()).unwrap()
                })
                .collect();
            let ok = decs.windows(2).all(|p| {
                let change = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
                    relative_change_norm(a, b, 1.0, 1e-12).map(|c| c.normalized)
                };
                match (
                    change(&p[0].c_r, &p[1].c_r),
                    change(&p[0].c_g, &p[1].c_g),
                    change(&p[0].c_m, &p[1].c_m),
                ) {
                    (Ok(r), Ok(g), Ok(m)) => g < m && g < r,
                    _ => false,
                }
            });
            usize::from(ok)
        })
        .sum();
    (
        hits >= 90,
        format!("{hits}/100 seeds with mesoscopic change smallest for every pair (need >= 90)"),
    )
}

fn risk_fraction_stability() -> (bool, String) {
    let total = SCHEDULE_WINDOW * SCHEDULE.len();
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let rp = regime_switching_panel(seed);
            let half = total / 2;
            let spec = WindowSpec::rolling(half, half, SCHEDULE_WINDOW, SCHEDULE_WINDOW);
            let sub = SubsampleSpec {
                size: 100,
                draws: 1,
                seed,
            };
            let s = risk_fraction_series(&rp, &spec, &sub, &DecomposeOptions::default()).unwrap();
            assert_eq!(s.windows.len(), SCHEDULE.len());
            // recompute the across-window spread from the per-window means
            let sd = |k: usize| sample_sd(&s.windows.iter().map(|w| w.mean[k]).collect::<Vec<_>>());
            let (r, g, m) = (sd(0), sd(1), sd(2));
            usize::from(g < m && g < r)
        })
        .sum();
    (
        hits >= 90,
        format!("{hits}/100 seeds with frac_g least variable (need >= 90)"),
    )
}

// ---------------------------------------------------------------------------
// communities

/// Every set partition of `0..n` as a restricted growth string.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=max + 1 {
            prefix.push(c);
            rec(prefix, max.max(c), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(&mut vec![0], 0, n, &mut out);
    }
    out
}

fn brute_force_q(b: &DMatrix<f64>, norm: f64) -> f64 {
    let n = b.nrows();
    set_partitions(n)
        .par_iter()
        .map(|a| {
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if a[i] == a[j] {
                        q += b[(i, j)];
                    }
                }
            }
            q / norm
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn community_recovery() -> (bool, String) {
    let aris: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let p = generate_synthetic(100, 2000, &four_blocks(), &[0.5; 100], 1.0, 30_000 + seed)
                .unwrap();
            let dec = decompose_panel(&p.panel, &DecomposeOptions::default()).unwrap();
            let part = detect_communities(&dec, &LouvainConfig { restarts: 20, seed }).unwrap();
            adjusted_rand_index(&part.assignment, &p.labels).unwrap()
        })
        .collect();
    let med = median(aris.clone());

    // exhaustive cases: planted panels and signed block matrices with N <= 10
    let mut cases = 0;
    let mut misses = Vec::new();
    for n in 4..=10usize {
        for rep in 0..3u64 {
            let seed = 40_000 + 100 * n as u64 + rep;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 2 + (rep as usize % 2);
            let mut sizes = vec![n / k; k];
            sizes[0] += n - (n / k) * k;
            let blocks: Vec<Block> = sizes.iter().map(|&s| Block::new(s, 0.5)).collect();
            let p = generate_synthetic(n, 1500, &blocks, &vec![0.6; n], 1.0, seed).unwrap();
            let dec = decompose_panel(&p.panel, &DecomposeOptions::default()).unwrap();
            if let Ok(ctx) = ModularityContext::from_decomposition(&dec) {
                cases += 1;
                let found = detect_with_context(&ctx, &LouvainConfig { restarts: 20, seed })
                    .unwrap()
                    .modularity;
                let best = brute_force_q(ctx.b(), ctx.norm());
                if found < best - 1e-10 * best.abs().max(1.0) {
                    misses.push(format!("planted n={n} rep={rep}: {found} < {best}"));
                }
            }

            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let mut b =
                DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { -0.4 });
            let noise = normal_matrix(&mut rng, n, n) * 0.2;
            b += &noise + noise.transpose();
            let norm = b.iter().map(|x| x.abs()).sum::<f64>();
            let ctx = ModularityContext::new(b.clone(), norm).unwrap();
            cases += 1;
            let found = detect_with_context(&ctx, &LouvainConfig { restarts: 20, seed })
                .unwrap()
                .modularity;
            let best = brute_force_q(&b, norm);
            if found < best - 1e-10 * best.abs().max(1.0) {
                misses.push(format!("signed n={n} rep={rep}: {found} < {best}"));
            }
        }
    }
    (
        med >= 0.9 && misses.is_empty(),
        format!(
            "median ARI {med:.3} (need >= 0.9), global max found in {}/{cases} exhaustive cases{}",
            cases - misses.len(),
            if misses.is_empty() {
                String::new()
            } else {
                format!(": {}", misses.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// portfolio

fn grid_min_budget_plane(s: &DMatrix<f64>) -> f64 {
    let eval = |a: f64, b: f64| quad3(s, Vector3::new(a, b, 1.0 - a - b));
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let steps = 1000;
    for i in 0..=steps {
        let a = -5.0 + 10.0 * i as f64 / steps as f64;
        for j in 0..=steps {
            let b = -5.0 + 10.0 * j as f64 / steps as f64;
            let f = eval(a, b);
            if f < best.0 {
                best = (f, a, b);
            }
        }
    }
    let (_, a0, b0) = best;
    for i in -20..=20 {
        for j in -20..=20 {
            let (a, b) = (a0 + i as f64 * 1e-3, b0 + j as f64 * 1e-3);
            best.0 = best.0.min(eval(a, b));
        }
    }
    best.0
}

fn grid_min_line(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let (mut best, mut arg) = (f64::INFINITY, lo);
    for i in 0..=steps {
        let s = lo + i as f64 * h;
        let v = f(s);
        if v < best {
            best = v;
            arg = s;
        }
    }
    for i in -200..=200 {
        best = best.min(f((arg + i as f64 * h / 100.0).clamp(lo, hi)));
    }
    best
}

fn grid_min_simplex(s: &DMatrix<f64>) -> f64 {
    let steps = 1000;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
            best = best.min(quad3(s, Vector3::new(a, b, (1.0 - a - b).max(0.0))));
        }
    }
    best
}

fn optimizer_oracles() -> (bool, String) {
    let opts = SolverOptions::default();
    let tol = 1e-3;
    let results: Vec<[f64; 5]> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
            let s = random_spd(&mut rng, 3, 0.3);
            let sigma =
                CovarianceInput::from_matrix(s.clone(), CovarianceSource::Empirical).unwrap();
            let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (lo, hi) = mu
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| {
                    (a.min(m), b.max(m))
                });
            let target = lo + rng.random_range(0.2..0.8) * (hi - lo);

            let g = (quad(&s, &gmv(&sigma).unwrap().weights) - grid_min_budget_plane(&s)).abs();

            // feasible line {w : 1'w = 1, mu'w = target} for N = 3
            let ones = Vector3::new(1.0, 1.0, 1.0);
            let m = Vector3::new(mu[0], mu[1], mu[2]);
            let d = ones.cross(&m).normalize();
            let a = nalgebra::Matrix2x3::from_rows(&[ones.transpose(), m.transpose()]);
            let w0 = a.transpose()
                * (a * a.transpose()).try_inverse().unwrap()
                * nalgebra::Vector2::new(1.0, target);
            let line = |t: f64| quad3(&s, w0 + d * t);
            let fp = frontier_point(&sigma, &mu, target).unwrap();
            let f = (quad(&s, &fp.weights.weights) - grid_min_line(line, -20.0, 20.0)).abs();

            let ns = solve_constrained(&sigma, None, None, true, &opts).unwrap();
            let c = (quad(&s, &ns.weights) - grid_min_simplex(&s)).abs();

            // community [0, 0, 1]: weights (x, x, 1 - 2x)
            let assign = [0usize, 0, 1];
            let comm = |x: f64| quad3(&s, Vector3::new(x, x, 1.0 - 2.0 * x));
            let cw = community_gmv(&sigma, &assign, None, None, false, &opts).unwrap();
            let k = (quad(&s, &cw.weights) - grid_min_line(comm, -20.0, 20.0)).abs();
            let cn = community_gmv(&sigma, &assign, None, None, true, &opts).unwrap();
            let kn = (quad(&s, &cn.weights) - grid_min_line(comm, 0.0, 0.5)).abs();
            [g, f, c, k, kn]
        })
        .collect();
    let worst: Vec<f64> = (0..5)
        .map(|j| results.iter().map(|r| r[j]).fold(0.0, f64::max))
        .collect();

    let mut stationarity: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + seed);
        let x = normal_matrix(&mut rng, 300, 100);
        let scale: Vec<f64> = (0..100).map(|_| rng.random_range(0.5..2.0)).collect();
        let x = DMatrix::from_fn(300, 100, |t, i| x[(t, i)] * scale[i]);
        let s = x.transpose() * &x / 299.0;
        let w = gmv(&CovarianceInput::from_matrix(s.clone(), CovarianceSource::Empirical).unwrap())
            .unwrap();
        let wv = DVector::from_column_slice(&w.weights);
        let grad = &s * &wv;
        let nu = wv.dot(&grad);
        stationarity = stationarity.max(grad.iter().map(|g| (g - nu).abs()).fold(0.0, f64::max));
    }
    let pass = worst.iter().all(|w| *w < tol) && stationarity < 1e-6;
    (
        pass,
        format!(
            "max objective gap gmv {:.1e} frontier {:.1e} no-short {:.1e} community {:.1e}/{:.1e} (need < 1e-3); N=100 stationarity {:.1e} (need < 1e-6)",
            worst[0], worst[1], worst[2], worst[3], worst[4], stationarity
        ),
    )
}

fn two_asset_sign_law() -> (bool, String) {
    let grid = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let sigmas = grid(0.5, 2.0, 20);
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut closed_form_gap: f64 = 0.0;
    for &cg in &[-0.3, 0.0, 0.3, 0.6] {
        let cms = grid(0.0, 0.95 * (1.0 - cg), 20);
        for &s1 in &sigmas {
            for &s2 in &sigmas {
                for &cm in &cms {
                    let (v1, v2) = (s1 * s1, s2 * s2);
                    let (cov_g, cov_m) = (cg * s1 * s2, cm * s1 * s2);
                    let shift = two_asset_shift_cov(v1, v2, cov_g, cov_m).unwrap();
                    checked += 1;
                    if cov_m == 0.0 && shift.delta != 0.0 {
                        violations.push(format!(
                            "nonzero shift {} at zero market covariance",
                            shift.delta
                        ));
                    }
                    if cov_m > 0.0 && v2 > v1 && (shift.delta <= 0.0 || shift.delta.is_nan()) {
                        violations
                            .push(format!("shift {} at s1={s1} s2={s2} cm={cm}", shift.delta));
                    }
                    let cf = two_asset_shift_closed_form(v1, v2, cov_g, cov_m).unwrap();
                    closed_form_gap = closed_form_gap.max((cf - shift.delta).abs());
                }
            }
        }
    }
    (
        violations.is_empty(),
        format!(
            "{checked} grid points, {} violations; factorized closed form within {closed_form_gap:.1e}",
            violations.len()
        ),
    )
}

fn spectral_split_identity() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + seed);
        let n = rng.random_range(5..=40usize);
        let t = 3 * n;
        let k = rng.random_range(1..=4usize).min(n);
        let mut sizes = vec![n / k; k];
        sizes[0] += n - (n / k) * k;
        let blocks: Vec<Block> = sizes.iter().map(|&s| Block::new(s, 0.4)).collect();
        let p = generate_synthetic(n, t, &blocks, &vec![0.7; n], 1.0, seed).unwrap();
        let s = p.panel.covariance();
        let bounds = mp_bounds(n, t, s.trace() / n as f64).unwrap();
        let split = gmv_spectral_split(&s, &bounds, 0.95).unwrap();
        // independent GMV: solve S x = 1 and normalize
        let x = s
            .clone()
            .lu()
            .solve(&DVector::from_element(n, 1.0))
            .unwrap();
        let w = &x / x.sum();
        for i in 0..n {
            let sum = split.random[i] + split.mesoscopic[i] + split.market[i];
            worst = worst
                .max((sum - w[i]).abs())
                .max((split.gmv[i] - w[i]).abs());
        }
    }
    (
        worst < 1e-8,
        format!("max |w_r + w_g + w_m - w_gmv| {worst:.1e} over 50 instances (need < 1e-8)"),
    )
}

fn tracking_equal_weights() -> (bool, String) {
    let specs = [
        StrategySpec::gmv(Strategy::Markowitz, false),
        StrategySpec::gmv(Strategy::Rmt, false),
        StrategySpec::gmv(Strategy::Mesoscopic, false),
    ];
    let outcomes: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let p = generate_synthetic(100, 750, &four_blocks(), &[0.5; 100], 1.0, 80_000 + seed)
                .unwrap();
            let ws = strategy_weights(&p.panel, &specs, &BacktestOptions::default(), seed).unwrap();
            let w: Vec<Vec<f64>> = ws.into_iter().map(|(_, w)| w.unwrap().weights).collect();
            let d = |v: &[f64]| v.iter().map(|x| (x - 0.01).abs()).sum::<f64>();
            let neff = |v: &[f64]| 1.0 / v.iter().map(|x| x * x).sum::<f64>();
            let (dk, dr, dm) = (d(&w[0]), d(&w[1]), d(&w[2]));
            (dm < dr && dr < dk, neff(&w[2]) > neff(&w[0]))
        })
        .collect();
    let order = outcomes.iter().filter(|o| o.0).count();
    let size = outcomes.iter().filter(|o| o.1).count();
    (
        order >= 80 && size >= 90,
        format!("distance order held in {order}/100 (need >= 80), effective size order in {size}/100 (need >= 90)"),
    )
}

fn reliability_panel(seed: u64) -> ReturnPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = base_loadings(&mut rng, 100);
    let regimes = [
        Regime {
            n_obs: 500,
            market_loading: scaled(&base, 0.3),
        },
        Regime {
            n_obs: 500,
            market_loading: scaled(&base, 1.0),
        },
    ];
    generate_regimes(&four_blocks(), &regimes, 1.0, seed)
        .unwrap()
        .panel
}

fn mean_reliability(report: &BacktestReport, s: Strategy) -> f64 {
    report
        .gmv
        .iter()
        .find(|g| g.strategy == s && !g.no_short)
        .map(|g| g.mean_reliability)
        .unwrap_or(f64::NAN)
}

fn reliability_ordering() -> (bool, String) {
    let strategies: Vec<StrategySpec> = [
        Strategy::Equal,
        Strategy::Markowitz,
        Strategy::Mesoscopic,
        Strategy::Community,
    ]
    .into_iter()
    .map(|s| StrategySpec::gmv(s, false))
    .collect();
    let run = |seed: u64, prediction: PredictionBasis| -> [f64; 4] {
        let rp = reliability_panel(90_000 + seed);
        let options = BacktestOptions {
            prediction,
            ..BacktestOptions::default()
        };
        let sub = SubsamplingSpec {
            sizes: vec![50],
            draws: 5,
            seed,
        };
        let report = run_backtest(
            &rp,
            &[WindowSpec::in_sample(500, 500)],
            &strategies,
            &sub,
            &options,
        )
        .unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        [
            Strategy::Equal,
            Strategy::Markowitz,
            Strategy::Mesoscopic,
            Strategy::Community,
        ]
        .map(|s| mean_reliability(&report, s))
    };
    let tally = |prediction| {
        let r: Vec<[f64; 4]> = (0..100u64)
            .into_par_iter()
            .map(|s| run(s, prediction))
            .collect();
        let first = r.iter().filter(|x| x[2] <= x[0] && x[0] < x[1]).count();
        let second = r.iter().filter(|x| x[3] <= x[2]).count();
        let means: Vec<f64> = (0..4)
            .map(|k| r.iter().map(|x| x[k]).sum::<f64>() / r.len() as f64)
            .collect();
        (first, second, means)
    };
    let (first, second, means) = tally(PredictionBasis::Empirical);
    let (sf, ss, sm) = tally(PredictionBasis::Strategy);
    println!(
        "     strategy-consistent prediction: orderings held {sf}/100 and {ss}/100, mean R equal {:.3} markowitz {:.3} mesoscopic {:.3} community {:.3}",
        sm[0], sm[1], sm[2], sm[3]
    );
    (
        first >= 70 && second >= 60,
        format!(
            "meso <= equal < markowitz in {first}/100 (need >= 70), community <= meso in {second}/100 (need >= 60); mean R equal {:.3} markowitz {:.3} mesoscopic {:.3} community {:.3}",
            means[0], means[1], means[2], means[3]
        ),
    )
}

// ---------------------------------------------------------------------------
// cli

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mesofolio"))
        .args(args)
        .env_remove("MESOFOLIO_SEED")
        .status()
        .map(|s| s.code() == Some(0))
        .unwrap_or(false)
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[input]
path = "{}"
[synth]
n_obs = 600
blocks = [{{ size = 10, intra_correlation = 0.4 }}, {{ size = 10, intra_correlation = 0.4 }}, {{ size = 10, intra_correlation = 0.4 }}]
[backtest]
sizes = [20]
draws = 3
strategies = [{{ name = "equal" }}, {{ name = "markowitz", no_short = true }}, {{ name = "mesoscopic" }}, {{ name = "community" }}, {{ name = "rmt", frontier = 5 }}]
"#,
            root.join("a/synth/prices.csv").display()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let mut mismatched = Vec::new();
    for cmd in ["synth", "filter", "communities", "optimize", "backtest"] {
        for (run, workers) in [("a", "1"), ("b", "4")] {
            let out = root.join(run).join(cmd);
            if !run_cli(&[
                cmd,
                "--config",
                cfg,
                "--seed",
                "11",
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ]) {
                return (false, format!("{cmd} exited with failure"));
            }
        }
        let strip = |files: Vec<(String, Vec<u8>)>| {
            files
                .into_iter()
                .filter(|(n, _)| n != "config.resolved.toml")
                .collect::<Vec<_>>()
        };
        let a = strip(dir_contents(&root.join("a").join(cmd)));
        let b = strip(dir_contents(&root.join("b").join(cmd)));
        if a != b {
            mismatched.push(cmd);
        }
    }
    (
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "synth, filter, communities, optimize and backtest reruns byte-identical".into()
        } else {
            format!("outputs differ for {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let limits: [(&str, Option<Duration>); 3] = [
        ("mp_bulk_coverage", Some(Duration::from_secs(5))),
        ("community_recovery", Some(Duration::from_secs(60))),
        ("reliability_ordering", Some(Duration::from_secs(600))),
    ];
    let verdicts = vec![
        check("mp_bulk_coverage", mp_bulk_coverage),
        check("decomposition_exactness", decomposition_exactness),
        check("market_mode_sign", market_mode_sign),
        check("stability_ordering", stability_ordering),
        check("risk_fraction_stability", risk_fraction_stability),
        check("community_recovery", community_recovery),
        check("optimizer_oracles", optimizer_oracles),
        check("two_asset_sign_law", two_asset_sign_law),
        check("spectral_split_identity", spectral_split_identity),
        check("tracking_equal_weights", tracking_equal_weights),
        check("reliability_ordering", reliability_ordering),
        check("cli_determinism", cli_determinism),
    ];
    let mut failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.name.to_string())
        .collect();
    for (name, limit) in limits {
        let v = verdicts.iter().find(|v| v.name == name).unwrap();
        if let Some(limit) = limit {
            let ok = v.elapsed < limit;
            println!(
                "{} {:<28} runtime {:.1}s (limit {}s)",
                if ok { "PASS" } else { "FAIL" },
                format!("{name}_runtime"),
                v.elapsed.as_secs_f64(),
                limit.as_secs()
            );
            if !ok {
                failed.push(format!("{name}_runtime"));
            }
        }
    }
    println!(
        "\n{} of {} criteria passed",
        verdicts.len() - failed.iter().filter(|f| !f.ends_with("_runtime")).count(),
        verdicts.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
