//! Synthetic return panels with a planted market mode and block structure.
//!
//! Each return is `x_it = L_i m_t + b_c g_{c,t} + e_it` where `m`, `g` and
//! `e / noise_sd` are independent standard normals and `c` is the block of
//! asset `i`. The block coefficient is `b_c = noise_sd * sqrt(rho_c / (1 - rho_c))`,
//! so the block-plus-noise part has within-block correlation `rho_c`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{business_days, ReturnPanel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub size: usize,
    pub intra_correlation: f64,
}

impl Block {
    pub fn new(size: usize, intra_correlation: f64) -> Self {
        Self {
            size,
            intra_correlation,
        }
    }
}

/// A stretch of observations sharing one market-loading vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub n_obs: usize,
    pub market_loading: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: ReturnPanel,
    /// Planted block of every asset.
    pub labels: Vec<usize>,
}

/// Single-regime panel.
pub fn generate_synthetic(
    n_assets: usize,
    n_obs: usize,
    blocks: &[Block],
    market_loading: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticPanel> {
    let total: usize = blocks.iter().map(|b| b.size).sum();
    if total != n_assets {
        return Err(Error::InvalidBlocks(format!(
            "block sizes sum to {total}, expected {n_assets}"
        )));
    }
    generate_regimes(
        blocks,
        &[Regime {
            n_obs,
            market_loading: market_loading.to_vec(),
        }],
        noise_sd,
        seed,
    )
}

/// Panel whose market loadings switch between consecutive regimes while the
/// block structure stays fixed.
pub fn generate_regimes(
    blocks: &[Block],
    regimes: &[Regime],
    noise_sd: f64,
    seed: u64,
) -> Result<SyntheticPanel> {
    if blocks.is_empty() || blocks.iter().any(|b| b.size == 0) {
        return Err(Error::InvalidBlocks("blocks must be non-empty".into()));
    }
    if let Some(b) = blocks
        .iter()
        .find(|b| !(0.0..1.0).contains(&b.intra_correlation))
    {
        return Err(Error::InvalidBlocks(format!(
            "intra-block correlation {} outside [0, 1)",
            b.intra_correlation
        )));
    }
    if !(noise_sd > 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidBlocks(format!(
            "noise_sd must be positive, got {noise_sd}"
        )));
    }
    let n: usize = blocks.iter().map(|b| b.size).sum();
    if regimes.is_empty() {
        return Err(Error::InvalidBlocks(
            "at least one regime is required".into(),
        ));
    }
    for r in regimes {
        if r.market_loading.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: r.market_loading.len(),
            });
        }
        if r.market_loading.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidBlocks("non-finite market loading".into()));
        }
    }

    let labels: Vec<usize> = blocks
        .iter()
        .enumerate()
        .flat_map(|(c, b)| std::iter::repeat_n(c, b.size))
        .collect();
    let coefficient: Vec<f64> = blocks
        .iter()
        .map(|b| noise_sd * (b.intra_correlation / (1.0 - b.intra_correlation)).sqrt())
        .collect();

    let t_total: usize = regimes.iter().map(|r| r.n_obs).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = DMatrix::zeros(t_total, n);
    let mut block_draws = vec![0.0; blocks.len()];
    let mut t = 0;
    for regime in regimes {
        for _ in 0..regime.n_obs {
            let market: f64 = rng.sample(StandardNormal);
            for g in block_draws.iter_mut() {
                *g = rng.sample(StandardNormal);
            }
            for i in 0..n {
                let noise: f64 = rng.sample(StandardNormal);
                let c = labels[i];
                returns[(t, i)] = regime.market_loading[i] * market
                    + coefficient[c] * block_draws[c]
                    + noise_sd * noise;
            }
            t += 1;
        }
    }
    let assets = (0..n).map(|i| format!("S{i:04}")).collect();
    let panel = ReturnPanel::new(business_days(t_total), assets, returns)?;
    Ok(SyntheticPanel { panel, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx).powi(2);
            syy += (b - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn pure_noise_configuration() {
        let s = generate_synthetic(5, 200, &[Block::new(5, 0.0)], &[0.0; 5], 1.0, 3).unwrap();
        // with rho = 0 and zero loading the only ingredient is the noise term
        let sd = s.panel.std_devs();
        assert!(sd.iter().all(|v| (v - 1.0).abs() < 0.2));
        assert_eq!(s.labels, vec![0; 5]);
    }

    #[test]
    fn within_block_correlation_matches_population_value() {
        let blocks = [Block::new(5, 0.6), Block::new(5, 0.6)];
        let s = generate_synthetic(10, 4000, &blocks, &[0.0; 10], 0.7, 11).unwrap();
        let r = s.panel.returns();
        let mut within = Vec::new();
        for i in 0..10 {
            for j in (i + 1)..10 {
                if s.labels[i] == s.labels[j] {
                    let ci: Vec<f64> = r.column(i).iter().copied().collect();
                    let cj: Vec<f64> = r.column(j).iter().copied().collect();
                    within.push(sample_corr(&ci, &cj));
                }
            }
        }
        let mean = within.iter().sum::<f64>() / within.len() as f64;
        assert!(
            (mean - 0.6).abs() < 0.05,
            "mean within-block correlation {mean}"
        );
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let blocks = [Block::new(3, 0.3), Block::new(2, 0.5)];
        let a = generate_synthetic(5, 50, &blocks, &[0.5; 5], 1.0, 42).unwrap();
        let b = generate_synthetic(5, 50, &blocks, &[0.5; 5], 1.0, 42).unwrap();
        let c = generate_synthetic(5, 50, &blocks, &[0.5; 5], 1.0, 43).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn single_regime_equals_plain_generator() {
        let blocks = [Block::new(4, 0.4)];
        let a = generate_synthetic(4, 30, &blocks, &[0.3; 4], 1.0, 5).unwrap();
        let b = generate_regimes(
            &blocks,
            &[Regime {
                n_obs: 30,
                market_loading: vec![0.3; 4],
            }],
            1.0,
            5,
        )
        .unwrap();
        assert_eq!(a.panel, b.panel);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(5, 10, &[Block::new(4, 0.1)], &[0.0; 5], 1.0, 0).is_err());
        assert!(generate_synthetic(4, 10, &[Block::new(4, 1.0)], &[0.0; 4], 1.0, 0).is_err());
        assert!(generate_synthetic(4, 10, &[Block::new(4, 0.2)], &[0.0; 4], 0.0, 0).is_err());
        assert!(generate_synthetic(4, 10, &[Block::new(4, 0.2)], &[0.0; 3], 1.0, 0).is_err());
    }
}
