//! Modularity-based community detection on the mesoscopic correlation component.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use tracing::warn;

use crate::error::{Error, Result};
use crate::spectral::CorrelationDecomposition;

/// Modularity matrix together with the constant that normalizes `Q`.
#[derive(Debug, Clone)]
pub struct ModularityContext {
    b: DMatrix<f64>,
    norm: f64,
    pub warnings: Vec<String>,
}

impl ModularityContext {
    pub fn new(b: DMatrix<f64>, norm: f64) -> Result<Self> {
        if !b.is_square() {
            return Err(Error::DimensionMismatch {
                expected: b.nrows(),
                actual: b.ncols(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::ZeroTotalWeight);
        }
        Ok(Self {
            b,
            norm,
            warnings: Vec::new(),
        })
    }

    /// `B = C_g`, normalized by the entry sum of the empirical matrix.
    pub fn from_decomposition(dec: &CorrelationDecomposition) -> Result<Self> {
        let total = dec.c.sum();
        let mut warnings = Vec::new();
        let norm = if total > 0.0 {
            total
        } else {
            let msg =
                format!("correlation entries sum to {total}; normalizing by the absolute sum");
            warn!("{msg}");
            warnings.push(msg);
            dec.c.abs().sum()
        };
        let mut ctx = Self::new(dec.c_g.clone(), norm)?;
        ctx.warnings = warnings;
        Ok(ctx)
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }
}

/// `Q = (1/norm) sum_ij B_ij delta(g_i, g_j)`, diagonal included.
pub fn modularity_of(ctx: &ModularityContext, assignment: &[usize]) -> Result<f64> {
    let n = ctx.dim();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: assignment.len(),
        });
    }
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            if assignment[i] == assignment[j] {
                sum += ctx.b[(i, j)];
            }
        }
    }
    Ok(sum / ctx.norm)
}

/// Expected weights `s_i s_j / 2W` under the weighted configuration model.
pub fn wcm_null(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !w.is_square() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows(),
            actual: w.ncols(),
        });
    }
    let strengths: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    let two_w: f64 = strengths.iter().sum();
    if two_w == 0.0 || !two_w.is_finite() {
        return Err(Error::ZeroTotalWeight);
    }
    let n = w.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        strengths[i] * strengths[j] / two_w
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub n_communities: usize,
    pub modularity: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_communities];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self, community: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == community)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Relabels communities `0..k` by descending size, ties broken by smallest member.
pub fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        let e = groups.entry(c).or_insert((0, i));
        e.0 += 1;
    }
    let mut order: Vec<(usize, usize, usize)> = groups
        .into_iter()
        .map(|(c, (size, first))| (c, size, first))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let map: BTreeMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(new, &(old, _, _))| (old, new))
        .collect();
    assignment.iter().map(|c| map[c]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LouvainConfig {
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            seed: 0,
        }
    }
}

/// Outcome of one Louvain run.
#[derive(Debug, Clone)]
pub struct LouvainRun {
    pub assignment: Vec<usize>,
    pub modularity: f64,
    /// Running `Q` after every accepted move, starting from the singleton partition.
    pub trace: Vec<f64>,
}

pub fn detect_communities(
    dec: &CorrelationDecomposition,
    config: &LouvainConfig,
) -> Result<Partition> {
    if !dec.has_mesoscopic() || dec.c_g.iter().all(|v| *v == 0.0) {
        return Err(Error::NoMesoscopicStructure);
    }
    let ctx = ModularityContext::from_decomposition(dec)?;
    detect_with_context(&ctx, config)
}

/// Best of `config.restarts` independent runs; ties go to the earliest restart.
pub fn detect_with_context(ctx: &ModularityContext, config: &LouvainConfig) -> Result<Partition> {
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let runs: Vec<LouvainRun> = (0..config.restarts)
        .into_par_iter()
        .map(|r| louvain_run(ctx, restart_seed(config.seed, r as u64)))
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.modularity > runs[best].modularity {
            best = r;
        }
    }
    let assignment = runs
        .into_iter()
        .nth(best)
        .map(|r| r.assignment)
        .unwrap_or_default();
    let modularity = modularity_of(ctx, &assignment)?;
    let n_communities = assignment.iter().max().map_or(0, |m| m + 1);
    Ok(Partition {
        assignment,
        n_communities,
        modularity,
        runs: config.restarts,
        seed: config.seed,
    })
}

fn restart_seed(seed: u64, restart: u64) -> u64 {
    // splitmix64 finalizer keeps neighbouring restarts decorrelated
    let mut z = seed.wrapping_add(restart.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One multilevel run: local moves, then aggregation, until nothing changes.
pub fn louvain_run(ctx: &ModularityContext, seed: u64) -> LouvainRun {
    let n = ctx.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-13 * ctx.norm.abs();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = ctx.b.clone();
    let mut q = level.trace() / ctx.norm;
    let mut trace = vec![q];

    loop {
        let k = level.nrows();
        let (comm, moved) = local_moves(&level, &mut rng, tol, ctx.norm, &mut q, &mut trace);
        let (comm, k_new) = compact(&comm);
        if !moved || k_new == k {
            for m in membership.iter_mut() {
                *m = comm[*m];
            }
            break;
        }
        let mut next = DMatrix::zeros(k_new, k_new);
        for j in 0..k {
            for i in 0..k {
                next[(comm[i], comm[j])] += level[(i, j)];
            }
        }
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        level = next;
    }

    let assignment = canonical_labels(&membership);
    let modularity = modularity_of(ctx, &assignment).unwrap_or(f64::NAN);
    LouvainRun {
        assignment,
        modularity,
        trace,
    }
}

/// Single-node best moves over shuffled node orders until a full pass is idle.
///
/// Candidates are scanned in the shuffled neighbour order, so the first of
/// several equally good targets wins.
fn local_moves(
    m: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    tol: f64,
    norm: f64,
    q: &mut f64,
    trace: &mut Vec<f64>,
) -> (Vec<usize>, bool) {
    let k = m.nrows();
    let mut comm: Vec<usize> = (0..k).collect();
    let mut size = vec![1usize; k];
    let mut order: Vec<usize> = (0..k).collect();
    let mut link = vec![0.0; k];
    let mut moved_any = false;
    loop {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            link.iter_mut().for_each(|x| *x = 0.0);
            for &v in &order {
                if v != u {
                    link[comm[v]] += m[(u, v)];
                }
            }
            let own = comm[u];
            let mut best = own;
            let mut best_gain = 0.0;
            let mut seen = vec![false; k];
            seen[own] = true;
            for &v in &order {
                let c = comm[v];
                if seen[c] {
                    continue;
                }
                seen[c] = true;
                let gain = 2.0 * (link[c] - link[own]);
                if gain > best_gain + tol {
                    best = c;
                    best_gain = gain;
                }
            }
            if size[own] > 1 {
                let gain = -2.0 * link[own];
                if gain > best_gain + tol {
                    if let Some(empty) = size.iter().position(|&s| s == 0) {
                        best = empty;
                        best_gain = gain;
                    }
                }
            }
            if best != own {
                size[own] -= 1;
                size[best] += 1;
                comm[u] = best;
                *q += best_gain / norm;
                trace.push(*q);
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

fn compact(comm: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let out = comm
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

type Counts<K> = BTreeMap<K, usize>;

/// Joint and marginal label counts.
fn contingency(a: &[usize], b: &[usize]) -> (Counts<(usize, usize)>, Counts<usize>, Counts<usize>) {
    let mut joint = BTreeMap::new();
    let mut ra = BTreeMap::new();
    let mut rb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ra.entry(x).or_insert(0) += 1;
        *rb.entry(y).or_insert(0) += 1;
    }
    (joint, ra, rb)
}

fn check_same_length(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::MismatchedPartitions);
    }
    Ok(())
}

pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_same_length(a, b)?;
    let pairs = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = ra.values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = rb.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len());
    let expected = if total > 0.0 {
        sum_a * sum_b / total
    } else {
        0.0
    };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    check_same_length(a, b)?;
    let n = a.len() as f64;
    let (joint, ra, rb) = contingency(a, b);
    let entropy = |m: &BTreeMap<usize, usize>| -> f64 {
        m.values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&ra), entropy(&rb));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ra[&x] as f64 / n;
            let py = rb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub ari: Vec<Vec<f64>>,
    pub nmi: Vec<Vec<f64>>,
}

pub fn partition_stability(partitions: &[Partition]) -> Result<StabilityReport> {
    let k = partitions.len();
    let mut ari = vec![vec![1.0; k]; k];
    let mut nmi = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (&partitions[i].assignment, &partitions[j].assignment);
            ari[i][j] = adjusted_rand_index(a, b)?;
            ari[j][i] = ari[i][j];
            nmi[i][j] = normalized_mutual_information(a, b)?;
            nmi[j][i] = nmi[i][j];
        }
    }
    Ok(StabilityReport { ari, nmi })
}

/// Mean within-community (off-diagonal) and between-community entries of `m`.
pub fn community_signature(m: &DMatrix<f64>, assignment: &[usize]) -> (f64, f64) {
    let n = m.nrows();
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if assignment[i] == assignment[j] {
                within += m[(i, j)];
                nw += 1;
            } else {
                between += m[(i, j)];
                nb += 1;
            }
        }
    }
    let avg = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    (avg(within, nw), avg(between, nb))
}

/// Number of assets per sector in each community.
pub fn sector_composition(
    partition: &Partition,
    assets: &[String],
    sectors: &BTreeMap<String, String>,
) -> Vec<BTreeMap<String, usize>> {
    let mut out = vec![BTreeMap::new(); partition.n_communities];
    for (asset, &c) in assets.iter().zip(&partition.assignment) {
        let sector = sectors
            .get(asset)
            .cloned()
            .unwrap_or_else(|| "unknown".into());
        *out[c].entry(sector).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{decompose_panel, DecomposeOptions};
    use crate::synthetic::{generate_synthetic, Block};

    fn two_block_b(n1: usize, n2: usize) -> DMatrix<f64> {
        let n = n1 + n2;
        DMatrix::from_fn(n, n, |i, j| {
            let same = (i < n1) == (j < n1);
            if same {
                0.5 + 0.05 * ((i + j) % 3) as f64
            } else {
                -0.2 - 0.01 * ((i * j) % 4) as f64
            }
        })
    }

    #[test]
    fn modularity_extremes() {
        let b = two_block_b(3, 3);
        let ctx = ModularityContext::new(b.clone(), 10.0).unwrap();
        let singletons: Vec<usize> = (0..6).collect();
        assert!((modularity_of(&ctx, &singletons).unwrap() - b.trace() / 10.0).abs() < 1e-15);
        assert!((modularity_of(&ctx, &[0; 6]).unwrap() - b.sum() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn wcm_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = wcm_null(&w).unwrap();
        assert!((e[(0, 1)] - 0.5).abs() < 1e-15);

        // 4-cycle: every strength is 2, 2W = 8
        let ring = DMatrix::from_fn(4, 4, |i, j| {
            if (i + 1) % 4 == j || (j + 1) % 4 == i {
                1.0
            } else {
                0.0
            }
        });
        let e = wcm_null(&ring).unwrap();
        assert!(e.iter().all(|v| (v - 0.5).abs() < 1e-15));
        for (row_e, row_w) in e.row_iter().zip(ring.row_iter()) {
            assert!((row_e.sum() - row_w.sum()).abs() < 1e-12);
        }
        assert!(matches!(
            wcm_null(&DMatrix::zeros(3, 3)),
            Err(Error::ZeroTotalWeight)
        ));
    }

    #[test]
    fn canonical_labels_sort_by_size() {
        assert_eq!(
            canonical_labels(&[7, 3, 3, 9, 3, 7]),
            vec![1, 0, 0, 2, 0, 1]
        );
        assert_eq!(canonical_labels(&[5, 4]), vec![0, 1]);
    }

    #[test]
    fn two_blocks_recovered_for_every_seed() {
        let ctx = ModularityContext::new(two_block_b(4, 5), 20.0).unwrap();
        for seed in 0..10 {
            let p = detect_with_context(&ctx, &LouvainConfig { restarts: 1, seed }).unwrap();
            assert_eq!(p.assignment, vec![1, 1, 1, 1, 0, 0, 0, 0, 0]);
        }
    }

    #[test]
    fn run_trace_is_monotone() {
        let ctx = ModularityContext::new(two_block_b(6, 4), 30.0).unwrap();
        let run = louvain_run(&ctx, 17);
        assert!(run.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((run.trace.last().unwrap() - run.modularity).abs() < 1e-12);
    }

    #[test]
    fn detection_is_deterministic() {
        let blocks = [
            Block::new(10, 0.4),
            Block::new(10, 0.4),
            Block::new(10, 0.4),
        ];
        let s = generate_synthetic(30, 600, &blocks, &[0.5; 30], 1.0, 2).unwrap();
        let dec = decompose_panel(&s.panel, &DecomposeOptions::default()).unwrap();
        let cfg = LouvainConfig {
            restarts: 5,
            seed: 9,
        };
        let a = detect_communities(&dec, &cfg).unwrap();
        let b = detect_communities(&dec, &cfg).unwrap();
        assert_eq!(a, b);
        let ctx = ModularityContext::from_decomposition(&dec).unwrap();
        assert!((a.modularity - modularity_of(&ctx, &a.assignment).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn no_mesoscopic_structure_is_an_error() {
        let s = generate_synthetic(10, 500, &[Block::new(10, 0.0)], &[0.0; 10], 1.0, 1).unwrap();
        let dec = decompose_panel(&s.panel, &DecomposeOptions::default()).unwrap();
        if dec.indices_g.is_empty() {
            assert!(matches!(
                detect_communities(&dec, &LouvainConfig::default()),
                Err(Error::NoMesoscopicStructure)
            ));
        }
    }

    #[test]
    fn ari_and_nmi_examples() {
        let a = [0, 0, 1, 1, 2, 2];
        let relabeled = [2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert!((adjusted_rand_index(&a, &relabeled).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalized_mutual_information(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
        // hand value for a 2x2 split against its half-swap
        let x = [0, 0, 0, 1, 1, 1];
        let y = [0, 0, 1, 1, 1, 0];
        // contingency [[2,1],[1,2]]: index 2, row/col sums 6, total 15, expected 2.4, max 6
        let expected = (2.0 - 2.4) / (6.0 - 2.4);
        assert!((adjusted_rand_index(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            adjusted_rand_index(&x, &y[..5]),
            Err(Error::MismatchedPartitions)
        ));
    }

    #[test]
    fn stability_report_shape() {
        let p = Partition {
            assignment: vec![0, 0, 1],
            n_communities: 2,
            modularity: 0.0,
            runs: 1,
            seed: 0,
        };
        let mut q = p.clone();
        q.assignment = vec![1, 1, 0];
        let r = partition_stability(&[p, q]).unwrap();
        assert_eq!(r.ari[0][1], 1.0);
        assert_eq!(r.ari.len(), 2);
    }
}
