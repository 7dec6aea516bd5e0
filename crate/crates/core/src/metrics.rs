//! External clustering metrics: NMI, ARI, Hungarian-aligned ACC and FMI.
//!
//! Everything is computed in `f64` from integer contingency counts.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcError};

/// Counts `n_ij` of samples in predicted cluster `i` and true class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq: Vec<usize> = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let ids = labels
        .iter()
        .map(|l| uniq.binary_search(l).unwrap())
        .collect();
    (ids, uniq.len())
}

fn check_len(gt: &[usize], pred: &[usize]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(UmcError::DimMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

impl Contingency {
    /// Built over the distinct labels actually present, in ascending order.
    pub fn new(gt: &[usize], pred: &[usize]) -> Result<Self> {
        check_len(gt, pred)?;
        let (g, ng) = dense_ids(gt);
        let (p, np) = dense_ids(pred);
        Ok(Self::from_ids(&g, &p, np, ng))
    }

    fn from_ids(gt: &[usize], pred: &[usize], rows: usize, cols: usize) -> Self {
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&g, &p) in gt.iter().zip(pred) {
            counts[p][g] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols)
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Self {
            counts,
            row_sums,
            col_sums,
            total: gt.len() as u64,
        }
    }

    /// Pairs in the same cluster and the same class, then pairs sharing a
    /// predicted cluster, then pairs sharing a true class.
    fn pair_counts(&self) -> (u128, u128, u128) {
        let both = self.counts.iter().flatten().map(|&c| choose2(c)).sum();
        let pred = self.row_sums.iter().map(|&c| choose2(c)).sum();
        let truth = self.col_sums.iter().map(|&c| choose2(c)).sum();
        (both, pred, truth)
    }
}

fn choose2(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
pub fn nmi(gt: &[usize], pred: &[usize]) -> Result<f64> {
    let c = Contingency::new(gt, pred)?;
    if c.total == 0 {
        return Err(UmcError::TooFewSamples(0));
    }
    let n = c.total as f64;
    let hp = entropy(&c.row_sums, n);
    let hg = entropy(&c.col_sums, n);
    if hp == 0.0 && hg == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || hg == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.row_sums[i] as f64 * c.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (0.5 * (hp + hg))).clamp(0.0, 1.0))
}

pub fn ari(gt: &[usize], pred: &[usize]) -> Result<f64> {
    let c = Contingency::new(gt, pred)?;
    if c.total < 2 {
        return Err(UmcError::TooFewSamples(c.total as usize));
    }
    // ARI = (2·index·P − 2ab) / ((a+b)·P − 2ab) in exact integers, P = C(n,2)
    let (index, a, b) = c.pair_counts();
    let pairs = choose2(c.total) as i128;
    let (index, a, b) = (index as i128, a as i128, b as i128);
    let num = 2 * index * pairs - 2 * a * b;
    let denom = (a + b) * pairs - 2 * a * b;
    if denom == 0 {
        // both partitions trivial (all singletons or one block) and equal
        return Ok(1.0);
    }
    Ok(num as f64 / denom as f64)
}

pub fn fmi(gt: &[usize], pred: &[usize]) -> Result<f64> {
    let c = Contingency::new(gt, pred)?;
    if c.total < 2 {
        return Err(UmcError::TooFewSamples(c.total as usize));
    }
    let (tp, pred_pairs, truth_pairs) = c.pair_counts();
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(tp as f64 / ((pred_pairs as f64) * (truth_pairs as f64)).sqrt())
}

fn check_range(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(UmcError::BadK { label, k }),
        None => Ok(()),
    }
}

/// Best one-to-one cluster→class accuracy; `mapping[cluster] = class`.
pub fn acc(gt: &[usize], pred: &[usize], k: usize) -> Result<(f64, Vec<usize>)> {
    check_len(gt, pred)?;
    if k == 0 {
        return Err(UmcError::BadK { label: 0, k });
    }
    check_range(gt, k)?;
    check_range(pred, k)?;
    if gt.is_empty() {
        return Err(UmcError::TooFewSamples(0));
    }
    let c = Contingency::from_ids(gt, pred, k, k);
    let weights = Matrix::from_rows(
        c.counts
            .iter()
            .map(|r| r.iter().map(|&v| v as i64).collect::<Vec<_>>()),
    )
    .expect("square contingency");
    let (matched, mapping) = kuhn_munkres(&weights);
    Ok((matched as f64 / gt.len() as f64, mapping))
}

/// `k × k` counts with row `mapping[pred]` and column `gt`, so the diagonal
/// holds correctly assigned samples.
pub fn confusion(gt: &[usize], pred: &[usize], mapping: &[usize]) -> Vec<Vec<u64>> {
    let k = mapping.len();
    let mut m = vec![vec![0u64; k]; k];
    for (&g, &p) in gt.iter().zip(pred) {
        m[mapping[p]][g] += 1;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
    pub fmi: f64,
    pub mapping: Vec<usize>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    pub fn evaluate(gt: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        let (acc, mapping) = acc(gt, pred, k)?;
        Ok(Self {
            nmi: nmi(gt, pred)?,
            ari: ari(gt, pred)?,
            acc,
            fmi: fmi(gt, pred)?,
            confusion: confusion(gt, pred, &mapping),
            mapping,
        })
    }

    /// Mean of the four scores.
    pub fn average(&self) -> f64 {
        (self.nmi + self.ari + self.acc + self.fmi) / 4.0
    }
}

/// Score ×100 rounded to two decimals, as reported in tables.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}
