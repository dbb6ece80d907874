//! Partition agreement and posterior uncertainty summaries.

use crate::em::{FitResult, ResponsibilityMatrix};
use crate::error::{Error, Result};

/// Co-occurrence counts between two labelings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "label vectors have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        let r = a.iter().max().map_or(0, |m| m + 1);
        let s = b.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; s]; r];
        for (&x, &y) in a.iter().zip(b) {
            counts[x][y] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..s).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: a.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

fn pairs(n: u64) -> u128 {
    let n = u128::from(n);
    n * n.saturating_sub(1) / 2
}

/// Adjusted Rand index from the contingency table.
///
/// Two single-cluster partitions (zero denominator) score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.total < 2 {
        return Err(Error::invalid("ARI needs at least two items"));
    }
    let sum_ij: u128 = t.counts.iter().flatten().map(|&n| pairs(n)).sum();
    let sum_a: u128 = t.row_sums.iter().map(|&n| pairs(n)).sum();
    let sum_b: u128 = t.col_sums.iter().map(|&n| pairs(n)).sum();
    let n_pairs = pairs(t.total);

    // ARI = (N·Σij − Σa·Σb) / (N·(Σa+Σb)/2 − Σa·Σb); doubled to stay integral.
    let exact = || -> Option<(i128, i128)> {
        let n = i128::try_from(n_pairs).ok()?;
        let (ij, sa, sb) = (
            i128::try_from(sum_ij).ok()?,
            i128::try_from(sum_a).ok()?,
            i128::try_from(sum_b).ok()?,
        );
        let prod = sa.checked_mul(sb)?;
        let num = n.checked_mul(ij)?.checked_sub(prod)?.checked_mul(2)?;
        let den = n.checked_mul(sa.checked_add(sb)?)?.checked_sub(prod.checked_mul(2)?)?;
        Some((num, den))
    };
    match exact() {
        Some((_, 0)) => Ok(1.0),
        Some((num, den)) => Ok(num as f64 / den as f64),
        None => {
            let (ij, sa, sb, n) = (sum_ij as f64, sum_a as f64, sum_b as f64, n_pairs as f64);
            let expected = sa * sb / n;
            let den = 0.5 * (sa + sb) - expected;
            if den == 0.0 {
                Ok(1.0)
            } else {
                Ok((ij - expected) / den)
            }
        }
    }
}

/// Cells whose largest posterior probability is strictly below `threshold`.
pub fn vague_cells(delta: &ResponsibilityMatrix, threshold: f64) -> Vec<usize> {
    delta
        .rows()
        .enumerate()
        .filter(|(_, r)| r.iter().copied().fold(f64::NEG_INFINITY, f64::max) < threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Sample mean and standard deviation (divisor n − 1).
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid("need at least two values for a standard deviation"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Mean and standard deviation of each run's ARI against `truth`.
pub fn ari_summary(runs: &[FitResult], truth: &[usize]) -> Result<(f64, f64)> {
    let aris = runs
        .iter()
        .map(|r| adjusted_rand_index(&r.hard_labels, truth))
        .collect::<Result<Vec<_>>>()?;
    mean_sd(&aris)
}

/// Relabeling of `estimated` cluster ids that maximizes agreement with
/// `truth`; `mapping[est] = truth_label`. Exhaustive for up to 8 clusters,
/// greedy beyond.
pub fn match_clusters(estimated: &[usize], truth: &[usize]) -> Result<Vec<usize>> {
    let t = ContingencyTable::new(estimated, truth)?;
    let r = t.counts.len();
    let s = t.col_sums.len();
    let n = r.max(s);
    let w = |i: usize, j: usize| -> u64 {
        t.counts.get(i).and_then(|row| row.get(j)).copied().unwrap_or(0)
    };
    let mut best: Vec<usize> = (0..n).collect();
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best_score = 0u64;
        let mut first = true;
        permute(&mut perm, 0, &mut |p| {
            let score: u64 = p.iter().enumerate().map(|(i, &j)| w(i, j)).sum();
            if first || score > best_score {
                best_score = score;
                best.copy_from_slice(p);
                first = false;
            }
        });
    } else {
        let mut cells: Vec<(u64, usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (w(i, j), i, j)).collect();
        cells.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut used_i = vec![false; n];
        let mut used_j = vec![false; n];
        for (_, i, j) in cells {
            if !used_i[i] && !used_j[j] {
                best[i] = j;
                used_i[i] = true;
                used_j[j] = true;
            }
        }
    }
    best.truncate(r);
    Ok(best)
}

fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, f);
        p.swap(at, i);
    }
}
