//! Starting points for E-M: preliminary labels from K-means or random
//! assignment, then per-cluster concentrations from a moment estimator.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::DirichletMixtureModel;
use crate::error::{Error, Result};
use crate::matrix::SparseCountMatrix;
use crate::polya::{AlphaVector, ALPHA_FLOOR};
use crate::seed::{derive_seed, rng_for, SeededRng, Stream};

/// Ratio arguments at or below this are treated as unusable.
const USABLE_FLOOR: f64 = 1e-8;
const THETA_MIN: f64 = 1e-8;
const RANDOM_LABEL_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    KMeans,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaEstimator {
    Ronning,
    WeirHill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitStrategy {
    pub label_source: LabelSource,
    pub alpha_estimator: AlphaEstimator,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl InitStrategy {
    pub fn new(label_source: LabelSource, alpha_estimator: AlphaEstimator) -> Self {
        Self {
            label_source,
            alpha_estimator,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
        }
    }

    /// The four label/estimator combinations: KR, KW, RR, RW.
    pub fn all() -> [InitStrategy; 4] {
        ["kr", "kw", "rr", "rw"].map(|s| s.parse().unwrap())
    }
}

impl Default for InitStrategy {
    fn default() -> Self {
        Self::new(LabelSource::KMeans, AlphaEstimator::Ronning)
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (l, a) = match s.to_ascii_lowercase().as_str() {
            "kr" => (LabelSource::KMeans, AlphaEstimator::Ronning),
            "kw" => (LabelSource::KMeans, AlphaEstimator::WeirHill),
            "rr" => (LabelSource::Random, AlphaEstimator::Ronning),
            "rw" => (LabelSource::Random, AlphaEstimator::WeirHill),
            other => {
                return Err(Error::invalid(format!(
                    "unknown init strategy `{other}` (expected kr, kw, rr or rw)"
                )))
            }
        };
        Ok(Self::new(l, a))
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = match self.label_source {
            LabelSource::KMeans => 'k',
            LabelSource::Random => 'r',
        };
        let a = match self.alpha_estimator {
            AlphaEstimator::Ronning => 'r',
            AlphaEstimator::WeirHill => 'w',
        };
        write!(f, "{l}{a}")
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cluster count {k} must be in 1..={n} (number of cells)"
        )));
    }
    Ok(())
}

/// Per-cell proportion vectors x_j / T_j with their squared norms.
struct Proportions<'a> {
    m: &'a SparseCountMatrix,
    scale: Vec<f64>,
    sq_norm: Vec<f64>,
}

impl<'a> Proportions<'a> {
    fn new(m: &'a SparseCountMatrix) -> Self {
        let scale: Vec<f64> = m
            .cell_totals()
            .iter()
            .map(|&t| if t > 0 { 1.0 / t as f64 } else { 0.0 })
            .collect();
        let sq_norm = (0..m.n_cells())
            .map(|j| {
                m.cell(j)
                    .counts
                    .iter()
                    .map(|&x| (f64::from(x) * scale[j]).powi(2))
                    .sum()
            })
            .collect();
        Self { m, scale, sq_norm }
    }

    fn dot(&self, j: usize, center: &[f64]) -> f64 {
        self.m
            .cell(j)
            .iter()
            .map(|(g, x)| f64::from(x) * center[g])
            .sum::<f64>()
            * self.scale[j]
    }

    fn sq_dist(&self, j: usize, center: &[f64], center_sq: f64) -> f64 {
        (self.sq_norm[j] - 2.0 * self.dot(j, center) + center_sq).max(0.0)
    }

    fn dense(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.m.n_genes()];
        for (g, x) in self.m.cell(j).iter() {
            v[g] = f64::from(x) * self.scale[j];
        }
        v
    }
}

struct KMeansRun {
    labels: Vec<usize>,
    wcss: f64,
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn plus_plus_centers(p: &Proportions<'_>, k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = p.m.n_cells();
    let mut centers = vec![p.dense(rng.random_range(0..n))];
    let mut best: Vec<f64> = {
        let c_sq = sq(&centers[0]);
        (0..n).map(|j| p.sq_dist(j, &centers[0], c_sq)).collect()
    };
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (j, d) in best.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = p.dense(pick);
        let c_sq = sq(&c);
        best.par_iter_mut()
            .enumerate()
            .for_each(|(j, b)| *b = b.min(p.sq_dist(j, &c, c_sq)));
        centers.push(c);
    }
    centers
}

fn assign(p: &Proportions<'_>, centers: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let c_sq: Vec<f64> = centers.iter().map(|c| sq(c)).collect();
    (0..p.m.n_cells())
        .into_par_iter()
        .map(|j| {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = p.sq_dist(j, center, c_sq[c]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn lloyd(p: &Proportions<'_>, k: usize, max_iter: usize, rng: &mut SeededRng) -> KMeansRun {
    let g = p.m.n_genes();
    let mut centers = plus_plus_centers(p, k, rng);
    let mut assigned = assign(p, &centers);
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; g]; k];
        let mut sizes = vec![0usize; k];
        for (j, &(c, _)) in assigned.iter().enumerate() {
            sizes[c] += 1;
            for (gi, x) in p.m.cell(j).iter() {
                sums[c][gi] += f64::from(x) * p.scale[j];
            }
        }
        // An emptied cluster takes over the point farthest from its center.
        for c in 0..k {
            if sizes[c] == 0 {
                let (far, _) = assigned
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| sizes[a.0] > 1)
                    .fold((usize::MAX, -1.0), |acc, (j, a)| if a.1 > acc.1 { (j, a.1) } else { acc });
                if far != usize::MAX {
                    let old = assigned[far].0;
                    sizes[old] -= 1;
                    for (gi, x) in p.m.cell(far).iter() {
                        sums[old][gi] -= f64::from(x) * p.scale[far];
                    }
                    sums[c] = p.dense(far);
                    sizes[c] = 1;
                    assigned[far] = (c, 0.0);
                }
            }
        }
        for c in 0..k {
            let n = sizes[c].max(1) as f64;
            sums[c].iter_mut().for_each(|v| *v /= n);
        }
        centers = sums;
        let next = assign(p, &centers);
        let changed = next.iter().zip(&assigned).any(|(a, b)| a.0 != b.0);
        assigned = next;
        if !changed {
            break;
        }
    }
    // Final repair so every cluster is occupied.
    let mut labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
    ensure_occupied(&mut labels, k, &assigned.iter().map(|a| a.1).collect::<Vec<_>>());
    let wcss = {
        let mut sums = vec![vec![0.0; g]; k];
        let mut sizes = vec![0usize; k];
        for (j, &c) in labels.iter().enumerate() {
            sizes[c] += 1;
            for (gi, x) in p.m.cell(j).iter() {
                sums[c][gi] += f64::from(x) * p.scale[j];
            }
        }
        for c in 0..k {
            let n = sizes[c].max(1) as f64;
            sums[c].iter_mut().for_each(|v| *v /= n);
        }
        let c_sq: Vec<f64> = sums.iter().map(|c| sq(c)).collect();
        labels
            .iter()
            .enumerate()
            .map(|(j, &c)| p.sq_dist(j, &sums[c], c_sq[c]))
            .sum()
    };
    KMeansRun { labels, wcss }
}

/// Moves far-off members of oversized clusters into empty ones.
fn ensure_occupied(labels: &mut [usize], k: usize, dist: &[f64]) {
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&c| sizes[c] += 1);
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&j| sizes[labels[j]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        if let Some(j) = far {
            sizes[labels[j]] -= 1;
            labels[j] = c;
            sizes[c] = 1;
        }
    }
}

/// K-means (k-means++ seeding, Lloyd iterations) on per-cell proportion
/// vectors, keeping the best of `restarts` runs by within-cluster sum of
/// squares. Every cluster in the result is non-empty.
pub fn kmeans_labels(
    m: &SparseCountMatrix,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_k(k, m.n_cells())?;
    if k == 1 {
        return Ok(vec![0; m.n_cells()]);
    }
    let p = Proportions::new(m);
    let runs: Vec<KMeansRun> = (0..restarts.max(1))
        .map(|r| lloyd(&p, k, max_iter, &mut rng_for(seed, Stream::KMeans, r as u64)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.wcss < a.wcss { b } else { a })
        .unwrap();
    Ok(best.labels)
}

/// Uniform random labels with every cluster occupied.
pub fn random_labels(n_cells: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(k, n_cells)?;
    let mut rng = rng_for(seed, Stream::Labels, 0);
    let mut labels = vec![0; n_cells];
    for _ in 0..RANDOM_LABEL_RETRIES {
        labels.iter_mut().for_each(|l| *l = rng.random_range(0..k));
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().all(|&s| s) {
            return Ok(labels);
        }
    }
    // Retries exhausted: hand each empty cluster a random cell taken from a
    // cluster that can spare one.
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        while sizes[labels[order[cursor]]] <= 1 {
            cursor += 1;
        }
        let j = order[cursor];
        sizes[labels[j]] -= 1;
        labels[j] = c;
        sizes[c] = 1;
        cursor += 1;
    }
    Ok(labels)
}

/// Per-gene mean and sample variance of observed proportions over members.
pub(crate) struct ProportionMoments {
    pub(crate) mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
    mean_depth: f64,
}

pub(crate) fn proportion_moments(m: &SparseCountMatrix, members: &[usize]) -> Result<ProportionMoments> {
    if members.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 member cells, got {}",
            members.len()
        )));
    }
    let g = m.n_genes();
    let n = members.len() as f64;
    let mut sum = vec![0.0; g];
    let mut depth = 0.0;
    for &j in members {
        let t = *m
            .cell_totals()
            .get(j)
            .ok_or_else(|| Error::invalid(format!("cell index {j} out of range")))?;
        if t == 0 {
            return Err(Error::invalid(format!("member cell {j} has no counts")));
        }
        depth += t as f64;
        for (i, x) in m.cell(j).iter() {
            sum[i] += f64::from(x) / t as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut ss = vec![0.0; g];
    let mut nz = vec![0usize; g];
    for &j in members {
        let t = m.cell_totals()[j] as f64;
        for (i, x) in m.cell(j).iter() {
            let d = f64::from(x) / t - mean[i];
            ss[i] += d * d;
            nz[i] += 1;
        }
    }
    let var = (0..g)
        .map(|i| {
            let v = (ss[i] + (members.len() - nz[i]) as f64 * mean[i] * mean[i]) / (n - 1.0);
            // Identical proportions leave only rounding residue.
            if v <= 1e-12 * mean[i] * mean[i] {
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(ProportionMoments {
        mean,
        var,
        mean_depth: depth / n,
    })
}

fn scaled_alpha(mean: &[f64], precision: f64) -> Result<AlphaVector> {
    AlphaVector::from_estimate(mean.iter().map(|m| m * precision).collect(), ALPHA_FLOOR)
}

/// Ronning's moment estimate: log|α| is the average over usable genes of
/// log(m_i(1 − m_i)/v_i − 1), and α_i = m_i |α|.
///
/// A gene is usable when 0 < m_i < 1, v_i > 0 and the ratio argument is
/// above 1e-8.
pub fn ronning_alpha(m: &SparseCountMatrix, members: &[usize]) -> Result<AlphaVector> {
    let mo = proportion_moments(m, members)?;
    let logs: Vec<f64> = mo
        .mean
        .iter()
        .zip(&mo.var)
        .filter(|(&mi, &vi)| mi > 0.0 && mi < 1.0 && vi > 0.0)
        .map(|(&mi, &vi)| mi * (1.0 - mi) / vi - 1.0)
        .filter(|&arg| arg > USABLE_FLOOR)
        .map(f64::ln)
        .collect();
    if logs.is_empty() {
        return Err(Error::Degenerate(
            "no gene with usable proportion variance".into(),
        ));
    }
    let precision = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    scaled_alpha(&mo.mean, precision)
}

/// Moment estimate through the intraclass correlation θ with the
/// multinomial sampling variance removed:
/// θ_i = (v_i − m_i(1−m_i)/T̄) / (m_i(1−m_i)(1 − 1/T̄)), averaged over usable
/// genes and clamped into (1e-8, 1 − 1e-8); |α| = (1 − θ)/θ.
pub fn weir_hill_alpha(m: &SparseCountMatrix, members: &[usize]) -> Result<AlphaVector> {
    let mo = proportion_moments(m, members)?;
    let t = mo.mean_depth;
    if t <= 1.0 {
        return Err(Error::Degenerate(
            "mean depth must exceed one count per cell".into(),
        ));
    }
    let thetas: Vec<f64> = mo
        .mean
        .iter()
        .zip(&mo.var)
        .filter(|(&mi, &vi)| mi > 0.0 && mi < 1.0 && vi > 0.0)
        .map(|(&mi, &vi)| {
            let b = mi * (1.0 - mi);
            (vi - b / t) / (b * (1.0 - 1.0 / t))
        })
        .collect();
    if thetas.is_empty() {
        return Err(Error::Degenerate(
            "no gene with usable proportion variance".into(),
        ));
    }
    let theta = (thetas.iter().sum::<f64>() / thetas.len() as f64).clamp(THETA_MIN, 1.0 - THETA_MIN);
    scaled_alpha(&mo.mean, (1.0 - theta) / theta)
}

fn estimate(m: &SparseCountMatrix, members: &[usize], est: AlphaEstimator) -> Result<AlphaVector> {
    match est {
        AlphaEstimator::Ronning => ronning_alpha(m, members),
        AlphaEstimator::WeirHill => weir_hill_alpha(m, members),
    }
}

/// Preliminary labels for a strategy.
pub fn initial_labels(
    m: &SparseCountMatrix,
    k: usize,
    strategy: &InitStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    match strategy.label_source {
        LabelSource::KMeans => kmeans_labels(
            m,
            k,
            strategy.kmeans_restarts,
            strategy.kmeans_max_iter,
            derive_seed(seed, Stream::KMeans, u64::MAX),
        ),
        LabelSource::Random => random_labels(m.n_cells(), k, seed),
    }
}

/// Builds a model from preliminary labels and per-cluster estimates.
///
/// A cluster whose own estimate is unavailable (fewer than two members, or
/// degenerate moments) falls back to the whole-matrix estimate.
pub fn model_from_labels(
    m: &SparseCountMatrix,
    labels: &[usize],
    k: usize,
    estimator: AlphaEstimator,
) -> Result<DirichletMixtureModel> {
    if labels.len() != m.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} cells",
            labels.len(),
            m.n_cells()
        )));
    }
    let mut members = vec![Vec::new(); k];
    for (j, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for K = {k}")));
        }
        members[l].push(j);
    }
    let mut whole: Option<AlphaVector> = None;
    let mut alphas = Vec::with_capacity(k);
    for (c, cells) in members.iter().enumerate() {
        let own = if cells.len() >= 2 {
            estimate(m, cells, estimator)
        } else {
            Err(Error::Degenerate(format!("{} member cells", cells.len())))
        };
        match own {
            Ok(a) => alphas.push(a),
            Err(e) => {
                warn!("cluster {c}: {e}; using the whole-matrix estimate");
                if whole.is_none() {
                    let all: Vec<usize> = (0..m.n_cells()).collect();
                    whole = Some(estimate(m, &all, estimator)?);
                }
                alphas.push(whole.clone().unwrap());
            }
        }
    }
    let n = m.n_cells() as f64;
    let pi = members.iter().map(|c| c.len() as f64 / n).collect();
    DirichletMixtureModel::new(alphas, pi)
}

pub fn build_initial_model(
    m: &SparseCountMatrix,
    k: usize,
    strategy: &InitStrategy,
    seed: u64,
) -> Result<DirichletMixtureModel> {
    let labels = initial_labels(m, k, strategy, seed)?;
    model_from_labels(m, &labels, k, strategy.alpha_estimator)
}
