//! Synthetic counts drawn from the Dirichlet-multinomial mixture.
//!
//! Each cell gets its own ChaCha stream keyed by (seed, cell index), so a
//! simulated matrix does not depend on how cells are scheduled.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{default_ids, SparseCountMatrix};
use crate::polya::AlphaVector;
use crate::seed::{rng_for, SeededRng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_clusters: usize,
    pub n_genes: usize,
    pub n_cells: usize,
    pub cluster_proportions: Vec<f64>,
    pub alphas: Vec<AlphaVector>,
    /// UMI total given to every cell.
    pub depth: u32,
    /// Genes on which the cluster α vectors differ (descriptive).
    pub n_informative_genes: usize,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_genes == 0 || self.n_cells == 0 {
            return Err(Error::invalid("K, G and C must all be positive"));
        }
        if self.depth == 0 {
            return Err(Error::invalid("depth must be positive"));
        }
        if self.alphas.len() != self.n_clusters || self.cluster_proportions.len() != self.n_clusters
        {
            return Err(Error::DimensionMismatch(format!(
                "K = {} but {} alpha vectors and {} proportions",
                self.n_clusters,
                self.alphas.len(),
                self.cluster_proportions.len()
            )));
        }
        if self.alphas.iter().any(|a| a.len() != self.n_genes) {
            return Err(Error::DimensionMismatch(format!(
                "every alpha vector must have G = {} entries",
                self.n_genes
            )));
        }
        if self
            .cluster_proportions
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.cluster_proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("cluster proportions must form a probability vector"));
        }
        if self.n_informative_genes > self.n_genes {
            return Err(Error::invalid("more informative genes than genes"));
        }
        Ok(())
    }
}

/// A simulated matrix with its ground truth.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub matrix: SparseCountMatrix,
    pub labels: Vec<usize>,
    /// Per-cell Dirichlet draws p_j (C × G).
    pub proportions: Vec<Vec<f64>>,
}

/// Dirichlet draw via normalized Gamma(α_i, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &AlphaVector, rng: &mut R) -> Vec<f64> {
    let mut p: Vec<f64> = alpha
        .values()
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("alpha is positive").sample(rng))
        .collect();
    let s: f64 = p.iter().sum();
    if s > 0.0 && s.is_finite() {
        p.iter_mut().for_each(|v| *v /= s);
    } else {
        // Every Gamma draw underflowed (all α tiny): put the mass on the largest α.
        let top = alpha
            .values()
            .iter()
            .enumerate()
            .fold(0, |b, (i, &a)| if a > alpha.values()[b] { i } else { b });
        p.iter_mut().for_each(|v| *v = 0.0);
        p[top] = 1.0;
    }
    p
}

/// Multinomial(n, p) by sequential conditional binomials. Returns
/// `(category, count)` pairs with nonzero counts.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u32, p: &[f64], rng: &mut R) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    let mut left = u64::from(n);
    let mut mass: f64 = p.iter().sum();
    for (i, &pi) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        let x = if i + 1 == p.len() {
            left
        } else if pi <= 0.0 {
            0
        } else {
            let q = (pi / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("q in [0, 1]").sample(rng)
        };
        mass -= pi;
        left -= x;
        if x > 0 {
            out.push((i, x as u32));
        }
    }
    out
}

fn draw_label(rng: &mut SeededRng, proportions: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in proportions.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: take the last populated cluster.
    proportions.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Label, proportion draw and sparse counts of one simulated cell.
type SimCell = (usize, Vec<f64>, Vec<(usize, u32)>);

pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let cells: Vec<SimCell> = (0..spec.n_cells)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_for(spec.seed, Stream::SimCell, j as u64);
            let z = draw_label(&mut rng, &spec.cluster_proportions);
            let p = sample_dirichlet(&spec.alphas[z], &mut rng);
            let x = sample_multinomial(spec.depth, &p, &mut rng);
            (z, p, x)
        })
        .collect();
    let mut triplets = Vec::with_capacity(cells.iter().map(|c| c.2.len()).sum());
    let mut labels = Vec::with_capacity(spec.n_cells);
    let mut proportions = Vec::with_capacity(spec.n_cells);
    for (j, (z, p, x)) in cells.into_iter().enumerate() {
        triplets.extend(x.into_iter().map(|(i, c)| (i, j, c)));
        labels.push(z);
        proportions.push(p);
    }
    let matrix = SparseCountMatrix::from_triplets(
        default_ids("gene", spec.n_genes),
        default_ids("cell", spec.n_cells),
        triplets,
    )?;
    Ok(Simulation {
        matrix,
        labels,
        proportions,
    })
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// ‖α₁ − α₂‖₁ / √(var(α₁) + var(α₂)) with entrywise sample variances.
///
/// Returns `f64::INFINITY` when both vectors are constant but differ.
pub fn compute_snr(a1: &AlphaVector, a2: &AlphaVector) -> Result<f64> {
    if a1.len() != a2.len() {
        return Err(Error::DimensionMismatch(format!(
            "alpha vectors have lengths {} and {}",
            a1.len(),
            a2.len()
        )));
    }
    if a1.len() < 2 {
        return Err(Error::invalid("SNR needs at least two genes"));
    }
    let l1: f64 = a1
        .values()
        .iter()
        .zip(a2.values())
        .map(|(x, y)| (x - y).abs())
        .sum();
    let spread = (sample_variance(a1.values()) + sample_variance(a2.values())).sqrt();
    if l1 == 0.0 {
        Ok(0.0)
    } else if spread == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(l1 / spread)
    }
}

/// Minimum pairwise SNR over clusters; 0 for a single cluster.
pub fn min_pairwise_snr(alphas: &[AlphaVector]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for a in 0..alphas.len() {
        for b in a + 1..alphas.len() {
            best = best.min(compute_snr(&alphas[a], &alphas[b])?);
        }
    }
    Ok(if alphas.len() < 2 { 0.0 } else { best })
}

/// Scenario axes varied one at a time around a template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Snr,
    NClusters,
    NGenes,
    NCells,
    Depth,
    InformativeFraction,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "snr" => Axis::Snr,
            "n_clusters" | "k" => Axis::NClusters,
            "n_genes" | "g" => Axis::NGenes,
            "n_cells" | "c" => Axis::NCells,
            "depth" | "t" => Axis::Depth,
            "informative_fraction" => Axis::InformativeFraction,
            _ => return Err(Error::invalid(format!("unknown scenario axis '{s}'"))),
        })
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Snr => "snr",
            Axis::NClusters => "n_clusters",
            Axis::NGenes => "n_genes",
            Axis::NCells => "n_cells",
            Axis::Depth => "depth",
            Axis::InformativeFraction => "informative_fraction",
        })
    }
}

/// Parameterized scenario family.
///
/// Baseline α_i = `base_alpha` · (1 + `baseline_spread` · r_i) where r_i runs
/// linearly from −1 to 1 across genes. The first
/// `round(informative_fraction · G)` genes are split into K contiguous
/// blocks; cluster k multiplies its own block by (1 + `effect`). All other
/// genes share the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub n_clusters: usize,
    pub n_genes: usize,
    pub n_cells: usize,
    pub depth: u32,
    pub base_alpha: f64,
    pub baseline_spread: f64,
    pub informative_fraction: f64,
    pub effect: f64,
    pub seed: u64,
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        Self {
            n_clusters: 3,
            n_genes: 100,
            n_cells: 600,
            depth: 1000,
            base_alpha: 10.0,
            baseline_spread: 0.5,
            informative_fraction: 0.3,
            effect: 1.0,
            seed: 1,
        }
    }
}

impl ScenarioTemplate {
    pub fn to_spec(&self) -> Result<SimulationSpec> {
        let (k, g) = (self.n_clusters, self.n_genes);
        if k == 0 || g == 0 {
            return Err(Error::invalid("scenario needs K >= 1 and G >= 1"));
        }
        if !(self.base_alpha > 0.0 && self.base_alpha.is_finite()) {
            return Err(Error::invalid("base_alpha must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_spread) {
            return Err(Error::invalid("baseline_spread must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.informative_fraction) {
            return Err(Error::invalid("informative_fraction must lie in [0, 1]"));
        }
        if !(self.effect >= 0.0 && self.effect.is_finite()) {
            return Err(Error::invalid("effect must be non-negative"));
        }
        let baseline: Vec<f64> = (0..g)
            .map(|i| {
                let r = if g == 1 {
                    0.0
                } else {
                    2.0 * i as f64 / (g - 1) as f64 - 1.0
                };
                self.base_alpha * (1.0 + self.baseline_spread * r)
            })
            .collect();
        let n_inf = (self.informative_fraction * g as f64).round() as usize;
        let alphas = (0..k)
            .map(|c| {
                let mut a = baseline.clone();
                let (lo, hi) = (c * n_inf / k, (c + 1) * n_inf / k);
                a[lo..hi].iter_mut().for_each(|v| *v *= 1.0 + self.effect);
                AlphaVector::new(a)
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SimulationSpec {
            n_clusters: k,
            n_genes: g,
            n_cells: self.n_cells,
            cluster_proportions: vec![1.0 / k as f64; k],
            alphas,
            depth: self.depth,
            n_informative_genes: if self.effect > 0.0 && k > 1 { n_inf } else { 0 },
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Copy of the template with one axis set to `level`. For [`Axis::Snr`]
    /// the level is the perturbation `effect`.
    pub fn with_level(&self, axis: Axis, level: f64) -> Result<Self> {
        let count = |what: &str| -> Result<usize> {
            if level >= 1.0 && level.fract() == 0.0 && level <= u32::MAX as f64 {
                Ok(level as usize)
            } else {
                Err(Error::invalid(format!("{what} level must be a positive integer, got {level}")))
            }
        };
        let mut t = self.clone();
        match axis {
            Axis::Snr => t.effect = level,
            Axis::NClusters => t.n_clusters = count("n_clusters")?,
            Axis::NGenes => t.n_genes = count("n_genes")?,
            Axis::NCells => t.n_cells = count("n_cells")?,
            Axis::Depth => t.depth = count("depth")? as u32,
            Axis::InformativeFraction => t.informative_fraction = level,
        }
        Ok(t)
    }
}

/// Spec from the default template with one axis set to `level`.
pub fn make_scenario(axis: Axis, level: f64) -> Result<SimulationSpec> {
    ScenarioTemplate::default().with_level(axis, level)?.to_spec()
}
