//! Goodness-of-fit views of a single cluster: per-gene Beta marginals and
//! the log-mean versus log-variance relation of observed proportions.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::init::{proportion_moments, ronning_alpha};
use crate::matrix::SparseCountMatrix;
use crate::polya::{beta_marginal_params, AlphaVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBin {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    /// Fraction of member cells whose p̂ falls in the bin.
    pub empirical_mass: f64,
    pub empirical_density: f64,
    /// Beta density at the bin center.
    pub density: f64,
    /// Beta probability of the bin.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaMarginalTable {
    pub gene: usize,
    pub shape_a: f64,
    pub shape_b: f64,
    pub n_cells: usize,
    pub bins: Vec<BetaBin>,
}

impl BetaMarginalTable {
    /// Total-variation distance between the histogram and the Beta bin masses.
    pub fn total_variation(&self) -> f64 {
        0.5 * self
            .bins
            .iter()
            .map(|b| (b.empirical_mass - b.mass).abs())
            .sum::<f64>()
    }

    /// Trapezoid integral of the density column over the bin centers.
    pub fn density_integral(&self) -> f64 {
        self.bins
            .windows(2)
            .map(|w| 0.5 * (w[0].density + w[1].density) * (w[1].center - w[0].center))
            .sum()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_lower\tbin_upper\tbin_center\tempirical_mass\tempirical_density\tbeta_density\tbeta_mass")?;
        for b in &self.bins {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                b.lower, b.upper, b.center, b.empirical_mass, b.empirical_density, b.density, b.mass
            )?;
        }
        Ok(())
    }
}

fn check_members(m: &SparseCountMatrix, members: &[usize]) -> Result<()> {
    if members.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least two member cells, got {}",
            members.len()
        )));
    }
    if let Some(&j) = members.iter().find(|&&j| j >= m.n_cells()) {
        return Err(Error::invalid(format!("cell index {j} out of range")));
    }
    if let Some(&j) = members.iter().find(|&&j| m.cell_totals()[j] == 0) {
        return Err(Error::Degenerate(format!("member cell {j} has no counts")));
    }
    Ok(())
}

/// Histogram of p̂_ij = x_ij / T_j over `members` next to the
/// Beta(α_i, |α| − α_i) marginal.
///
/// The `n_bins` equal bins span [0, u], where u is the larger of the biggest
/// observed p̂ and the Beta 0.999 quantile (at most 1). The last bin's Beta
/// mass includes the tail above u.
pub fn beta_marginal_table(
    m: &SparseCountMatrix,
    members: &[usize],
    alpha: &AlphaVector,
    gene: usize,
    n_bins: usize,
) -> Result<BetaMarginalTable> {
    check_members(m, members)?;
    if gene >= m.n_genes() || alpha.len() != m.n_genes() {
        return Err(Error::invalid(format!(
            "gene {gene} out of range or alpha length {} differs from G = {}",
            alpha.len(),
            m.n_genes()
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be positive"));
    }
    let (a, b) = beta_marginal_params(alpha, gene)?;
    let beta = Beta::new(a, b).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p_hat: Vec<f64> = members
        .iter()
        .map(|&j| f64::from(m.get(gene, j)) / m.cell_totals()[j] as f64)
        .collect();
    let upper = p_hat
        .iter()
        .copied()
        .fold(beta.inverse_cdf(0.999), f64::max)
        .min(1.0);
    let width = upper / n_bins as f64;
    let mut hist = vec![0usize; n_bins];
    for p in p_hat {
        hist[((p / width) as usize).min(n_bins - 1)] += 1;
    }
    let n = members.len() as f64;
    let bins = hist
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let lower = k as f64 * width;
            let last = k + 1 == n_bins;
            let upper = if last { upper } else { (k + 1) as f64 * width };
            let center = 0.5 * (lower + upper);
            let top = if last { 1.0 } else { beta.cdf(upper) };
            BetaBin {
                lower,
                upper,
                center,
                empirical_mass: c as f64 / n,
                empirical_density: c as f64 / (n * width),
                density: beta.pdf(center),
                mass: top - beta.cdf(lower),
            }
        })
        .collect();
    Ok(BetaMarginalTable {
        gene,
        shape_a: a,
        shape_b: b,
        n_cells: members.len(),
        bins,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanVariancePoint {
    pub gene: usize,
    pub log_mean: f64,
    pub log_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanVarianceFit {
    pub points: Vec<MeanVariancePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub reference_slope: f64,
    /// −log(|α̂| + 1).
    pub reference_intercept: f64,
    /// Moment estimate of |α| on the members.
    pub precision: f64,
}

impl MeanVarianceFit {
    pub fn write_tsv<W: Write>(&self, mut w: W, gene_ids: &[String]) -> std::io::Result<()> {
        writeln!(w, "gene\tlog_mean\tlog_variance")?;
        for p in &self.points {
            let id = gene_ids.get(p.gene).map_or("?", String::as_str);
            writeln!(w, "{id}\t{}\t{}", p.log_mean, p.log_variance)?;
        }
        Ok(())
    }
}

/// Fewest genes the regression is run on.
pub const MIN_REGRESSION_GENES: usize = 10;

/// OLS of log v̂_i on log m̂_i for the `⌈top_fraction · G⌉` genes with
/// the largest proportion standard deviation among `members`. Genes with a
/// zero mean or variance are dropped after the cut.
pub fn mean_variance_regression(
    m: &SparseCountMatrix,
    members: &[usize],
    top_fraction: f64,
) -> Result<MeanVarianceFit> {
    check_members(m, members)?;
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::invalid("top_fraction must lie in (0, 1]"));
    }
    let mo = proportion_moments(m, members)?;
    let g = m.n_genes();
    let n_top = ((top_fraction * g as f64).ceil() as usize).clamp(1, g);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| mo.var[b].total_cmp(&mo.var[a]).then(a.cmp(&b)));
    order.truncate(n_top);
    order.sort_unstable();
    let points: Vec<MeanVariancePoint> = order
        .into_iter()
        .filter(|&i| mo.mean[i] > 0.0 && mo.var[i] > 0.0)
        .map(|i| MeanVariancePoint {
            gene: i,
            log_mean: mo.mean[i].ln(),
            log_variance: mo.var[i].ln(),
        })
        .collect();
    if points.len() < MIN_REGRESSION_GENES {
        return Err(Error::Degenerate(format!(
            "{} usable genes after the top-fraction cut, need {MIN_REGRESSION_GENES}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.log_mean).sum::<f64>() / n;
    let my = points.iter().map(|p| p.log_variance).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.log_mean - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.log_mean - mx) * (p.log_variance - my))
        .sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all selected genes share one mean".into()));
    }
    let slope = sxy / sxx;
    let precision = ronning_alpha(m, members)?.precision();
    Ok(MeanVarianceFit {
        points,
        slope,
        intercept: my - slope * mx,
        reference_slope: 1.0,
        reference_intercept: -(precision + 1.0).ln(),
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, SimulationSpec};

    fn alpha(v: &[f64]) -> AlphaVector {
        AlphaVector::new(v.to_vec()).unwrap()
    }

    fn single_cluster(alpha_v: Vec<f64>, n_cells: usize, depth: u32) -> SparseCountMatrix {
        let spec = SimulationSpec {
            n_clusters: 1,
            n_genes: alpha_v.len(),
            n_cells,
            cluster_proportions: vec![1.0],
            alphas: vec![alpha(&alpha_v)],
            depth,
            n_informative_genes: 0,
            seed: 21,
        };
        simulate(&spec).unwrap().matrix
    }

    #[test]
    fn uniform_beta_is_flat() {
        let m = single_cluster(vec![1.0, 1.0], 50, 100);
        let members: Vec<usize> = (0..50).collect();
        let t = beta_marginal_table(&m, &members, &alpha(&[1.0, 1.0]), 0, 10).unwrap();
        assert!(t.bins.iter().all(|b| (b.density - 1.0).abs() < 1e-12));
        let span = t.bins[9].center - t.bins[0].center;
        assert!((t.density_integral() - span).abs() < 1e-12);
        let mass: f64 = t.bins.iter().map(|b| b.mass).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let emp: f64 = t.bins.iter().map(|b| b.empirical_mass).sum();
        assert!((emp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_tracks_beta_marginal() {
        let a = vec![6.0, 10.0, 14.0];
        let m = single_cluster(a.clone(), 5000, 3000);
        let members: Vec<usize> = (0..5000).collect();
        let t = beta_marginal_table(&m, &members, &alpha(&a), 0, 40).unwrap();
        assert!(t.total_variation() < 0.05, "tv {}", t.total_variation());
        assert!((t.density_integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn beta_table_errors() {
        let m = single_cluster(vec![1.0, 1.0], 5, 10);
        let a = alpha(&[1.0, 1.0]);
        assert!(beta_marginal_table(&m, &[0], &a, 0, 10).is_err());
        assert!(beta_marginal_table(&m, &[0, 1], &a, 2, 10).is_err());
        assert!(beta_marginal_table(&m, &[0, 1], &a, 0, 0).is_err());
        assert!(beta_marginal_table(&m, &[0, 9], &a, 0, 4).is_err());
    }

    #[test]
    fn regression_on_dirichlet_data() {
        // Geometric spread of means, |α| = 100.
        let raw: Vec<f64> = (0..200).map(|i| 0.98f64.powi(i)).collect();
        let s: f64 = raw.iter().sum();
        let a: Vec<f64> = raw.iter().map(|r| 100.0 * r / s).collect();
        let m = single_cluster(a, 1500, 2000);
        let members: Vec<usize> = (0..1500).collect();
        let fit = mean_variance_regression(&m, &members, 0.25).unwrap();
        assert!((0.85..1.15).contains(&fit.slope), "slope {}", fit.slope);
        assert!((fit.intercept + 101f64.ln()).abs() < 0.4, "intercept {}", fit.intercept);
        assert!((fit.reference_intercept + (fit.precision + 1.0).ln()).abs() < 1e-12);

        let mut rev = members.clone();
        rev.reverse();
        let again = mean_variance_regression(&m, &rev, 0.25).unwrap();
        assert!((again.slope - fit.slope).abs() < 1e-12);
        assert!((again.intercept - fit.intercept).abs() < 1e-12);
    }

    #[test]
    fn too_few_genes() {
        let m = single_cluster(vec![3.0, 5.0], 40, 100);
        let members: Vec<usize> = (0..40).collect();
        assert!(matches!(
            mean_variance_regression(&m, &members, 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(mean_variance_regression(&m, &members, 0.0).is_err());
    }
}
