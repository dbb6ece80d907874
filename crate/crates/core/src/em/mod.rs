//! Expectation-maximization for the Dirichlet-multinomial mixture.
//!
//! The M-step for the concentration parameters is a single sweep of Minka's
//! leave-one-out fixed point per iteration, so the procedure is a
//! generalized E-M: the total log-likelihood normally increases but is not
//! guaranteed to.

mod fit;
mod restart;
mod steps;

pub use fit::fit;
pub use restart::fit_multi_restart;
pub use steps::{e_step, m_step_alpha, m_step_pi};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polya::{AlphaVector, ALPHA_FLOOR};

/// K Dirichlet components over G genes plus mixing proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletMixtureModel {
    alphas: Vec<AlphaVector>,
    pi: Vec<f64>,
}

impl DirichletMixtureModel {
    /// Validates the components and renormalizes `pi` (it must already sum
    /// to one within 1e-9).
    pub fn new(alphas: Vec<AlphaVector>, pi: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("model needs at least one cluster"));
        }
        if alphas.len() != pi.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} alpha vectors but {} mixing proportions",
                alphas.len(),
                pi.len()
            )));
        }
        let g = alphas[0].len();
        if alphas.iter().any(|a| a.len() != g) {
            return Err(Error::DimensionMismatch(
                "alpha vectors differ in length".into(),
            ));
        }
        if pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("mixing proportions must be finite and >= 0"));
        }
        let s: f64 = pi.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixing proportions sum to {s}, expected 1"
            )));
        }
        let pi = pi.into_iter().map(|p| p / s).collect();
        Ok(Self { alphas, pi })
    }

    /// K identical components with uniform weights.
    pub fn uniform(alpha: AlphaVector, k: usize) -> Result<Self> {
        Self::new(vec![alpha; k], vec![1.0 / k as f64; k])
    }

    pub fn n_clusters(&self) -> usize {
        self.alphas.len()
    }

    pub fn n_genes(&self) -> usize {
        self.alphas[0].len()
    }

    pub fn alphas(&self) -> &[AlphaVector] {
        &self.alphas
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Free parameters: K·G concentrations plus K−1 mixing weights.
    pub fn n_parameters(&self) -> usize {
        self.n_clusters() * self.n_genes() + self.n_clusters() - 1
    }

    /// The same model with clusters reordered so that new cluster `i` is old
    /// cluster `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_clusters() {
            return Err(Error::invalid("permutation length differs from K"));
        }
        Self::new(
            order.iter().map(|&k| self.alphas[k].clone()).collect(),
            order.iter().map(|&k| self.pi[k]).collect(),
        )
    }
}

/// C × K posterior membership probabilities, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsibilityMatrix {
    n_clusters: usize,
    values: Vec<f64>,
}

impl ResponsibilityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::invalid("responsibility matrix needs at least one row and column"));
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::DimensionMismatch(format!("row {j} has {} entries, expected {k}", r.len())));
            }
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("row {j} has entries outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {j} sums to {s}")));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            n_clusters: k,
            values,
        })
    }

    pub(crate) fn from_raw(n_clusters: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len() % n_clusters, 0);
        Self { n_clusters, values }
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.n_clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_clusters..(j + 1) * self.n_clusters]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_clusters)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Argmax per row; ties go to the lowest cluster index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Column sums Σ_j δ_jk.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_clusters];
        for r in self.rows() {
            s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Threshold on |Δℓ| / (|ℓ| + 1) between consecutive iterations.
    pub loglik_rel_tol: f64,
    /// Threshold on Σ_k (Δπ_k)².
    pub pi_sq_tol: f64,
    pub alpha_floor: f64,
    pub n_restarts: usize,
    /// Reinitialize clusters whose responsibility mass vanishes.
    pub reseed_empty: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            loglik_rel_tol: 1e-6,
            pi_sq_tol: 1e-8,
            alpha_floor: ALPHA_FLOOR,
            n_restarts: 10,
            reseed_empty: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if self.n_restarts == 0 {
            return Err(Error::invalid("n_restarts must be at least 1"));
        }
        // Infinity is allowed and disables that criterion; NaN is rejected.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.loglik_rel_tol > 0.0) || !(self.pi_sq_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor.is_finite()) {
            return Err(Error::invalid("alpha_floor must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceReason {
    /// Both the log-likelihood and the π criteria were met.
    Tolerances,
    /// Only the log-likelihood criterion is active and it was met.
    LoglikTolerance,
    /// Only the π criterion is active and it was met.
    PiTolerance,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: DirichletMixtureModel,
    pub responsibilities: ResponsibilityMatrix,
    pub hard_labels: Vec<usize>,
    /// Total log-likelihood (with multinomial coefficients) of the initial
    /// model followed by one entry per completed iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub reason: ConvergenceReason,
    pub iterations: usize,
    pub seed: u64,
    pub restart_index: usize,
    /// Iterations whose log-likelihood fell by more than the tolerance.
    pub loglik_decreases: usize,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_validation() {
        let a = AlphaVector::symmetric(3, 1.0).unwrap();
        assert!(DirichletMixtureModel::new(vec![], vec![]).is_err());
        assert!(DirichletMixtureModel::new(vec![a.clone()], vec![0.5]).is_err());
        assert!(DirichletMixtureModel::new(vec![a.clone(), a.clone()], vec![1.2, -0.2]).is_err());
        let short = AlphaVector::symmetric(2, 1.0).unwrap();
        assert!(DirichletMixtureModel::new(vec![a.clone(), short], vec![0.5, 0.5]).is_err());
        let m = DirichletMixtureModel::uniform(a, 4).unwrap();
        assert!((m.pi().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.n_parameters(), 4 * 3 + 3);
    }

    #[test]
    fn hard_labels_break_ties_low() {
        let d = ResponsibilityMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8], vec![1.0, 0.0]])
            .unwrap();
        assert_eq!(d.hard_labels(), vec![0, 1, 0]);
        assert!(ResponsibilityMatrix::from_rows(&[vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            max_iterations: 0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let inf = FitConfig {
            pi_sq_tol: f64::INFINITY,
            ..FitConfig::default()
        };
        assert!(inf.validate().is_ok());
    }
}
