use log::{debug, warn};
use rand::Rng;

use super::steps::{e_step_prepared, m_step_alpha, m_step_pi, Prepared};
use super::{ConvergenceReason, DirichletMixtureModel, FitConfig, FitResult};
use crate::error::Result;
use crate::matrix::SparseCountMatrix;
use crate::polya::AlphaVector;
use crate::seed::{rng_for, Stream};

/// Responsibility mass below which a cluster counts as empty.
const EMPTY_MASS: f64 = 1e-8;

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / (prev.abs() + 1.0)
}

/// Runs E-M from `init` until both the relative log-likelihood change and
/// Σ(Δπ)² fall under their tolerances, or `cfg.max_iterations` cycles.
///
/// `seed` is only consumed when `cfg.reseed_empty` is set.
pub fn fit(
    m: &SparseCountMatrix,
    init: DirichletMixtureModel,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    let prepared = Prepared::new(m)?;
    let (mut delta, ll0) = e_step_prepared(&prepared, &init, 0)?;
    let mut model = init;
    let mut trace = vec![ll0];
    let mut converged = false;
    let mut decreases = 0;
    let mut iterations = 0;
    let mut reseeds = 0u64;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut pi = m_step_pi(&delta);
        let mut alphas = m_step_alpha(m, &delta, &model, cfg.alpha_floor)?;
        if cfg.reseed_empty {
            let mass = delta.column_sums();
            for k in (0..alphas.len()).filter(|&k| mass[k] < EMPTY_MASS) {
                alphas[k] = reseed_cluster(m, &alphas, k, seed, reseeds, cfg.alpha_floor)?;
                pi[k] = 1.0 / m.n_cells() as f64;
                reseeds += 1;
                debug!("reseeded empty cluster {k} at iteration {iterations}");
            }
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= s);
        }
        let pi_change: f64 = pi
            .iter()
            .zip(model.pi())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let next = DirichletMixtureModel::new(alphas, pi)?;
        let (next_delta, ll) = e_step_prepared(&prepared, &next, iterations)?;
        let prev = *trace.last().unwrap();
        if ll < prev - cfg.loglik_rel_tol * (prev.abs() + 1.0) {
            decreases += 1;
            warn!("log-likelihood decreased at iteration {iterations}: {prev} -> {ll}");
        }
        trace.push(ll);
        model = next;
        delta = next_delta;
        if relative_change(prev, ll) < cfg.loglik_rel_tol && pi_change < cfg.pi_sq_tol {
            converged = true;
            break;
        }
    }

    let reason = if !converged {
        ConvergenceReason::MaxIterations
    } else if cfg.pi_sq_tol.is_infinite() && cfg.loglik_rel_tol.is_finite() {
        ConvergenceReason::LoglikTolerance
    } else if cfg.loglik_rel_tol.is_infinite() && cfg.pi_sq_tol.is_finite() {
        ConvergenceReason::PiTolerance
    } else {
        ConvergenceReason::Tolerances
    };
    let hard_labels = delta.hard_labels();
    Ok(FitResult {
        model,
        responsibilities: delta,
        hard_labels,
        loglik_trace: trace,
        converged,
        reason,
        iterations,
        seed,
        restart_index: 0,
        loglik_decreases: decreases,
    })
}

/// Replaces cluster `k` by a random cell's smoothed proportions, scaled to
/// the median precision of the other clusters.
fn reseed_cluster(
    m: &SparseCountMatrix,
    alphas: &[AlphaVector],
    k: usize,
    seed: u64,
    draw: u64,
    floor: f64,
) -> Result<AlphaVector> {
    let mut rng = rng_for(seed, Stream::Reseed, draw);
    let j = rng.random_range(0..m.n_cells());
    let mut others: Vec<f64> = alphas
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != k)
        .map(|(_, a)| a.precision())
        .collect();
    others.sort_by(f64::total_cmp);
    let precision = others
        .get(others.len() / 2)
        .copied()
        .unwrap_or(m.n_genes() as f64);
    let g = m.n_genes() as f64;
    let t = m.cell_totals()[j] as f64;
    let mut v = vec![0.5; m.n_genes()];
    for (i, x) in m.cell(j).iter() {
        v[i] += f64::from(x);
    }
    let scale = precision / (t + 0.5 * g);
    AlphaVector::from_estimate(v.into_iter().map(|x| x * scale).collect(), floor)
}
