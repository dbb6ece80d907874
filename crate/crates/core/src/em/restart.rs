use log::{info, warn};
use rayon::prelude::*;

use super::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::init::{build_initial_model, InitStrategy};
use crate::matrix::SparseCountMatrix;
use crate::seed::restart_seed;

/// Runs `cfg.n_restarts` independent fits and keeps the one with the largest
/// final log-likelihood. Restart `r` initializes and fits with
/// `restart_seed(seed, r)`, so `n_restarts = 1` is a plain seeded fit.
pub fn fit_multi_restart(
    m: &SparseCountMatrix,
    k: usize,
    strategy: &InitStrategy,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let runs: Vec<Result<FitResult>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let s = restart_seed(seed, r);
            let init = build_initial_model(m, k, strategy, s)?;
            let mut res = fit(m, init, cfg, s)?;
            res.restart_index = r;
            Ok(res)
        })
        .collect();
    best_of(runs)
}

/// Highest final log-likelihood wins; ties go to the earliest restart.
pub(crate) fn best_of(runs: Vec<Result<FitResult>>) -> Result<FitResult> {
    let n = runs.len();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(res) => {
                info!(
                    "restart {r}: loglik {} after {} iterations",
                    res.final_loglik(),
                    res.iterations
                );
                if best.as_ref().map_or(true, |b| res.final_loglik() > b.final_loglik()) {
                    best = Some(res);
                }
            }
            Err(e) => {
                warn!("restart {r} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(Error::AllRestartsFailed(n, Box::new(e))),
        (None, None) => Err(Error::invalid("no restarts were run")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{ConvergenceReason, DirichletMixtureModel, ResponsibilityMatrix};
    use crate::polya::AlphaVector;

    fn data() -> SparseCountMatrix {
        let mut rows = vec![Vec::new(); 5];
        for j in 0..30u32 {
            let base: [u32; 5] = match j % 3 {
                0 => [12, 3, 1, 1, 2],
                1 => [1, 12, 3, 1, 2],
                _ => [1, 1, 3, 12, 2],
            };
            for (g, r) in rows.iter_mut().enumerate() {
                r.push(base[g] + (j * 5 + g as u32 * 3) % 4);
            }
        }
        SparseCountMatrix::from_dense_unnamed(&rows).unwrap()
    }

    fn dummy(ll: f64) -> FitResult {
        let model =
            DirichletMixtureModel::uniform(AlphaVector::symmetric(2, 1.0).unwrap(), 1).unwrap();
        FitResult {
            model,
            responsibilities: ResponsibilityMatrix::from_rows(&[vec![1.0]]).unwrap(),
            hard_labels: vec![0],
            loglik_trace: vec![ll - 1.0, ll],
            converged: true,
            reason: ConvergenceReason::Tolerances,
            iterations: 1,
            seed: 0,
            restart_index: 0,
            loglik_decreases: 0,
        }
    }

    #[test]
    fn single_restart_equals_plain_fit() {
        let m = data();
        let strategy: InitStrategy = "kr".parse().unwrap();
        let cfg = FitConfig {
            n_restarts: 1,
            ..FitConfig::default()
        };
        let multi = fit_multi_restart(&m, 3, &strategy, &cfg, 42).unwrap();
        let init = build_initial_model(&m, 3, &strategy, 42).unwrap();
        let single = fit(&m, init, &cfg, 42).unwrap();
        assert_eq!(multi.hard_labels, single.hard_labels);
        assert_eq!(multi.loglik_trace, single.loglik_trace);
        assert_eq!(multi.seed, 42);
        assert_eq!(multi.restart_index, 0);
    }

    #[test]
    fn best_likelihood_is_selected() {
        let mut runs = vec![Ok(dummy(-10.0)), Ok(dummy(-5.0)), Ok(dummy(-5.0))];
        if let Ok(r) = &mut runs[2] {
            r.restart_index = 2;
        }
        if let Ok(r) = &mut runs[1] {
            r.restart_index = 1;
        }
        let best = best_of(runs).unwrap();
        assert_eq!(best.final_loglik(), -5.0);
        assert_eq!(best.restart_index, 1);
    }

    #[test]
    fn failures_only_matter_when_all_fail() {
        let runs = vec![Err(Error::invalid("x")), Ok(dummy(-3.0))];
        assert!(best_of(runs).is_ok());
        let runs: Vec<Result<FitResult>> = vec![Err(Error::invalid("x")), Err(Error::invalid("y"))];
        assert!(matches!(best_of(runs), Err(Error::AllRestartsFailed(2, _))));
    }

    #[test]
    fn repeatable_and_no_worse_than_each_restart() {
        let m = data();
        let strategy: InitStrategy = "rw".parse().unwrap();
        let cfg = FitConfig {
            n_restarts: 4,
            ..FitConfig::default()
        };
        let a = fit_multi_restart(&m, 3, &strategy, &cfg, 7).unwrap();
        let b = fit_multi_restart(&m, 3, &strategy, &cfg, 7).unwrap();
        assert_eq!(a.hard_labels, b.hard_labels);
        assert_eq!(a.loglik_trace, b.loglik_trace);
        for r in 0..4 {
            let s = restart_seed(7, r);
            let init = build_initial_model(&m, 3, &strategy, s).unwrap();
            let single = fit(&m, init, &cfg, s).unwrap();
            assert!(a.final_loglik() >= single.final_loglik());
        }
        assert_eq!(a.seed, restart_seed(7, a.restart_index));
    }

    #[test]
    fn rejects_zero_k() {
        let strategy: InitStrategy = "kr".parse().unwrap();
        assert!(fit_multi_restart(&data(), 0, &strategy, &FitConfig::default(), 1).is_err());
    }
}
