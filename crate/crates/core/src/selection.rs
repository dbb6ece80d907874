//! Choosing K by information criteria.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::em::{fit_multi_restart, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::init::InitStrategy;
use crate::matrix::SparseCountMatrix;
use crate::metrics::adjusted_rand_index;

/// Free parameters of a K-cluster model over G genes.
pub fn n_parameters(k: usize, g: usize) -> usize {
    k * g + k - 1
}

pub fn aic(loglik: f64, params: usize) -> f64 {
    2.0 * params as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, params: usize, n_cells: usize) -> f64 {
    params as f64 * (n_cells as f64).ln() - 2.0 * loglik
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub loglik: f64,
    pub n_parameters: usize,
    pub aic: f64,
    pub bic: f64,
    pub ari: Option<f64>,
    /// Set when every restart at this K failed; the numeric fields are NaN.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    pub best_aic: Option<usize>,
    pub best_bic: Option<usize>,
}

impl SelectionTable {
    /// Builds the table from per-K outcomes; argmins ignore failed rows and
    /// break ties toward the smaller K.
    pub fn from_fits(
        outcomes: Vec<(usize, Result<FitResult>)>,
        n_genes: usize,
        n_cells: usize,
        truth: Option<&[usize]>,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(outcomes.len());
        for (k, outcome) in outcomes {
            let params = n_parameters(k, n_genes);
            rows.push(match outcome {
                Ok(r) => {
                    let ll = r.final_loglik();
                    let ari = truth.map(|t| adjusted_rand_index(&r.hard_labels, t)).transpose()?;
                    SelectionRow {
                        k,
                        loglik: ll,
                        n_parameters: params,
                        aic: aic(ll, params),
                        bic: bic(ll, params, n_cells),
                        ari,
                        error: None,
                    }
                }
                Err(e) => {
                    warn!("K = {k} failed: {e}");
                    SelectionRow {
                        k,
                        loglik: f64::NAN,
                        n_parameters: params,
                        aic: f64::NAN,
                        bic: f64::NAN,
                        ari: None,
                        error: Some(e.to_string()),
                    }
                }
            });
        }
        let argmin = |f: fn(&SelectionRow) -> f64| {
            rows.iter()
                .filter(|r| r.error.is_none())
                .fold(None::<&SelectionRow>, |best, r| match best {
                    Some(b) if f(b) <= f(r) => Some(b),
                    _ => Some(r),
                })
                .map(|r| r.k)
        };
        let best_aic = argmin(|r| r.aic);
        let best_bic = argmin(|r| r.bic);
        Ok(Self {
            rows,
            best_aic,
            best_bic,
        })
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k\tloglik\tn_parameters\taic\tbic\tari\tstatus")?;
        for r in &self.rows {
            let ari = r.ari.map_or_else(|| "NA".to_string(), |a| a.to_string());
            let status = r.error.as_deref().unwrap_or("ok");
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.k, r.loglik, r.n_parameters, r.aic, r.bic, ari, status
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let show = |k: Option<usize>| k.map_or_else(|| "none".to_string(), |k| k.to_string());
        format!(
            "selected K by AIC: {} / by BIC: {}",
            show(self.best_aic),
            show(self.best_bic)
        )
    }
}

/// Fits every K in `k_range` with [`fit_multi_restart`] and tabulates
/// AIC/BIC. A K whose restarts all fail is recorded as a failed row.
pub fn select_k(
    m: &SparseCountMatrix,
    k_range: &[usize],
    strategy: &InitStrategy,
    cfg: &FitConfig,
    seed: u64,
    truth: Option<&[usize]>,
) -> Result<SelectionTable> {
    if k_range.is_empty() {
        return Err(Error::invalid("K range is empty"));
    }
    if k_range.contains(&0) {
        return Err(Error::invalid("every K must be at least 1"));
    }
    if let Some(t) = truth {
        if t.len() != m.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} truth labels for {} cells",
                t.len(),
                m.n_cells()
            )));
        }
    }
    cfg.validate()?;
    // Each K runs on the same base seed; K itself changes every derived stream.
    let outcomes = k_range
        .iter()
        .map(|&k| (k, fit_multi_restart(m, k, strategy, cfg, seed)))
        .collect();
    SelectionTable::from_fits(outcomes, m.n_genes(), m.n_cells(), truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, ScenarioTemplate};

    fn small() -> (SparseCountMatrix, Vec<usize>) {
        let t = ScenarioTemplate {
            n_genes: 30,
            n_cells: 90,
            depth: 400,
            effect: 2.0,
            seed: 4,
            ..ScenarioTemplate::default()
        };
        let s = simulate(&t.to_spec().unwrap()).unwrap();
        (s.matrix, s.labels)
    }

    fn cfg() -> FitConfig {
        FitConfig {
            n_restarts: 2,
            ..FitConfig::default()
        }
    }

    #[test]
    fn single_k_table() {
        let (m, _) = small();
        let t = select_k(&m, &[1], &"kr".parse().unwrap(), &cfg(), 1, None).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.best_aic, Some(1));
        assert_eq!(t.best_bic, Some(1));
    }

    #[test]
    fn criteria_identities() {
        let (m, truth) = small();
        let t = select_k(&m, &[2, 3, 4], &"kr".parse().unwrap(), &cfg(), 1, Some(&truth)).unwrap();
        assert_eq!(t.rows.len(), 3);
        let c = m.n_cells() as f64;
        for r in &t.rows {
            assert_eq!(r.n_parameters, r.k * m.n_genes() + r.k - 1);
            assert!((r.aic - (2.0 * r.n_parameters as f64 - 2.0 * r.loglik)).abs() < 1e-9);
            assert!((r.bic - (r.n_parameters as f64 * c.ln() - 2.0 * r.loglik)).abs() < 1e-9);
            let gap = r.n_parameters as f64 * (c.ln() - 2.0);
            assert!(((r.bic - r.aic) - gap).abs() <= 1e-9 * r.bic.abs());
            assert!(r.ari.is_some());
        }
        let again = select_k(&m, &[2, 3, 4], &"kr".parse().unwrap(), &cfg(), 1, Some(&truth)).unwrap();
        assert_eq!(t, again);
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        assert!(t.summary().starts_with("selected K by AIC: "));
    }

    #[test]
    fn failed_rows_do_not_abort() {
        let (m, _) = small();
        let ok = fit_multi_restart(&m, 2, &"kr".parse().unwrap(), &cfg(), 0);
        let outcomes = vec![(2, ok), (3, Err(Error::invalid("boom")))];
        let t = SelectionTable::from_fits(outcomes, m.n_genes(), m.n_cells(), None).unwrap();
        assert_eq!(t.rows[1].error.as_deref(), Some("invalid argument: boom"));
        assert_eq!(t.best_bic, Some(2));
    }

    #[test]
    fn rejects_bad_ranges() {
        let (m, _) = small();
        let s = "kr".parse().unwrap();
        assert!(select_k(&m, &[], &s, &cfg(), 0, None).is_err());
        assert!(select_k(&m, &[0, 2], &s, &cfg(), 0, None).is_err());
        assert!(select_k(&m, &[2], &s, &cfg(), 0, Some(&[0, 1])).is_err());
    }
}
