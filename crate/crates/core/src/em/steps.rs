use rayon::prelude::*;

use super::{DirichletMixtureModel, ResponsibilityMatrix};
use crate::error::{Error, Result};
use crate::matrix::SparseCountMatrix;
use crate::polya::{ln_gamma, ln_rising, log_multinomial_coefficient, AlphaVector};

/// Per gene, counts up to min(largest observed count, TABLE_CAP) read
/// `ln Γ(x+α) − ln Γ(α)` from a per-iteration table instead of evaluating it
/// per nonzero.
const TABLE_CAP: u32 = 64;

/// A matrix checked for fitting, with the α-independent parts cached.
pub(crate) struct Prepared<'a> {
    pub m: &'a SparseCountMatrix,
    /// Σ_j log multinomial coefficient of cell j.
    pub coefficient_total: f64,
    /// Start of each gene's block in the rising-factorial table, in units of
    /// K entries; `table_offset[G]` is the total length.
    table_offset: Vec<usize>,
}

impl<'a> Prepared<'a> {
    pub fn new(m: &'a SparseCountMatrix) -> Result<Self> {
        if let Some(j) = m.cell_totals().iter().position(|&t| t == 0) {
            return Err(Error::invalid(format!(
                "cell {} has no counts; remove empty cells before fitting",
                m.cell_ids()[j]
            )));
        }
        let per_cell: Vec<f64> = (0..m.n_cells())
            .into_par_iter()
            .map(|j| log_multinomial_coefficient(m.cell(j)))
            .collect();
        let mut table_offset = Vec::with_capacity(m.n_genes() + 1);
        table_offset.push(0);
        for i in 0..m.n_genes() {
            let top = m.gene(i).counts.iter().copied().max().unwrap_or(0).min(TABLE_CAP);
            table_offset.push(table_offset[i] + top as usize);
        }
        Ok(Self {
            m,
            coefficient_total: per_cell.iter().sum(),
            table_offset,
        })
    }

    fn check_model(&self, model: &DirichletMixtureModel) -> Result<()> {
        if model.n_genes() != self.m.n_genes() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} genes, matrix {}",
                model.n_genes(),
                self.m.n_genes()
            )));
        }
        Ok(())
    }

    /// `table[(offset_i + x − 1)·K + k] = ln Γ(x + α_ik) − ln Γ(α_ik)`.
    fn rising_table(&self, model: &DirichletMixtureModel) -> Vec<f64> {
        let k = model.n_clusters();
        let mut table = vec![0.0; self.table_offset[self.m.n_genes()] * k];
        let mut rest = table.as_mut_slice();
        let blocks: Vec<&mut [f64]> = self
            .table_offset
            .windows(2)
            .map(|w| {
                let (head, tail) = std::mem::take(&mut rest).split_at_mut((w[1] - w[0]) * k);
                rest = tail;
                head
            })
            .collect();
        blocks.into_par_iter().enumerate().for_each(|(i, block)| {
            for c in 0..k {
                let a = model.alphas()[c].values()[i];
                let mut acc = 0.0;
                for (x, row) in block.chunks_exact_mut(k).enumerate() {
                    acc += (a + x as f64).ln();
                    row[c] = acc;
                }
            }
        });
        table
    }
}

pub(crate) fn e_step_prepared(
    p: &Prepared<'_>,
    model: &DirichletMixtureModel,
    iteration: usize,
) -> Result<(ResponsibilityMatrix, f64)> {
    p.check_model(model)?;
    let m = p.m;
    let k = model.n_clusters();
    let table = p.rising_table(model);
    let log_pi: Vec<f64> = model
        .pi()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    let precision: Vec<f64> = model.alphas().iter().map(AlphaVector::precision).collect();
    let lg_precision: Vec<f64> = precision.iter().map(|&a| ln_gamma(a)).collect();

    let mut delta = vec![0.0; m.n_cells() * k];
    let mut cell_ll = vec![0.0; m.n_cells()];
    delta
        .par_chunks_mut(k)
        .zip(cell_ll.par_iter_mut())
        .enumerate()
        .for_each(|(j, (row, ll))| {
            let t = m.cell_totals()[j] as f64;
            for c in 0..k {
                row[c] = if log_pi[c].is_finite() {
                    log_pi[c] + lg_precision[c] - ln_gamma(t + precision[c])
                } else {
                    f64::NEG_INFINITY
                };
            }
            for (i, x) in m.cell(j).iter() {
                let start = p.table_offset[i];
                if (x as usize) <= p.table_offset[i + 1] - start {
                    let base = (start + x as usize - 1) * k;
                    row.iter_mut()
                        .zip(&table[base..base + k])
                        .for_each(|(r, v)| *r += v);
                } else {
                    for (c, r) in row.iter_mut().enumerate() {
                        *r += ln_rising(model.alphas()[c].values()[i], x);
                    }
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                *ll = f64::NAN;
                return;
            }
            let mut s = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                s += *r;
            }
            row.iter_mut().for_each(|r| *r /= s);
            *ll = max + s.ln();
        });

    if let Some(cell) = cell_ll.iter().position(|v| !v.is_finite()) {
        if model.pi().iter().all(|&w| w == 0.0) || log_pi.iter().all(|v| !v.is_finite()) {
            return Err(Error::Degenerate("all mixing proportions are zero".into()));
        }
        return Err(Error::NonFinite { iteration, cell });
    }
    let total = cell_ll.iter().sum::<f64>() + p.coefficient_total;
    Ok((ResponsibilityMatrix::from_raw(k, delta), total))
}

/// Posterior responsibilities and total log-likelihood (including the
/// multinomial coefficients) of `model` on `m`.
///
/// Every cell must have at least one count.
pub fn e_step(
    m: &SparseCountMatrix,
    model: &DirichletMixtureModel,
) -> Result<(ResponsibilityMatrix, f64)> {
    e_step_prepared(&Prepared::new(m)?, model, 0)
}

/// Mixing proportions as column means of the responsibilities.
pub fn m_step_pi(delta: &ResponsibilityMatrix) -> Vec<f64> {
    let c = delta.n_cells() as f64;
    delta.column_sums().into_iter().map(|s| s / c).collect()
}

/// One leave-one-out fixed-point sweep for every cluster's concentrations:
///
/// α_ik ← α_ik · Σ_j δ_jk x_ij/(x_ij − 1 + α_ik) / Σ_j δ_jk T_j/(T_j − 1 + |α_k|)
///
/// Zero counts contribute nothing to the numerator. Results are clamped
/// below at `floor`, which is also what a cluster without responsibility
/// mass collapses to.
pub fn m_step_alpha(
    m: &SparseCountMatrix,
    delta: &ResponsibilityMatrix,
    current: &DirichletMixtureModel,
    floor: f64,
) -> Result<Vec<AlphaVector>> {
    let k = current.n_clusters();
    let g = current.n_genes();
    if g != m.n_genes() || delta.n_cells() != m.n_cells() || delta.n_clusters() != k {
        return Err(Error::DimensionMismatch(
            "matrix, responsibilities and model disagree in shape".into(),
        ));
    }
    let precision: Vec<f64> = current.alphas().iter().map(AlphaVector::precision).collect();

    let mut denom = vec![0.0; k];
    for (j, row) in delta.rows().enumerate() {
        let t = m.cell_totals()[j] as f64;
        if t < 1.0 {
            return Err(Error::invalid("cells must have at least one count"));
        }
        for c in 0..k {
            denom[c] += row[c] * t / (t - 1.0 + precision[c]);
        }
    }
    assert!(
        denom.iter().all(|d| *d >= 0.0 && d.is_finite()),
        "fixed-point denominator must be non-negative"
    );

    // Gene-major so each gene's sums are independent of the others.
    let mut updated = vec![0.0; g * k];
    updated
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, out)| {
            let mut num = [0.0f64; 16];
            let mut num_vec;
            let num: &mut [f64] = if k <= 16 {
                &mut num[..k]
            } else {
                num_vec = vec![0.0; k];
                &mut num_vec
            };
            for (j, x) in m.gene(i).iter() {
                let x = f64::from(x);
                let row = delta.row(j);
                for c in 0..k {
                    if row[c] > 0.0 {
                        num[c] += row[c] * x / (x - 1.0 + current.alphas()[c].values()[i]);
                    }
                }
            }
            for c in 0..k {
                let prev = current.alphas()[c].values()[i];
                let v = if denom[c] > 0.0 {
                    prev * num[c] / denom[c]
                } else {
                    0.0
                };
                out[c] = if v.is_finite() { v.max(floor) } else { floor };
            }
        });

    (0..k)
        .map(|c| AlphaVector::new((0..g).map(|i| updated[i * k + c]).collect()))
        .collect()
}
