use serde::{Deserialize, Serialize};

use super::SparseCountMatrix;
use crate::error::{Error, Result};

/// Thresholds for [`filter_cells_and_genes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCriteria {
    pub min_genes_per_cell: usize,
    pub min_cells_per_gene: usize,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        Self {
            min_genes_per_cell: 300,
            min_cells_per_gene: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub cells_removed: usize,
    pub genes_removed: usize,
    pub genes_selected: usize,
    pub cells_retained: usize,
    pub criteria: FilterCriteria,
}

/// Drops cells expressing fewer than `min_genes_per_cell` genes, then genes
/// expressed in fewer than `min_cells_per_gene` of the surviving cells.
///
/// Each pass runs once; the cell pass is evaluated on the input matrix.
pub fn filter_cells_and_genes(
    m: &SparseCountMatrix,
    criteria: FilterCriteria,
) -> Result<(SparseCountMatrix, FilterReport)> {
    let cells: Vec<usize> = m
        .genes_per_cell()
        .into_iter()
        .enumerate()
        .filter(|&(_, n)| n >= criteria.min_genes_per_cell)
        .map(|(j, _)| j)
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyAfterFilter("cells"));
    }

    let mut keep_cell = vec![false; m.n_cells()];
    for &j in &cells {
        keep_cell[j] = true;
    }
    let genes: Vec<usize> = (0..m.n_genes())
        .filter(|&g| {
            let v = m.gene(g);
            let n = v.indices.iter().filter(|&&c| keep_cell[c as usize]).count();
            n >= criteria.min_cells_per_gene
        })
        .collect();
    if genes.is_empty() {
        return Err(Error::EmptyAfterFilter("genes"));
    }

    let out = m.subset(&genes, &cells)?;
    let report = FilterReport {
        cells_removed: m.n_cells() - cells.len(),
        genes_removed: m.n_genes() - genes.len(),
        genes_selected: genes.len(),
        cells_retained: cells.len(),
        criteria,
    };
    Ok((out, report))
}

/// Exact dispersion key for gene `g`: `C·Σx² − (Σx)²`, which equals
/// `C·(C−1)` times the sample variance.
fn dispersion_key(m: &SparseCountMatrix, g: usize) -> u128 {
    let (s1, s2) = m.gene(g).counts.iter().fold((0u128, 0u128), |(a, b), &x| {
        let x = u128::from(x);
        (a + x, b + x * x)
    });
    m.n_cells() as u128 * s2 - s1 * s1
}

/// Sample standard deviation (divisor C−1) of each gene's raw counts,
/// zeros included. Zero when there is a single cell.
pub fn gene_standard_deviations(m: &SparseCountMatrix) -> Vec<f64> {
    let c = m.n_cells() as f64;
    (0..m.n_genes())
        .map(|g| {
            if m.n_cells() < 2 {
                0.0
            } else {
                (dispersion_key(m, g) as f64 / (c * (c - 1.0))).sqrt()
            }
        })
        .collect()
}

/// Keeps the `n` genes with the largest sample standard deviation of raw
/// counts. Ties go to the lower gene index; survivors keep their order.
///
/// Ranking uses exact integer moments, so the result does not depend on
/// cell order.
pub fn select_top_variable_genes(m: &SparseCountMatrix, n: usize) -> Result<SparseCountMatrix> {
    if n == 0 || n > m.n_genes() {
        return Err(Error::invalid(format!(
            "top-gene count {n} outside 1..={}",
            m.n_genes()
        )));
    }
    let keys: Vec<u128> = (0..m.n_genes()).map(|g| dispersion_key(m, g)).collect();
    let mut order: Vec<usize> = (0..m.n_genes()).collect();
    order.sort_by(|&a, &b| keys[b].cmp(&keys[a]).then(a.cmp(&b)));
    let mut keep = order[..n].to_vec();
    keep.sort_unstable();
    let cells: Vec<usize> = (0..m.n_cells()).collect();
    m.subset(&keep, &cells)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn crit(g: usize, c: usize) -> FilterCriteria {
        FilterCriteria {
            min_genes_per_cell: g,
            min_cells_per_gene: c,
        }
    }

    #[test]
    fn zero_thresholds_are_identity() {
        let m = SparseCountMatrix::from_dense_unnamed(&[vec![0, 1], vec![0, 0]]).unwrap();
        let (out, rep) = filter_cells_and_genes(&m, crit(0, 0)).unwrap();
        assert_eq!(out, m);
        assert_eq!((rep.cells_removed, rep.genes_removed), (0, 0));
    }

    #[test]
    fn cell_with_too_few_genes_removed() {
        // cell 1 expresses 2 genes, cell 2 expresses 5.
        let rows: Vec<Vec<u32>> = (0..5).map(|g| vec![u32::from(g < 2), 1]).collect();
        let m = SparseCountMatrix::from_dense_unnamed(&rows).unwrap();
        let (out, rep) = filter_cells_and_genes(&m, crit(3, 0)).unwrap();
        assert_eq!(out.cell_ids(), &["cell2"]);
        assert_eq!(rep.cells_removed, 1);
        assert_eq!(rep.cells_retained + rep.cells_removed, m.n_cells());
        assert_eq!(rep.genes_selected + rep.genes_removed, m.n_genes());
    }

    #[test]
    fn gene_in_four_of_ten_cells_removed_matches_brute_force() {
        let mut rows = vec![vec![0u32; 10]; 3];
        for c in 0..4 {
            rows[0][c] = 1 + c as u32;
        }
        for c in 0..10 {
            rows[1][c] = 2;
            rows[2][c] = u32::from(c % 2 == 0) * 3;
        }
        let m = SparseCountMatrix::from_dense_unnamed(&rows).unwrap();
        let (out, rep) = filter_cells_and_genes(&m, crit(0, 5)).unwrap();

        let expected: Vec<String> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().filter(|&&x| x > 0).count() >= 5)
            .map(|(g, _)| format!("gene{}", g + 1))
            .collect();
        assert_eq!(out.gene_ids(), expected.as_slice());
        assert_eq!(rep.genes_removed, 1);
    }

    #[test]
    fn all_removed_errors() {
        let m = SparseCountMatrix::from_dense_unnamed(&[vec![1, 1]]).unwrap();
        assert!(matches!(
            filter_cells_and_genes(&m, crit(2, 0)),
            Err(Error::EmptyAfterFilter("cells"))
        ));
        assert!(matches!(
            filter_cells_and_genes(&m, crit(0, 3)),
            Err(Error::EmptyAfterFilter("genes"))
        ));
    }

    #[test]
    fn top_variable_genes() {
        let m = SparseCountMatrix::from_dense_unnamed(&[vec![0, 0, 10], vec![3, 3, 3]]).unwrap();
        let sd = gene_standard_deviations(&m);
        assert!((sd[0] - (100.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(sd[1], 0.0);
        let top = select_top_variable_genes(&m, 1).unwrap();
        assert_eq!(top.gene_ids(), &["gene1"]);
        assert_eq!(select_top_variable_genes(&m, 2).unwrap(), m);
        assert!(select_top_variable_genes(&m, 0).is_err());
        assert!(select_top_variable_genes(&m, 3).is_err());

        let tied = SparseCountMatrix::from_dense_unnamed(&[vec![1, 5], vec![1, 5]]).unwrap();
        assert_eq!(select_top_variable_genes(&tied, 1).unwrap().gene_ids(), &["gene1"]);
    }

    fn small_matrix() -> impl Strategy<Value = Vec<Vec<u32>>> {
        (1usize..8, 1usize..10).prop_flat_map(|(g, c)| {
            prop::collection::vec(prop::collection::vec(0u32..4, c), g)
        })
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(rows in small_matrix(), a in 0usize..4, b in 0usize..4) {
            let m = SparseCountMatrix::from_dense_unnamed(&rows).unwrap();
            if let Ok((once, _)) = filter_cells_and_genes(&m, crit(a, b)) {
                // A second pass may drop cells whose genes left in the first
                // pass; with the genes-per-cell threshold satisfied it is exact.
                if let Ok((twice, rep)) = filter_cells_and_genes(&once, crit(a, b)) {
                    if rep.cells_removed == 0 {
                        prop_assert_eq!(twice, once.clone());
                    }
                }
                let sums: Vec<u64> = once.to_dense().iter().fold(vec![0; once.n_cells()], |mut acc, r| {
                    acc.iter_mut().zip(r).for_each(|(s, &x)| *s += u64::from(x));
                    acc
                });
                prop_assert_eq!(sums.as_slice(), once.cell_totals());
            }
        }

        #[test]
        fn top_genes_invariant_to_cell_order(rows in small_matrix(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let m = SparseCountMatrix::from_dense_unnamed(&rows).unwrap();
            let mut perm: Vec<usize> = (0..m.n_cells()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let all: Vec<usize> = (0..m.n_genes()).collect();
            let shuffled = m.subset(&all, &perm).unwrap();
            let n = 1 + m.n_genes() / 2;
            let a = select_top_variable_genes(&m, n).unwrap();
            let b = select_top_variable_genes(&shuffled, n).unwrap();
            prop_assert_eq!(a.gene_ids(), b.gene_ids());
        }
    }
}
