//! Sparse genes × cells UMI count matrices.
//!
//! The matrix keeps two compressed views of the same nonzeros: one grouped by
//! cell (used by the E-step and everything that walks a cell's profile) and
//! one grouped by gene (used by the per-gene M-step sums and gene filters).

mod filter;
mod io;

pub use filter::{filter_cells_and_genes, gene_standard_deviations, select_top_variable_genes, FilterCriteria, FilterReport};
pub use io::{
    load_dense_tsv, load_sparse_matrix, open_text, read_id_file, write_dense_tsv, write_id_file,
    write_matrix_market, write_sparse_bundle,
};

use crate::error::{Error, Result};

/// A borrowed sparse vector: sorted indices with their positive counts.
#[derive(Clone, Copy, Debug)]
pub struct SparseVec<'a> {
    pub indices: &'a [u32],
    pub counts: &'a [u32],
}

impl<'a> SparseVec<'a> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + 'a {
        self.indices
            .iter()
            .zip(self.counts)
            .map(|(&i, &x)| (i as usize, x))
    }
}

/// Genes × cells non-negative integer UMI counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseCountMatrix {
    gene_ids: Vec<String>,
    cell_ids: Vec<String>,
    cell_ptr: Vec<usize>,
    cell_genes: Vec<u32>,
    cell_counts: Vec<u32>,
    gene_ptr: Vec<usize>,
    gene_cells: Vec<u32>,
    gene_counts: Vec<u32>,
    cell_totals: Vec<u64>,
}

impl SparseCountMatrix {
    /// Builds a matrix from `(gene, cell, count)` triplets in any order.
    ///
    /// Zero counts are dropped. Duplicate coordinates are rejected.
    pub fn from_triplets(
        gene_ids: Vec<String>,
        cell_ids: Vec<String>,
        mut triplets: Vec<(usize, usize, u32)>,
    ) -> Result<Self> {
        let n_genes = gene_ids.len();
        let n_cells = cell_ids.len();
        if n_genes == 0 || n_cells == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix must have at least one gene and one cell (got {n_genes} x {n_cells})"
            )));
        }
        if n_genes > u32::MAX as usize || n_cells > u32::MAX as usize {
            return Err(Error::invalid("matrix dimensions exceed u32 index range"));
        }
        triplets.retain(|&(_, _, x)| x > 0);
        for &(g, c, _) in &triplets {
            if g >= n_genes || c >= n_cells {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({g}, {c}) outside {n_genes} x {n_cells}"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(g, c, _)| (c, g));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateEntry {
                    gene: w[0].0,
                    cell: w[0].1,
                });
            }
        }

        let nnz = triplets.len();
        let mut cell_ptr = vec![0usize; n_cells + 1];
        let mut cell_genes = Vec::with_capacity(nnz);
        let mut cell_counts = Vec::with_capacity(nnz);
        let mut cell_totals = vec![0u64; n_cells];
        let mut gene_ptr = vec![0usize; n_genes + 1];
        for &(g, c, x) in &triplets {
            cell_ptr[c + 1] += 1;
            gene_ptr[g + 1] += 1;
            cell_genes.push(g as u32);
            cell_counts.push(x);
            cell_totals[c] += u64::from(x);
        }
        for j in 0..n_cells {
            cell_ptr[j + 1] += cell_ptr[j];
        }
        for i in 0..n_genes {
            gene_ptr[i + 1] += gene_ptr[i];
        }

        // Counting sort into the gene-major view; cell order within a gene
        // stays ascending because triplets are already cell-major.
        let mut cursor = gene_ptr.clone();
        let mut gene_cells = vec![0u32; nnz];
        let mut gene_counts = vec![0u32; nnz];
        for &(g, c, x) in &triplets {
            let slot = cursor[g];
            gene_cells[slot] = c as u32;
            gene_counts[slot] = x;
            cursor[g] += 1;
        }

        Ok(Self {
            gene_ids,
            cell_ids,
            cell_ptr,
            cell_genes,
            cell_counts,
            gene_ptr,
            gene_cells,
            gene_counts,
            cell_totals,
        })
    }

    /// Builds a matrix from dense rows (one row per gene, one column per cell).
    pub fn from_dense(
        gene_ids: Vec<String>,
        cell_ids: Vec<String>,
        rows: &[Vec<u32>],
    ) -> Result<Self> {
        if rows.len() != gene_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gene ids but {} rows",
                gene_ids.len(),
                rows.len()
            )));
        }
        let mut triplets = Vec::new();
        for (g, row) in rows.iter().enumerate() {
            if row.len() != cell_ids.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row {g} has {} values, expected {}",
                    row.len(),
                    cell_ids.len()
                )));
            }
            triplets.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0)
                    .map(|(c, &x)| (g, c, x)),
            );
        }
        Self::from_triplets(gene_ids, cell_ids, triplets)
    }

    /// Convenience constructor with generated `gene{i}` / `cell{j}` ids.
    pub fn from_dense_unnamed(rows: &[Vec<u32>]) -> Result<Self> {
        let n_cells = rows.first().map_or(0, Vec::len);
        Self::from_dense(
            default_ids("gene", rows.len()),
            default_ids("cell", n_cells),
            rows,
        )
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.cell_genes.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    /// T_j for every cell.
    pub fn cell_totals(&self) -> &[u64] {
        &self.cell_totals
    }

    /// Nonzero genes of cell `j`.
    pub fn cell(&self, j: usize) -> SparseVec<'_> {
        let r = self.cell_ptr[j]..self.cell_ptr[j + 1];
        SparseVec {
            indices: &self.cell_genes[r.clone()],
            counts: &self.cell_counts[r],
        }
    }

    /// Nonzero cells of gene `i`.
    pub fn gene(&self, i: usize) -> SparseVec<'_> {
        let r = self.gene_ptr[i]..self.gene_ptr[i + 1];
        SparseVec {
            indices: &self.gene_cells[r.clone()],
            counts: &self.gene_counts[r],
        }
    }

    pub fn get(&self, gene: usize, cell: usize) -> u32 {
        let v = self.cell(cell);
        match v.indices.binary_search(&(gene as u32)) {
            Ok(p) => v.counts[p],
            Err(_) => 0,
        }
    }

    /// All nonzeros as `(gene, cell, count)`, cell-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_cells()).flat_map(move |j| self.cell(j).iter().map(move |(g, x)| (g, j, x)))
    }

    /// Number of expressed genes per cell.
    pub fn genes_per_cell(&self) -> Vec<usize> {
        self.cell_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of expressing cells per gene.
    pub fn cells_per_gene(&self) -> Vec<usize> {
        self.gene_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Dense genes × cells copy. Intended for small matrices and tests.
    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        let mut rows = vec![vec![0u32; self.n_cells()]; self.n_genes()];
        for (g, c, x) in self.entries() {
            rows[g][c] = x;
        }
        rows
    }

    /// Restricts the matrix to the given genes and cells, in the given order.
    pub fn subset(&self, genes: &[usize], cells: &[usize]) -> Result<Self> {
        let mut gene_map = vec![usize::MAX; self.n_genes()];
        for (new, &old) in genes.iter().enumerate() {
            if old >= self.n_genes() {
                return Err(Error::invalid(format!("gene index {old} out of range")));
            }
            gene_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_c, &old_c) in cells.iter().enumerate() {
            if old_c >= self.n_cells() {
                return Err(Error::invalid(format!("cell index {old_c} out of range")));
            }
            for (g, x) in self.cell(old_c).iter() {
                let ng = gene_map[g];
                if ng != usize::MAX {
                    triplets.push((ng, new_c, x));
                }
            }
        }
        Self::from_triplets(
            genes.iter().map(|&g| self.gene_ids[g].clone()).collect(),
            cells.iter().map(|&c| self.cell_ids[c].clone()).collect(),
            triplets,
        )
    }

    /// Approximate heap footprint of the count storage in bytes.
    pub fn heap_bytes(&self) -> usize {
        let idx = std::mem::size_of::<usize>();
        let strings: usize = self
            .gene_ids
            .iter()
            .chain(&self.cell_ids)
            .map(|s| s.capacity() + std::mem::size_of::<String>())
            .sum();
        strings
            + (self.cell_ptr.len() + self.gene_ptr.len()) * idx
            + (self.cell_genes.len() + self.cell_counts.len()) * 4
            + (self.gene_cells.len() + self.gene_counts.len()) * 4
            + self.cell_totals.len() * 8
    }
}

pub(crate) fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}
