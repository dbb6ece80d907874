//! Plain-text serialization of fit results and label files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::{ConvergenceReason, FitResult, ResponsibilityMatrix};
use crate::error::{Error, Result};
use crate::matrix::open_text;

pub const LABELS_FILE: &str = "labels.tsv";
pub const POSTERIOR_FILE: &str = "posterior.tsv";
pub const ALPHA_FILE: &str = "alpha.tsv";
pub const PI_FILE: &str = "pi.tsv";

/// Cluster ids in files are 1-based.
pub fn write_labels<W: Write>(cell_ids: &[String], labels: &[usize], mut w: W) -> std::io::Result<()> {
    writeln!(w, "cell\tcluster")?;
    for (id, &z) in cell_ids.iter().zip(labels) {
        writeln!(w, "{id}\t{}", z + 1)?;
    }
    Ok(())
}

fn cluster_header<W: Write>(w: &mut W, first: &str, k: usize) -> std::io::Result<()> {
    write!(w, "{first}")?;
    for c in 1..=k {
        write!(w, "\tcluster_{c}")?;
    }
    writeln!(w)
}

pub fn write_posterior<W: Write>(
    cell_ids: &[String],
    delta: &ResponsibilityMatrix,
    mut w: W,
) -> std::io::Result<()> {
    cluster_header(&mut w, "cell", delta.n_clusters())?;
    for (id, row) in cell_ids.iter().zip(delta.rows()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_alpha<W: Write>(gene_ids: &[String], fit: &FitResult, mut w: W) -> std::io::Result<()> {
    let alphas = fit.model.alphas();
    cluster_header(&mut w, "gene", alphas.len())?;
    for (i, id) in gene_ids.iter().enumerate() {
        write!(w, "{id}")?;
        for a in alphas {
            write!(w, "\t{}", a.values()[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_pi<W: Write>(pi: &[f64], mut w: W) -> std::io::Result<()> {
    write!(w, "pi")?;
    for p in pi {
        write!(w, "\t{p}")?;
    }
    writeln!(w)
}

/// Convergence facts of a fit, for run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_clusters: usize,
    pub converged: bool,
    pub reason: ConvergenceReason,
    pub iterations: usize,
    pub seed: u64,
    pub restart_index: usize,
    pub final_loglik: f64,
    pub loglik_decreases: usize,
    pub loglik_trace: Vec<f64>,
    pub n_vague_cells: usize,
}

impl FitSummary {
    pub fn new(fit: &FitResult, vague_threshold: f64) -> Self {
        Self {
            n_clusters: fit.model.n_clusters(),
            converged: fit.converged,
            reason: fit.reason,
            iterations: fit.iterations,
            seed: fit.seed,
            restart_index: fit.restart_index,
            final_loglik: fit.final_loglik(),
            loglik_decreases: fit.loglik_decreases,
            loglik_trace: fit.loglik_trace.clone(),
            n_vague_cells: crate::metrics::vague_cells(&fit.responsibilities, vague_threshold).len(),
        }
    }
}

/// Writes labels, posterior, alpha and pi files into `dir`.
pub fn write_fit_files(
    dir: &Path,
    fit: &FitResult,
    cell_ids: &[String],
    gene_ids: &[String],
) -> Result<()> {
    let create = |name: &str| -> Result<(std::path::PathBuf, std::io::BufWriter<std::fs::File>)> {
        let p = dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, std::io::BufWriter::new(f)))
    };
    let finish = |p: &Path, mut w: std::io::BufWriter<std::fs::File>, r: std::io::Result<()>| {
        r.and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
    };
    let (p, mut w) = create(LABELS_FILE)?;
    let r = write_labels(cell_ids, &fit.hard_labels, &mut w);
    finish(&p, w, r)?;
    let (p, mut w) = create(POSTERIOR_FILE)?;
    let r = write_posterior(cell_ids, &fit.responsibilities, &mut w);
    finish(&p, w, r)?;
    let (p, mut w) = create(ALPHA_FILE)?;
    let r = write_alpha(gene_ids, fit, &mut w);
    finish(&p, w, r)?;
    let (p, mut w) = create(PI_FILE)?;
    let r = write_pi(fit.model.pi(), &mut w);
    finish(&p, w, r)
}

/// Reads a two-column `cell<TAB>label` file with a header line. Labels are
/// arbitrary tokens.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = open_text(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next()) {
            (Some(c), Some(l)) if !c.is_empty() && !l.trim().is_empty() => {
                out.push((c.to_string(), l.trim().to_string()))
            }
            _ => return Err(Error::parse(path, n + 1, "expected 'cell<TAB>label'")),
        }
    }
    Ok(out)
}

/// Maps label tokens to dense indices in order of first appearance.
pub fn densify_labels(tokens: &[String]) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    tokens
        .iter()
        .map(|t| {
            let next = ids.len();
            *ids.entry(t.as_str()).or_insert(next)
        })
        .collect()
}

/// Reads a posterior file written by [`write_posterior`].
pub fn read_posterior(path: &Path) -> Result<(Vec<String>, ResponsibilityMatrix)> {
    let reader = open_text(path)?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or_default().to_string();
        let row = parts
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        ids.push(id);
        rows.push(row);
    }
    let delta = ResponsibilityMatrix::from_rows(&rows)?;
    Ok((ids, delta))
}
