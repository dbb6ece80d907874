use std::collections::HashMap;
use std::path::Path;

use dirmix::diagnostics::{beta_marginal_table, mean_variance_regression};
use dirmix::init::ronning_alpha;
use dirmix::matrix::{
    filter_cells_and_genes, load_dense_tsv, load_sparse_matrix, select_top_variable_genes,
    write_id_file, write_matrix_market, FilterReport,
};
use dirmix::metrics::{adjusted_rand_index, vague_cells};
use dirmix::output::{
    densify_labels, read_labels, read_posterior, write_alpha, write_labels, write_pi,
    write_posterior, FitSummary,
};
use dirmix::simulate::min_pairwise_snr;
use dirmix::{
    fit_multi_restart, select_k, simulate, FilterCriteria, FitConfig, ScenarioTemplate,
    SimulationSpec, SparseCountMatrix,
};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    Cli, Command, DiagnoseArgs, EmArgs, EvaluateArgs, FitArgs, InputArgs, PreprocessArgs,
    SelectKArgs, SimulateArgs,
};
use crate::stage::{fail, AtStage, Stage, StageResult};
use crate::staging::Staging;

pub const METADATA_FILE: &str = "metadata.json";

/// Run context shared by all subcommands.
pub struct Context<'a> {
    pub cli: &'a Cli,
    pub argv: Vec<String>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: &'a [String],
    config: &'a Cli,
    results: Value,
}

impl Context<'_> {
    fn write_metadata(&self, staging: &mut Staging, command: &'static str, results: Value) -> StageResult<()> {
        let meta = Metadata {
            tool: "dirmix",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: &self.argv,
            config: self.cli,
            results,
        };
        staging
            .write(METADATA_FILE, |w| {
                serde_json::to_writer_pretty(&mut *w, &meta)?;
                writeln!(w)
            })
            .at(Stage::Output)
    }
}

pub fn run(ctx: &Context<'_>) -> StageResult<()> {
    match &ctx.cli.command {
        Command::Fit(a) => cmd_fit(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
        Command::Evaluate(a) => cmd_evaluate(ctx, a),
        Command::SelectK(a) => cmd_select_k(ctx, a),
        Command::Diagnose(a) => cmd_diagnose(ctx, a),
    }
}

fn load_input(input: &InputArgs) -> StageResult<SparseCountMatrix> {
    let m = match (&input.matrix, &input.genes, &input.barcodes, &input.dense) {
        (Some(mtx), Some(g), Some(b), None) => load_sparse_matrix(mtx, g, b),
        (None, None, None, Some(d)) => load_dense_tsv(d),
        _ => return fail(Stage::Config, "give either --matrix/--genes/--barcodes or --dense"),
    }
    .at(Stage::Input)?;
    info!("loaded {} genes x {} cells, {} nonzeros", m.n_genes(), m.n_cells(), m.nnz());
    Ok(m)
}

#[derive(Serialize)]
struct PreprocessReport {
    filter: FilterReport,
    top_genes_requested: usize,
    genes_used: usize,
}

fn preprocess(m: &SparseCountMatrix, p: &PreprocessArgs) -> StageResult<(SparseCountMatrix, PreprocessReport)> {
    let criteria = FilterCriteria {
        min_genes_per_cell: p.min_genes_per_cell,
        min_cells_per_gene: p.min_cells_per_gene,
    };
    let (filtered, report) = filter_cells_and_genes(m, criteria).at(Stage::Preprocess)?;
    info!(
        "filtering removed {} cells and {} genes",
        report.cells_removed, report.genes_removed
    );
    if p.top_genes == 0 {
        return fail(Stage::Config, "--top-genes must be at least 1");
    }
    let n = if p.top_genes > filtered.n_genes() {
        warn!(
            "--top-genes {} exceeds the {} genes left after filtering; using all of them",
            p.top_genes,
            filtered.n_genes()
        );
        filtered.n_genes()
    } else {
        p.top_genes
    };
    let selected = select_top_variable_genes(&filtered, n).at(Stage::Preprocess)?;
    let report = PreprocessReport {
        filter: report,
        top_genes_requested: p.top_genes,
        genes_used: selected.n_genes(),
    };
    Ok((selected, report))
}

fn fit_config(em: &EmArgs) -> StageResult<FitConfig> {
    let cfg = FitConfig {
        max_iterations: em.max_iter,
        loglik_rel_tol: em.tol_loglik,
        pi_sq_tol: em.tol_pi,
        n_restarts: em.restarts,
        reseed_empty: em.reseed_empty,
        ..FitConfig::default()
    };
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

/// Labels for `cell_ids` looked up by ID in a labels file.
fn labels_for_cells(path: &Path, cell_ids: &[String], stage: Stage) -> StageResult<Vec<String>> {
    let pairs = read_labels(path).at(Stage::Input)?;
    let map: HashMap<&str, &str> = pairs.iter().map(|(c, l)| (c.as_str(), l.as_str())).collect();
    if map.len() != pairs.len() {
        return fail(stage, format!("{} lists a cell more than once", path.display()));
    }
    cell_ids
        .iter()
        .map(|c| match map.get(c.as_str()) {
            Some(l) => Ok(l.to_string()),
            None => fail(stage, format!("cell {c} is missing from {}", path.display())),
        })
        .collect()
}

fn cmd_fit(ctx: &Context<'_>, a: &FitArgs) -> StageResult<()> {
    let cfg = fit_config(&a.em)?;
    if a.k == 0 {
        return fail(Stage::Config, "--k must be at least 1");
    }
    if !(0.0..=1.0).contains(&a.vague_threshold) {
        return fail(Stage::Config, "--vague-threshold must lie in [0, 1]");
    }
    let raw = load_input(&a.input)?;
    let (m, prep) = preprocess(&raw, &a.preprocess)?;
    let result = fit_multi_restart(&m, a.k, &a.em.init, &cfg, a.em.seed).at(Stage::Fit)?;
    let summary = FitSummary::new(&result, a.vague_threshold);
    info!(
        "best restart {} reached log-likelihood {} in {} iterations ({:?})",
        result.restart_index,
        summary.final_loglik,
        result.iterations,
        result.reason
    );

    let mut out = Staging::new(&a.out).at(Stage::Output)?;
    out.write("labels.tsv", |w| write_labels(m.cell_ids(), &result.hard_labels, w))
        .at(Stage::Output)?;
    out.write("posterior.tsv", |w| write_posterior(m.cell_ids(), &result.responsibilities, w))
        .at(Stage::Output)?;
    out.write("alpha.tsv", |w| write_alpha(m.gene_ids(), &result, w))
        .at(Stage::Output)?;
    out.write("pi.tsv", |w| write_pi(result.model.pi(), w))
        .at(Stage::Output)?;
    let vague = vague_cells(&result.responsibilities, a.vague_threshold);
    out.write("vague_cells.tsv", |w| {
        writeln!(w, "cell\tmax_posterior")?;
        for &j in &vague {
            let top = result.responsibilities.row(j).iter().copied().fold(0.0, f64::max);
            writeln!(w, "{}\t{top}", m.cell_ids()[j])?;
        }
        Ok(())
    })
    .at(Stage::Output)?;
    ctx.write_metadata(
        &mut out,
        "fit",
        json!({ "preprocess": prep, "fit": summary, "pi": result.model.pi() }),
    )?;
    out.commit().at(Stage::Output)?;
    println!(
        "K = {}: log-likelihood {} after {} iterations (converged: {}), {} vague cells",
        a.k,
        summary.final_loglik,
        summary.iterations,
        summary.converged,
        vague.len()
    );
    Ok(())
}

fn cmd_simulate(ctx: &Context<'_>, a: &SimulateArgs) -> StageResult<()> {
    let spec: SimulationSpec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(anyhow::Error::from)
                .map_err(|e| e.context(format!("reading {}", path.display())))
                .at(Stage::Input)?;
            serde_json::from_str(&text).at(Stage::Input)?
        }
        None => {
            let mut t = ScenarioTemplate {
                n_clusters: a.n_clusters,
                n_genes: a.n_genes,
                n_cells: a.n_cells,
                depth: a.depth,
                base_alpha: a.base_alpha,
                baseline_spread: a.baseline_spread,
                informative_fraction: a.informative_fraction,
                effect: a.effect,
                seed: a.seed,
            };
            if let (Some(axis), Some(level)) = (a.axis, a.level) {
                t = t.with_level(axis, level).at(Stage::Config)?;
            }
            t.to_spec().at(Stage::Config)?
        }
    };
    let sim = simulate(&spec).at(Stage::Simulate)?;
    let snr = min_pairwise_snr(&spec.alphas).at(Stage::Simulate)?;

    let mut out = Staging::new(&a.out).at(Stage::Output)?;
    out.write("matrix.mtx", |w| write_matrix_market(&sim.matrix, w))
        .at(Stage::Output)?;
    out.write("genes.tsv", |w| write_id_file(sim.matrix.gene_ids(), w))
        .at(Stage::Output)?;
    out.write("barcodes.tsv", |w| write_id_file(sim.matrix.cell_ids(), w))
        .at(Stage::Output)?;
    out.write("truth.tsv", |w| write_labels(sim.matrix.cell_ids(), &sim.labels, w))
        .at(Stage::Output)?;
    out.write("spec.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &spec)?;
        writeln!(w)
    })
    .at(Stage::Output)?;
    let snr_value = if snr.is_finite() { json!(snr) } else { json!("inf") };
    ctx.write_metadata(
        &mut out,
        "simulate",
        json!({ "spec": spec, "min_pairwise_snr": snr_value, "nnz": sim.matrix.nnz() }),
    )?;
    out.commit().at(Stage::Output)?;
    println!(
        "simulated {} genes x {} cells in {} clusters (min pairwise SNR {snr})",
        spec.n_genes, spec.n_cells, spec.n_clusters
    );
    Ok(())
}

fn cmd_evaluate(ctx: &Context<'_>, a: &EvaluateArgs) -> StageResult<()> {
    let est = read_labels(&a.labels).at(Stage::Input)?;
    let truth = read_labels(&a.truth).at(Stage::Input)?;
    if est.len() != truth.len() {
        return fail(
            Stage::Evaluate,
            format!("{} has {} cells but {} has {}", a.labels.display(), est.len(), a.truth.display(), truth.len()),
        );
    }
    let cell_ids: Vec<String> = est.iter().map(|(c, _)| c.clone()).collect();
    let truth_tokens = labels_for_cells(&a.truth, &cell_ids, Stage::Evaluate)?;
    let est_tokens: Vec<String> = est.into_iter().map(|(_, l)| l).collect();
    let est_dense = densify_labels(&est_tokens);
    let truth_dense = densify_labels(&truth_tokens);
    let ari = adjusted_rand_index(&est_dense, &truth_dense).at(Stage::Evaluate)?;
    let mut report = json!({
        "n_cells": cell_ids.len(),
        "n_clusters_estimated": est_dense.iter().max().map_or(0, |m| m + 1),
        "n_clusters_truth": truth_dense.iter().max().map_or(0, |m| m + 1),
        "ari": ari,
    });
    if let Some(p) = &a.posterior {
        let (ids, delta) = read_posterior(p).at(Stage::Input)?;
        if ids != cell_ids {
            return fail(Stage::Evaluate, "posterior cells differ from the label file");
        }
        report["vague_threshold"] = json!(a.vague_threshold);
        report["n_vague_cells"] = json!(vague_cells(&delta, a.vague_threshold).len());
    }
    if let Some(dir) = &a.out {
        let mut out = Staging::new(dir).at(Stage::Output)?;
        out.write("evaluation.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)
        })
        .at(Stage::Output)?;
        ctx.write_metadata(&mut out, "evaluate", report.clone())?;
        out.commit().at(Stage::Output)?;
    }
    println!("{}", serde_json::to_string(&report).at(Stage::Output)?);
    Ok(())
}

fn cmd_select_k(ctx: &Context<'_>, a: &SelectKArgs) -> StageResult<()> {
    let cfg = fit_config(&a.em)?;
    let raw = load_input(&a.input)?;
    let (m, prep) = preprocess(&raw, &a.preprocess)?;
    let truth = match &a.truth {
        Some(p) => Some(densify_labels(&labels_for_cells(p, m.cell_ids(), Stage::Input)?)),
        None => None,
    };
    let table = select_k(&m, &a.k_range.0, &a.em.init, &cfg, a.em.seed, truth.as_deref()).at(Stage::Fit)?;
    if table.rows.iter().all(|r| r.error.is_some()) {
        return fail(Stage::Fit, "every K in the range failed");
    }
    let mut out = Staging::new(&a.out).at(Stage::Output)?;
    out.write("selection.tsv", |w| table.write_tsv(w)).at(Stage::Output)?;
    let summary = table.summary();
    out.write("summary.txt", |w| writeln!(w, "{summary}")).at(Stage::Output)?;
    ctx.write_metadata(&mut out, "select-k", json!({ "preprocess": prep, "table": table }))?;
    out.commit().at(Stage::Output)?;
    println!("{summary}");
    Ok(())
}

/// File-name-safe version of a gene ID.
fn file_token(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_diagnose(ctx: &Context<'_>, a: &DiagnoseArgs) -> StageResult<()> {
    let raw = load_input(&a.input)?;
    let (m, prep) = preprocess(&raw, &a.preprocess)?;
    let members: Vec<usize> = match (&a.labels, &a.cluster) {
        (Some(path), Some(cluster)) => {
            let labels = labels_for_cells(path, m.cell_ids(), Stage::Input)?;
            labels
                .iter()
                .enumerate()
                .filter(|(_, l)| *l == cluster)
                .map(|(j, _)| j)
                .collect()
        }
        _ => (0..m.n_cells()).collect(),
    };
    if members.len() < 2 {
        return fail(Stage::Diagnose, format!("{} member cells; need at least two", members.len()));
    }
    let alpha = ronning_alpha(&m, &members).at(Stage::Diagnose)?;
    let gene_index: HashMap<&str, usize> =
        m.gene_ids().iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let genes: Vec<usize> = if a.gene_names.is_empty() {
        let mut order: Vec<usize> = (0..m.n_genes()).collect();
        order.sort_by(|&x, &y| alpha.values()[y].total_cmp(&alpha.values()[x]).then(x.cmp(&y)));
        order.truncate(3);
        order
    } else {
        a.gene_names
            .iter()
            .map(|g| match gene_index.get(g.as_str()) {
                Some(&i) => Ok(i),
                None => fail(Stage::Diagnose, format!("gene {g} is not among the selected genes")),
            })
            .collect::<StageResult<_>>()?
    };
    let regression = mean_variance_regression(&m, &members, a.top_fraction).at(Stage::Diagnose)?;
    let tables = genes
        .iter()
        .map(|&i| beta_marginal_table(&m, &members, &alpha, i, a.bins))
        .collect::<dirmix::Result<Vec<_>>>()
        .at(Stage::Diagnose)?;

    let mut out = Staging::new(&a.out).at(Stage::Output)?;
    out.write("mean_variance.tsv", |w| regression.write_tsv(w, m.gene_ids()))
        .at(Stage::Output)?;
    let mut beta_files = Vec::new();
    for t in &tables {
        let name = format!("beta_{}.tsv", file_token(&m.gene_ids()[t.gene]));
        out.write(&name, |w| t.write_tsv(w)).at(Stage::Output)?;
        beta_files.push(json!({
            "gene": m.gene_ids()[t.gene],
            "file": name,
            "shape_a": t.shape_a,
            "shape_b": t.shape_b,
            "total_variation": t.total_variation(),
        }));
    }
    let results = json!({
        "preprocess": prep,
        "n_members": members.len(),
        "precision": alpha.precision(),
        "regression": {
            "n_genes": regression.points.len(),
            "slope": regression.slope,
            "intercept": regression.intercept,
            "reference_slope": regression.reference_slope,
            "reference_intercept": regression.reference_intercept,
        },
        "beta_marginals": beta_files,
    });
    ctx.write_metadata(&mut out, "diagnose", results)?;
    out.commit().at(Stage::Output)?;
    println!(
        "log-variance = {:.4} * log-mean + {:.4} over {} genes (reference slope 1, intercept {:.4})",
        regression.slope,
        regression.intercept,
        regression.points.len(),
        regression.reference_intercept
    );
    Ok(())
}
