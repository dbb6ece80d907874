use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dirmix::{Axis, InitStrategy};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "dirmix", version, about = "Dirichlet-multinomial mixture clustering of single-cell UMI counts")]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only print errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Cluster a count matrix with a fixed K.
    Fit(FitArgs),
    /// Generate a synthetic count matrix with known labels.
    Simulate(SimulateArgs),
    /// Compare estimated labels with reference labels.
    Evaluate(EvaluateArgs),
    /// Fit a range of K and tabulate AIC and BIC.
    SelectK(SelectKArgs),
    /// Beta-marginal and mean-variance checks for one cluster.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = true)]
pub struct InputArgs {
    /// MatrixMarket coordinate file (genes × cells), optionally gzipped.
    #[arg(long, requires_all = ["genes", "barcodes"], conflicts_with = "dense")]
    pub matrix: Option<PathBuf>,
    /// Gene ID file, one per line, matching the matrix rows.
    #[arg(long, requires = "matrix")]
    pub genes: Option<PathBuf>,
    /// Cell barcode file, one per line, matching the matrix columns.
    #[arg(long, requires = "matrix")]
    pub barcodes: Option<PathBuf>,
    /// Dense tab-separated matrix with a header of cell IDs and gene IDs in
    /// the first column.
    #[arg(long)]
    pub dense: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Keep this many most variable genes; clamped to the gene count.
    #[arg(long, default_value_t = 1000)]
    pub top_genes: usize,
    /// Drop cells expressing fewer genes than this.
    #[arg(long, default_value_t = 300)]
    pub min_genes_per_cell: usize,
    /// Drop genes expressed in fewer cells than this.
    #[arg(long, default_value_t = 5)]
    pub min_cells_per_gene: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EmArgs {
    /// Initialization: kr, kw, rr or rw (labels from K-means or random,
    /// concentrations by Ronning or Weir–Hill).
    #[arg(long, default_value = "kr", value_parser = parse_strategy)]
    #[serde(serialize_with = "as_display")]
    pub init: InitStrategy,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Relative log-likelihood change threshold.
    #[arg(long, default_value_t = 1e-6)]
    pub tol_loglik: f64,
    /// Threshold on the summed squared change of mixing proportions.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_pi: f64,
    /// Reinitialize clusters that lose all responsibility mass.
    #[arg(long)]
    pub reseed_empty: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub em: EmArgs,
    /// Number of clusters.
    #[arg(long)]
    pub k: usize,
    /// Cells whose largest posterior is below this are listed as vague.
    #[arg(long, default_value_t = 0.95)]
    pub vague_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Exact simulation spec (JSON, as written to spec.json). Overrides the
    /// scenario options.
    #[arg(long, conflicts_with_all = ["axis", "level"])]
    pub spec: Option<PathBuf>,
    /// Scenario axis to set: snr, n_clusters, n_genes, n_cells, depth,
    /// informative_fraction.
    #[arg(long, requires = "level", value_parser = parse_axis)]
    #[serde(serialize_with = "opt_display")]
    pub axis: Option<Axis>,
    /// Value for --axis (for snr: the perturbation effect size).
    #[arg(long, requires = "axis")]
    pub level: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub n_genes: usize,
    #[arg(long, default_value_t = 600)]
    pub n_cells: usize,
    /// UMI total per cell.
    #[arg(long, default_value_t = 1000)]
    pub depth: u32,
    /// Mean per-gene baseline concentration.
    #[arg(long, default_value_t = 10.0)]
    pub base_alpha: f64,
    /// Relative spread of the linear baseline ramp, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub baseline_spread: f64,
    /// Fraction of genes that differ between clusters.
    #[arg(long, default_value_t = 0.3)]
    pub informative_fraction: f64,
    /// Fold change minus one applied to each cluster's informative block.
    #[arg(long, default_value_t = 1.0)]
    pub effect: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Estimated labels (cell<TAB>cluster with a header line).
    #[arg(long)]
    pub labels: PathBuf,
    /// Reference labels in the same format.
    #[arg(long)]
    pub truth: PathBuf,
    /// Posterior file; adds the vague-cell count to the report.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub vague_threshold: f64,
    /// Directory for evaluation.json; the report is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectKArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub em: EmArgs,
    /// Candidate K values: "2..6", "2-6" or "2,3,5".
    #[arg(long, value_parser = parse_k_range)]
    pub k_range: KRange,
    /// Reference labels; adds an ARI column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    /// Labels file; without it every cell is treated as one cluster.
    #[arg(long, requires = "cluster")]
    pub labels: Option<PathBuf>,
    /// Cluster label (as written in the labels file) to diagnose.
    #[arg(long, requires = "labels")]
    pub cluster: Option<String>,
    /// Genes for the Beta-marginal tables; defaults to the three with the
    /// highest mean proportion.
    #[arg(long = "gene", id = "gene")]
    pub gene_names: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// Share of genes, by proportion variance, used in the regression.
    #[arg(long, default_value_t = 0.01)]
    pub top_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct KRange(pub Vec<usize>);

fn parse_strategy(s: &str) -> Result<InitStrategy, String> {
    s.parse().map_err(|e: dirmix::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: dirmix::Error| e.to_string())
}

pub fn parse_k_range(s: &str) -> Result<KRange, String> {
    let num = |t: &str| -> Result<usize, String> {
        t.trim().parse().map_err(|_| format!("'{t}' is not a cluster count"))
    };
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..").or_else(|| s.split_once('-')) {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err("K values must be at least 1".into());
    }
    Ok(KRange(ks))
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn opt_display<T: std::fmt::Display, S: serde::Serializer>(
    v: &Option<T>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}
