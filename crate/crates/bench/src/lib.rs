//! Shared fixtures for the criterion benches in `benches/`.

use dirmix::{simulate, DirichletMixtureModel, ScenarioTemplate, Simulation};

/// Simulated data of the given shape with K well-separated clusters.
pub fn dataset(n_clusters: usize, n_genes: usize, n_cells: usize, depth: u32) -> Simulation {
    let t = ScenarioTemplate {
        n_clusters,
        n_genes,
        n_cells,
        depth,
        seed: 17,
        ..ScenarioTemplate::default()
    };
    simulate(&t.to_spec().expect("valid template")).expect("simulation succeeds")
}

/// The generating model, used as a fixed point for step benchmarks.
pub fn true_model(n_clusters: usize, n_genes: usize, n_cells: usize, depth: u32) -> DirichletMixtureModel {
    let t = ScenarioTemplate {
        n_clusters,
        n_genes,
        n_cells,
        depth,
        seed: 17,
        ..ScenarioTemplate::default()
    };
    let spec = t.to_spec().expect("valid template");
    DirichletMixtureModel::new(spec.alphas, spec.cluster_proportions).expect("valid model")
}
