use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sim300")
}

fn dirmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirmix"))
        .args(args)
        .output()
        .expect("failed to run dirmix")
}

fn ok(args: &[&str]) -> Output {
    let out = dirmix(args);
    assert!(
        out.status.success(),
        "dirmix {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn input_args(dir: &Path) -> Vec<String> {
    let f = |n: &str| dir.join(n).to_string_lossy().into_owned();
    vec![
        "--matrix".into(),
        f("matrix.mtx"),
        "--genes".into(),
        f("genes.tsv"),
        "--barcodes".into(),
        f("barcodes.tsv"),
        "--min-genes-per-cell".into(),
        "0".into(),
        "--min-cells-per-gene".into(),
        "0".into(),
    ]
}

fn fit(dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(input_args(dir));
    args.extend(["--k", "3", "--seed", "5", "--restarts", "3", "--out"].map(String::from));
    args.push(out.to_string_lossy().into_owned());
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_is_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    fit(&fixture(), &a, &["--threads", "1"]);
    fit(&fixture(), &b, &["--threads", "3"]);
    for name in ["labels.tsv", "posterior.tsv", "alpha.tsv", "pi.tsv", "vague_cells.tsv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let labels = fs::read_to_string(a.join("labels.tsv")).unwrap();
    assert_eq!(labels.lines().count(), 301);
    assert!(labels.starts_with("cell\tcluster\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "fit");
    assert_eq!(meta["config"]["command"]["fit"]["em"]["seed"], 5);
    assert_eq!(meta["config"]["command"]["fit"]["em"]["init"], "kr");
    assert!(meta["results"]["fit"]["loglik_trace"].as_array().unwrap().len() >= 2);
}

#[test]
fn simulate_fit_evaluate_chain_is_pinned() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    // Replaying the bundled spec regenerates the bundled fixture exactly.
    ok(&["simulate", "--spec", s(&fixture().join("spec.json")), "--out", s(&sim)]);
    for name in ["matrix.mtx", "genes.tsv", "barcodes.tsv", "truth.tsv"] {
        assert_eq!(
            fs::read(sim.join(name)).unwrap(),
            fs::read(fixture().join(name)).unwrap(),
            "{name} differs from the fixture"
        );
    }
    let out = tmp.path().join("fit");
    fit(&sim, &out, &[]);
    let eval = ok(&[
        "evaluate",
        "--labels",
        s(&out.join("labels.tsv")),
        "--truth",
        s(&sim.join("truth.tsv")),
        "--posterior",
        s(&out.join("posterior.tsv")),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let ari = report["ari"].as_f64().unwrap();
    assert!((ari - 0.7749554685059744).abs() < 1e-12, "ari {ari}");
    assert_eq!(report["n_clusters_estimated"], 3);
    assert!(report["n_vague_cells"].as_u64().is_some());
}

#[test]
fn scenario_flags_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&[
        "simulate", "--axis", "n_clusters", "--level", "2", "--n-genes", "20", "--n-cells", "40",
        "--depth", "50", "--out", s(&out),
    ]);
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("spec.json")).unwrap()).unwrap();
    assert_eq!(spec["n_clusters"], 2);
    assert_eq!(spec["n_genes"], 20);
    assert!(out.join("metadata.json").exists());
    let bad = dirmix(&["simulate", "--axis", "bogus", "--level", "1", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_input_fails_in_input_stage_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = dirmix(&[
        "fit", "--matrix", "/does/not/exist.mtx", "--genes", "/nope", "--barcodes", "/nope", "--k",
        "2", "--out", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("input stage"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn top_genes_is_clamped_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let r = fit(&fixture(), &out, &["--top-genes", "1000"]);
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("--top-genes 1000 exceeds"), "{stderr}");
    let alpha = fs::read_to_string(out.join("alpha.tsv")).unwrap();
    assert_eq!(alpha.lines().count(), 61);

    let small = tmp.path().join("small");
    fit(&fixture(), &small, &["--top-genes", "25"]);
    assert_eq!(fs::read_to_string(small.join("alpha.tsv")).unwrap().lines().count(), 26);
}

#[test]
fn evaluate_rejects_mismatched_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let short = tmp.path().join("short.tsv");
    fs::write(&short, "cell\tcluster\ncell1\t1\ncell2\t2\n").unwrap();
    let r = dirmix(&["evaluate", "--labels", s(&short), "--truth", s(&fixture().join("truth.tsv"))]);
    assert_eq!(r.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&r.stderr).contains("evaluate stage"));
}

#[test]
fn evaluate_matches_cells_by_id() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = fs::read_to_string(fixture().join("truth.tsv")).unwrap();
    let mut lines: Vec<&str> = truth.lines().collect();
    lines[1..].reverse();
    let shuffled = tmp.path().join("rev.tsv");
    fs::write(&shuffled, lines.join("\n")).unwrap();
    let out = tmp.path().join("eval");
    let r = ok(&[
        "evaluate", "--labels", s(&shuffled), "--truth", s(&fixture().join("truth.tsv")), "--out",
        s(&out),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["ari"], 1.0);
    assert!(out.join("evaluation.json").exists());
    assert!(out.join("metadata.json").exists());
}

#[test]
fn select_k_emits_one_row_per_k() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sel");
    let mut args: Vec<String> = vec!["select-k".into()];
    args.extend(input_args(&fixture()));
    args.extend(["--k-range", "2..4", "--restarts", "2", "--truth"].map(String::from));
    args.push(fixture().join("truth.tsv").to_string_lossy().into_owned());
    args.push("--out".into());
    args.push(out.to_string_lossy().into_owned());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let r = ok(&refs);
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("selected K by AIC: "));
    let table = fs::read_to_string(out.join("selection.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("k\tloglik\tn_parameters\taic\tbic\tari"));
    for (row, k) in rows[1..].iter().zip(2..) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols[0], k.to_string());
        assert_eq!(cols[2], (k * 60 + k - 1).to_string());
        assert_eq!(cols[6], "ok");
    }
    assert!(out.join("metadata.json").exists());
}

#[test]
fn diagnose_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("diag");
    let mut args: Vec<String> = vec!["diagnose".into()];
    args.extend(input_args(&fixture()));
    args.extend(["--top-fraction", "0.5", "--labels"].map(String::from));
    args.push(fixture().join("truth.tsv").to_string_lossy().into_owned());
    args.extend(["--cluster", "2", "--gene", "gene40", "--bins", "20", "--out"].map(String::from));
    args.push(out.to_string_lossy().into_owned());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
    let beta = fs::read_to_string(out.join("beta_gene40.tsv")).unwrap();
    assert_eq!(beta.lines().count(), 21);
    let mv = fs::read_to_string(out.join("mean_variance.tsv")).unwrap();
    assert!(mv.lines().count() > 10);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["results"]["n_members"].as_u64().unwrap() > 50);

    let bad = tmp.path().join("bad");
    let mut args2 = args.clone();
    let gi = args2.iter().position(|a| a == "gene40").unwrap();
    args2[gi] = "nosuchgene".into();
    *args2.last_mut().unwrap() = bad.to_string_lossy().into_owned();
    let refs: Vec<&str> = args2.iter().map(String::as_str).collect();
    let r = dirmix(&refs);
    assert_eq!(r.status.code(), Some(9));
    assert!(!bad.exists());
}

#[test]
fn dense_input_gives_the_same_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let mtx = fs::read_to_string(fixture().join("matrix.mtx")).unwrap();
    let genes: Vec<String> = fs::read_to_string(fixture().join("genes.tsv")).unwrap().lines().map(String::from).collect();
    let cells: Vec<String> = fs::read_to_string(fixture().join("barcodes.tsv")).unwrap().lines().map(String::from).collect();
    let mut dense = vec![vec![0u32; cells.len()]; genes.len()];
    for line in mtx.lines().filter(|l| !l.starts_with('%')).skip(1) {
        let v: Vec<usize> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        dense[v[0] - 1][v[1] - 1] = v[2] as u32;
    }
    let mut text = format!("\t{}\n", cells.join("\t"));
    for (g, row) in genes.iter().zip(&dense) {
        let r: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        text.push_str(&format!("{g}\t{}\n", r.join("\t")));
    }
    let path = tmp.path().join("dense.tsv");
    fs::write(&path, text).unwrap();

    let from_dense = tmp.path().join("d");
    ok(&[
        "fit", "--dense", s(&path), "--min-genes-per-cell", "0", "--min-cells-per-gene", "0", "--k",
        "3", "--seed", "5", "--restarts", "3", "--out", s(&from_dense),
    ]);
    let from_mtx = tmp.path().join("m");
    fit(&fixture(), &from_mtx, &[]);
    assert_eq!(
        fs::read(from_dense.join("labels.tsv")).unwrap(),
        fs::read(from_mtx.join("labels.tsv")).unwrap()
    );
}

#[test]
fn flag_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let f = fixture();
    let r = dirmix(&["fit", "--dense", s(&f.join("matrix.mtx")), "--matrix", "x", "--k", "2", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = dirmix(&["fit", "--matrix", s(&f.join("matrix.mtx")), "--k", "2", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(input_args(&f));
    args.extend(["--k", "0", "--out"].map(String::from));
    args.push(out.to_string_lossy().into_owned());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(dirmix(&refs).status.code(), Some(2));
    let mut args: Vec<String> = vec!["fit".into()];
    args.extend(input_args(&f));
    args.extend(["--k", "2", "--max-iter", "0", "--out"].map(String::from));
    args.push(out.to_string_lossy().into_owned());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(dirmix(&refs).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn filtering_everything_is_a_preprocess_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let f = fixture();
    let r = dirmix(&[
        "fit", "--matrix", s(&f.join("matrix.mtx")), "--genes", s(&f.join("genes.tsv")), "--barcodes",
        s(&f.join("barcodes.tsv")), "--k", "2", "--out", s(&out),
    ]);
    // The default 300-genes-per-cell threshold removes every cell of a 60-gene matrix.
    assert_eq!(r.status.code(), Some(4));
    assert!(!out.exists());
}
