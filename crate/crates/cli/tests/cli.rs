use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use incmix::io::{self, DataPaths};

fn incmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incmix"))
        .args(args)
        .env_remove("INCMIX_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = incmix(args);
    assert!(
        out.status.success(),
        "incmix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small Setting 1 dataset: 12 areas (9 sampled), 3 fitted periods plus one held out.
fn simulate(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "simulate", "--setting", "1", "--out-dir", s(&data), "--seed", "11", "--areas", "12", "--sampled", "9",
        "--periods", "3", "--holdout", "1",
    ]);
    data
}

fn fit(data: &Path, out: &Path, iterations: usize, extra: &[&str]) {
    let iterations = iterations.to_string();
    let mut args = vec![
        "fit", "--data-dir", s(data), "--out", s(out), "--seed", "3", "--iterations", &iterations, "--burn-in", "20",
        "--grid-points", "19",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fit_then_summarize_covers_every_cell() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let draws = d.path().join("draws.csv");
    fit(&data, &draws, 40, &[]);
    assert_eq!(data_rows(&draws).len(), 40);
    let summary = d.path().join("summary.csv");
    ok(&[
        "summarize", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--seed", "3",
        "--quantities", "ai,mi,gini", "--out", s(&summary),
    ]);
    let rows = data_rows(&summary);
    for q in ["ai", "mi", "gini"] {
        let n = rows.iter().filter(|r| r[3] == q).count();
        assert_eq!(n, 12 * 3, "{q}");
    }
    let spatial = rows.iter().filter(|r| r[2] == "spatial" && r[3] == "ai").count();
    assert_eq!(spatial, 3 * 3);
    for r in &rows {
        let (mean, lo, hi): (f64, f64, f64) = (r[5].parse().unwrap(), r[7].parse().unwrap(), r[8].parse().unwrap());
        assert!(lo <= mean && mean <= hi || (hi - lo) < 1e-12, "{r:?}");
    }

    let eval = d.path().join("eval.csv");
    ok(&[
        "evaluate", "--truth", s(&data.join("truth.csv")), "--truth-counts", s(&data.join("truth_counts.csv")),
        "--summary", s(&summary), "--out", s(&eval),
    ]);
    let scopes: Vec<String> = data_rows(&eval).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(scopes, ["in-sample", "spatial"]);
}

#[test]
fn summary_with_totals_adds_class_counts() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let draws = d.path().join("draws.csv");
    fit(&data, &draws, 10, &[]);
    let summary = d.path().join("summary.csv");
    ok(&[
        "summarize", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--quantities", "bins",
        "--totals", s(&data.join("truth_counts.csv")), "--out", s(&summary),
    ]);
    let n_bins = 9;
    assert_eq!(data_rows(&summary).len(), 12 * 3 * n_bins);
}

#[test]
fn fit_is_byte_reproducible_and_manifest_tracks_inputs() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let (a, b) = (d.path().join("a.csv"), d.path().join("b.csv"));
    fit(&data, &a, 40, &[]);
    fit(&data, &b, 40, &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.with_extension("manifest.json")).unwrap()).unwrap()
    };
    let ma = manifest(&a);
    assert_eq!(ma["seed"], 3);
    assert_eq!(ma["config"]["mcmc"]["iterations"], 40);
    assert_eq!(ma["inputs"].as_array().unwrap().len(), 5);
    let phases: Vec<&str> = ma["phases"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(phases, ["load", "sample", "write"]);
    assert_eq!(ma["inputs_sha256"], manifest(&b)["inputs_sha256"]);

    // change one covariate digit
    let cov = data.join("covariates.csv");
    let text = std::fs::read_to_string(&cov).unwrap();
    let pos = text.rfind(|c: char| c.is_ascii_digit() && c != '9').unwrap();
    let mut bytes = text.into_bytes();
    bytes[pos] += 1;
    std::fs::write(&cov, bytes).unwrap();
    let c = d.path().join("c.csv");
    fit(&data, &c, 40, &[]);
    assert_ne!(ma["inputs_sha256"], manifest(&c)["inputs_sha256"]);
}

#[test]
fn config_file_and_environment_seed() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let config = d.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"n_components": 2, "rho_grid_points": 19, "mcmc": {"iterations": 5, "burn_in": 5}}"#,
    )
    .unwrap();
    let run = |out: &Path, seed_env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_incmix"));
        cmd.args(["fit", "--data-dir", s(&data), "--config", s(&config), "--out", s(out)]);
        match seed_env {
            Some(v) => cmd.env("INCMIX_SEED", v),
            None => cmd.env_remove("INCMIX_SEED"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.with_extension("manifest.json")).unwrap()).unwrap();
        m["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&d.path().join("x.csv"), None), 1);
    assert_eq!(run(&d.path().join("y.csv"), Some("77")), 77);
    let header = std::fs::read_to_string(d.path().join("y.csv")).unwrap();
    assert!(header.starts_with("sweep,beta[1][0]"));
    assert!(header.lines().next().unwrap().ends_with("eta0[2]"));
    assert!(!header.contains("sigma2[3]"));
}

#[test]
fn predict_uses_fractional_horizon() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let draws = d.path().join("draws.csv");
    fit(&data, &draws, 2000, &[]);
    let (summary, eta) = (d.path().join("pred.csv"), d.path().join("eta.csv"));
    ok(&[
        "predict", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--horizon", "0.4",
        "--quantities", "ai", "--out", s(&summary), "--eta-out", s(&eta),
    ]);
    let rows = data_rows(&summary);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r[1] == "3" && r[2] == "temporal"));

    // standardise each predicted effect by its own state's N(η_T, 0.4 α)
    let header: Vec<String> = std::fs::read_to_string(&draws)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let fitted = data_rows(&draws);
    let predicted = data_rows(&eta);
    assert_eq!(fitted.len(), predicted.len());
    for (k, j) in [(2, 1), (3, 2)] {
        let (ce, ca) = (col(&format!("eta[{k}][2]")), col(&format!("alpha[{k}]")));
        let z: Vec<f64> = fitted
            .iter()
            .zip(&predicted)
            .map(|(f, p)| {
                let last: f64 = f[ce].parse().unwrap();
                let alpha: f64 = f[ca].parse().unwrap();
                (p[j].parse::<f64>().unwrap() - last) / (0.4 * alpha).sqrt()
            })
            .collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.1, "k={k} mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "k={k} var {var}");
    }
}

#[test]
fn interpolate_writes_non_sampled_effects() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let draws = d.path().join("draws.csv");
    fit(&data, &draws, 7, &[]);
    let out = d.path().join("ustar.csv");
    ok(&["interpolate", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "sweep,u[2][9],u[2][10],u[2][11],u[3][9],u[3][10],u[3][11]");
    assert_eq!(data_rows(&out).len(), 7);
}

#[test]
fn spatial_only_fits_every_period_and_cannot_predict() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let draws = d.path().join("draws.csv");
    fit(&data, &draws, 4, &["--variant", "spatial-only"]);
    let rows = data_rows(&draws);
    assert_eq!(rows.len(), 3 * 4);
    assert_eq!(rows[4][0], "1");
    let out = incmix(&[
        "predict", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--out",
        s(&d.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let summary = d.path().join("summary.csv");
    ok(&[
        "summarize", "--data-dir", s(&data), "--draws", s(&draws), "--grid-points", "19", "--quantities", "ai",
        "--out", s(&summary),
    ]);
    assert_eq!(data_rows(&summary).len(), 12 * 3);
}

#[test]
fn select_k_reports_each_k() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let out = d.path().join("select.csv");
    ok(&[
        "select-k", "--data-dir", s(&data), "--range", "1..2", "--jobs", "2", "--iterations", "30", "--burn-in",
        "30", "--grid-points", "9", "--out", s(&out),
    ]);
    let rows = data_rows(&out);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["1", "2"]);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let out = d.path().join("x.csv");
    assert_eq!(incmix(&[]).status.code(), Some(1));
    assert_eq!(incmix(&["--help"]).status.code(), Some(0));
    assert_eq!(incmix(&["fit", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(
        incmix(&["fit", "--data-dir", s(&data), "--variant", "bogus", "--out", s(&out)]).status.code(),
        Some(1)
    );
    assert_eq!(
        incmix(&["fit", "--data-dir", s(&d.path().join("missing")), "--out", s(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(incmix(&["select-k", "--data-dir", s(&data), "--range", "3..2"]).status.code(), Some(1));

    std::fs::write(data.join("edges.csv"), "from,to\n0,1\n").unwrap();
    let bad = incmix(&["fit", "--data-dir", s(&data), "--out", s(&out), "--iterations", "1", "--burn-in", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no reverse edge"));
}

#[test]
fn simulated_files_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let data = simulate(d.path());
    let paths = DataPaths::in_dir(&data);
    let copy = d.path().join("copy");
    std::fs::create_dir_all(&copy).unwrap();
    let again = DataPaths::in_dir(&copy);
    io::write_counts(&again.counts, &io::read_counts(&paths.counts).unwrap()).unwrap();
    io::write_classes(&again.classes, &io::read_classes(&paths.classes).unwrap()).unwrap();
    io::write_covariates(&again.covariates, &io::read_covariates(&paths.covariates).unwrap()).unwrap();
    io::write_edges(&again.edges, &io::read_edges(&paths.edges).unwrap()).unwrap();
    io::write_partition(&again.partition, &io::read_partition(&paths.partition).unwrap()).unwrap();
    for (a, b) in paths.all().iter().zip(again.all()) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{}", a.display());
    }
    let ds = io::load_dataset(&paths).unwrap();
    assert_eq!(ds.areas.len(), 12);
    assert_eq!(ds.areas.n_sampled(), 9);
    assert_eq!(ds.panel.n_periods(), 3);
    assert_eq!(ds.panel.covariates().n_periods(), 4);
}
