use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pfmix::eval::EvalData;
use pfmix_cli::config::ModelKind;
use pfmix_cli::csv_io::{read_table, write_table_to, Table};
use pfmix_cli::fitting::{fit_model, FitSpec, PChoice};
use pfmix_cli::model_file::ModelFile;
use pfmix_cli::sweep::SweepRow;
use tempfile::TempDir;

fn pfmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = pfmix(args);
    assert!(
        out.status.success(),
        "pfmix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(dir: &Path, parts: &str) -> String {
    dir.join(parts).to_str().unwrap().to_string()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn simulate_analysis(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let out = path(dir, name);
    ok(&[
        "simulate",
        "--out",
        &out,
        "--generator",
        "analysis",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    PathBuf::from(out)
}

fn json(p: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(p)).unwrap()
}

fn results(dir: &Path) -> Vec<SweepRow> {
    let mut r = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn simulate_is_deterministic_and_follows_the_schema() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 300, 5);
    let b = simulate_analysis(tmp.path(), "b", 300, 5);
    for f in ["train.csv", "test.csv", "truth.json", "manifest.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let train = String::from_utf8(read(a.join("train.csv"))).unwrap();
    assert_eq!(train.lines().next().unwrap(), "x0,x1,x2,x3,x4,y");
    assert!(train.lines().skip(1).all(|l| l.split(',').count() == 6));
    assert_eq!(train.lines().count() - 1, 210);

    let truth = json(a.join("truth.json"));
    assert_eq!(truth["ground_truth"]["relevance"], serde_json::json!([true, false, false, false, false]));
    assert_eq!(truth["seed"], 5);
    let manifest = json(a.join("manifest.json"));
    assert_eq!(manifest["files"].as_object().unwrap().len(), 3);

    let h = path(tmp.path(), "h");
    ok(&["simulate", "--out", &h, "--generator", "hmm-sweep", "--n", "6", "--t", "4", "--d-rel", "2"]);
    let text = String::from_utf8(read(Path::new(&h).join("train.csv"))).unwrap();
    assert!(text.starts_with("seq_id,t,x0,"));
    assert!(text.lines().next().unwrap().ends_with(",x19,y"));
}

#[test]
fn simulated_csv_reserializes_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 200, 2);
    let h = path(tmp.path(), "h");
    ok(&["simulate", "--out", &h, "--generator", "hmm-sweep", "--n", "5", "--t", "7", "--d-rel", "3"]);
    for file in [a.join("train.csv"), Path::new(&h).join("test.csv")] {
        let table = read_table(&file).unwrap();
        let mut out = Vec::new();
        write_table_to(&mut out, &table).unwrap();
        assert_eq!(out, read(&file));
    }
}

#[test]
fn fit_requires_p_for_pf_kinds() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 100, 0);
    let train = path(&a, "train.csv");
    for kind in ["pf-gmm", "pf-hmm"] {
        let out = pfmix(&["fit", "--out", &path(tmp.path(), "f"), "--train", &train, "--kind", kind, "--k", "2"]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("--p") && err.contains("--p-grid"), "{err}");
    }
}

#[test]
fn refit_with_same_seed_gives_identical_model_file() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 300, 1);
    let train = path(&a, "train.csv");
    let fit = |name: &str| {
        let out = path(tmp.path(), name);
        ok(&["fit", "--out", &out, "--train", &train, "--kind", "pf-gmm", "--k", "2", "--p", "0.3", "--seed", "4"]);
        PathBuf::from(out)
    };
    let (f1, f2) = (fit("f1"), fit("f2"));
    assert_eq!(read(f1.join("model.json")), read(f2.join("model.json")));
    let r1 = json(f1.join("report.json"));
    let r2 = json(f2.join("report.json"));
    assert_eq!(r1["model_sha256"], r2["model_sha256"]);
    assert_eq!(r1["elbo_trace"], r2["elbo_trace"]);
    assert!(r1["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert_eq!(r1["seed"], 4);
}

#[test]
fn saved_model_predicts_exactly_like_the_in_memory_fit() {
    let tmp = TempDir::new().unwrap();
    let h = path(tmp.path(), "h");
    ok(&["simulate", "--out", &h, "--generator", "hmm-sweep", "--n", "20", "--t", "10", "--d-rel", "2", "--seed", "3"]);
    let train_path = path(Path::new(&h), "train.csv");
    let test = read_table(Path::new(&h).join("test.csv").as_path()).unwrap();
    let train = read_table(Path::new(&train_path)).unwrap();
    for (kind, p, name) in [
        (ModelKind::PfHmm, Some(0.2), "pf-hmm"),
        (ModelKind::TwoStepHmm, None, "2step-hmm"),
        (ModelKind::LogReg, None, "logreg"),
    ] {
        let out = path(tmp.path(), name);
        let mut args = vec!["fit", "--out", &out, "--train", &train_path, "--kind", name, "--k", "3", "--restarts", "2"];
        if p.is_some() {
            args.extend(["--p", "0.2"]);
        }
        ok(&args);
        let file = ModelFile::load(&Path::new(&out).join("model.json")).unwrap();
        let spec = FitSpec {
            kind,
            k: kind.uses_k().then_some(3),
            p: p.map_or(PChoice::NotUsed, PChoice::Fixed),
            seed: 0,
            restarts: Some(2),
            max_iters: None,
            l2: None,
        };
        let fresh = fit_model(&spec, &train).unwrap();
        assert!(matches!(test, Table::Sequences(_)));
        let flat = test.flat();
        let data = if kind.is_sequential() { test.as_eval() } else { EvalData::Flat(&flat) };
        assert_eq!(
            file.model.predict_proba(data).unwrap(),
            fresh.model.predict_proba(data).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn schema_mismatch_is_a_data_error_with_location() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "x0,x1,y\n1,2,0\n3,oops,1\n").unwrap();
    let out = pfmix(&[
        "fit",
        "--out",
        &path(tmp.path(), "f"),
        "--train",
        bad.to_str().unwrap(),
        "--kind",
        "sup-gmm",
        "--k",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("'x1'"), "{err}");
}

#[test]
fn eval_is_reproducible_and_reports_provenance() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 300, 7);
    let train = path(&a, "train.csv");
    let test = path(&a, "test.csv");
    let truth = path(&a, "truth.json");
    let fit = path(tmp.path(), "fit");
    ok(&["fit", "--out", &fit, "--train", &train, "--kind", "pf-gmm", "--k", "2", "--p", "0.1"]);
    let model = path(Path::new(&fit), "model.json");
    let e1 = path(tmp.path(), "e1");
    let e2 = path(tmp.path(), "e2");
    for e in [&e1, &e2] {
        ok(&["eval", "--out", e, "--model", &model, "--test", &test, "--truth", &truth]);
    }
    assert_eq!(read(Path::new(&e1).join("metrics.json")), read(Path::new(&e2).join("metrics.json")));
    let m = json(Path::new(&e1).join("metrics.json"));
    for key in [
        "auroc",
        "heldout_log_px",
        "heldout_log_py_given_x",
        "switch_auroc",
        "model_id",
        "seed",
        "p",
        "K",
        "config_digest",
        "library_version",
    ] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    assert_eq!(m["library_version"], pfmix::VERSION);
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);

    let lr = path(tmp.path(), "lr");
    ok(&["fit", "--out", &lr, "--train", &train, "--kind", "logreg"]);
    let le = path(tmp.path(), "le");
    ok(&["eval", "--out", &le, "--model", &path(Path::new(&lr), "model.json"), "--test", &test]);
    let m = json(Path::new(&le).join("metrics.json"));
    assert!(m["heldout_log_px"].is_null());
    assert!(m["heldout_log_py_given_x"].as_f64().unwrap() < 0.0);
}

#[test]
fn eval_arity_mismatch_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let a = simulate_analysis(tmp.path(), "a", 100, 0);
    let fit = path(tmp.path(), "fit");
    ok(&["fit", "--out", &fit, "--train", &path(&a, "train.csv"), "--kind", "logreg"]);
    let other = tmp.path().join("wide.csv");
    std::fs::write(&other, "x0,x1,y\n1,2,0\n3,4,1\n").unwrap();
    let out = pfmix(&[
        "eval",
        "--out",
        &path(tmp.path(), "e"),
        "--model",
        &path(Path::new(&fit), "model.json"),
        "--test",
        other.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_grid_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    for grid in [["--p-grid", ""], ["--k-grid", ""]] {
        let out = pfmix(&[
            "sweep",
            "--out",
            &path(tmp.path(), "s"),
            "--generator",
            "analysis",
            "--n",
            "100",
            "--kinds",
            "pf-gmm",
            "--k-grid",
            "2",
            "--p",
            "0.5",
            grid[0],
            grid[1],
        ]);
        assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "generator = \"analysis\"\nn = 100\nkinds = [\"pf-gmm\"]\nK_grid = [2]\np_grid = []\n").unwrap();
    let out = pfmix(&["sweep", "--config", cfg.to_str().unwrap(), "--out", &path(tmp.path(), "s")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_results_reproduce_bit_exactly_from_config_and_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "generator = \"analysis\"\nn = 300\nkinds = [\"pf-gmm\", \"sup-gmm\", \"2step-gmm\", \"logreg\"]\n\
         K_grid = [1, 2]\np_grid = [0.1, 0.9]\nseeds = [0, 1]\nrestarts = 2\n",
    )
    .unwrap();
    let run = |name: &str, workers: &str| {
        let out = path(tmp.path(), name);
        let status = Command::new(env!("CARGO_BIN_EXE_pfmix"))
            .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", &out])
            .env("PFMIX_WORKERS", workers)
            .status()
            .unwrap();
        assert!(status.success());
        PathBuf::from(out)
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(read(a.join("results.csv")), read(b.join("results.csv")));
    assert_eq!(read(a.join("manifest.json")), read(b.join("manifest.json")));
    let rows = results(&a);
    assert_eq!(rows.len(), 2 * 2 * 2 + 2 * 2 + 2 * 2 + 2);
    assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");

    // A flag overrides the file; the digest follows.
    let c = path(tmp.path(), "c");
    ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", &c, "--seeds", "1", "--kinds", "logreg"]);
    let rows = results(Path::new(&c));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].seed, 1);
    assert_ne!(json(a.join("manifest.json"))["config_digest"], json(Path::new(&c).join("manifest.json"))["config_digest"]);
}

fn analysis_sweep(tmp: &Path, name: &str, extra: &[&str]) -> Vec<SweepRow> {
    let out = path(tmp, name);
    let mut args = vec!["sweep", "--out", &out, "--generator", "analysis", "--n", "2000", "--kinds", "pf-gmm"];
    args.extend_from_slice(extra);
    ok(&args);
    results(Path::new(&out))
}

#[test]
fn k_grid_sweep_pf_gmm_is_robust_to_budget() {
    let tmp = TempDir::new().unwrap();
    let rows = analysis_sweep(tmp.path(), "k", &["--k-grid", "1,2,4,8", "--tune-p"]);
    let at = |k: usize| rows.iter().find(|r| r.k == Some(k)).unwrap().auroc.unwrap();
    for r in &rows {
        println!("K={:?} p*={:?} auroc={:?}", r.k, r.p, r.auroc);
    }
    assert!((at(2) - at(4)).abs() <= 0.03, "K=2 {} vs K=4 {}", at(2), at(4));
}

#[test]
fn p_grid_sweep_peaks_inside_the_grid() {
    let tmp = TempDir::new().unwrap();
    let rows = analysis_sweep(tmp.path(), "p", &["--k-grid", "2", "--p-grid", "0.000001,0.01,0.05,0.1,0.2,0.3,0.5,0.7,0.9,0.99,0.999999"]);
    let curve: Vec<(f64, f64)> = rows.iter().map(|r| (r.p.unwrap(), r.auroc.unwrap())).collect();
    println!("{curve:?}");
    let (lo, hi) = (curve[0].1, curve[curve.len() - 1].1);
    let best = curve[1..curve.len() - 1].iter().map(|c| c.1).fold(f64::MIN, f64::max);
    assert!(best > lo && best > hi, "no interior maximum: {curve:?}");
}
