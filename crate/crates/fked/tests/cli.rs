mod common;

use std::fs;
use std::time::Instant;

use common::{fked, path, read_columns, sim_dataset};
use fked::commands::{execute, Command};
use fked::RunConfig;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fit_sim(dir: &std::path::Path) -> std::path::PathBuf {
    let cov = sim_dataset(dir, 25);
    let out = dir.join("fit");
    let o = fked(&[
        "fit", "--input", path(&dir.join("obs.csv")), "--covariates", path(&cov), "--out", path(&out),
        "--n-basis", "10", "--penalty", "1e-4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("model.json")
}

#[test]
fn empty_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let out = dir.path().join("out");
    let o = fked(&["fit", "--input", path(&input), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    fs::write(&input, "site_id,x,y,t,value\n").unwrap();
    assert_eq!(fked(&["smooth", "--input", path(&input), "--out", path(&out)]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "site_id,x,y,t,value\na,0,0,0,1\na,0,0,0.5,1\nb,1,1,0,x\n").unwrap();
    let o = fked(&["smooth", "--input", path(&input), "--out", path(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv:4:"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = fked(&["bands", "--out", path(&out), "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fked(&["bands", "--out", path(&out), "--families", "cubic"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fked(&["bands", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn smooth_writes_curves_and_basis() {
    let dir = tempfile::tempdir().unwrap();
    sim_dataset(dir.path(), 25);
    let out = dir.path().join("s");
    let o = fked(&["smooth", "--input", path(&dir.path().join("obs.csv")), "--out", path(&out), "--n-basis", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let basis: fked_core::BasisSpec = serde_json::from_str(&fs::read_to_string(out.join("basis.json")).unwrap()).unwrap();
    assert_eq!(basis.n_basis, 10);
    assert_eq!(basis.knots.len(), 14);
    let curves = fked::formats::read_curves(&out.join("curves.csv"), basis.clone()).unwrap();
    assert_eq!(curves.len(), 25);
    let again = fked::formats::curves_csv(&curves).unwrap();
    assert_eq!(again, fs::read(out.join("curves.csv")).unwrap());
}

#[test]
fn predictions_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_sim(dir.path());
    let out = dir.path().join("p");
    let o = fked(&["predict", "--model", path(&model), "--covariates", path(&dir.path().join("covariates.json")), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_columns(&out.join("weights.csv"));
    assert_eq!(h, ["target_id", "site_id", "weight"]);
    assert_eq!(rows.len(), 10 * 25);
    for k in 0..10 {
        let s: f64 = rows[k * 25..(k + 1) * 25].iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-10);
    }
    let (h, rows) = read_columns(&out.join("predictions.csv"));
    assert_eq!(h, ["target_id", "t", "predicted_value"]);
    assert_eq!(rows.len(), 10 * 101);
}

#[test]
fn missing_target_covariates_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_sim(dir.path());
    let d = dir.path();
    fs::write(d.join("sites.csv"), "site_id,elev\ns1,1\n").unwrap();
    fs::write(d.join("m2.json"), r#"{"coordinates": true, "scalars": {"file": "sites.csv"}, "targets": "targets.csv"}"#).unwrap();
    let out = d.join("b");
    let o = fked(&["bands", "--model", path(&model), "--covariates", path(&d.join("m2.json")), "--out", path(&out), "--B", "5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    fs::write(d.join("m3.json"), r#"{"coordinates": true}"#).unwrap();
    let o = fked(&["bands", "--model", path(&model), "--covariates", path(&d.join("m3.json")), "--out", path(&out), "--B", "5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn single_replicate_band_is_degenerate_but_valid() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_sim(dir.path());
    let out = dir.path().join("b1");
    let o = fked(&[
        "bands", "--model", path(&model), "--covariates", path(&dir.path().join("covariates.json")), "--out", path(&out),
        "--B", "1", "--contrasts",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for m in ["mbd", "l2"] {
        let (h, rows) = read_columns(&out.join(format!("v1_{m}.csv")));
        assert_eq!(h, ["t", "prediction", "lower", "upper"]);
        assert_eq!(rows.len(), 101);
        assert!(rows.iter().all(|r| r[2] == r[3]));
    }
    let (_, rows) = read_columns(&out.join("v1_contrasts.csv"));
    assert_eq!(rows.len(), 101);
}

#[test]
fn bands_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_sim(dir.path());
    let cov = dir.path().join("covariates.json");
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = fked(&[
            "bands", "--model", path(&model), "--covariates", path(&cov), "--out", path(&out), "--B", "60", "--seed", "7",
            "--threads", threads, "--contrasts",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "4"));
    for k in 1..=10 {
        for f in [format!("v{k}_mbd.csv"), format!("v{k}_l2.csv"), format!("v{k}_contrasts.csv")] {
            let x = fs::read(a.join(&f)).unwrap();
            assert_eq!(x, fs::read(b.join(&f)).unwrap(), "{f}");
            assert_eq!(x, fs::read(c.join(&f)).unwrap(), "{f}");
        }
    }
    let other = dir.path().join("d");
    let o = fked(&["bands", "--model", path(&model), "--covariates", path(&cov), "--out", path(&other), "--B", "60", "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("v1_mbd.csv")).unwrap(), fs::read(other.join("v1_mbd.csv")).unwrap());
}

#[test]
fn coverage_report_from_saved_contrasts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = fit_sim(d);
    let bands = d.join("bands");
    let o = fked(&[
        "bands", "--model", path(&model), "--covariates", path(&d.join("covariates.json")), "--out", path(&bands),
        "--B", "100", "--contrasts",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = |name: &str, extra: &[&str]| {
        let out = d.join(name);
        let truth = d.join("truth.csv");
        let mut args = vec!["report", "--input", path(&bands), "--truth", path(&truth), "--out", path(&out)];
        args.extend_from_slice(extra);
        let o = fked(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        read_columns(&out.join("coverage.csv")).1
    };
    let base = rep("r0", &[]);
    assert_eq!(base.len(), 20);
    let same = rep("r1", &["--alpha", "0.05"]);
    assert_eq!(base, same);
    let narrow = rep("r2", &["--alpha", "0.5"]);
    for (w, n) in base.iter().zip(&narrow) {
        assert!(w[2].parse::<f64>().unwrap() >= n[2].parse::<f64>().unwrap());
        assert!(w[4].parse::<f64>().unwrap() >= n[4].parse::<f64>().unwrap());
    }
    let o = fked(&["report", "--input", path(&bands), "--out", path(&d.join("r3"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_smoke_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("smoke.json");
    fs::write(&input, r#"{"name": "smoke", "n": 25, "sigma2": 0.25, "phi": 0.5}"#).unwrap();
    let out = d.join("sim");
    let started = Instant::now();
    let o = fked(&["simulate", "--input", path(&input), "--out", path(&out), "--B", "50", "--repetitions", "1"]);
    let secs = started.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(secs < 60.0, "smoke run took {secs}s");
    let (h, rows) = read_columns(&out.join("report.csv"));
    assert_eq!(h, ["scenario", "n", "sigma2", "phi", "site", "method", "mean_width", "domain_coverage", "functional_coverage"]);
    assert_eq!(rows.len(), 20);
    assert!(out.join("bands/smoke_n25/v1_mbd.csv").exists());
    let (h, data) = read_columns(&out.join("data/smoke_n25_fitting.csv"));
    assert_eq!(h, ["site_id", "x", "y", "t", "value"]);
    assert_eq!(data.len(), 25 * 101);

    let relaxed = d.join("relaxed");
    let o = fked(&["report", "--input", path(&out.join("runs.csv")), "--out", path(&relaxed), "--threshold", "0.9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = read_columns(&relaxed.join("report.csv")).1;
    assert_eq!(again.len(), 20);
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!(a[..8], b[..8]);
        assert!(b[8].parse::<f64>().unwrap() >= a[8].parse::<f64>().unwrap());
    }
    let same = d.join("same");
    let o = fked(&["report", "--input", path(&out.join("runs.csv")), "--out", path(&same)]);
    assert!(o.status.success());
    assert_eq!(fs::read(same.join("report.csv")).unwrap(), fs::read(out.join("report.csv")).unwrap());
}

#[test]
fn invalid_scenarios_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("s.json");
    let out = d.join("o");
    fs::write(&input, r#"{"n": 25, "sigma2": 0.25, "phi": 0.5}"#).unwrap();
    let o = fked(&["simulate", "--input", path(&input), "--out", path(&out), "--repetitions", "0", "--B", "50"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = fked(&["simulate", "--input", path(&input), "--out", path(&out), "--repetitions", "1", "--B", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    for bad in [r#"{"n": 25, "sigma": 0.25}"#, r#"{"n": 2}"#, r#"{"phi": -1}"#, r#"{"scenarios": []}"#, "[1, 2"] {
        fs::write(&input, bad).unwrap();
        let o = fked(&["simulate", "--input", path(&input), "--out", path(&out), "--repetitions", "1", "--B", "50"]);
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sim_dataset(d, 25);
    fs::write(
        d.join("run.json"),
        r#"{"input": "obs.csv", "covariates": "covariates.json", "out": "fitted", "n_basis": 10, "penalty": 0.0001,
            "families": ["exponential"], "nugget": "zero", "threads": 2}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&d.join("run.json")).unwrap();
    let staged = execute(Command::Fit, &cfg).unwrap();
    let model: fked::ModelFile = serde_json::from_slice(staged.get("model.json").unwrap()).unwrap();
    assert_eq!(model.model.variogram.family, fked_core::Family::Exponential);
    let o = fked(&["fit", "--config", path(&d.join("run.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(d.join("fitted/model.json")).unwrap(), staged.get("model.json").unwrap());
}
