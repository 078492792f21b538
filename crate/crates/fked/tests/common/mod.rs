#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fked_core::simlab::{gen_field, gen_observations};
use fked_core::{BasisSpec, RawObservation, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fked(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fked")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_long(path: &Path, rows: &[RawObservation]) {
    fked::formats::observations_csv(rows).map(|b| fs::write(path, b).unwrap()).unwrap();
}

/// Simulated scenario data as files: `obs.csv`, `targets.csv`,
/// `truth.csv` and a coordinate-covariate manifest `covariates.json`.
pub fn sim_dataset(dir: &Path, n: usize) -> PathBuf {
    let sc = Scenario::new(n, 0.5, 1.0);
    let data = gen_observations(&sc, 0).unwrap();
    let m = sc.grid().len();
    write_long(&dir.join("obs.csv"), &data.fitting[..n * m]);
    write_long(&dir.join("truth.csv"), &data.validation);
    let mut targets = String::from("target_id,x,y\n");
    for (k, (x, y)) in data.layout.validation.iter().enumerate() {
        targets.push_str(&format!("v{},{x},{y}\n", k + 1));
    }
    fs::write(dir.join("targets.csv"), targets).unwrap();
    fs::write(dir.join("covariates.json"), r#"{"coordinates": true, "targets": "targets.csv"}"#).unwrap();
    dir.join("covariates.json")
}

fn field_curves(coords: &[(f64, f64)], domain: (f64, f64), sigma2: f64, phi: f64, rng: &mut ChaCha8Rng) -> impl Fn(usize, f64) -> f64 {
    let xi = gen_field(coords, sigma2, phi, 10, rng).unwrap();
    let basis = BasisSpec::uniform(domain.0, domain.1, 10, 0.0).unwrap();
    move |i, t| basis.eval_at(t, 0).unwrap().iter().zip(xi.row(i)).map(|(b, c)| b * c).sum()
}

/// Daily temperature-like curves at 35 stations in a 7 x 4.5 degree box:
/// 30 fitting stations, 5 validation stations with their true curves.
pub fn canadian_like(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut coords: Vec<(f64, f64)> = Vec::new();
    while coords.len() < 35 {
        let c = (-67.0 + 7.0 * rng.random::<f64>(), 43.5 + 4.5 * rng.random::<f64>());
        if coords.iter().all(|p| (p.0 - c.0).hypot(p.1 - c.1) > 0.2) {
            coords.push(c);
        }
    }
    let field = field_curves(&coords, (1.0, 365.0), 2.0, 2.0, &mut rng);
    let (mut fit, mut truth) = (Vec::new(), Vec::new());
    let mut targets = String::from("target_id,x,y\n");
    for (i, &(x, y)) in coords.iter().enumerate() {
        let id = if i < 30 { format!("st{:02}", i + 1) } else { format!("val{}", i - 29) };
        if i >= 30 {
            targets.push_str(&format!("{id},{x},{y}\n"));
        }
        for d in 1..=365 {
            let t = d as f64;
            let season = 11.0 * (2.0 * std::f64::consts::PI * (t - 105.0) / 365.0).sin();
            let v = 6.0 - 0.9 * (y - 45.5) + 0.3 * (x + 63.0) + season + field(i, t) + 0.4 * normal(&mut rng);
            let obs = RawObservation { site_id: id.clone(), x, y, t, value: v };
            if i < 30 { fit.push(obs) } else { truth.push(obs) }
        }
    }
    write_long(&dir.join("canadian_temperature.csv"), &fit);
    write_long(&dir.join("canadian_truth.csv"), &truth);
    fs::write(dir.join("canadian_validation.csv"), targets).unwrap();
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Daily concentrations from October to March at 34 sites: 24 fitting, 10
/// validation. Altitude plus five functional covariates.
pub fn pm10_like(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut coords: Vec<(f64, f64)> = Vec::new();
    while coords.len() < 34 {
        let c = (7.0 + 2.0 * rng.random::<f64>(), 44.0 + 2.0 * rng.random::<f64>());
        if coords.iter().all(|p| (p.0 - c.0).hypot(p.1 - c.1) > 0.05) {
            coords.push(c);
        }
    }
    let altitude: Vec<f64> = (0..34).map(|_| 100.0 + 900.0 * rng.random::<f64>()).collect();
    let field = field_curves(&coords, (1.0, 182.0), 0.04, 0.5, &mut rng);
    let names = ["mixing_height", "precipitation", "wind_speed", "temperature", "emissions"];
    let phases: Vec<Vec<f64>> = (0..5).map(|_| (0..34).map(|_| rng.random::<f64>()).collect()).collect();
    let covariate = |k: usize, i: usize, t: f64| -> f64 {
        let w = 2.0 * std::f64::consts::PI * t / (30.0 + 15.0 * k as f64);
        1.0 + 0.5 * (w + 6.0 * phases[k][i]).sin() + 0.2 * (0.3 * w).cos() + 0.1 * k as f64
    };
    let mut response = Vec::new();
    let mut covs: Vec<Vec<RawObservation>> = vec![Vec::new(); 5];
    let mut sites = String::from("site_id,altitude\n");
    let mut targets = String::from("target_id,x,y\n");
    let mut truth = Vec::new();
    for (i, &(x, y)) in coords.iter().enumerate() {
        let id = if i < 24 { format!("p{:02}", i + 1) } else { format!("v{:02}", i - 23) };
        sites.push_str(&format!("{id},{}\n", altitude[i]));
        if i >= 24 {
            targets.push_str(&format!("{id},{x},{y}\n"));
        }
        for d in 1..=182 {
            let t = d as f64;
            let mut log_v = 3.6 + 0.4 * (2.0 * std::f64::consts::PI * t / 182.0).sin() - 0.0005 * altitude[i];
            for (k, c) in covs.iter_mut().enumerate() {
                let v = covariate(k, i, t);
                log_v += 0.15 * (k as f64 - 2.0) * v;
                c.push(RawObservation { site_id: id.clone(), x, y, t, value: v });
            }
            log_v += field(i, t) + 0.05 * normal(&mut rng);
            let obs = RawObservation { site_id: id.clone(), x, y, t, value: log_v.exp() };
            if i < 24 { response.push(obs) } else { truth.push(obs) }
        }
    }
    write_long(&dir.join("pm10.csv"), &response);
    write_long(&dir.join("pm10_truth.csv"), &truth);
    for (k, n) in names.iter().enumerate() {
        write_long(&dir.join(format!("pm10_{n}.csv")), &covs[k]);
    }
    fs::write(dir.join("pm10_sites.csv"), sites).unwrap();
    fs::write(dir.join("pm10_validation.csv"), targets).unwrap();
}

pub fn copy_presets(dir: &Path, names: &[&str]) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for n in names {
        fs::copy(src.join(n), dir.join(n)).unwrap();
    }
}

/// Columns of a CSV file by header name.
pub fn read_columns(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (headers, rows)
}
