//! Pipeline stages behind the subcommands.
//!
//! Layout of an output directory:
//!
//! ```text
//! dataset.csv  oracle.json  calibration.json  manifest.json
//! models/predictor.json  models/uncertainty.json  models/member-<k>.json
//! solve/instance-<i>.<method>.json
//! results.csv  summary.txt  coverage.json
//! ```

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use comicl::conformal::{conformal_rank, Calibration};
use comicl::data::{load_csv, CsvSchema, Dataset, Oracle, TaskKind, Targets};
use comicl::harness::{
    self, build_method, calibrate_models, coverage_experiment, generate_dataset, generate_test_set, instance_seed,
    read_report_csv, render_summary, sample_cost_vector, solve_instance, split_dataset, summarize, train_ensemble,
    train_predictor, train_uncertainty, write_report_csv, Artifacts, InstanceRecord, Method,
};
use comicl::models::{self, ModelBody, Predictor, UncertaintyModel};
use log::info;
use serde::Serialize;

use crate::config::Run;
use crate::manifest::RunManifest;

const DATASET: &str = "dataset.csv";
const ORACLE: &str = "oracle.json";
const PREDICTOR: &str = "models/predictor.json";
const UNCERTAINTY: &str = "models/uncertainty.json";
const CALIBRATION: &str = "calibration.json";
const RESULTS: &str = "results.csv";
const SUMMARY: &str = "summary.txt";
const COVERAGE: &str = "coverage.json";

fn member_file(k: usize) -> String {
    format!("models/member-{k}.json")
}

fn write(run: &Run, rel: &str, text: &str) -> Result<PathBuf> {
    let path = run.path(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn read(path: &Path, hint: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {} ({hint})", path.display()))
}

fn ensure_dir(run: &Run) -> Result<()> {
    std::fs::create_dir_all(&run.dir).with_context(|| format!("creating output directory {}", run.dir.display()))
}

pub fn gen_data(run: &Run) -> Result<()> {
    ensure_dir(run)?;
    let (ds, oracle) = generate_dataset(&run.cfg)?;
    let path = run.path(DATASET);
    ds.write_csv(&path).with_context(|| format!("writing {}", path.display()))?;
    write(run, ORACLE, &(serde_json::to_string_pretty(&oracle)? + "\n"))?;
    let mut m = RunManifest::current(run);
    m.artifacts.clear();
    m.record("dataset", DATASET);
    m.record("oracle", ORACLE);
    m.write(run)?;
    println!("wrote {} rows to {}", ds.n_rows(), path.display());
    Ok(())
}

fn load_oracle(run: &Run) -> Result<Oracle> {
    let path = run.path(ORACLE);
    let text = read(&path, "run `comicl gen-data` first")?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_dataset(run: &Run, oracle: &Oracle) -> Result<Dataset> {
    let path = run.path(DATASET);
    if !path.exists() {
        bail!("dataset {} does not exist; run `comicl gen-data` first", path.display());
    }
    let schema = CsvSchema { bounds: Some(oracle.feature_bounds.clone()), ..CsvSchema::for_task(run.cfg.task) };
    let ds = load_csv(&path, &schema).with_context(|| format!("loading {}", path.display()))?;
    if run.cfg.task == TaskKind::Regression {
        return Ok(ds);
    }
    // The class count comes from the oracle, not from the labels present.
    let labels = ds.labels().expect("classification labels").to_vec();
    let targets = Targets::Classification { labels, n_classes: oracle.n_classes() };
    Dataset::new(ds.features().to_vec(), targets, ds.feature_names().to_vec(), ds.feature_bounds().to_vec())
        .with_context(|| format!("loading {}", path.display()))
}

fn split(run: &Run) -> Result<(Dataset, Dataset, Oracle)> {
    let oracle = load_oracle(run)?;
    let ds = load_dataset(run, &oracle)?;
    let (train, cal) = split_dataset(&run.cfg, &ds)?;
    Ok((train, cal, oracle))
}

fn save_model(run: &Run, rel: &str, body: ModelBody) -> Result<()> {
    write(run, rel, &(models::to_json(&body)? + "\n"))?;
    Ok(())
}

fn load_model(run: &Run, rel: &str) -> Result<ModelBody> {
    let path = run.path(rel);
    let text = read(&path, "run `comicl train` first")?;
    models::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_predictor(run: &Run, rel: &str) -> Result<Predictor> {
    match load_model(run, rel)? {
        ModelBody::Predictor(p) => Ok(p),
        ModelBody::Uncertainty(_) => bail!("{} holds an uncertainty model, expected a predictor", run.path(rel).display()),
    }
}

fn load_uncertainty(run: &Run) -> Result<UncertaintyModel> {
    match load_model(run, UNCERTAINTY)? {
        ModelBody::Uncertainty(u) => Ok(u),
        ModelBody::Predictor(_) => bail!("{} holds a predictor, expected an uncertainty model", run.path(UNCERTAINTY).display()),
    }
}

pub fn train(run: &Run) -> Result<()> {
    let (train, _, _) = split(run)?;
    let cfg = &run.cfg;
    let req = cfg.requirements();
    let mut m = RunManifest::current(run);
    m.forget("model/");
    m.forget("calibration");
    m.forget("report/");
    let mut written = Vec::new();
    if req.predictor {
        let p = train_predictor(cfg, &train)?;
        if req.uncertainty {
            let u = train_uncertainty(cfg, &p, &train)?;
            save_model(run, UNCERTAINTY, ModelBody::Uncertainty(u))?;
            m.record("model/uncertainty", UNCERTAINTY);
            written.push(UNCERTAINTY.to_string());
        }
        save_model(run, PREDICTOR, ModelBody::Predictor(p))?;
        m.record("model/predictor", PREDICTOR);
        written.push(PREDICTOR.to_string());
    }
    for (k, p) in train_ensemble(cfg, &train, req.members)?.into_iter().enumerate() {
        let rel = member_file(k);
        save_model(run, &rel, ModelBody::Predictor(p))?;
        m.record(&format!("model/member/{k}"), &rel);
        written.push(rel);
    }
    m.write(run)?;
    written.sort();
    println!("wrote {} model file(s): {}", written.len(), written.join(", "));
    Ok(())
}

pub fn calibrate(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    if !cfg.requirements().calibration {
        bail!("calibration is only used by cmicl; `experiment.methods` does not include it");
    }
    let (_, cal, _) = split(run)?;
    let p = load_predictor(run, PREDICTOR)?;
    let u = if cfg.requirements().uncertainty { Some(load_uncertainty(run)?) } else { None };
    let c = calibrate_models(cfg, &p, u.as_ref(), &cal)?;
    write(run, CALIBRATION, &(serde_json::to_string_pretty(&c)? + "\n"))?;
    let mut m = RunManifest::current(run);
    m.forget("report/");
    m.record("calibration", CALIBRATION);
    m.write(run)?;
    print!("{}", describe_calibration(&c));
    Ok(())
}

fn describe_calibration(c: &Calibration) -> String {
    let q = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v}") };
    let mut s = format!(
        "alpha={} n_cal={} k={} q_hat={}\n",
        c.alpha,
        c.n_cal,
        conformal_rank(c.n_cal, c.alpha),
        q(c.q_hat)
    );
    for g in c.mondrian.iter().flatten() {
        s.push_str(&format!("group={} n={} k={} q_hat={}\n", g.group.0, g.size, conformal_rank(g.size, c.alpha), q(g.q_hat)));
    }
    if c.is_infinite() || c.mondrian.iter().flatten().any(|g| g.q_hat.is_infinite()) {
        s.push_str("warning: infinite quantile; the calibration set is too small for this alpha\n");
    }
    s
}

fn load_calibration(run: &Run) -> Result<Calibration> {
    let path = run.path(CALIBRATION);
    let text = read(&path, "run `comicl calibrate` first")?;
    Calibration::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Artifacts of the configured methods, read back from disk.
fn load_artifacts(run: &Run) -> Result<Artifacts> {
    let req = run.cfg.requirements();
    let oracle = load_oracle(run)?;
    let predictor = if req.predictor { Some(load_predictor(run, PREDICTOR)?) } else { None };
    let uncertainty = if req.uncertainty { Some(load_uncertainty(run)?) } else { None };
    let members = (0..req.members).map(|k| load_predictor(run, &member_file(k))).collect::<Result<Vec<_>>>()?;
    let calibration = if req.calibration { Some(load_calibration(run)?) } else { None };
    Ok(Artifacts { predictor, uncertainty, members, calibration, oracle })
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    #[serde(flatten)]
    record: &'a InstanceRecord,
    cost_seed: u64,
    costs: Vec<f64>,
    solution: Option<&'a [f64]>,
    members_feasible: Option<usize>,
}

fn lp_path(base: &Path, method: Method, single: bool) -> PathBuf {
    if single {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{method}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{method}"),
    };
    base.with_file_name(name)
}

pub fn solve(run: &Run, emit_lp: Option<&Path>, instance: usize) -> Result<()> {
    let cfg = &run.cfg;
    let art = load_artifacts(run)?;
    let methods = &cfg.experiment.methods;
    let cost_seed = instance_seed(cfg.seed, instance);
    let costs = sample_cost_vector(cfg.task, cost_seed);
    let mut m = RunManifest::current(run);
    let mut infeasible = Vec::new();
    for &method in methods {
        if let Some(base) = emit_lp {
            match build_method(cfg, &art, method, &cfg.problem_spec(costs.clone())) {
                Ok(built) => {
                    let path = lp_path(base, method, methods.len() == 1);
                    std::fs::write(&path, built.model.to_lp_string())
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                Err(comicl::encoders::EncodeError::CalibrationInfeasible) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let rec = solve_instance(cfg, &art, method, instance)?;
        let out = SolveOutput {
            record: &rec,
            cost_seed,
            costs: costs.clone(),
            solution: rec.solution.as_deref(),
            members_feasible: rec.members_feasible,
        };
        let rel = format!("solve/instance-{instance}.{method}.json");
        write(run, &rel, &(serde_json::to_string_pretty(&out)? + "\n"))?;
        m.record(&format!("solve/{instance}/{method}"), &rel);
        println!(
            "{method}: status={} objective={} oracle_feasible={}",
            rec.status,
            rec.objective.map_or("-".into(), |v| v.to_string()),
            rec.oracle_feasible.map_or("-".into(), |v| v.to_string())
        );
        if rec.status == "calibration-infeasible" {
            infeasible.push(method);
        }
    }
    m.write(run)?;
    if !infeasible.is_empty() {
        bail!("instance {instance}: calibration-infeasible (infinite conformal quantile; enlarge data.n_cal or raise conformal.alpha)");
    }
    Ok(())
}

/// Reruns whichever upstream stages this configuration has not produced yet.
fn ensure_artifacts(run: &Run) -> Result<()> {
    let req = run.cfg.requirements();
    let m = RunManifest::current(run);
    if !m.has(run, &["dataset", "oracle"]) {
        gen_data(run)?;
    }
    let m = RunManifest::current(run);
    let mut models: Vec<String> = (0..req.members).map(|k| format!("model/member/{k}")).collect();
    if req.predictor {
        models.push("model/predictor".into());
    }
    if req.uncertainty {
        models.push("model/uncertainty".into());
    }
    let names: Vec<&str> = models.iter().map(String::as_str).collect();
    if !m.has(run, &names) {
        train(run)?;
    }
    if req.calibration && !RunManifest::current(run).has(run, &["calibration"]) {
        calibrate(run)?;
    }
    Ok(())
}

pub fn experiment(run: &Run) -> Result<()> {
    ensure_dir(run)?;
    ensure_artifacts(run)?;
    let cfg = &run.cfg;
    let art = load_artifacts(run)?;
    info!("solving {} instance(s) x {} method(s)", cfg.experiment.n_instances, cfg.experiment.methods.len());
    let report = harness::run_experiment_with(cfg, &art)?;
    let mut m = RunManifest::current(run);
    let results = run.path(RESULTS);
    write_report_csv(&report.records, &results)?;
    m.record("report/results", RESULTS);
    let table = render_summary(&report.summaries);
    write(run, SUMMARY, &table)?;
    m.record("report/summary", SUMMARY);
    if art.calibration.is_some() {
        let test = generate_test_set(cfg)?;
        let cov = coverage_experiment(cfg, &art, &test)?;
        write(run, COVERAGE, &(serde_json::to_string_pretty(&cov)? + "\n"))?;
        m.record("report/coverage", COVERAGE);
    }
    m.write(run)?;
    print!("{table}");
    Ok(())
}

pub fn report(run: &Run) -> Result<()> {
    let path = run.path(RESULTS);
    if !path.exists() {
        return Err(anyhow!("report CSV {} does not exist; run `comicl experiment` first", path.display()));
    }
    let records = read_report_csv(&path)?;
    print!("{}", render_summary(&summarize(&records)));
    Ok(())
}
