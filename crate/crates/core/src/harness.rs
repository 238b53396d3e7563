//! Experiment pipeline: data generation, training, calibration, random-cost
//! instances for each formulation, ground-truth feasibility checks and
//! aggregate metrics with 95% confidence intervals.
//!
//! The run configuration doubles as the command-line config file schema.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::conformal::{
    calibrate, coverage_eval, max_abs_logit, mondrian_calibrate, score_classification, score_regression, Calibration,
    ConformalError, GroupId, ScoreKind,
};
use crate::data::{self, oracle_feasible, DataError, Dataset, Oracle, OutcomeSet, TaskKind};
use crate::encoders::{
    build_cmicl, build_micl, build_wmicl, BuiltProblem, ClassConformalOptions, EncodeError, ProblemSpec, CLASS_EPS,
    FEASIBLE_GROUP, INFEASIBLE_GROUP,
};
use crate::interval::Interval;
use crate::mip::FEASIBILITY_TOL;
use crate::models::{
    argmax, fit_forest, fit_gbt, fit_lmdt, fit_tree, fit_uncertainty, train_mlp, Ensemble, ForestConfig, GbtConfig,
    MlpConfig, MlpTarget, ModelError, Predictor, TreeConfig, UncertaintyModel,
};
use crate::rng::{derive_seed, stream};
use crate::solver::{branch_and_bound, SolveOptions, SolveStatus, SolverError};

/// Range of the sampled cost coefficients.
pub const COST_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("at least two observations are needed, got {0}")]
    TooFewSamples(usize),
    #[error("instance {instance} ({method}): solver point violates the model constraints")]
    Inconsistent { instance: usize, method: Method },
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Micl,
    Wmicl,
    Cmicl,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Micl => "micl",
            Method::Wmicl => "wmicl",
            Method::Cmicl => "cmicl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "micl" => Ok(Method::Micl),
            "wmicl" => Ok(Method::Wmicl),
            "cmicl" => Ok(Method::Cmicl),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mlp,
    Cart,
    Rf,
    Gbt,
    Lmdt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_train: 800, n_cal: 200, n_test: 1000, noise_sigma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: Family,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub uncertainty_hidden: Vec<usize>,
    pub uncertainty_epochs: usize,
    pub uncertainty_learning_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Mlp,
            hidden: vec![16, 16],
            epochs: 4000,
            learning_rate: 0.1,
            l2: 0.01,
            max_depth: 4,
            n_estimators: 10,
            uncertainty_hidden: vec![8],
            uncertainty_epochs: 2000,
            uncertainty_learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConformalConfig {
    pub alpha: f64,
    /// Calibrate per feasibility stratum and feed the infeasible-stratum
    /// quantile to the encoder.
    pub mondrian: bool,
    pub big_m: Option<f64>,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self { alpha: 0.1, mondrian: false, big_m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Replaces the benchmark's target set.
    pub outcome: Option<OutcomeSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rel_gap: f64,
    pub node_limit: usize,
    pub time_limit: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { rel_gap: d.rel_gap, node_limit: d.node_limit, time_limit: d.time_limit }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions { rel_gap: self.rel_gap, node_limit: self.node_limit, time_limit: self.time_limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<Method>,
    pub n_instances: usize,
    /// Number of bootstrap members of the ensemble formulation.
    pub ensemble_size: usize,
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { methods: vec![Method::Micl, Method::Wmicl, Method::Cmicl], n_instances: 100, ensemble_size: 5, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub conformal: ConformalConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        let (data, model) = match task {
            TaskKind::Regression => (DataConfig::default(), ModelConfig::default()),
            TaskKind::Classification => (
                DataConfig { n_train: 2300, ..DataConfig::default() },
                ModelConfig { hidden: vec![8], epochs: 3000, learning_rate: 0.3, ..ModelConfig::default() },
            ),
        };
        Self {
            task,
            seed: 0,
            data,
            model,
            conformal: ConformalConfig::default(),
            problem: ProblemConfig::default(),
            solver: SolverConfig::default(),
            experiment: ExperimentSection::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.conformal.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(HarnessError::Config(format!("conformal.alpha = {a} is outside (0, 1)")));
        }
        if self.experiment.n_instances == 0 {
            return Err(HarnessError::Config("experiment.n_instances must be at least 1".into()));
        }
        if self.experiment.methods.is_empty() {
            return Err(HarnessError::Config("experiment.methods is empty".into()));
        }
        if self.experiment.methods.contains(&Method::Wmicl) && self.experiment.ensemble_size == 0 {
            return Err(HarnessError::Config("experiment.ensemble_size must be at least 1".into()));
        }
        if self.data.n_train == 0 || self.data.n_cal == 0 {
            return Err(HarnessError::Config("data.n_train and data.n_cal must be positive".into()));
        }
        if self.task == TaskKind::Classification && self.model.family != Family::Mlp {
            return Err(HarnessError::Config("model.family must be `mlp` for classification".into()));
        }
        if !(self.data.noise_sigma >= 0.0) {
            return Err(HarnessError::Config("data.noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Target set of the learned constraint.
    pub fn outcome(&self) -> OutcomeSet {
        self.problem.outcome.clone().unwrap_or_else(|| self.problem_spec(vec![1.0; self.n_vars()]).outcome)
    }

    pub fn n_vars(&self) -> usize {
        n_decision_vars(self.task)
    }

    /// Benchmark program with the given costs and any configured outcome override.
    pub fn problem_spec(&self, costs: Vec<f64>) -> ProblemSpec {
        let mut spec = match self.task {
            TaskKind::Regression => ProblemSpec::reactor(costs),
            TaskKind::Classification => ProblemSpec::basket(costs),
        };
        if let Some(o) = &self.problem.outcome {
            spec.outcome = o.clone();
        }
        spec
    }
}

pub fn n_decision_vars(task: TaskKind) -> usize {
    match task {
        TaskKind::Regression => data::REACTOR_FEATURES.len(),
        TaskKind::Classification => data::basket().commodities.len(),
    }
}

/// Cost vector with entries uniform on `COST_RANGE`.
pub fn sample_cost_vector(task: TaskKind, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "cost");
    let (lo, hi) = COST_RANGE;
    (0..n_decision_vars(task)).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Seed of the cost vector of instance `id`.
pub fn instance_seed(root: u64, id: usize) -> u64 {
    derive_seed(root, &format!("instance/{id}"))
}

/// Full synthetic dataset (train and calibration rows) and its oracle.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Oracle)> {
    let n = cfg.data.n_train + cfg.data.n_cal;
    let seed = derive_seed(cfg.seed, "data");
    Ok(match cfg.task {
        TaskKind::Regression => data::synth_regression(n, seed, cfg.data.noise_sigma)?,
        TaskKind::Classification => data::synth_classification(n, seed)?,
    })
}

/// Fresh out-of-sample rows from the same distribution.
pub fn generate_test_set(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seed = derive_seed(cfg.seed, "data/test");
    Ok(match cfg.task {
        TaskKind::Regression => data::synth_regression(cfg.data.n_test, seed, cfg.data.noise_sigma)?.0,
        TaskKind::Classification => data::synth_classification(cfg.data.n_test, seed)?.0,
    })
}

/// Train/calibration partition of a dataset.
pub fn split_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let frac = cfg.data.n_train as f64 / ds.n_rows() as f64;
    let s = data::split(ds, frac, derive_seed(cfg.seed, "split"))?;
    Ok((ds.subset(&s.train), ds.subset(&s.cal)))
}

fn mlp_config(cfg: &ExperimentConfig, seed_label: &str) -> MlpConfig {
    MlpConfig {
        hidden: cfg.model.hidden.clone(),
        epochs: cfg.model.epochs,
        learning_rate: cfg.model.learning_rate,
        l2: cfg.model.l2,
        seed: derive_seed(cfg.seed, seed_label),
    }
}

fn fit_predictor(cfg: &ExperimentConfig, x: &[Vec<f64>], ds: &Dataset, rows: Option<&[usize]>, label: &str) -> Result<Predictor> {
    let seed = derive_seed(cfg.seed, label);
    let m = &cfg.model;
    let pick = |v: &[f64]| -> Vec<f64> { rows.map_or_else(|| v.to_vec(), |r| r.iter().map(|&i| v[i]).collect()) };
    if let Some(labels) = ds.labels() {
        let labels: Vec<usize> = rows.map_or_else(|| labels.to_vec(), |r| r.iter().map(|&i| labels[i]).collect());
        let target = MlpTarget::Classification { labels: &labels, n_classes: ds.n_classes().unwrap_or(2) };
        return Ok(Predictor::Mlp(train_mlp(x, target, &mlp_config(cfg, label))?.model));
    }
    let y = pick(ds.y().expect("regression targets"));
    let tree = TreeConfig { max_depth: m.max_depth, min_samples_split: 2, seed };
    Ok(match m.family {
        Family::Mlp => Predictor::Mlp(train_mlp(x, MlpTarget::Regression(&y), &mlp_config(cfg, label))?.model),
        Family::Cart => Predictor::Ensemble(Ensemble::new(vec![fit_tree(x, &y, &tree)?], crate::models::Combination::Single)?),
        Family::Rf => Predictor::Ensemble(fit_forest(
            x,
            &y,
            &ForestConfig { n_trees: m.n_estimators, max_depth: m.max_depth, seed, ..Default::default() },
        )?),
        Family::Gbt => Predictor::Ensemble(fit_gbt(
            x,
            &y,
            &GbtConfig { n_estimators: m.n_estimators, max_depth: m.max_depth, seed, ..Default::default() },
        )?),
        Family::Lmdt => Predictor::Ensemble(fit_lmdt(x, &y, &TreeConfig { min_samples_split: 20, ..tree })?),
    })
}

/// Point predictor on the training rows.
pub fn train_predictor(cfg: &ExperimentConfig, train: &Dataset) -> Result<Predictor> {
    fit_predictor(cfg, train.features(), train, None, "model/predictor")
}

/// Residual-magnitude model of `predictor` on the training rows.
pub fn train_uncertainty(cfg: &ExperimentConfig, predictor: &Predictor, train: &Dataset) -> Result<UncertaintyModel> {
    let y = train.y().ok_or_else(|| HarnessError::Config("uncertainty model needs a regression dataset".into()))?;
    let mc = MlpConfig {
        hidden: cfg.model.uncertainty_hidden.clone(),
        epochs: cfg.model.uncertainty_epochs,
        learning_rate: cfg.model.uncertainty_learning_rate,
        l2: 0.0,
        seed: derive_seed(cfg.seed, "model/uncertainty"),
    };
    Ok(fit_uncertainty(predictor, train.features(), y, &mc)?)
}

/// `p` predictors, each trained on its own bootstrap resample.
pub fn train_ensemble(cfg: &ExperimentConfig, train: &Dataset, p: usize) -> Result<Vec<Predictor>> {
    (0..p)
        .map(|k| {
            let mut rng = stream(cfg.seed, &format!("wmicl/bootstrap/{k}"));
            let n = train.n_rows();
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let x: Vec<Vec<f64>> = rows.iter().map(|&i| train.row(i).to_vec()).collect();
            fit_predictor(cfg, &x, train, Some(&rows), &format!("model/member/{k}"))
        })
        .collect()
}

/// Nonconformity scores of a calibration (or test) set and each row's
/// feasibility stratum.
pub fn conformal_scores(
    predictor: &Predictor,
    uncertainty: Option<&UncertaintyModel>,
    ds: &Dataset,
    outcome: &OutcomeSet,
) -> Result<(Vec<f64>, Vec<GroupId>)> {
    let mut scores = Vec::with_capacity(ds.n_rows());
    let mut groups = Vec::with_capacity(ds.n_rows());
    for i in 0..ds.n_rows() {
        let x = ds.row(i);
        let (s, feasible) = match (ds.y(), ds.labels(), outcome) {
            (Some(y), _, OutcomeSet::Interval(iv)) => {
                let unc = uncertainty.ok_or_else(|| HarnessError::Config("regression scores need an uncertainty model".into()))?;
                let s = score_regression(predictor.predict_scalar(x)?, unc.predict(x)?, y[i], unc.u_floor)?;
                (s, iv.contains(y[i]))
            }
            (_, Some(labels), OutcomeSet::Classes(cs)) => {
                (score_classification(&predictor.predict(x)?, labels[i])?, cs.contains(&labels[i]))
            }
            _ => return Err(HarnessError::Config("outcome set does not match the dataset task".into())),
        };
        scores.push(s);
        groups.push(if feasible { FEASIBLE_GROUP } else { INFEASIBLE_GROUP });
    }
    Ok((scores, groups))
}

/// Calibration record for the configured calibrator.
pub fn calibrate_models(
    cfg: &ExperimentConfig,
    predictor: &Predictor,
    uncertainty: Option<&UncertaintyModel>,
    cal: &Dataset,
) -> Result<Calibration> {
    let outcome = cfg.outcome();
    let (scores, groups) = conformal_scores(predictor, uncertainty, cal, &outcome)?;
    let kind = match cfg.task {
        TaskKind::Regression => ScoreKind::NormalizedResidual,
        TaskKind::Classification => ScoreKind::NegativeTrueLogit,
    };
    let alpha = cfg.conformal.alpha;
    let mut c = if cfg.conformal.mondrian {
        mondrian_calibrate(&scores, &groups, alpha, kind)?
    } else {
        calibrate(&scores, alpha, kind)?
    };
    if cfg.task == TaskKind::Classification {
        let logits = (0..cal.n_rows()).map(|i| predictor.predict(cal.row(i))).collect::<std::result::Result<Vec<_>, _>>()?;
        c.logit_scale = Some(max_abs_logit(&logits));
    }
    Ok(c)
}

/// Models and records the configured methods rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requirements {
    pub predictor: bool,
    pub uncertainty: bool,
    pub calibration: bool,
    pub members: usize,
}

impl ExperimentConfig {
    pub fn requirements(&self) -> Requirements {
        let has = |m| self.experiment.methods.contains(&m);
        Requirements {
            predictor: has(Method::Micl) || has(Method::Cmicl),
            uncertainty: has(Method::Cmicl) && self.task == TaskKind::Regression,
            calibration: has(Method::Cmicl),
            members: if has(Method::Wmicl) { self.experiment.ensemble_size } else { 0 },
        }
    }
}

/// Everything the formulations need, trained once per run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub predictor: Option<Predictor>,
    pub uncertainty: Option<UncertaintyModel>,
    pub members: Vec<Predictor>,
    pub calibration: Option<Calibration>,
    pub oracle: Oracle,
}

fn missing(what: &str) -> EncodeError {
    EncodeError::Invalid(format!("no {what} available for this method"))
}

impl Artifacts {
    pub fn predictor(&self) -> std::result::Result<&Predictor, EncodeError> {
        self.predictor.as_ref().ok_or_else(|| missing("predictor"))
    }

    pub fn calibration(&self) -> std::result::Result<&Calibration, EncodeError> {
        self.calibration.as_ref().ok_or_else(|| missing("calibration"))
    }
}

/// Generates data, trains the models the configured methods use and calibrates.
pub fn prepare_artifacts(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let req = cfg.requirements();
    let (ds, oracle) = generate_dataset(cfg)?;
    let (train, cal) = split_dataset(cfg, &ds)?;
    let t0 = Instant::now();
    let predictor = if req.predictor { Some(train_predictor(cfg, &train)?) } else { None };
    let uncertainty = match (&predictor, req.uncertainty) {
        (Some(p), true) => Some(train_uncertainty(cfg, p, &train)?),
        _ => None,
    };
    let members = train_ensemble(cfg, &train, req.members)?;
    info!(
        "trained {} model(s) in {:.2}s",
        predictor.is_some() as usize + uncertainty.is_some() as usize + members.len(),
        t0.elapsed().as_secs_f64()
    );
    let calibration = match (&predictor, req.calibration) {
        (Some(p), true) => {
            let c = calibrate_models(cfg, p, uncertainty.as_ref(), &cal)?;
            info!("calibrated: n={} q_hat={}", c.n_cal, c.q_hat);
            Some(c)
        }
        _ => None,
    };
    Ok(Artifacts { predictor, uncertainty, members, calibration, oracle })
}

/// Formulation of `method` for a given program.
pub fn build_method(
    cfg: &ExperimentConfig,
    art: &Artifacts,
    method: Method,
    spec: &ProblemSpec,
) -> std::result::Result<BuiltProblem, EncodeError> {
    match method {
        Method::Micl => build_micl(spec, art.predictor()?),
        Method::Wmicl => build_wmicl(spec, &art.members, cfg.conformal.alpha),
        Method::Cmicl => {
            let opts = ClassConformalOptions { big_m: cfg.conformal.big_m, eps: CLASS_EPS };
            build_cmicl(spec, art.predictor()?, art.uncertainty.as_ref(), art.calibration()?, &opts)
        }
    }
}

/// One solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: usize,
    pub method: Method,
    pub alpha: f64,
    pub status: String,
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub solve_seconds: f64,
    pub oracle_feasible: Option<bool>,
    /// Regression output, or predicted class, of the method's first model at the solution.
    pub predictor_value: Option<f64>,
    #[serde(skip)]
    pub cost_seed: u64,
    #[serde(skip)]
    pub solution: Option<Vec<f64>>,
    /// Members whose native prediction lies in the target set (ensemble formulation).
    #[serde(skip)]
    pub members_feasible: Option<usize>,
}

impl InstanceRecord {
    pub fn solved(&self) -> bool {
        self.status.parse::<SolveStatus>().map(|s| s.is_solved()).unwrap_or(false)
    }
}

/// Membership up to the solver's feasibility tolerance.
fn native_in_target(p: &Predictor, x: &[f64], outcome: &OutcomeSet) -> Result<bool> {
    Ok(match outcome {
        OutcomeSet::Interval(iv) => iv.contains_tol(p.predict_scalar(x)?, FEASIBILITY_TOL),
        OutcomeSet::Classes(cs) => cs.contains(&argmax(&p.predict(x)?)),
    })
}

fn predictor_value(p: &Predictor, x: &[f64]) -> Result<f64> {
    let z = p.predict(x)?;
    Ok(if z.len() == 1 { z[0] } else { argmax(&z) as f64 })
}

/// Builds and solves one instance and evaluates its solution against the
/// noiseless oracle.
pub fn solve_instance(cfg: &ExperimentConfig, art: &Artifacts, method: Method, id: usize) -> Result<InstanceRecord> {
    let cost_seed = instance_seed(cfg.seed, id);
    let spec = cfg.problem_spec(sample_cost_vector(cfg.task, cost_seed));
    let mut rec = InstanceRecord {
        instance_id: id,
        method,
        alpha: cfg.conformal.alpha,
        status: String::new(),
        objective: None,
        bound: None,
        gap: None,
        solve_seconds: 0.0,
        oracle_feasible: None,
        predictor_value: None,
        cost_seed,
        solution: None,
        members_feasible: None,
    };
    let built = match build_method(cfg, art, method, &spec) {
        Ok(b) => b,
        Err(EncodeError::CalibrationInfeasible) => {
            rec.status = "calibration-infeasible".into();
            return Ok(rec);
        }
        Err(e) => return Err(e.into()),
    };
    let res = branch_and_bound(&built.model, &cfg.solver.options())?;
    rec.status = res.status.as_str().to_string();
    rec.solve_seconds = res.wall_seconds;
    rec.bound = res.best_bound.is_finite().then_some(res.best_bound);
    rec.objective = res.objective;
    rec.gap = res.objective.map(|_| res.gap);
    if let Some(a) = &res.incumbent {
        if !built.model.check_feasible(a, 10.0 * FEASIBILITY_TOL) {
            return Err(HarnessError::Inconsistent { instance: id, method });
        }
        let x = built.input_values(a);
        let first = if method == Method::Wmicl { &art.members[0] } else { art.predictor()? };
        rec.predictor_value = Some(predictor_value(first, &x)?);
        if method == Method::Wmicl {
            let mut k = 0;
            for m in &art.members {
                k += native_in_target(m, &x, &spec.outcome)? as usize;
            }
            rec.members_feasible = Some(k);
        }
        // Bound slack from the solver is clipped back into the box.
        let clipped: Vec<f64> = x.iter().zip(&spec.feature_bounds).map(|(v, b)| v.clamp(b.lo, b.hi)).collect();
        rec.oracle_feasible = Some(oracle_feasible(&art.oracle, &clipped, &spec.outcome)?);
        rec.solution = Some(clipped);
    }
    debug!("instance {id} {method}: {} obj={:?} {:.3}s", rec.status, rec.objective, rec.solve_seconds);
    Ok(rec)
}

/// Two-sided 95% Student-t quantile with `df` degrees of freedom.
pub fn t975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom").inverse_cdf(0.975)
}

/// Input of [`compute_ci`].
#[derive(Debug, Clone, Copy)]
pub enum CiInput<'a> {
    Values(&'a [f64]),
    Proportion { p: f64, n: usize },
}

/// Mean and 95% half-width `t_{n-1} * se`, with `se = s / sqrt(n)` for
/// values and `sqrt(p (1 - p) / n)` for a proportion.
pub fn compute_ci(input: CiInput<'_>) -> Result<(f64, f64)> {
    let (mean, se, n) = match input {
        CiInput::Values(v) => {
            let n = v.len();
            if n < 2 {
                return Err(HarnessError::TooFewSamples(n));
            }
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, (var / n as f64).sqrt(), n)
        }
        CiInput::Proportion { p, n } => {
            if n < 2 {
                return Err(HarnessError::TooFewSamples(n));
            }
            (p, (p * (1.0 - p) / n as f64).sqrt(), n)
        }
    };
    Ok((mean, t975(n - 1) * se))
}

/// Relative objective difference to the conformal formulation, in percent.
pub fn delta_percent(f_method: f64, f_cmicl: f64) -> f64 {
    (f_method - f_cmicl) / f_cmicl * 100.0
}

/// Aggregates of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_instances: usize,
    pub n_solved: usize,
    pub n_feasible: usize,
    pub feasibility_rate: Option<f64>,
    pub feasibility_half_width: Option<f64>,
    pub mean_seconds: f64,
    pub seconds_half_width: Option<f64>,
    pub delta_percent: Option<f64>,
    pub delta_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<InstanceRecord>,
    pub summaries: Vec<MethodSummary>,
}

/// Per-method aggregates. Rates are over solved instances only; timing uses
/// every instance; the relative difference uses instances solved by both the
/// method and the conformal formulation.
pub fn summarize(records: &[InstanceRecord]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let cmicl: std::collections::HashMap<usize, f64> = records
        .iter()
        .filter(|r| r.method == Method::Cmicl && r.solved())
        .filter_map(|r| r.objective.map(|o| (r.instance_id, o)))
        .collect();
    methods
        .into_iter()
        .map(|m| {
            let rs: Vec<&InstanceRecord> = records.iter().filter(|r| r.method == m).collect();
            let solved: Vec<&&InstanceRecord> = rs.iter().filter(|r| r.solved() && r.oracle_feasible.is_some()).collect();
            let n_feasible = solved.iter().filter(|r| r.oracle_feasible == Some(true)).count();
            let rate = (!solved.is_empty()).then(|| n_feasible as f64 / solved.len() as f64);
            let rate_hw = rate.and_then(|p| compute_ci(CiInput::Proportion { p, n: solved.len() }).ok()).map(|c| c.1);
            let secs: Vec<f64> = rs.iter().map(|r| r.solve_seconds).collect();
            let mean_seconds = secs.iter().sum::<f64>() / secs.len().max(1) as f64;
            let secs_hw = compute_ci(CiInput::Values(&secs)).ok().map(|c| c.1);
            let deltas: Vec<f64> = if m == Method::Cmicl {
                Vec::new()
            } else {
                rs.iter()
                    .filter(|r| r.solved())
                    .filter_map(|r| Some(delta_percent(r.objective?, *cmicl.get(&r.instance_id)?)))
                    .collect()
            };
            let delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
            let delta_hw = compute_ci(CiInput::Values(&deltas)).ok().map(|c| c.1);
            MethodSummary {
                method: m,
                n_instances: rs.len(),
                n_solved: solved.len(),
                n_feasible,
                feasibility_rate: rate,
                feasibility_half_width: rate_hw,
                mean_seconds,
                seconds_half_width: secs_hw,
                delta_percent: delta,
                delta_half_width: delta_hw,
            }
        })
        .collect()
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Fixed-format text table of the summaries.
pub fn render_summary(summaries: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<6} {:>5} {:>6} {:>8} {:>7} {:>7} {:>10} {:>9} {:>8} {:>8}\n",
        "method", "n", "solved", "feasible", "rate", "rate_ci", "time_s", "time_ci", "delta%", "delta_ci"
    );
    for m in summaries {
        s.push_str(&format!(
            "{:<6} {:>5} {:>6} {:>8} {:>7} {:>7} {:>10.4} {:>9} {:>8} {:>8}\n",
            m.method.as_str(),
            m.n_instances,
            m.n_solved,
            m.n_feasible,
            opt(m.feasibility_rate, 4),
            opt(m.feasibility_half_width, 4),
            m.mean_seconds,
            opt(m.seconds_half_width, 4),
            opt(m.delta_percent, 2),
            opt(m.delta_half_width, 2),
        ));
    }
    s
}

/// Solves every (instance, method) pair of the configuration on up to
/// `jobs` worker threads. Records come back ordered by instance, then method.
pub fn run_instances(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<InstanceRecord>> {
    let tasks: Vec<(usize, Method)> = (0..cfg.experiment.n_instances)
        .flat_map(|i| cfg.experiment.methods.iter().map(move |&m| (i, m)))
        .collect();
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Result<InstanceRecord>>> = Mutex::new(Vec::with_capacity(tasks.len()));
    let jobs = cfg.experiment.jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(id, m)) = tasks.get(k) else { break };
                let r = solve_instance(cfg, art, m, id);
                out.lock().expect("result lock").push(r);
            });
        }
    });
    let mut records = out.into_inner().expect("result lock").into_iter().collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.instance_id, r.method));
    Ok(records)
}

/// Whole protocol: artifacts, instances and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let art = prepare_artifacts(cfg)?;
    run_experiment_with(cfg, &art)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentReport> {
    let records = run_instances(cfg, art)?;
    let summaries = summarize(&records);
    Ok(ExperimentReport { records, summaries })
}

pub fn write_report_csv(records: &[InstanceRecord], path: &Path) -> Result<()> {
    let csv_err = |source| HarnessError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub fn read_report_csv(path: &Path) -> Result<Vec<InstanceRecord>> {
    let csv_err = |source| HarnessError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
}

/// Coverage of one stratum of test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub n: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageExperiment {
    pub alpha: f64,
    pub overall: f64,
    pub n: usize,
    /// Outcome deciles (regression) or true labels (classification).
    pub strata: Vec<Stratum>,
    /// Test points with outcome outside and inside the target set.
    pub infeasible: Option<Stratum>,
    pub feasible: Option<Stratum>,
}

/// Test-set coverage of the calibrated conformal sets, stratified.
pub fn coverage_experiment(cfg: &ExperimentConfig, art: &Artifacts, test: &Dataset) -> Result<CoverageExperiment> {
    let outcome = cfg.outcome();
    let calibration = art.calibration()?;
    let (scores, groups) = conformal_scores(art.predictor()?, art.uncertainty.as_ref(), test, &outcome)?;
    let use_groups = calibration.mondrian.is_some().then_some(groups.as_slice());
    let rep = coverage_eval(calibration, &scores, use_groups)?;
    let covered: Vec<bool> = scores
        .iter()
        .zip(&groups)
        .map(|(s, g)| Ok(*s <= calibration.quantile_for(use_groups.map(|_| *g))?))
        .collect::<std::result::Result<_, ConformalError>>()?;
    let stratum = |label: String, idx: &[usize]| -> Option<Stratum> {
        (!idx.is_empty()).then(|| Stratum {
            label,
            n: idx.len(),
            coverage: idx.iter().filter(|&&i| covered[i]).count() as f64 / idx.len() as f64,
        })
    };
    let n = test.n_rows();
    let keys: Vec<usize> = match (test.y(), test.labels()) {
        (Some(y), _) => {
            let mut sorted = y.to_vec();
            sorted.sort_by(f64::total_cmp);
            let cuts: Vec<f64> = (1..10).map(|d| sorted[(d * n / 10).min(n - 1)]).collect();
            y.iter().map(|v| cuts.iter().filter(|&&c| *v >= c).count()).collect()
        }
        (_, Some(l)) => l.to_vec(),
        _ => unreachable!("datasets carry targets"),
    };
    let n_keys = keys.iter().max().map_or(0, |m| m + 1);
    let name = |k: usize| if test.y().is_some() { format!("decile-{k}") } else { format!("class-{k}") };
    let strata = (0..n_keys)
        .filter_map(|k| stratum(name(k), &(0..n).filter(|&i| keys[i] == k).collect::<Vec<_>>()))
        .collect();
    let of = |g: GroupId| (0..n).filter(|&i| groups[i] == g).collect::<Vec<_>>();
    Ok(CoverageExperiment {
        alpha: calibration.alpha,
        overall: rep.overall,
        n,
        strata,
        infeasible: stratum("infeasible".into(), &of(INFEASIBLE_GROUP)),
        feasible: stratum("feasible".into(), &of(FEASIBLE_GROUP)),
    })
}

/// Outcome interval of a regression target set (used by docs and tests).
pub fn target_interval(outcome: &OutcomeSet) -> Option<Interval> {
    match outcome {
        OutcomeSet::Interval(iv) => Some(*iv),
        OutcomeSet::Classes(_) => None,
    }
}
