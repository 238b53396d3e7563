//! Datasets, deterministic splits, synthetic ground-truth oracles and CSV
//! ingestion.
//!
//! Two oracles are built in:
//!
//! * `reactor-poly5-v1` (regression) on the unit box `[0,1]^5`:
//!   `h(x) = 60 x1 x2 + 25 sin(2 pi x3) + 15 x4 - 10 x5^2 + 10`.
//! * `basket-palatability-v1` (classification) on 25 commodity quantities in
//!   units of 100 g: a smooth palatability score in `(0,1)` cut at
//!   0.25/0.5/0.75 into four classes. The constants live in `assets/`.

use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::rng::{standard_normal, stream};

/// Slack used when checking that a point lies in the feature box.
pub const BOUNDS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file is empty")]
    Empty,
    #[error("target column `{0}` not found in header")]
    MissingTarget(String),
    #[error("non-numeric cell at row {row}, col {col}")]
    NonNumeric { row: usize, col: usize },
    #[error("invalid class label `{value}` at row {row}")]
    InvalidLabel { row: usize, value: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature {feature} value {value} lies outside {bounds}")]
    OutOfBounds { feature: usize, value: f64, bounds: Interval },
    #[error("split with train fraction {fraction} of {n} rows leaves an empty side")]
    InvalidSplit { fraction: f64, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Regression(_) => TaskKind::Regression,
            Targets::Classification { .. } => TaskKind::Classification,
        }
    }
}

/// Tabular data with declared feature bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    targets: Targets,
    feature_names: Vec<String>,
    feature_bounds: Vec<Interval>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        targets: Targets,
        feature_names: Vec<String>,
        feature_bounds: Vec<Interval>,
    ) -> Result<Self, DataError> {
        let d = feature_names.len();
        if feature_bounds.len() != d {
            return Err(DataError::Shape(format!("{} names but {} bounds", d, feature_bounds.len())));
        }
        if features.len() != targets.len() {
            return Err(DataError::Shape(format!(
                "{} feature rows but {} targets",
                features.len(),
                targets.len()
            )));
        }
        for row in &features {
            if row.len() != d {
                return Err(DataError::Shape(format!("row of length {} with {d} features", row.len())));
            }
            for (i, (&v, b)) in row.iter().zip(&feature_bounds).enumerate() {
                if !v.is_finite() || !b.contains(v) {
                    return Err(DataError::OutOfBounds { feature: i, value: v, bounds: *b });
                }
            }
        }
        if let Targets::Classification { labels, n_classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(DataError::InvalidLabel { row: 0, value: bad.to_string() });
            }
        }
        if let Targets::Regression(y) = &targets {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Shape("non-finite regression target".into()));
            }
        }
        Ok(Self { features, targets, feature_names, feature_bounds })
    }

    pub fn n_rows(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn task(&self) -> TaskKind {
        self.targets.kind()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_bounds(&self) -> &[Interval] {
        &self.feature_bounds
    }

    /// Regression targets, if this is a regression dataset.
    pub fn y(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Regression(y) => Some(y),
            _ => None,
        }
    }

    /// Class labels, if this is a classification dataset.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classification { labels, .. } => Some(labels),
            _ => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classification { n_classes, .. } => Some(*n_classes),
            _ => None,
        }
    }

    /// Rows `indices` in the given order, with the same bounds and names.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Regression(y) => Targets::Regression(indices.iter().map(|&i| y[i]).collect()),
            Targets::Classification { labels, n_classes } => Targets::Classification {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        };
        Dataset {
            features,
            targets,
            feature_names: self.feature_names.clone(),
            feature_bounds: self.feature_bounds.clone(),
        }
    }

    /// Writes the dataset with a `y` (regression) or `label` column last.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(match self.task() {
            TaskKind::Regression => "y",
            TaskKind::Classification => "label",
        });
        w.write_record(&header)?;
        for (i, row) in self.features.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(match &self.targets {
                Targets::Regression(y) => y[i].to_string(),
                Targets::Classification { labels, .. } => labels[i].to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Disjoint train and calibration index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
}

/// Shuffles row indices with the `split` stream of `seed` and cuts after
/// `round(train_fraction * n)` rows.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<DataSplit, DataError> {
    split_indices(dataset.n_rows(), train_fraction, seed)
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<DataSplit, DataError> {
    let n_train = (train_fraction * n as f64).round() as usize;
    if !(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train >= n {
        return Err(DataError::InvalidSplit { fraction: train_fraction, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "split"));
    let cal = idx.split_off(n_train);
    Ok(DataSplit { train: idx, cal })
}

/// Column layout expected by [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub target: String,
    pub task: TaskKind,
    /// Declared feature bounds; inferred as per-column `[min, max]` when absent.
    pub bounds: Option<Vec<Interval>>,
}

impl CsvSchema {
    /// Default schema: target `y` for regression, `label` for classification.
    pub fn for_task(task: TaskKind) -> Self {
        let target = match task {
            TaskKind::Regression => "y",
            TaskKind::Classification => "label",
        };
        Self { target: target.into(), task, bounds: None }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parses a CSV document (header row first) into a [`Dataset`]. Row and column
/// numbers in errors are 1-based and count data rows only.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(DataError::Empty);
    }
    let target_col = header
        .iter()
        .position(|h| h == schema.target)
        .ok_or_else(|| DataError::MissingTarget(schema.target.clone()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != target_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut features = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = r + 1;
        if rec.len() != header.len() {
            return Err(DataError::Shape(format!("row {row_no} has {} cells, header has {}", rec.len(), header.len())));
        }
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in rec.iter().enumerate() {
            if c == target_col {
                match schema.task {
                    TaskKind::Regression => y.push(parse_finite(cell).ok_or(DataError::NonNumeric { row: row_no, col: c + 1 })?),
                    TaskKind::Classification => labels.push(
                        cell.parse::<usize>()
                            .map_err(|_| DataError::InvalidLabel { row: row_no, value: cell.to_string() })?,
                    ),
                }
            } else {
                row.push(parse_finite(cell).ok_or(DataError::NonNumeric { row: row_no, col: c + 1 })?);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(DataError::Empty);
    }
    let bounds = match &schema.bounds {
        Some(b) => b.clone(),
        None => (0..names.len())
            .map(|j| {
                let (lo, hi) = features
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r: &Vec<f64>| (lo.min(r[j]), hi.max(r[j])));
                Interval::new(lo, hi)
            })
            .collect(),
    };
    let targets = match schema.task {
        TaskKind::Regression => Targets::Regression(y),
        TaskKind::Classification => {
            let n_classes = labels.iter().max().map_or(0, |m| m + 1);
            Targets::Classification { labels, n_classes }
        }
    };
    Dataset::new(features, targets, names, bounds)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Identifier of a built-in ground-truth function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleDefinition {
    #[serde(rename = "reactor-poly5-v1")]
    ReactorPoly5,
    #[serde(rename = "basket-palatability-v1")]
    BasketPalatability,
}

impl OracleDefinition {
    pub fn id(&self) -> &'static str {
        match self {
            OracleDefinition::ReactorPoly5 => "reactor-poly5-v1",
            OracleDefinition::BasketPalatability => "basket-palatability-v1",
        }
    }
}

/// Target set of a learned constraint: an outcome interval or desired classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeSet {
    Interval(Interval),
    Classes(Vec<usize>),
}

/// Noiseless ground truth `h` together with its data-generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub kind: TaskKind,
    pub noise_sigma: f64,
    pub class_thresholds: Vec<f64>,
    pub definition: OracleDefinition,
    pub feature_bounds: Vec<Interval>,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

impl Oracle {
    pub fn reactor(noise_sigma: f64) -> Self {
        Self {
            kind: TaskKind::Regression,
            noise_sigma,
            class_thresholds: Vec::new(),
            definition: OracleDefinition::ReactorPoly5,
            feature_bounds: vec![Interval::new(0.0, 1.0); REACTOR_FEATURES.len()],
        }
    }

    pub fn basket() -> Self {
        Self {
            kind: TaskKind::Classification,
            noise_sigma: 0.0,
            class_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            definition: OracleDefinition::BasketPalatability,
            feature_bounds: basket().bounds.clone(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_thresholds.len() + 1
    }

    /// Noiseless `h(x)`: the target for regression, the continuous score for
    /// classification.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self.definition {
            OracleDefinition::ReactorPoly5 => reactor_h(x),
            OracleDefinition::BasketPalatability => basket_score(x),
        }
    }

    /// Class of a continuous score. A score equal to a threshold goes up.
    pub fn class_of(&self, score: f64) -> usize {
        self.class_thresholds.iter().filter(|&&t| score >= t).count()
    }

    fn check_bounds(&self, x: &[f64]) -> Result<(), DataError> {
        if x.len() != self.feature_bounds.len() {
            return Err(DataError::Shape(format!(
                "point of length {} for {} features",
                x.len(),
                self.feature_bounds.len()
            )));
        }
        for (i, (&v, b)) in x.iter().zip(&self.feature_bounds).enumerate() {
            if !b.contains_tol(v, BOUNDS_TOL) {
                return Err(DataError::OutOfBounds { feature: i, value: v, bounds: *b });
            }
        }
        Ok(())
    }
}

/// Whether the true (noiseless) outcome at `x` lies in `target`.
pub fn oracle_feasible(oracle: &Oracle, x: &[f64], target: &OutcomeSet) -> Result<bool, DataError> {
    oracle.check_bounds(x)?;
    let v = oracle.value(x);
    match (oracle.kind, target) {
        (TaskKind::Regression, OutcomeSet::Interval(iv)) => Ok(iv.contains(v)),
        (TaskKind::Classification, OutcomeSet::Classes(cs)) => Ok(cs.contains(&oracle.class_of(v))),
        _ => Err(DataError::InvalidArgument("outcome set does not match the oracle kind".into())),
    }
}

pub const REACTOR_FEATURES: [&str; 5] = ["v0", "v_he", "temp", "dt", "length"];

/// Physical ranges of the reactor decision variables; the unit-box feature
/// `x_i` maps to `lo + (hi - lo) x_i`.
pub const REACTOR_PHYSICAL: [Interval; 5] = [
    Interval::new(450.0, 1500.0),
    Interval::new(450.0, 1500.0),
    Interval::new(997.18, 1348.12),
    Interval::new(0.5, 2.0),
    Interval::new(10.0, 100.0),
];

pub fn reactor_h(x: &[f64]) -> f64 {
    60.0 * x[0] * x[1] + 25.0 * (2.0 * std::f64::consts::PI * x[2]).sin() + 15.0 * x[3] - 10.0 * x[4] * x[4] + 10.0
}

/// `n` points uniform on `[0,1]^5` with targets `h(x) + N(0, noise_sigma^2)`.
pub fn synth_regression(n: usize, seed: u64, noise_sigma: f64) -> Result<(Dataset, Oracle), DataError> {
    if n == 0 || !(noise_sigma >= 0.0) {
        return Err(DataError::InvalidArgument(format!("n={n}, noise_sigma={noise_sigma}")));
    }
    let oracle = Oracle::reactor(noise_sigma);
    let mut rx = stream(seed, "data/features");
    let mut rn = stream(seed, "data/noise");
    let mut features = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| rx.gen::<f64>()).collect();
        y.push(reactor_h(&x) + noise_sigma * standard_normal(&mut rn));
        features.push(x);
    }
    let names = REACTOR_FEATURES.iter().map(|s| s.to_string()).collect();
    let ds = Dataset::new(features, Targets::Regression(y), names, oracle.feature_bounds.clone())?;
    Ok((ds, oracle))
}

/// `n` sparse baskets labelled by the palatability class. Each commodity is
/// absent with probability [`BASKET_ABSENT_PROB`] and otherwise uniform on
/// its range.
pub fn synth_classification(n: usize, seed: u64) -> Result<(Dataset, Oracle), DataError> {
    if n == 0 {
        return Err(DataError::InvalidArgument("n=0".into()));
    }
    let oracle = Oracle::basket();
    let spec = basket();
    let mut rx = stream(seed, "data/features");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = spec
            .bounds
            .iter()
            .map(|b| {
                let present = rx.gen::<f64>() >= BASKET_ABSENT_PROB;
                let v = b.lo + b.width() * rx.gen::<f64>();
                if present {
                    v
                } else {
                    b.lo
                }
            })
            .collect();
        labels.push(oracle.class_of(basket_score(&x)));
        features.push(x);
    }
    let targets = Targets::Classification { labels, n_classes: oracle.n_classes() };
    let ds = Dataset::new(features, targets, spec.commodities.clone(), spec.bounds.clone())?;
    Ok((ds, oracle))
}

/// Constants of the basket benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BasketSpec {
    pub commodities: Vec<String>,
    pub bounds: Vec<Interval>,
    pub taste_linear: Vec<f64>,
    pub taste_quadratic: Vec<f64>,
    /// Pairwise complementarity bonuses `(m, m', c)` adding `c x_m x_m'`.
    pub interactions: Vec<(usize, usize, f64)>,
    pub nutrients: Vec<String>,
    /// `nutval[m][l]`: content of nutrient `l` per unit of commodity `m`.
    pub nutval: Vec<Vec<f64>>,
    pub nutreq: Vec<f64>,
    pub score_center: f64,
    pub score_steepness: f64,
    pub salt: usize,
    pub sugar: usize,
}

/// Probability that a commodity is absent from a generated basket.
pub const BASKET_ABSENT_PROB: f64 = 0.5;

pub const BASKET_SALT_AMOUNT: f64 = 0.05;
pub const BASKET_SUGAR_AMOUNT: f64 = 0.2;

const COMMODITIES_CSV: &str = include_str!("../assets/basket_commodities.csv");
const NUTVAL_CSV: &str = include_str!("../assets/basket_nutval.csv");
const NUTREQ_CSV: &str = include_str!("../assets/basket_nutreq.csv");

const INTERACTIONS: [(&str, &str, f64); 4] = [
    ("rice", "beans", 0.3),
    ("wheat_flour", "vegetable_oil", 0.4),
    ("pasta", "tomato_paste", 0.3),
    ("milk_powder", "dates", 0.2),
];

pub fn basket() -> &'static BasketSpec {
    static SPEC: OnceLock<BasketSpec> = OnceLock::new();
    SPEC.get_or_init(|| parse_basket().expect("bundled basket assets are well-formed"))
}

fn parse_basket() -> Result<BasketSpec, DataError> {
    #[derive(Deserialize)]
    struct Commodity {
        commodity: String,
        lo: f64,
        hi: f64,
        taste_linear: f64,
        taste_quadratic: f64,
    }
    let mut commodities = Vec::new();
    let mut bounds = Vec::new();
    let mut taste_linear = Vec::new();
    let mut taste_quadratic = Vec::new();
    for rec in csv::Reader::from_reader(COMMODITIES_CSV.as_bytes()).deserialize() {
        let c: Commodity = rec?;
        commodities.push(c.commodity);
        bounds.push(Interval::new(c.lo, c.hi));
        taste_linear.push(c.taste_linear);
        taste_quadratic.push(c.taste_quadratic);
    }
    let mut rdr = csv::Reader::from_reader(NUTVAL_CSV.as_bytes());
    let nutrients: Vec<String> = rdr.headers()?.iter().skip(1).map(String::from).collect();
    let mut nutval = Vec::new();
    for (m, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != Some(commodities[m].as_str()) {
            return Err(DataError::Shape(format!("nutrient table row {m} out of order")));
        }
        let row: Option<Vec<f64>> = rec.iter().skip(1).map(parse_finite).collect();
        nutval.push(row.ok_or(DataError::NonNumeric { row: m + 1, col: 0 })?);
    }
    let mut nutreq = Vec::new();
    for (l, rec) in csv::Reader::from_reader(NUTREQ_CSV.as_bytes()).records().enumerate() {
        let rec = rec?;
        if rec.get(0) != Some(nutrients[l].as_str()) {
            return Err(DataError::Shape(format!("requirement row {l} out of order")));
        }
        nutreq.push(rec.get(1).and_then(parse_finite).ok_or(DataError::NonNumeric { row: l + 1, col: 2 })?);
    }
    let find = |name: &str| commodities.iter().position(|c| c == name).expect("known commodity");
    let interactions = INTERACTIONS.iter().map(|&(a, b, c)| (find(a), find(b), c)).collect();
    Ok(BasketSpec {
        salt: find("salt"),
        sugar: find("sugar"),
        commodities,
        bounds,
        taste_linear,
        taste_quadratic,
        interactions,
        nutrients,
        nutval,
        nutreq,
        score_center: 4.7281,
        score_steepness: 1.1775,
    })
}

/// Palatability `sigmoid(s (z - z0))` with
/// `z = sum a_m x_m - sum b_m x_m^2 + sum c x_m x_m'`.
pub fn basket_score(x: &[f64]) -> f64 {
    let spec = basket();
    1.0 / (1.0 + (-spec.score_steepness * (basket_z(x) - spec.score_center)).exp())
}

pub fn basket_z(x: &[f64]) -> f64 {
    let spec = basket();
    let mut z = 0.0;
    for (m, &v) in x.iter().enumerate() {
        z += spec.taste_linear[m] * v - spec.taste_quadratic[m] * v * v;
    }
    for &(a, b, c) in &spec.interactions {
        z += c * x[a] * x[b];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactor_formula_points() {
        assert_eq!(reactor_h(&[0.0; 5]), 10.0);
        assert!((reactor_h(&[1.0, 1.0, 0.0, 0.0, 0.0]) - 70.0).abs() < 1e-12);
    }

    #[test]
    fn class_thresholds_assign_ties_upward() {
        let o = Oracle::basket();
        assert_eq!(o.class_of(0.10), 0);
        assert_eq!(o.class_of(0.50), 2);
        assert_eq!(o.class_of(0.99), 3);
        assert_eq!(o.class_of(0.25), 1);
    }

    #[test]
    fn basket_assets_are_consistent() {
        let b = basket();
        assert_eq!(b.commodities.len(), 25);
        assert_eq!(b.nutrients.len(), 12);
        assert!(b.nutval.iter().all(|r| r.len() == 12));
        assert_eq!(b.nutreq.len(), 12);
        assert!(b.bounds[b.salt].contains(BASKET_SALT_AMOUNT));
        assert!(b.bounds[b.sugar].contains(BASKET_SUGAR_AMOUNT));
    }
}
