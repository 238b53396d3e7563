//! Split-conformal scores and quantiles, Mondrian (group-conditional)
//! calibration and empirical coverage.
//!
//! The calibration quantile of `N` scores at level `alpha` is the `k`-th
//! smallest score with `k = ceil((1 - alpha)(N + 1))`, or `+inf` when
//! `k > N`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("no calibration scores")]
    Empty,
    #[error("alpha {0} is outside (0, 1)")]
    Alpha(f64),
    #[error("uncertainty {u} is below the floor {floor}")]
    UncertaintyBelowFloor { u: f64, floor: f64 },
    #[error("class {class} out of range for {k} logits")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("{scores} scores but {groups} group ids")]
    LengthMismatch { scores: usize, groups: usize },
    #[error("group {0} has no calibration quantile")]
    UnknownGroup(u32),
    #[error("non-finite score {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    NormalizedResidual,
    NegativeTrueLogit,
}

/// Opaque stratum label for Mondrian calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupQuantile {
    pub group: GroupId,
    #[serde(with = "float_or_inf")]
    pub q_hat: f64,
    pub size: usize,
}

/// Result of calibrating one score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub n_cal: usize,
    pub score_kind: ScoreKind,
    /// Marginal quantile over all calibration scores.
    #[serde(with = "float_or_inf")]
    pub q_hat: f64,
    /// Per-group quantiles, ascending by group id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mondrian: Option<Vec<GroupQuantile>>,
    /// Largest absolute logit seen on the calibration rows (classification).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_scale: Option<f64>,
}

mod float_or_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got `{s}`"))),
        }
    }
}

impl Calibration {
    /// Quantile applicable to `group`: the group's own in Mondrian mode,
    /// otherwise the marginal one.
    pub fn quantile_for(&self, group: Option<GroupId>) -> Result<f64, ConformalError> {
        match (&self.mondrian, group) {
            (Some(table), Some(g)) => table
                .iter()
                .find(|e| e.group == g)
                .map(|e| e.q_hat)
                .ok_or(ConformalError::UnknownGroup(g.0)),
            _ => Ok(self.q_hat),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.q_hat == f64::INFINITY
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Largest absolute entry over a set of logit vectors.
pub fn max_abs_logit(logits: &[Vec<f64>]) -> f64 {
    logits.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// `|h - y| / u`, requiring `u >= u_floor`.
pub fn score_regression(h_pred: f64, u_pred: f64, y: f64, u_floor: f64) -> Result<f64, ConformalError> {
    if !(u_pred >= u_floor) {
        return Err(ConformalError::UncertaintyBelowFloor { u: u_pred, floor: u_floor });
    }
    Ok((h_pred - y).abs() / u_pred)
}

/// Negative logit of the true class.
pub fn score_classification(logits: &[f64], true_class: usize) -> Result<f64, ConformalError> {
    logits
        .get(true_class)
        .map(|v| -v)
        .ok_or(ConformalError::ClassOutOfRange { class: true_class, k: logits.len() })
}

/// `ceil((1 - alpha)(n + 1))`, guarded against round-off just above an integer.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    (x - 1e-9).ceil().max(1.0) as usize
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::Alpha(alpha))
    }
}

/// `k`-th smallest score, `+inf` when the rank exceeds the sample size.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(ConformalError::Empty);
    }
    if let Some(&bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(ConformalError::NonFinite(bad));
    }
    let k = conformal_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// Marginal split-conformal calibration.
pub fn calibrate(scores: &[f64], alpha: f64, kind: ScoreKind) -> Result<Calibration, ConformalError> {
    Ok(Calibration {
        alpha,
        n_cal: scores.len(),
        score_kind: kind,
        q_hat: conformal_quantile(scores, alpha)?,
        mondrian: None,
        logit_scale: None,
    })
}

/// Per-group quantiles, each from that group's scores and size. The
/// marginal quantile over all scores is kept alongside.
pub fn mondrian_calibrate(
    scores: &[f64],
    groups: &[GroupId],
    alpha: f64,
    kind: ScoreKind,
) -> Result<Calibration, ConformalError> {
    if scores.len() != groups.len() {
        return Err(ConformalError::LengthMismatch { scores: scores.len(), groups: groups.len() });
    }
    let mut cal = calibrate(scores, alpha, kind)?;
    let mut ids: Vec<GroupId> = groups.to_vec();
    ids.sort();
    ids.dedup();
    let table = ids
        .into_iter()
        .map(|g| {
            let member: Vec<f64> = scores.iter().zip(groups).filter(|(_, h)| **h == g).map(|(s, _)| *s).collect();
            Ok(GroupQuantile { group: g, q_hat: conformal_quantile(&member, alpha)?, size: member.len() })
        })
        .collect::<Result<Vec<_>, ConformalError>>()?;
    cal.mondrian = Some(table);
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub group: GroupId,
    pub coverage: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub overall: f64,
    pub n: usize,
    pub per_group: Vec<GroupCoverage>,
}

/// Fraction of test scores at or below the applicable quantile. With
/// `test_groups`, per-group fractions are reported too; each point uses its
/// group's quantile when the calibration is Mondrian.
pub fn coverage_eval(
    calib: &Calibration,
    test_scores: &[f64],
    test_groups: Option<&[GroupId]>,
) -> Result<CoverageReport, ConformalError> {
    if test_scores.is_empty() {
        return Err(ConformalError::Empty);
    }
    if let Some(g) = test_groups {
        if g.len() != test_scores.len() {
            return Err(ConformalError::LengthMismatch { scores: test_scores.len(), groups: g.len() });
        }
    }
    let mut covered = Vec::with_capacity(test_scores.len());
    for (i, &s) in test_scores.iter().enumerate() {
        let q = calib.quantile_for(test_groups.map(|g| g[i]))?;
        covered.push(s <= q);
    }
    let overall = covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
    let mut per_group = Vec::new();
    if let Some(groups) = test_groups {
        let mut ids = groups.to_vec();
        ids.sort();
        ids.dedup();
        for g in ids {
            let members: Vec<bool> = covered.iter().zip(groups).filter(|(_, h)| **h == g).map(|(c, _)| *c).collect();
            per_group.push(GroupCoverage {
                group: g,
                coverage: members.iter().filter(|&&c| c).count() as f64 / members.len() as f64,
                n: members.len(),
            });
        }
    }
    Ok(CoverageReport { overall, n: test_scores.len(), per_group })
}
