//! Mixed-integer encodings of trained predictors and conformal set
//! constraints, and assembly of the point-prediction (MICL), ensemble
//! (W-MICL) and conformal (C-MICL) programs.
//!
//! ReLU networks use the big-M formulation with bounds from interval
//! propagation. Tree ensembles use one binary per leaf and one shared binary
//! `w = [x_i < v]` per distinct split threshold.

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{Calibration, ConformalError, GroupId, ScoreKind};
use crate::data::{self, OutcomeSet, TaskKind};
use crate::interval::Interval;
use crate::mip::{ConstraintId, LinExpr, MipError, MipModel, Sense, VarKind, VarRef};
use crate::models::{Ensemble, Leaf, Mlp, Predictor, TreeNode, UncertaintyModel, U_FLOOR};

/// Gap left below a split threshold so that `x < v` is representable.
pub const SPLIT_EPS: f64 = 1e-6;
/// Strictness margin of the undesired-class exclusion.
pub const CLASS_EPS: f64 = 1e-6;
/// Multiplier applied to the largest calibration logit for the default big-M.
pub const BIG_M_SAFETY: f64 = 4.0;
/// Mondrian stratum of calibration points whose true outcome is outside the target set.
pub const INFEASIBLE_GROUP: GroupId = GroupId(0);
pub const FEASIBLE_GROUP: GroupId = GroupId(1);

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error("input {0} has an unbounded domain")]
    UnboundedInput(usize),
    #[error("expected {expected} input variables, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("activation bounds missing or mis-shaped at layer {0}")]
    MissingBounds(usize),
    #[error("ensemble has no trees")]
    EmptyEnsemble,
    #[error("calibration-infeasible: the conformal quantile is infinite")]
    CalibrationInfeasible,
    #[error("invalid outcome set: {0}")]
    Outcome(String),
    #[error("big-M {given} does not cover the required {required}")]
    BigMTooSmall { given: f64, required: f64 },
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, EncodeError>;

/// Pre-activation intervals per layer; the last entry holds the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBounds {
    pub layers: Vec<Vec<Interval>>,
}

/// Output variables of one encoded predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedOutput {
    pub outputs: Vec<VarRef>,
    pub output_bounds: Vec<Interval>,
    pub binaries: Vec<VarRef>,
}

fn pad(iv: Interval) -> Interval {
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());
    Interval::new(iv.lo - slack(iv.lo), iv.hi + slack(iv.hi))
}

fn affine_bounds(coef: &[f64], bias: f64, input: &[Interval]) -> Interval {
    coef.iter().zip(input).fold(Interval::point(bias), |acc, (&w, iv)| acc + iv.scale(w))
}

/// Interval propagation through the network from an input box.
pub fn propagate_bounds(mlp: &Mlp, input: &[Interval]) -> Result<ActivationBounds> {
    if input.len() != mlp.input_dim() {
        return Err(EncodeError::Dimension { expected: mlp.input_dim(), got: input.len() });
    }
    if let Some(i) = input.iter().position(|iv| !iv.is_finite()) {
        return Err(EncodeError::UnboundedInput(i));
    }
    let mut cur = input.to_vec();
    let mut layers = Vec::with_capacity(mlp.layers.len());
    for layer in &mlp.layers {
        let pre: Vec<Interval> =
            layer.weights.iter().zip(&layer.bias).map(|(w, &b)| affine_bounds(w, b, &cur)).collect();
        cur = pre.iter().map(Interval::relu).collect();
        layers.push(pre);
    }
    Ok(ActivationBounds { layers })
}

fn input_box(model: &MipModel, inputs: &[VarRef]) -> Result<Vec<Interval>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let var = model.var(v);
            let iv = Interval::new(var.lb, var.ub);
            if iv.is_finite() {
                Ok(iv)
            } else {
                Err(EncodeError::UnboundedInput(i))
            }
        })
        .collect()
}

/// `a = max(0, pre)` for a pre-activation with interval `iv`. Stable units
/// need no binary.
fn relu_unit(model: &mut MipModel, pre: LinExpr, iv: Interval, binaries: &mut Vec<VarRef>) -> Result<VarRef> {
    let iv = pad(iv);
    if iv.hi <= 0.0 {
        return Ok(model.add_var_auto("dead", VarKind::Continuous, 0.0, 0.0)?);
    }
    if iv.lo >= 0.0 {
        let a = model.add_var_auto("lin", VarKind::Continuous, iv.lo, iv.hi)?;
        model.add_constraint_auto(LinExpr::from(a) - pre, Sense::Eq, 0.0, "lin_def")?;
        return Ok(a);
    }
    let a = model.add_var_auto("relu", VarKind::Continuous, 0.0, iv.hi)?;
    let d = model.add_var_auto("relu_on", VarKind::Binary, 0.0, 1.0)?;
    binaries.push(d);
    model.add_constraint_auto(LinExpr::from(a), Sense::Ge, 0.0, "relu_nonneg")?;
    model.add_constraint_auto(LinExpr::from(a) - pre.clone(), Sense::Ge, 0.0, "relu_lo")?;
    // a <= pre - L (1 - d)
    model.add_constraint_auto(LinExpr::from(a) - pre - LinExpr::term(iv.lo, d), Sense::Le, -iv.lo, "relu_off")?;
    model.add_constraint_auto(LinExpr::from(a) - LinExpr::term(iv.hi, d), Sense::Le, 0.0, "relu_on_ub")?;
    Ok(a)
}

/// Encodes `outputs = mlp(inputs)` with one binary per unstable hidden unit.
pub fn encode_mlp(model: &mut MipModel, mlp: &Mlp, inputs: &[VarRef], bounds: &ActivationBounds) -> Result<EncodedOutput> {
    if inputs.len() != mlp.input_dim() {
        return Err(EncodeError::Dimension { expected: mlp.input_dim(), got: inputs.len() });
    }
    if bounds.layers.len() != mlp.layers.len() {
        return Err(EncodeError::MissingBounds(bounds.layers.len().min(mlp.layers.len())));
    }
    let mut binaries = Vec::new();
    let mut cur: Vec<VarRef> = inputs.to_vec();
    let last = mlp.layers.len() - 1;
    for (k, (layer, ivs)) in mlp.layers.iter().zip(&bounds.layers).enumerate() {
        if ivs.len() != layer.outputs() {
            return Err(EncodeError::MissingBounds(k));
        }
        let mut next = Vec::with_capacity(layer.outputs());
        for ((w, &b), &iv) in layer.weights.iter().zip(&layer.bias).zip(ivs) {
            let mut pre = LinExpr::dot(w, &cur);
            pre.add_constant(b);
            if k == last {
                let p = pad(iv);
                let y = model.add_var_auto("y", VarKind::Continuous, p.lo, p.hi)?;
                model.add_constraint_auto(LinExpr::from(y) - pre, Sense::Eq, 0.0, "out_def")?;
                next.push(y);
            } else {
                next.push(relu_unit(model, pre, iv, &mut binaries)?);
            }
        }
        cur = next;
    }
    Ok(EncodedOutput { outputs: cur, output_bounds: bounds.layers[last].clone(), binaries })
}

struct TreeBuild<'a> {
    inputs: &'a [VarRef],
    boxes: &'a [Interval],
    /// Per feature: sorted thresholds and their binaries.
    splits: Vec<Vec<(f64, VarRef)>>,
}

impl TreeBuild<'_> {
    fn split_var(&self, feature: usize, threshold: f64) -> VarRef {
        let list = &self.splits[feature];
        let i = list.partition_point(|(v, _)| *v < threshold);
        list[i].1
    }
}

fn collect_thresholds(node: &TreeNode, out: &mut [Vec<f64>]) {
    if let TreeNode::Split { feature, threshold, left, right } = node {
        out[*feature].push(*threshold);
        collect_thresholds(left, out);
        collect_thresholds(right, out);
    }
}

fn leaf_range(leaf: &Leaf, boxes: &[Interval]) -> Interval {
    match leaf {
        Leaf::Constant { value } => Interval::point(*value),
        Leaf::Linear { coef, intercept } => affine_bounds(coef, *intercept, boxes),
    }
}

fn leaf_expr(leaf: &Leaf, inputs: &[VarRef]) -> LinExpr {
    match leaf {
        Leaf::Constant { value } => LinExpr::constant(*value),
        Leaf::Linear { coef, intercept } => {
            let mut e = LinExpr::dot(coef, inputs);
            e.add_constant(*intercept);
            e
        }
    }
}

/// Emits path constraints below `node` and returns the leaf binaries under it
/// in left-to-right order.
fn encode_paths(
    model: &mut MipModel,
    tb: &TreeBuild<'_>,
    node: &TreeNode,
    leaves: &mut Vec<(VarRef, Leaf)>,
) -> Result<Vec<VarRef>> {
    match node {
        TreeNode::Leaf(l) => {
            let r = model.add_var_auto("leaf", VarKind::Binary, 0.0, 1.0)?;
            leaves.push((r, l.clone()));
            Ok(vec![r])
        }
        TreeNode::Split { feature, threshold, left, right } => {
            let l = encode_paths(model, tb, left, leaves)?;
            let r = encode_paths(model, tb, right, leaves)?;
            let w = tb.split_var(*feature, *threshold);
            let sum = |ids: &[VarRef]| ids.iter().fold(LinExpr::new(), |e, &v| e.with_term(1.0, v));
            model.add_constraint_auto(sum(&l) - LinExpr::from(w), Sense::Le, 0.0, "path_left")?;
            model.add_constraint_auto(sum(&r) + LinExpr::from(w), Sense::Le, 1.0, "path_right")?;
            Ok(l.into_iter().chain(r).collect())
        }
    }
}

/// Encodes `output = ensemble(inputs)`.
pub fn encode_tree_ensemble(model: &mut MipModel, ensemble: &Ensemble, inputs: &[VarRef]) -> Result<EncodedOutput> {
    let boosted = matches!(ensemble.combination, crate::models::Combination::Boosted { .. });
    if ensemble.trees.is_empty() && !boosted {
        return Err(EncodeError::EmptyEnsemble);
    }
    if let Some(d) = ensemble.n_features() {
        if d != inputs.len() {
            return Err(EncodeError::Dimension { expected: d, got: inputs.len() });
        }
    }
    let boxes = input_box(model, inputs)?;
    let mut thresholds = vec![Vec::new(); inputs.len()];
    for t in &ensemble.trees {
        collect_thresholds(&t.root, &mut thresholds);
    }
    let mut binaries = Vec::new();
    let mut splits = Vec::with_capacity(inputs.len());
    for (i, ts) in thresholds.iter_mut().enumerate() {
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let Interval { lo, hi } = boxes[i];
        let mut list = Vec::with_capacity(ts.len());
        for &v in ts.iter() {
            // w = 1  =>  x <= v - eps;  w = 0  =>  x >= v.
            let (wl, wu) = if v <= lo {
                (0.0, 0.0)
            } else if hi <= v - SPLIT_EPS {
                (1.0, 1.0)
            } else {
                (0.0, 1.0)
            };
            let w = model.add_var_auto("split", VarKind::Binary, wl, wu)?;
            binaries.push(w);
            let x = LinExpr::from(inputs[i]);
            let m_up = (hi - v + SPLIT_EPS).max(0.0);
            let m_lo = (v - lo).max(0.0);
            model.add_constraint_auto(x.clone() + LinExpr::term(m_up, w), Sense::Le, v - SPLIT_EPS + m_up, "split_left")?;
            model.add_constraint_auto(x + LinExpr::term(m_lo, w), Sense::Ge, v, "split_right")?;
            if let Some(&(_, prev)) = list.last() {
                model.add_constraint_auto(LinExpr::from(prev) - LinExpr::from(w), Sense::Le, 0.0, "split_order")?;
            }
            list.push((v, w));
        }
        splits.push(list);
    }
    let tb = TreeBuild { inputs, boxes: &boxes, splits };
    let (weight, offset) = ensemble.weights();
    let mut out = LinExpr::constant(offset);
    let mut range = Interval::point(offset);
    for tree in &ensemble.trees {
        let ranges: Vec<Interval> = tree.leaves().iter().map(|l| leaf_range(l, tb.boxes)).collect();
        let tree_range = ranges.iter().skip(1).fold(ranges[0], |a, b| Interval::new(a.lo.min(b.lo), a.hi.max(b.hi)));
        range = range + tree_range.scale(weight);
        if let TreeNode::Leaf(l) = &tree.root {
            out = out + leaf_expr(l, tb.inputs) * weight;
            continue;
        }
        let mut leaves = Vec::new();
        let all = encode_paths(model, &tb, &tree.root, &mut leaves)?;
        binaries.extend(&all);
        let one = all.iter().fold(LinExpr::new(), |e, &v| e.with_term(1.0, v));
        model.add_constraint_auto(one, Sense::Eq, 1.0, "one_leaf")?;
        for ((r, leaf), iv) in leaves.iter().zip(&ranges) {
            match leaf {
                Leaf::Constant { value } => out.add_term(weight * value, *r),
                Leaf::Linear { .. } => {
                    // z = f(x) r via big-M with the range of f over the box.
                    let iv = pad(*iv);
                    let f = leaf_expr(leaf, tb.inputs);
                    let z = model.add_var_auto("leaf_val", VarKind::Continuous, iv.lo.min(0.0), iv.hi.max(0.0))?;
                    let zr = |c: f64| LinExpr::from(z) + LinExpr::term(c, *r);
                    model.add_constraint_auto(zr(-iv.hi), Sense::Le, 0.0, "leaf_val_ub")?;
                    model.add_constraint_auto(zr(-iv.lo), Sense::Ge, 0.0, "leaf_val_lb")?;
                    model.add_constraint_auto(zr(-iv.lo) - f.clone(), Sense::Le, -iv.lo, "leaf_val_fu")?;
                    model.add_constraint_auto(zr(-iv.hi) - f, Sense::Ge, -iv.hi, "leaf_val_fl")?;
                    out.add_term(weight, z)
                }
            };
        }
    }
    let p = pad(range);
    let y = model.add_var_auto("y", VarKind::Continuous, p.lo, p.hi)?;
    model.add_constraint_auto(LinExpr::from(y) - out, Sense::Eq, 0.0, "out_def")?;
    Ok(EncodedOutput { outputs: vec![y], output_bounds: vec![range], binaries })
}

/// Dispatches to the network or tree encoder.
pub fn encode_predictor(model: &mut MipModel, predictor: &Predictor, inputs: &[VarRef]) -> Result<EncodedOutput> {
    match predictor {
        Predictor::Mlp(m) => {
            let bounds = propagate_bounds(m, &input_box(model, inputs)?)?;
            encode_mlp(model, m, inputs, &bounds)
        }
        Predictor::Ensemble(e) => encode_tree_ensemble(model, e, inputs),
    }
}

/// Encodes `u = max(u_floor, raw(x))`. The returned output holds the single
/// variable `u`, whose lower bound is `u_floor`.
pub fn encode_uncertainty(model: &mut MipModel, unc: &UncertaintyModel, inputs: &[VarRef]) -> Result<EncodedOutput> {
    let bounds = propagate_bounds(&unc.mlp, &input_box(model, inputs)?)?;
    let mut enc = encode_mlp(model, &unc.mlp, inputs, &bounds)?;
    let raw = enc.outputs[0];
    let iv = enc.output_bounds[0];
    let f = unc.u_floor;
    let shifted = Interval::new(iv.lo - f, iv.hi - f);
    let a = relu_unit(model, LinExpr::from(raw) - LinExpr::constant(f), shifted, &mut enc.binaries)?;
    let hi = f + pad(shifted).hi.max(0.0);
    let u = model.add_var_auto("u", VarKind::Continuous, f, hi)?;
    model.add_constraint_auto(LinExpr::from(u) - LinExpr::from(a), Sense::Eq, f, "u_def")?;
    enc.outputs = vec![u];
    enc.output_bounds = vec![Interval::new(f, iv.hi.max(f))];
    Ok(enc)
}

/// `y + q u <= y_hi` and `y - q u >= y_lo`; an infinite end of the outcome
/// interval drops its constraint.
pub fn add_regression_conformal(
    model: &mut MipModel,
    y: VarRef,
    u: VarRef,
    q_hat: f64,
    outcome: Interval,
) -> Result<Vec<ConstraintId>> {
    if q_hat == f64::INFINITY {
        return Err(EncodeError::CalibrationInfeasible);
    }
    if !(q_hat >= 0.0) || !q_hat.is_finite() {
        return Err(EncodeError::Invalid(format!("quantile {q_hat} must be finite and non-negative")));
    }
    check_interval(outcome)?;
    if model.var(u).lb < U_FLOOR - 1e-12 {
        return Err(EncodeError::Invalid(format!(
            "uncertainty variable lower bound {} is below the floor {U_FLOOR}",
            model.var(u).lb
        )));
    }
    let mut ids = Vec::new();
    if outcome.hi.is_finite() {
        let e = LinExpr::from(y).with_term(q_hat, u);
        ids.push(model.add_constraint_auto(e, Sense::Le, outcome.hi, "conf_hi")?);
    }
    if outcome.lo.is_finite() {
        let e = LinExpr::from(y).with_term(-q_hat, u);
        ids.push(model.add_constraint_auto(e, Sense::Ge, outcome.lo, "conf_lo")?);
    }
    Ok(ids)
}

fn check_interval(iv: Interval) -> Result<()> {
    if !(iv.lo < iv.hi) || (iv.lo == f64::NEG_INFINITY && iv.hi == f64::INFINITY) {
        return Err(EncodeError::Outcome(format!("[{}, {}] is empty or unbounded on both sides", iv.lo, iv.hi)));
    }
    Ok(())
}

fn check_classes(desired: &[usize], k: usize) -> Result<()> {
    if desired.is_empty() {
        return Err(EncodeError::Outcome("no desired class".into()));
    }
    if let Some(&c) = desired.iter().find(|&&c| c >= k) {
        return Err(EncodeError::Outcome(format!("class {c} out of range for {k} classes")));
    }
    Ok(())
}

/// `BIG_M_SAFETY` times the largest absolute calibration logit.
pub fn default_big_m(max_abs_logit: f64) -> f64 {
    BIG_M_SAFETY * max_abs_logit
}

/// Smallest big-M valid for the conformal class constraints.
pub fn required_class_big_m(logit_bounds: &[Interval], q_hat: f64, eps: f64) -> f64 {
    logit_bounds.iter().fold(0.0, |m: f64, iv| m.max(iv.hi + q_hat + eps).max(-iv.lo - q_hat))
}

/// Conformal class-set containment: `w_k = 1` iff class `k` is in the set
/// `{k : -logit_k <= q}`; undesired classes are excluded and at least one
/// desired class is kept. Returns the constraint ids and the `w_k`.
#[allow(clippy::too_many_arguments)]
pub fn add_classification_conformal(
    model: &mut MipModel,
    logits: &[VarRef],
    logit_bounds: &[Interval],
    q_hat: f64,
    desired: &[usize],
    big_m: f64,
    eps: f64,
) -> Result<(Vec<ConstraintId>, Vec<VarRef>)> {
    let k = logits.len();
    check_classes(desired, k)?;
    if logit_bounds.len() != k {
        return Err(EncodeError::MissingBounds(0));
    }
    if q_hat == f64::INFINITY {
        return Err(EncodeError::CalibrationInfeasible);
    }
    if !q_hat.is_finite() {
        return Err(EncodeError::Invalid(format!("quantile {q_hat} is not finite")));
    }
    if !(big_m > 0.0) || !(eps > 0.0) {
        return Err(EncodeError::Invalid("big-M and eps must be positive".into()));
    }
    let required = required_class_big_m(logit_bounds, q_hat, eps);
    if big_m < required {
        return Err(EncodeError::BigMTooSmall { given: big_m, required });
    }
    let mut ids = Vec::new();
    let mut ws = Vec::with_capacity(k);
    for (c, &y) in logits.iter().enumerate() {
        let w = model.add_var_auto("in_set", VarKind::Binary, 0.0, 1.0)?;
        ws.push(w);
        // -y - q <= M (1 - w)
        ids.push(model.add_constraint_auto(
            LinExpr::term(-1.0, y).with_term(big_m, w),
            Sense::Le,
            big_m + q_hat,
            "set_in",
        )?);
        // y + q + eps <= M w
        ids.push(model.add_constraint_auto(
            LinExpr::from(y).with_term(-big_m, w),
            Sense::Le,
            -q_hat - eps,
            "set_out",
        )?);
        if !desired.contains(&c) {
            ids.push(model.add_constraint_auto(LinExpr::from(w), Sense::Eq, 0.0, "set_undesired")?);
        }
    }
    let cover = desired.iter().fold(LinExpr::new(), |e, &c| e.with_term(1.0, ws[c]));
    ids.push(model.add_constraint_auto(cover, Sense::Ge, 1.0, "set_desired")?);
    Ok((ids, ws))
}

/// Some desired logit is at least every undesired logit, gated by `gate`
/// (`sum_k w_k >= gate`, or `>= 1` without a gate).
fn add_argmax_desired(
    model: &mut MipModel,
    enc: &EncodedOutput,
    desired: &[usize],
    gate: Option<VarRef>,
) -> Result<Vec<VarRef>> {
    let k = enc.outputs.len();
    check_classes(desired, k)?;
    let undesired: Vec<usize> = (0..k).filter(|c| !desired.contains(c)).collect();
    let b = &enc.output_bounds;
    let mut ws = Vec::new();
    for &d in desired {
        let w = model.add_var_auto("top", VarKind::Binary, 0.0, 1.0)?;
        ws.push(w);
        for &u in &undesired {
            let m = pad(Interval::new(0.0, (b[u].hi - b[d].lo).max(0.0))).hi;
            // y_u - y_d <= M (1 - w)
            let e = LinExpr::from(enc.outputs[u]) - LinExpr::from(enc.outputs[d]) + LinExpr::term(m, w);
            model.add_constraint_auto(e, Sense::Le, m, "top_gap")?;
        }
    }
    let mut cover = ws.iter().fold(LinExpr::new(), |e, &w| e.with_term(1.0, w));
    match gate {
        Some(z) => {
            cover.add_term(-1.0, z);
            model.add_constraint_auto(cover, Sense::Ge, 0.0, "top_any")?;
        }
        None => {
            model.add_constraint_auto(cover, Sense::Ge, 1.0, "top_any")?;
        }
    }
    Ok(ws)
}

/// A linear side constraint over the decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownConstraint {
    pub label: String,
    /// `(feature index, coefficient)` pairs.
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Decision variables, linear cost, known constraints and the target set of
/// the learned constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub task: TaskKind,
    pub feature_names: Vec<String>,
    pub feature_bounds: Vec<Interval>,
    pub costs: Vec<f64>,
    pub known: Vec<KnownConstraint>,
    pub outcome: OutcomeSet,
}

/// Target output of the reactor benchmark.
pub const REACTOR_TARGET: f64 = 50.0;

impl ProblemSpec {
    /// Reactor design on the unit feature box. Ratio constraints are stated
    /// on the physical variables `p_i = lo_i + (hi_i - lo_i) x_i` and
    /// linearized by multiplying through the positive denominators.
    pub fn reactor(costs: Vec<f64>) -> Self {
        let phys = data::REACTOR_PHYSICAL;
        let (v0, vhe, temp, dt, len) = (0, 1, 2, 3, 4);
        // p_a - k p_b (sense) 0
        let ratio = |label: &str, a: usize, b: usize, k: f64, sense: Sense| KnownConstraint {
            label: label.to_string(),
            terms: vec![(a, phys[a].width()), (b, -k * phys[b].width())],
            sense,
            rhs: k * phys[b].lo - phys[a].lo,
        };
        let known = vec![
            ratio("len_dt_lo", len, dt, 10.0, Sense::Ge),
            ratio("len_dt_hi", len, dt, 150.0, Sense::Le),
            ratio("feed_lo", v0, vhe, 0.75, Sense::Ge),
            ratio("feed_hi", v0, vhe, 3.0, Sense::Le),
            ratio("residence_lo", v0, len, 20.0, Sense::Ge),
            ratio("residence_hi", v0, len, 120.0, Sense::Le),
            ratio("flow_temp", v0, temp, 1.1, Sense::Le),
        ];
        Self {
            name: "reactor".into(),
            task: TaskKind::Regression,
            feature_names: data::REACTOR_FEATURES.iter().map(|s| s.to_string()).collect(),
            feature_bounds: vec![Interval::new(0.0, 1.0); 5],
            costs,
            known,
            outcome: OutcomeSet::Interval(Interval::new(REACTOR_TARGET, f64::INFINITY)),
        }
    }

    /// Food basket: nutrient requirements met, salt and sugar fixed, desired
    /// palatability classes 2 and 3.
    pub fn basket(costs: Vec<f64>) -> Self {
        let b = data::basket();
        let mut known: Vec<KnownConstraint> = b
            .nutrients
            .iter()
            .enumerate()
            .map(|(l, name)| KnownConstraint {
                label: format!("nutrient_{name}"),
                terms: b.nutval.iter().enumerate().map(|(m, row)| (m, row[l])).filter(|(_, c)| *c != 0.0).collect(),
                sense: Sense::Ge,
                rhs: b.nutreq[l],
            })
            .collect();
        known.push(KnownConstraint {
            label: "fixed_salt".into(),
            terms: vec![(b.salt, 1.0)],
            sense: Sense::Eq,
            rhs: data::BASKET_SALT_AMOUNT,
        });
        known.push(KnownConstraint {
            label: "fixed_sugar".into(),
            terms: vec![(b.sugar, 1.0)],
            sense: Sense::Eq,
            rhs: data::BASKET_SUGAR_AMOUNT,
        });
        Self {
            name: "basket".into(),
            task: TaskKind::Classification,
            feature_names: b.commodities.clone(),
            feature_bounds: b.bounds.clone(),
            costs,
            known,
            outcome: OutcomeSet::Classes(vec![2, 3]),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_features();
        if self.feature_bounds.len() != d || self.costs.len() != d {
            return Err(EncodeError::Invalid(format!(
                "{d} features, {} bounds, {} costs",
                self.feature_bounds.len(),
                self.costs.len()
            )));
        }
        if let Some(i) = self.feature_bounds.iter().position(|b| !b.is_finite()) {
            return Err(EncodeError::UnboundedInput(i));
        }
        for k in &self.known {
            if let Some(&(i, _)) = k.terms.iter().find(|(i, _)| *i >= d) {
                return Err(EncodeError::Invalid(format!("constraint `{}` uses feature {i}", k.label)));
            }
        }
        match (&self.task, &self.outcome) {
            (TaskKind::Regression, OutcomeSet::Interval(iv)) => check_interval(*iv),
            (TaskKind::Classification, OutcomeSet::Classes(cs)) if !cs.is_empty() => Ok(()),
            _ => Err(EncodeError::Outcome("outcome set does not match the task".into())),
        }
    }

    fn interval(&self) -> Result<Interval> {
        match &self.outcome {
            OutcomeSet::Interval(iv) => Ok(*iv),
            OutcomeSet::Classes(_) => Err(EncodeError::Outcome("expected an outcome interval".into())),
        }
    }

    fn classes(&self) -> Result<&[usize]> {
        match &self.outcome {
            OutcomeSet::Classes(cs) => Ok(cs),
            OutcomeSet::Interval(_) => Err(EncodeError::Outcome("expected desired classes".into())),
        }
    }
}

/// An assembled program with handles to its decision and output variables.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub model: MipModel,
    pub inputs: Vec<VarRef>,
    /// One entry per encoded predictor.
    pub outputs: Vec<EncodedOutput>,
    /// Uncertainty output `u`, for conformal regression.
    pub uncertainty: Option<EncodedOutput>,
    /// Enforcement indicators `z_p` of the ensemble formulation.
    pub indicators: Vec<VarRef>,
}

impl BuiltProblem {
    pub fn input_values(&self, assignment: &[f64]) -> Vec<f64> {
        self.inputs.iter().map(|v| assignment[v.index()]).collect()
    }
}

fn base_model(spec: &ProblemSpec, method: &str) -> Result<(MipModel, Vec<VarRef>)> {
    spec.validate()?;
    let mut model = MipModel::new(format!("{}_{method}", spec.name));
    let inputs = spec
        .feature_names
        .iter()
        .zip(&spec.feature_bounds)
        .map(|(n, b)| model.add_var(n.clone(), VarKind::Continuous, b.lo, b.hi))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for k in &spec.known {
        let expr = k.terms.iter().fold(LinExpr::new(), |e, &(i, c)| e.with_term(c, inputs[i]));
        model.add_constraint(expr, k.sense, k.rhs, k.label.clone())?;
    }
    model.set_objective(LinExpr::dot(&spec.costs, &inputs))?;
    Ok((model, inputs))
}

fn check_output_dim(spec: &ProblemSpec, p: &Predictor) -> Result<()> {
    let ok = match &spec.task {
        TaskKind::Regression => p.output_dim() == 1,
        TaskKind::Classification => p.output_dim() >= 2,
    };
    if !ok {
        return Err(EncodeError::Invalid(format!("predictor with {} outputs does not fit the task", p.output_dim())));
    }
    if let Some(d) = p.input_dim() {
        if d != spec.n_features() {
            return Err(EncodeError::Dimension { expected: spec.n_features(), got: d });
        }
    }
    Ok(())
}

/// Point-prediction formulation: encoded `y = h(x)` with `y` in the target set.
pub fn build_micl(spec: &ProblemSpec, predictor: &Predictor) -> Result<BuiltProblem> {
    check_output_dim(spec, predictor)?;
    let (mut model, inputs) = base_model(spec, "micl")?;
    let enc = encode_predictor(&mut model, predictor, &inputs)?;
    match spec.task {
        TaskKind::Regression => {
            let iv = spec.interval()?;
            let y = enc.outputs[0];
            if iv.lo.is_finite() {
                model.add_constraint(LinExpr::from(y), Sense::Ge, iv.lo, "target_lo")?;
            }
            if iv.hi.is_finite() {
                model.add_constraint(LinExpr::from(y), Sense::Le, iv.hi, "target_hi")?;
            }
        }
        TaskKind::Classification => {
            add_argmax_desired(&mut model, &enc, spec.classes()?, None)?;
        }
    }
    Ok(BuiltProblem { model, inputs, outputs: vec![enc], uncertainty: None, indicators: Vec::new() })
}

/// `ceil((1 - alpha) P)`, guarded against round-off.
pub fn enforced_count(p: usize, alpha: f64) -> usize {
    (((1.0 - alpha) * p as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Ensemble formulation: every member is encoded, and the target set is
/// enforced for at least `ceil((1 - alpha) P)` of them.
pub fn build_wmicl(spec: &ProblemSpec, predictors: &[Predictor], alpha: f64) -> Result<BuiltProblem> {
    if predictors.is_empty() {
        return Err(EncodeError::Invalid("ensemble formulation needs at least one model".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EncodeError::Conformal(ConformalError::Alpha(alpha)));
    }
    let (mut model, inputs) = base_model(spec, "wmicl")?;
    let mut outputs = Vec::with_capacity(predictors.len());
    let mut indicators = Vec::with_capacity(predictors.len());
    for p in predictors {
        check_output_dim(spec, p)?;
        let enc = encode_predictor(&mut model, p, &inputs)?;
        let z = model.add_var_auto("enforce", VarKind::Binary, 0.0, 1.0)?;
        match spec.task {
            TaskKind::Regression => {
                let iv = spec.interval()?;
                let b = pad(enc.output_bounds[0]);
                let y = enc.outputs[0];
                if iv.lo.is_finite() {
                    // y >= lo - M (1 - z)
                    let m = (iv.lo - b.lo).max(0.0);
                    model.add_constraint_auto(LinExpr::from(y).with_term(-m, z), Sense::Ge, iv.lo - m, "soft_lo")?;
                }
                if iv.hi.is_finite() {
                    let m = (b.hi - iv.hi).max(0.0);
                    model.add_constraint_auto(LinExpr::from(y).with_term(m, z), Sense::Le, iv.hi + m, "soft_hi")?;
                }
            }
            TaskKind::Classification => {
                add_argmax_desired(&mut model, &enc, spec.classes()?, Some(z))?;
            }
        }
        indicators.push(z);
        outputs.push(enc);
    }
    let need = enforced_count(predictors.len(), alpha);
    let card = indicators.iter().fold(LinExpr::new(), |e, &z| e.with_term(1.0, z));
    model.add_constraint(card, Sense::Ge, need as f64, "enforce_count")?;
    Ok(BuiltProblem { model, inputs, outputs, uncertainty: None, indicators })
}

/// Settings of the conformal class constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassConformalOptions {
    /// Explicit big-M, validated against the propagated logit bounds. When
    /// absent, `BIG_M_SAFETY` times the calibration logit scale is used,
    /// raised to the propagated requirement if that is larger.
    pub big_m: Option<f64>,
    pub eps: f64,
}

impl Default for ClassConformalOptions {
    fn default() -> Self {
        Self { big_m: None, eps: CLASS_EPS }
    }
}

/// Quantile fed to the encoder: the infeasible-stratum quantile for a
/// Mondrian calibration, the marginal one otherwise.
pub fn encoder_quantile(calib: &Calibration) -> Result<f64> {
    let group = calib.mondrian.as_ref().map(|_| INFEASIBLE_GROUP);
    Ok(calib.quantile_for(group)?)
}

/// Conformal formulation: the whole conformal set must lie in the target set.
pub fn build_cmicl(
    spec: &ProblemSpec,
    predictor: &Predictor,
    uncertainty: Option<&UncertaintyModel>,
    calib: &Calibration,
    opts: &ClassConformalOptions,
) -> Result<BuiltProblem> {
    check_output_dim(spec, predictor)?;
    let q = encoder_quantile(calib)?;
    if q == f64::INFINITY {
        return Err(EncodeError::CalibrationInfeasible);
    }
    let (mut model, inputs) = base_model(spec, "cmicl")?;
    let enc = encode_predictor(&mut model, predictor, &inputs)?;
    let mut unc_out = None;
    match spec.task {
        TaskKind::Regression => {
            if calib.score_kind != ScoreKind::NormalizedResidual {
                return Err(EncodeError::Invalid("regression needs normalized-residual scores".into()));
            }
            let unc = uncertainty.ok_or_else(|| EncodeError::Invalid("regression needs an uncertainty model".into()))?;
            let u = encode_uncertainty(&mut model, unc, &inputs)?;
            add_regression_conformal(&mut model, enc.outputs[0], u.outputs[0], q, spec.interval()?)?;
            unc_out = Some(u);
        }
        TaskKind::Classification => {
            if calib.score_kind != ScoreKind::NegativeTrueLogit {
                return Err(EncodeError::Invalid("classification needs negative-true-logit scores".into()));
            }
            let required = required_class_big_m(&enc.output_bounds, q, opts.eps);
            let m = match opts.big_m {
                Some(m) => m,
                None => {
                    let scale = calib
                        .logit_scale
                        .ok_or_else(|| EncodeError::Invalid("calibration lacks a logit scale for big-M".into()))?;
                    let m = default_big_m(scale);
                    if m < required {
                        info!("default big-M {m:.4} raised to propagated requirement {required:.4}");
                    }
                    m.max(pad(Interval::point(required)).hi)
                }
            };
            add_classification_conformal(&mut model, &enc.outputs, &enc.output_bounds, q, spec.classes()?, m, opts.eps)?;
        }
    }
    Ok(BuiltProblem { model, inputs, outputs: vec![enc], uncertainty: unc_out, indicators: Vec::new() })
}
