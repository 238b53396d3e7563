//! Solver-independent mixed-integer linear programs.
//!
//! A [`MipModel`] owns a variable table, a list of linear constraints and a
//! linear objective that is always minimized. Variables are addressed through
//! [`VarRef`] handles that remember which model issued them, so mixing handles
//! across models is reported instead of silently indexing the wrong column.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Absolute tolerance used when checking an assignment against a model.
pub const FEASIBILITY_TOL: f64 = 1e-6;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, PartialEq)]
pub enum MipError {
    #[error("variable `{name}`: lower bound {lb} exceeds upper bound {ub}")]
    InvalidBounds { name: String, lb: f64, ub: f64 },
    #[error("binary variable `{name}` has bounds [{lb}, {ub}] outside [0, 1]")]
    BinaryBounds { name: String, lb: f64, ub: f64 },
    #[error("variable name `{0}` is already used")]
    DuplicateName(String),
    #[error("variable name `{0}` is not a valid LP identifier")]
    InvalidName(String),
    #[error("variable reference {index} was issued by another model")]
    ForeignVar { index: usize },
    #[error("constraint `{label}` has a non-finite coefficient or right-hand side")]
    NonFinite { label: String },
}

/// Opaque handle to a variable of one [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    model: u64,
    index: usize,
}

impl VarRef {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

impl VarKind {
    pub fn is_integral(&self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

/// Linear expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(f64, VarRef)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(coef: f64, var: VarRef) -> Self {
        Self { terms: vec![(coef, var)], constant: 0.0 }
    }

    pub fn add_term(&mut self, coef: f64, var: VarRef) -> &mut Self {
        self.terms.push((coef, var));
        self
    }

    pub fn with_term(mut self, coef: f64, var: VarRef) -> Self {
        self.terms.push((coef, var));
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// Sum of `coefs[i] * vars[i]`.
    pub fn dot(coefs: &[f64], vars: &[VarRef]) -> Self {
        Self {
            terms: coefs.iter().copied().zip(vars.iter().copied()).collect(),
            constant: 0.0,
        }
    }

    /// Merges duplicate variables, drops zero coefficients and orders terms by
    /// variable index.
    pub fn normalized(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|(_, v)| *v);
        let mut merged: Vec<(f64, VarRef)> = Vec::with_capacity(terms.len());
        for (c, v) in terms {
            match merged.last_mut() {
                Some((mc, mv)) if *mv == v => *mc += c,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|(c, _)| *c != 0.0);
        Self { terms: merged, constant: self.constant }
    }

    pub fn evaluate(&self, assignment: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, v)| c * assignment[v.index])
            .sum::<f64>()
            + self.constant
    }
}

impl From<VarRef> for LinExpr {
    fn from(v: VarRef) -> Self {
        LinExpr::term(1.0, v)
    }
}

impl std::ops::Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl std::ops::Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + rhs * -1.0
    }
}

impl std::ops::Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.0 *= k;
        }
        self.constant *= k;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn lp_token(&self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

/// Stored constraint: `expr sense rhs`, with `expr` normalized and free of
/// constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
    pub label: String,
}

impl Constraint {
    /// Signed violation of the constraint at `assignment` (0 when satisfied).
    pub fn violation(&self, assignment: &[f64]) -> f64 {
        let lhs = self.expr.evaluate(assignment);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

/// One reason an assignment fails [`MipModel::check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Length { expected: usize, got: usize },
    Bound { var: String, value: f64 },
    Integrality { var: String, value: f64 },
    Constraint { label: String, amount: f64 },
}

#[derive(Debug, Clone)]
pub struct MipModel {
    id: u64,
    pub name: String,
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    names: HashMap<String, usize>,
    counters: HashMap<String, usize>,
}

impl MipModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            names: HashMap::new(),
            counters: HashMap::new(),
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn var(&self, v: VarRef) -> &Variable {
        &self.variables[v.index]
    }

    /// Handle for the variable at `index`, if it exists.
    pub fn var_ref(&self, index: usize) -> Option<VarRef> {
        (index < self.variables.len()).then_some(VarRef { model: self.id, index })
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarRef> {
        self.names.get(name).map(|&index| VarRef { model: self.id, index })
    }

    /// Next name of the form `{prefix}_{n}`, counting per prefix.
    pub fn fresh_name(&mut self, prefix: &str) -> String {
        let counter = self.counters.entry(prefix.to_string()).or_insert(0);
        let name = format!("{prefix}_{counter}");
        *counter += 1;
        name
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lb: f64,
        ub: f64,
    ) -> Result<VarRef, MipError> {
        let name = name.into();
        if !is_lp_identifier(&name) {
            return Err(MipError::InvalidName(name));
        }
        if lb.is_nan() || ub.is_nan() || lb > ub || lb == f64::INFINITY || ub == f64::NEG_INFINITY {
            return Err(MipError::InvalidBounds { name, lb, ub });
        }
        if kind == VarKind::Binary && (lb < 0.0 || ub > 1.0) {
            return Err(MipError::BinaryBounds { name, lb, ub });
        }
        if self.names.contains_key(&name) {
            return Err(MipError::DuplicateName(name));
        }
        let index = self.variables.len();
        self.names.insert(name.clone(), index);
        self.variables.push(Variable { name, kind, lb, ub });
        Ok(VarRef { model: self.id, index })
    }

    /// Adds a variable with an auto-generated `{prefix}_{n}` name.
    pub fn add_var_auto(
        &mut self,
        prefix: &str,
        kind: VarKind,
        lb: f64,
        ub: f64,
    ) -> Result<VarRef, MipError> {
        let name = self.fresh_name(prefix);
        self.add_var(name, kind, lb, ub)
    }

    /// Tightens or relaxes the bounds of an existing variable.
    pub fn set_bounds(&mut self, v: VarRef, lb: f64, ub: f64) -> Result<(), MipError> {
        self.check_ref(v)?;
        let var = &mut self.variables[v.index];
        if lb.is_nan() || ub.is_nan() || lb > ub {
            return Err(MipError::InvalidBounds { name: var.name.clone(), lb, ub });
        }
        if var.kind == VarKind::Binary && (lb < 0.0 || ub > 1.0) {
            return Err(MipError::BinaryBounds { name: var.name.clone(), lb, ub });
        }
        var.lb = lb;
        var.ub = ub;
        Ok(())
    }

    fn check_ref(&self, v: VarRef) -> Result<(), MipError> {
        if v.model != self.id || v.index >= self.variables.len() {
            return Err(MipError::ForeignVar { index: v.index });
        }
        Ok(())
    }

    fn check_expr(&self, expr: &LinExpr) -> Result<(), MipError> {
        expr.terms.iter().try_for_each(|(_, v)| self.check_ref(*v))
    }

    /// Adds `expr sense rhs`. The expression is normalized and its constant is
    /// moved to the right-hand side.
    pub fn add_constraint(
        &mut self,
        expr: LinExpr,
        sense: Sense,
        rhs: f64,
        label: impl Into<String>,
    ) -> Result<ConstraintId, MipError> {
        let label = label.into();
        self.check_expr(&expr)?;
        let mut expr = expr.normalized();
        let rhs = rhs - expr.constant;
        expr.constant = 0.0;
        if !rhs.is_finite() || expr.terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(MipError::NonFinite { label });
        }
        let id = ConstraintId(self.constraints.len());
        self.constraints.push(Constraint { expr, sense, rhs, label });
        Ok(id)
    }

    /// Like [`add_constraint`](Self::add_constraint) with an auto-generated label.
    pub fn add_constraint_auto(
        &mut self,
        expr: LinExpr,
        sense: Sense,
        rhs: f64,
        prefix: &str,
    ) -> Result<ConstraintId, MipError> {
        let label = self.fresh_name(prefix);
        self.add_constraint(expr, sense, rhs, label)
    }

    pub fn set_objective(&mut self, expr: LinExpr) -> Result<(), MipError> {
        self.check_expr(&expr)?;
        self.objective = expr.normalized();
        if self.objective.terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(MipError::NonFinite { label: "objective".into() });
        }
        Ok(())
    }

    pub fn objective_value(&self, assignment: &[f64]) -> f64 {
        self.objective.evaluate(assignment)
    }

    /// Every bound, integrality and constraint violation larger than `tol`.
    pub fn violations(&self, assignment: &[f64], tol: f64) -> Vec<Violation> {
        if assignment.len() != self.variables.len() {
            return vec![Violation::Length { expected: self.variables.len(), got: assignment.len() }];
        }
        let mut out = Vec::new();
        for (var, &x) in self.variables.iter().zip(assignment) {
            if !x.is_finite() || x < var.lb - tol || x > var.ub + tol {
                out.push(Violation::Bound { var: var.name.clone(), value: x });
            }
            if var.kind.is_integral() && (x - x.round()).abs() > tol {
                out.push(Violation::Integrality { var: var.name.clone(), value: x });
            }
        }
        for c in &self.constraints {
            let amount = c.violation(assignment);
            if amount > tol {
                out.push(Violation::Constraint { label: c.label.clone(), amount });
            }
        }
        out
    }

    pub fn check_feasible(&self, assignment: &[f64], tol: f64) -> bool {
        self.violations(assignment, tol).is_empty()
    }

    /// CPLEX-style LP text. Output is a pure function of the model contents.
    pub fn to_lp_string(&self) -> String {
        emit_lp_text(self)
    }
}

fn is_lp_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '[' | ']'))
}

/// Formats like C's `%.15g`: 15 significant digits, trailing zeros trimmed,
/// scientific notation outside `1e-5 <= |v| < 1e15`.
pub fn format_g15(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.14e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn write_terms(out: &mut String, model: &MipModel, expr: &LinExpr) {
    if expr.terms.is_empty() {
        match model.variables.first() {
            Some(v) => write!(out, " 0 {}", v.name).unwrap(),
            None => out.push_str(" 0"),
        }
        return;
    }
    for (i, (c, v)) in expr.terms.iter().enumerate() {
        let name = &model.variables[v.index].name;
        if i == 0 {
            if *c < 0.0 {
                write!(out, " - {} {}", format_g15(-c), name).unwrap();
            } else {
                write!(out, " {} {}", format_g15(*c), name).unwrap();
            }
        } else if *c < 0.0 {
            write!(out, " - {} {}", format_g15(-c), name).unwrap();
        } else {
            write!(out, " + {} {}", format_g15(*c), name).unwrap();
        }
    }
}

/// Renders the model in LP format.
///
/// Sections appear in a fixed order: `Minimize`, `Subject To`, `Bounds`,
/// `Generals`, `Binaries`, `End`. Coefficients use [`format_g15`]. Variables
/// with the default bounds `[0, +inf)` (and binaries with `[0, 1]`) are not
/// listed under `Bounds`.
pub fn emit_lp_text(model: &MipModel) -> String {
    let mut out = String::new();
    writeln!(out, "\\ Model {}", model.name).unwrap();
    out.push_str("Minimize\n obj:");
    let obj = &model.objective;
    if obj.terms.is_empty() {
        out.push_str(" 0");
    } else {
        write_terms(&mut out, model, obj);
    }
    if obj.constant != 0.0 {
        if obj.constant < 0.0 {
            write!(out, " - {}", format_g15(-obj.constant)).unwrap();
        } else {
            write!(out, " + {}", format_g15(obj.constant)).unwrap();
        }
    }
    out.push('\n');

    out.push_str("Subject To\n");
    for c in &model.constraints {
        write!(out, " {}:", c.label).unwrap();
        write_terms(&mut out, model, &c.expr);
        writeln!(out, " {} {}", c.sense.lp_token(), format_g15(c.rhs)).unwrap();
    }

    let mut bounds = String::new();
    for v in &model.variables {
        let default = match v.kind {
            VarKind::Binary => v.lb == 0.0 && v.ub == 1.0,
            _ => v.lb == 0.0 && v.ub == f64::INFINITY,
        };
        if default {
            continue;
        }
        if v.lb == v.ub {
            writeln!(bounds, " {} = {}", v.name, format_g15(v.lb)).unwrap();
        } else if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            writeln!(bounds, " {} free", v.name).unwrap();
        } else if v.ub == f64::INFINITY {
            writeln!(bounds, " {} >= {}", v.name, format_g15(v.lb)).unwrap();
        } else {
            writeln!(bounds, " {} <= {} <= {}", format_g15(v.lb), v.name, format_g15(v.ub)).unwrap();
        }
    }
    if !bounds.is_empty() {
        out.push_str("Bounds\n");
        out.push_str(&bounds);
    }

    let section = |title: &str, kind: VarKind, out: &mut String| {
        let names: Vec<&str> = model
            .variables
            .iter()
            .filter(|v| v.kind == kind)
            .map(|v| v.name.as_str())
            .collect();
        if !names.is_empty() {
            writeln!(out, "{title}").unwrap();
            for n in names {
                writeln!(out, " {n}").unwrap();
            }
        }
    };
    section("Generals", VarKind::Integer, &mut out);
    section("Binaries", VarKind::Binary, &mut out);
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn add_var_issues_sequential_refs() {
        let mut m = MipModel::new("t");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 1500.0).unwrap();
        assert_eq!(x.index(), 0);
        let b = m.add_var("b", VarKind::Binary, 1.0, 1.0).unwrap();
        assert_eq!(m.var(b).lb, 1.0);
        assert_eq!(
            m.add_var("bad", VarKind::Continuous, 2.0, 1.0),
            Err(MipError::InvalidBounds { name: "bad".into(), lb: 2.0, ub: 1.0 })
        );
        assert!(matches!(
            m.add_var("bb", VarKind::Binary, 0.0, 2.0),
            Err(MipError::BinaryBounds { .. })
        ));
        assert!(matches!(m.add_var("x", VarKind::Continuous, 0.0, 1.0), Err(MipError::DuplicateName(_))));
        assert!(matches!(m.add_var("1x", VarKind::Continuous, 0.0, 1.0), Err(MipError::InvalidName(_))));
    }

    #[test]
    fn constraint_normalization_merges_and_folds() {
        let mut m = MipModel::new("t");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 10.0).unwrap();
        let id = m
            .add_constraint(LinExpr::from(x) + LinExpr::from(x), Sense::Le, 4.0, "c")
            .unwrap();
        let c = &m.constraints()[id.0];
        assert_eq!(c.expr.terms, vec![(2.0, x)]);
        assert_eq!(c.rhs, 4.0);

        let id = m.add_constraint(LinExpr::constant(3.0), Sense::Le, 5.0, "k").unwrap();
        let c = &m.constraints()[id.0];
        assert!(c.expr.terms.is_empty());
        assert_eq!(c.rhs, 2.0);
        assert_eq!(c.violation(&[0.0]), 0.0);
        let bad = m.add_constraint(LinExpr::constant(7.0), Sense::Le, 5.0, "k2").unwrap();
        assert_eq!(m.constraints()[bad.0].violation(&[0.0]), 2.0);
    }

    #[test]
    fn foreign_refs_are_rejected() {
        let mut a = MipModel::new("a");
        let mut b = MipModel::new("b");
        let xa = a.add_var("x", VarKind::Continuous, 0.0, 1.0).unwrap();
        b.add_var("x", VarKind::Continuous, 0.0, 1.0).unwrap();
        assert_eq!(
            b.add_constraint(LinExpr::from(xa), Sense::Le, 1.0, "c"),
            Err(MipError::ForeignVar { index: 0 })
        );
        assert!(b.set_objective(LinExpr::from(xa)).is_err());
    }

    #[test]
    fn fresh_names_count_per_prefix() {
        let mut m = MipModel::new("t");
        assert_eq!(m.fresh_name("a"), "a_0");
        assert_eq!(m.fresh_name("a"), "a_1");
        assert_eq!(m.fresh_name("b"), "b_0");
    }

    #[test]
    fn g15_formatting() {
        assert_eq!(format_g15(1.0), "1");
        assert_eq!(format_g15(-2.5), "-2.5");
        assert_eq!(format_g15(0.1), "0.1");
        assert_eq!(format_g15(1500.0), "1500");
        assert_eq!(format_g15(1.0 / 3.0), "0.333333333333333");
        assert_eq!(format_g15(1e-7), "1e-07");
        assert_eq!(format_g15(1e20), "1e+20");
        assert_eq!(format_g15(123456789012345.0), "123456789012345");
        assert_eq!(format_g15(9.999999999999999e14), "1e+15");
    }

    #[test]
    fn empty_model_lp_text() {
        let m = MipModel::new("empty");
        assert_eq!(m.to_lp_string(), "\\ Model empty\nMinimize\n obj: 0\nSubject To\nEnd\n");
    }

    #[test]
    fn violations_cover_bounds_integrality_constraints() {
        let mut m = MipModel::new("t");
        let x = m.add_var("x", VarKind::Integer, 0.0, 3.0).unwrap();
        m.add_constraint(LinExpr::from(x), Sense::Ge, 1.0, "lo").unwrap();
        assert!(m.check_feasible(&[2.0], FEASIBILITY_TOL));
        let v = m.violations(&[0.5], FEASIBILITY_TOL);
        assert!(v.iter().any(|v| matches!(v, Violation::Integrality { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Constraint { .. })));
        assert!(!m.check_feasible(&[4.0], FEASIBILITY_TOL));
        assert!(!m.check_feasible(&[], FEASIBILITY_TOL));
    }

    fn model_with_vars(n: usize) -> (MipModel, Vec<VarRef>) {
        let mut m = MipModel::new("p");
        let vars = (0..n)
            .map(|i| m.add_var(format!("x{i}"), VarKind::Continuous, -10.0, 10.0).unwrap())
            .collect();
        (m, vars)
    }

    fn expr_strategy(n: usize) -> impl Strategy<Value = Vec<(f64, usize)>> {
        prop::collection::vec((-5.0f64..5.0, 0..n), 0..8)
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in expr_strategy(4), k in -3.0f64..3.0) {
            let (_, vars) = model_with_vars(4);
            let mut e = LinExpr::constant(k);
            for (c, i) in raw { e.add_term(c, vars[i]); }
            let once = e.normalized();
            prop_assert_eq!(once.normalized(), once);
        }

        #[test]
        fn evaluation_is_linear(
            a in expr_strategy(4),
            b in expr_strategy(4),
            alpha in -3.0f64..3.0,
            x in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let (_, vars) = model_with_vars(4);
            let build = |raw: &[(f64, usize)]| {
                let mut e = LinExpr::constant(0.5);
                for &(c, i) in raw { e.add_term(c, vars[i]); }
                e
            };
            let (ea, eb) = (build(&a), build(&b));
            let combined = (ea.clone() * alpha + eb.clone()).normalized();
            let lhs = combined.evaluate(&x);
            let rhs = alpha * ea.evaluate(&x) + eb.evaluate(&x);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn check_feasible_matches_bruteforce(
            rows in prop::collection::vec((expr_strategy(3), 0u8..3, -20.0f64..20.0), 1..6),
            x in prop::collection::vec(-12.0f64..12.0, 3),
        ) {
            let (mut m, vars) = model_with_vars(3);
            let mut brute = true;
            for (raw, s, rhs) in &rows {
                let mut e = LinExpr::new();
                for &(c, i) in raw { e.add_term(c, vars[i]); }
                let lhs = e.evaluate(&x);
                let sense = match s { 0 => Sense::Le, 1 => Sense::Ge, _ => Sense::Eq };
                brute &= match sense {
                    Sense::Le => lhs <= rhs + 1e-6,
                    Sense::Ge => lhs >= rhs - 1e-6,
                    Sense::Eq => (lhs - rhs).abs() <= 1e-6,
                };
                m.add_constraint_auto(e, sense, *rhs, "c").unwrap();
            }
            brute &= x.iter().all(|v| (-10.0 - 1e-6..=10.0 + 1e-6).contains(v));
            prop_assert_eq!(m.check_feasible(&x, 1e-6), brute);
        }
    }
}
