//! Exact MILP solving: a dense-tableau simplex for LP relaxations and a
//! best-bound branch-and-bound on top of it.

mod branch;
mod simplex;

pub use branch::{branch_and_bound, branch_and_bound_logged, IncumbentEvent, SolveOptions, SolveResult, SolveStatus};
pub use simplex::LpStatus;

use crate::mip::{MipModel, Sense};
use simplex::{LpData, RowSense, Tableau};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical breakdown after {pivots} pivots: {detail}")]
    Numerical { detail: String, pivots: usize },
    #[error("model has a non-finite coefficient: {0}")]
    NonFinite(String),
}

/// Result of an LP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub assignment: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

pub(crate) fn lp_data(model: &MipModel) -> Result<LpData, SolverError> {
    let n = model.num_vars();
    let mut cost = vec![0.0; n];
    for &(c, v) in &model.objective().terms {
        cost[v.index()] += c;
    }
    let mut data = LpData { n, rows: Vec::new(), senses: Vec::new(), rhs: Vec::new(), cost };
    for c in model.constraints() {
        if !c.rhs.is_finite() {
            return Err(SolverError::NonFinite(c.label.clone()));
        }
        data.rows.push(c.expr.terms.iter().map(|&(a, v)| (v.index(), a)).collect());
        data.senses.push(match c.sense {
            Sense::Le => RowSense::Le,
            Sense::Ge => RowSense::Ge,
            Sense::Eq => RowSense::Eq,
        });
        data.rhs.push(c.rhs);
    }
    Ok(data)
}

pub(crate) fn model_bounds(model: &MipModel) -> (Vec<f64>, Vec<f64>) {
    model.variables().iter().map(|v| (v.lb, v.ub)).unzip()
}

/// Solves the LP relaxation of `model` (integrality dropped).
pub fn simplex_solve(model: &MipModel) -> Result<LpSolution, SolverError> {
    let data = lp_data(model)?;
    let (lb, ub) = model_bounds(model);
    let mut tab = Tableau::new(&data, &lb, &ub);
    let status = tab.solve()?;
    let assignment = tab.structural_values();
    let objective = match status {
        LpStatus::Optimal => tab.objective() + model.objective().constant,
        LpStatus::Infeasible => f64::INFINITY,
        LpStatus::Unbounded => f64::NEG_INFINITY,
    };
    Ok(LpSolution { status, assignment, objective, pivots: tab.pivots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::{LinExpr, VarKind};

    #[test]
    fn fixture_min_neg_x_on_unit_interval() {
        let mut m = MipModel::new("f1");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 1.0).unwrap();
        m.set_objective(LinExpr::term(-1.0, x)).unwrap();
        let s = simplex_solve(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.assignment, vec![1.0]);
        assert_eq!(s.objective, -1.0);
    }

    #[test]
    fn fixture_contradictory_rows_are_infeasible() {
        let mut m = MipModel::new("f2");
        let x = m.add_var("x", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.add_constraint(x.into(), Sense::Le, -1.0, "c1").unwrap();
        m.add_constraint(x.into(), Sense::Ge, 0.0, "c2").unwrap();
        assert_eq!(simplex_solve(&m).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn fixture_unbounded_ray() {
        let mut m = MipModel::new("f3");
        let x = m.add_var("x", VarKind::Continuous, 0.0, f64::INFINITY).unwrap();
        m.set_objective(LinExpr::term(-1.0, x)).unwrap();
        assert_eq!(simplex_solve(&m).unwrap().status, LpStatus::Unbounded);
    }
}
