//! Best-bound branch-and-bound with depth-first dives.
//!
//! Open nodes live in a heap ordered by their parent's LP bound (ties by
//! creation order). Each popped node starts a dive: the LP is solved from
//! scratch, the most fractional integer column is branched on, the child that
//! contains the rounded LP value is explored next and its sibling is pushed.
//! Inside a dive the child LP is re-optimized from the parent tableau with the
//! dual simplex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{LpData, LpStatus, Tableau};
use super::{lp_data, model_bounds, SolverError};
use crate::mip::{MipModel, FEASIBILITY_TOL};

const INT_TOL: f64 = 1e-6;
const LP_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Relative optimality gap at which the search stops.
    pub rel_gap: f64,
    pub node_limit: usize,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { rel_gap: 0.01, node_limit: 1_000_000, time_limit: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    GapReached,
    Infeasible,
    Unbounded,
    NodeLimit,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapReached => "gap-reached",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NodeLimit => "node-limit",
            SolveStatus::TimeLimit => "time-limit",
        }
    }

    /// Whether the search finished with a certified incumbent.
    pub fn is_solved(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GapReached)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolveStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "optimal" => SolveStatus::Optimal,
            "gap-reached" => SolveStatus::GapReached,
            "infeasible" => SolveStatus::Infeasible,
            "unbounded" => SolveStatus::Unbounded,
            "node-limit" => SolveStatus::NodeLimit,
            "time-limit" => SolveStatus::TimeLimit,
            other => return Err(format!("unknown solve status `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub incumbent: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub branchings: usize,
    pub wall_seconds: f64,
}

/// Emitted on every incumbent improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct IncumbentEvent {
    pub nodes: usize,
    pub incumbent: f64,
    pub bound: f64,
    pub gap: f64,
    pub elapsed: f64,
}

impl std::fmt::Display for IncumbentEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "nodes={} incumbent={} bound={} gap={:.6} elapsed={:.3}s",
            self.nodes, self.incumbent, self.bound, self.gap, self.elapsed
        )
    }
}

/// Relative gap for minimization.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / incumbent.abs().max(1e-9)).max(0.0)
}

fn closed_status(incumbent: f64, bound: f64) -> SolveStatus {
    if bound >= incumbent - 1e-9 * incumbent.abs().max(1.0) {
        SolveStatus::Optimal
    } else {
        SolveStatus::GapReached
    }
}

struct OpenNode {
    bound: f64,
    seq: u64,
    changes: Vec<(usize, f64, f64)>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // Reversed so that the max-heap pops the smallest bound, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    model: &'a MipModel,
    data: LpData,
    base_lb: Vec<f64>,
    base_ub: Vec<f64>,
    integer: Vec<usize>,
    opts: &'a SolveOptions,
    start: Instant,
    incumbent: Option<(f64, Vec<f64>)>,
    pruned_bound: f64,
    nodes: usize,
    branchings: usize,
    seq: u64,
}

enum NodeLp {
    Infeasible,
    Solved { obj: f64, x: Vec<f64> },
}

impl<'a> Search<'a> {
    fn bounds_for(&self, changes: &[(usize, f64, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lb = self.base_lb.clone();
        let mut ub = self.base_ub.clone();
        for &(j, l, u) in changes {
            lb[j] = l;
            ub[j] = u;
        }
        (lb, ub)
    }

    fn cold(&self, lb: &[f64], ub: &[f64]) -> Result<(Tableau, LpStatus), SolverError> {
        let mut tab = Tableau::new(&self.data, lb, ub);
        let status = tab.solve()?;
        Ok((tab, status))
    }

    /// Whether `x` satisfies the node's rows and bounds to a loose tolerance.
    fn lp_point_ok(&self, x: &[f64], lb: &[f64], ub: &[f64]) -> bool {
        for j in 0..x.len() {
            if !x[j].is_finite() || x[j] < lb[j] - LP_CHECK_TOL || x[j] > ub[j] + LP_CHECK_TOL {
                return false;
            }
        }
        self.model
            .constraints()
            .iter()
            .all(|c| c.violation(x) <= LP_CHECK_TOL * (1.0 + c.rhs.abs()))
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.incumbent {
            None => false,
            Some((inc, _)) => {
                let slack = 1e-9 * inc.abs().max(1.0);
                bound >= inc - slack || relative_gap(*inc, bound) <= self.opts.rel_gap
            }
        }
    }

    fn note_pruned(&mut self, bound: f64) {
        self.pruned_bound = self.pruned_bound.min(bound);
    }

    fn out_of_time(&self) -> bool {
        self.opts
            .time_limit
            .is_some_and(|t| self.start.elapsed().as_secs_f64() >= t)
    }

    /// Most fractional integer column, ties to the lowest index.
    fn branch_var(&self, x: &[f64]) -> Option<usize> {
        let mut best = None;
        let mut best_frac = INT_TOL;
        for &j in &self.integer {
            let f = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if f > best_frac {
                best_frac = f;
                best = Some(j);
            }
        }
        best
    }

    /// Tries to turn an integral LP point into an incumbent.
    fn try_incumbent(
        &mut self,
        x: &[f64],
        lb: &[f64],
        ub: &[f64],
        log: &mut dyn FnMut(&IncumbentEvent),
        open_bound: f64,
    ) -> Result<(), SolverError> {
        // Polish: fix the integers at their rounded values and re-solve the
        // continuous part from scratch.
        let mut flb = lb.to_vec();
        let mut fub = ub.to_vec();
        for &j in &self.integer {
            let r = x[j].round();
            flb[j] = r;
            fub[j] = r;
        }
        let mut candidate = None;
        if let Ok((tab, LpStatus::Optimal)) = self.cold(&flb, &fub) {
            let mut y = tab.structural_values();
            for &j in &self.integer {
                y[j] = y[j].round();
            }
            if self.model.check_feasible(&y, FEASIBILITY_TOL) {
                candidate = Some(y);
            }
        }
        if candidate.is_none() && self.model.check_feasible(x, FEASIBILITY_TOL) {
            candidate = Some(x.to_vec());
        }
        let Some(y) = candidate else {
            log::warn!("integral LP point rejected by the feasibility check");
            return Ok(());
        };
        let obj = self.model.objective_value(&y);
        let better = self.incumbent.as_ref().map_or(true, |(inc, _)| obj < *inc);
        if better {
            self.incumbent = Some((obj, y));
            let bound = open_bound.min(self.pruned_bound).min(obj);
            log(&IncumbentEvent {
                nodes: self.nodes,
                incumbent: obj,
                bound,
                gap: relative_gap(obj, bound),
                elapsed: self.start.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }

    fn solve_node_lp(&self, tab: &mut Tableau, lb: &[f64], ub: &[f64], warm: bool) -> Result<NodeLp, SolverError> {
        let constant = self.model.objective().constant;
        if warm {
            let budget = 20 * (self.data.rows.len() + self.data.n) + 1000;
            if let Ok(Some(status)) = tab.dual_simplex(budget) {
                match status {
                    LpStatus::Optimal => {
                        let x = tab.structural_values();
                        if self.lp_point_ok(&x, lb, ub) {
                            return Ok(NodeLp::Solved { obj: tab.objective() + constant, x });
                        }
                    }
                    LpStatus::Infeasible => return Ok(NodeLp::Infeasible),
                    LpStatus::Unbounded => {}
                }
            }
        }
        let (fresh, status) = self.cold(lb, ub)?;
        *tab = fresh;
        match status {
            LpStatus::Infeasible => Ok(NodeLp::Infeasible),
            LpStatus::Unbounded => Err(SolverError::Numerical {
                detail: "node relaxation unbounded below a bounded root".into(),
                pivots: tab.pivots,
            }),
            LpStatus::Optimal => {
                let x = tab.structural_values();
                if !self.lp_point_ok(&x, lb, ub) {
                    return Err(SolverError::Numerical {
                        detail: format!(
                            "LP solution violates the node constraints (max basic violation {:.3e})",
                            tab.max_primal_violation()
                        ),
                        pivots: tab.pivots,
                    });
                }
                Ok(NodeLp::Solved { obj: tab.objective() + constant, x })
            }
        }
    }
}

pub fn branch_and_bound(model: &MipModel, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    branch_and_bound_logged(model, opts, &mut |_| {})
}

/// Like [`branch_and_bound`], calling `on_incumbent` on every improvement.
pub fn branch_and_bound_logged(
    model: &MipModel,
    opts: &SolveOptions,
    on_incumbent: &mut dyn FnMut(&IncumbentEvent),
) -> Result<SolveResult, SolverError> {
    let start = Instant::now();
    let data = lp_data(model)?;
    let (base_lb, base_ub) = model_bounds(model);
    let integer: Vec<usize> = model
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind.is_integral())
        .map(|(j, _)| j)
        .collect();
    let mut s = Search {
        model,
        data,
        base_lb,
        base_ub,
        integer,
        opts,
        start,
        incumbent: None,
        pruned_bound: f64::INFINITY,
        nodes: 0,
        branchings: 0,
        seq: 0,
    };
    // Integer columns with fractional bounds are rounded inward first.
    let mut root_changes = Vec::new();
    for &j in &s.integer {
        let (l, u) = (s.base_lb[j].ceil(), s.base_ub[j].floor());
        if l != s.base_lb[j] || u != s.base_ub[j] {
            root_changes.push((j, l, u));
        }
    }
    let finish = |s: &Search, status: SolveStatus, bound: f64| {
        let (objective, incumbent) = match &s.incumbent {
            Some((o, x)) => (Some(*o), Some(x.clone())),
            None => (None, None),
        };
        let bound = match objective {
            Some(o) => bound.min(o),
            None => bound,
        };
        SolveResult {
            status,
            gap: objective.map_or(f64::INFINITY, |o| relative_gap(o, bound)),
            incumbent,
            objective,
            best_bound: bound,
            nodes: s.nodes,
            branchings: s.branchings,
            wall_seconds: s.start.elapsed().as_secs_f64(),
        }
    };
    if root_changes.iter().any(|&(_, l, u)| l > u) {
        return Ok(finish(&s, SolveStatus::Infeasible, f64::INFINITY));
    }

    // Root relaxation decides infeasible/unbounded up front.
    let (lb, ub) = s.bounds_for(&root_changes);
    let (root_tab, root_status) = s.cold(&lb, &ub)?;
    match root_status {
        LpStatus::Infeasible => {
            s.nodes = 1;
            return Ok(finish(&s, SolveStatus::Infeasible, f64::INFINITY));
        }
        LpStatus::Unbounded => {
            s.nodes = 1;
            return Ok(finish(&s, SolveStatus::Unbounded, f64::NEG_INFINITY));
        }
        LpStatus::Optimal => {}
    }
    let root_obj = root_tab.objective() + model.objective().constant;
    let mut root_tab = Some(root_tab);

    let mut heap = BinaryHeap::new();
    heap.push(OpenNode { bound: root_obj, seq: 0, changes: root_changes });
    s.seq = 1;

    let mut limit_status = None;
    'outer: while let Some(node) = heap.pop() {
        if s.prunable(node.bound) {
            s.note_pruned(node.bound);
            continue;
        }
        let mut changes = node.changes;
        let (mut lb, mut ub) = s.bounds_for(&changes);
        let mut tab = root_tab.take();
        let mut fresh = tab.is_some();
        let mut warm = false;
        let mut dive_bound = node.bound;
        loop {
            if s.nodes >= opts.node_limit {
                limit_status = Some(SolveStatus::NodeLimit);
            } else if s.out_of_time() {
                limit_status = Some(SolveStatus::TimeLimit);
            }
            if limit_status.is_some() {
                heap.push(OpenNode { bound: dive_bound, seq: s.seq, changes });
                break 'outer;
            }
            s.nodes += 1;
            let lp = match tab.as_mut() {
                Some(t) if fresh => {
                    fresh = false;
                    NodeLp::Solved { obj: t.objective() + model.objective().constant, x: t.structural_values() }
                }
                Some(t) if warm => s.solve_node_lp(t, &lb, &ub, true)?,
                _ => {
                    let mut t = Tableau::new(&s.data, &lb, &ub);
                    let lp = s.solve_node_lp(&mut t, &lb, &ub, false)?;
                    tab = Some(t);
                    lp
                }
            };
            let NodeLp::Solved { obj, x } = lp else {
                break;
            };
            if s.prunable(obj) {
                s.note_pruned(obj);
                break;
            }
            let Some(j) = s.branch_var(&x) else {
                let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
                s.try_incumbent(&x, &lb, &ub, on_incumbent, open)?;
                break;
            };
            s.branchings += 1;
            let v = x[j];
            let (fl, ce) = (v.floor(), v.ceil());
            let go_up = v - fl >= 0.5;
            let (near, far) = if go_up {
                ((j, ce, ub[j]), (j, lb[j], fl))
            } else {
                ((j, lb[j], fl), (j, ce, ub[j]))
            };
            let mut sibling = changes.clone();
            sibling.push(far);
            heap.push(OpenNode { bound: obj, seq: s.seq, changes: sibling });
            s.seq += 1;
            changes.push(near);
            lb[j] = near.1;
            ub[j] = near.2;
            dive_bound = obj;
            if let Some(t) = tab.as_mut() {
                t.set_bounds(j, near.1, near.2);
            }
            warm = true;
        }
        // Gap termination on the global bound.
        if let Some((inc, _)) = &s.incumbent {
            let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
            let bound = open.min(s.pruned_bound).min(*inc);
            if !heap.is_empty() && relative_gap(*inc, bound) <= opts.rel_gap {
                let bound = heap.iter().map(|n| n.bound).fold(bound, f64::min);
                return Ok(finish(&s, closed_status(*inc, bound), bound));
            }
        }
    }

    let open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let bound = open.min(s.pruned_bound);
    if let Some(status) = limit_status {
        let bound = if s.incumbent.is_none() && !bound.is_finite() { root_obj } else { bound };
        return Ok(finish(&s, status, bound));
    }
    match &s.incumbent {
        None => Ok(finish(&s, SolveStatus::Infeasible, f64::INFINITY)),
        Some((inc, _)) => {
            let status = closed_status(*inc, bound);
            Ok(finish(&s, status, bound))
        }
    }
}
