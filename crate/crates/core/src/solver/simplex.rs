//! Dense-tableau bounded-variable simplex.
//!
//! Every row is written as `a·x + s = b` with a slack `s` whose bounds encode
//! the sense (`<=`: `[0, inf)`, `>=`: `(-inf, 0]`, `=`: `[0, 0]`). Columns
//! carry arbitrary bounds, so no shifting or splitting is needed: nonbasic
//! columns sit at a finite bound (or at zero when free). Rows whose slack
//! cannot start basic get an artificial column and phase one minimizes the
//! artificial sum.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots the method
//! falls back to Bland's smallest-index rule, which cannot cycle.
//!
//! [`Tableau::dual_simplex`] restores primal feasibility after bound changes
//! on an optimal tableau, which is how branch-and-bound dives reuse work.

use super::SolverError;

pub(crate) const PRIMAL_TOL: f64 = 1e-7;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const ZERO_FLUSH: f64 = 1e-13;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RowSense {
    Le,
    Ge,
    Eq,
}

/// Row-sparse LP data: minimize `cost·x` over `rows` and column bounds.
#[derive(Debug, Clone)]
pub(crate) struct LpData {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    ncols: usize,
    art_start: usize,
    t: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    value: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    d: Vec<f64>,
    cost: Vec<f64>,
    pub pivots: usize,
    pivot_limit: usize,
    scratch: Vec<usize>,
}

const NOT_BASIC: usize = usize::MAX;

impl Tableau {
    /// Builds the phase-one tableau for `lp` with column bounds `lb`/`ub`.
    pub fn new(lp: &LpData, lb: &[f64], ub: &[f64]) -> Tableau {
        let m = lp.rows.len();
        let n = lp.n;
        let mut value = vec![0.0; n + m];
        for j in 0..n {
            value[j] = if lb[j].is_finite() {
                lb[j]
            } else if ub[j].is_finite() {
                ub[j]
            } else {
                0.0
            };
        }
        // Residual of each row with all structurals at their start values.
        let mut resid = vec![0.0; m];
        let mut needs_art = vec![false; m];
        let mut slack_lb = vec![0.0; m];
        let mut slack_ub = vec![0.0; m];
        for (i, row) in lp.rows.iter().enumerate() {
            let ax: f64 = row.iter().map(|&(j, a)| a * value[j]).sum();
            resid[i] = lp.rhs[i] - ax;
            let (sl, su) = match lp.senses[i] {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            slack_lb[i] = sl;
            slack_ub[i] = su;
            needs_art[i] = !(resid[i] >= sl && resid[i] <= su);
        }
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let art_start = n + m;
        let ncols = n + m + n_art;
        let mut t = vec![0.0; m * ncols];
        let mut lbv = Vec::with_capacity(ncols);
        let mut ubv = Vec::with_capacity(ncols);
        lbv.extend_from_slice(&lb[..n]);
        ubv.extend_from_slice(&ub[..n]);
        lbv.extend_from_slice(&slack_lb);
        ubv.extend_from_slice(&slack_ub);
        value.resize(ncols, 0.0);
        let mut basis = vec![0; m];
        let mut row_of = vec![NOT_BASIC; ncols];
        let mut next_art = art_start;
        for i in 0..m {
            let row = &mut t[i * ncols..(i + 1) * ncols];
            if needs_art[i] {
                let sigma = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
                for &(j, a) in &lp.rows[i] {
                    row[j] += sigma * a;
                }
                row[n + i] = sigma;
                row[next_art] = 1.0;
                lbv.push(0.0);
                ubv.push(f64::INFINITY);
                value[n + i] = 0.0;
                value[next_art] = resid[i].abs();
                basis[i] = next_art;
                row_of[next_art] = i;
                next_art += 1;
            } else {
                for &(j, a) in &lp.rows[i] {
                    row[j] += a;
                }
                row[n + i] = 1.0;
                value[n + i] = resid[i];
                basis[i] = n + i;
                row_of[n + i] = i;
            }
        }
        let mut cost = vec![0.0; ncols];
        cost[..n].copy_from_slice(&lp.cost);
        let pivot_limit = 50_000 + 50 * (m + ncols);
        let mut tab = Tableau {
            m,
            n,
            ncols,
            art_start,
            t,
            lb: lbv,
            ub: ubv,
            value,
            basis,
            row_of,
            d: vec![0.0; ncols],
            cost,
            pivots: 0,
            pivot_limit,
            scratch: Vec::with_capacity(ncols),
        };
        let phase1: Vec<f64> = (0..ncols).map(|j| if j >= art_start { 1.0 } else { 0.0 }).collect();
        tab.price_out(&phase1);
        tab
    }

    fn price_out(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    /// Full two-phase solve from the freshly built tableau.
    pub fn solve(&mut self) -> Result<LpStatus, SolverError> {
        if self.art_start < self.ncols {
            match self.primal()? {
                LpStatus::Unbounded => {
                    return Err(SolverError::Numerical {
                        detail: "phase one reported unbounded".into(),
                        pivots: self.pivots,
                    })
                }
                _ => {}
            }
            let infeas: f64 = (self.art_start..self.ncols).map(|j| self.value[j]).sum();
            if infeas > 1e-6 {
                return Ok(LpStatus::Infeasible);
            }
            for j in self.art_start..self.ncols {
                self.ub[j] = 0.0;
                if self.row_of[j] == NOT_BASIC {
                    self.value[j] = 0.0;
                }
            }
        }
        let c = self.cost.clone();
        self.price_out(&c);
        self.primal()
    }

    pub fn structural_values(&self) -> Vec<f64> {
        self.value[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        self.cost[..self.n]
            .iter()
            .zip(&self.value[..self.n])
            .map(|(c, x)| c * x)
            .sum()
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.ub[j] - self.lb[j] <= 0.0
    }

    fn check_pivots(&self) -> Result<(), SolverError> {
        if self.pivots > self.pivot_limit {
            return Err(SolverError::Numerical {
                detail: "pivot limit exceeded".into(),
                pivots: self.pivots,
            });
        }
        Ok(())
    }

    /// Primal simplex from a primal-feasible basis with the current reduced costs.
    fn primal(&mut self) -> Result<LpStatus, SolverError> {
        let mut degenerate = 0usize;
        loop {
            self.check_pivots()?;
            let bland = degenerate >= DEGENERATE_RUN;
            // Pricing.
            let mut enter = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                if self.row_of[j] != NOT_BASIC || self.is_fixed(j) {
                    continue;
                }
                let dj = self.d[j];
                let can_up = self.value[j] < self.ub[j];
                let can_down = self.value[j] > self.lb[j];
                let score = if dj < -OPT_TOL && can_up {
                    -dj
                } else if dj > OPT_TOL && can_down {
                    dj
                } else {
                    continue;
                };
                if bland {
                    enter = Some(j);
                    break;
                }
                if score > best {
                    best = score;
                    enter = Some(j);
                }
            }
            let Some(j) = enter else {
                return Ok(LpStatus::Optimal);
            };
            let dir = if self.d[j] < 0.0 { 1.0 } else { -1.0 };

            // Ratio test.
            let flip = if dir > 0.0 { self.ub[j] - self.value[j] } else { self.value[j] - self.lb[j] };
            let mut step = f64::INFINITY;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = self.t[i * self.ncols + j] * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let ratio = if alpha > 0.0 {
                    if self.lb[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (self.value[b] - self.lb[b]).max(0.0) / alpha
                } else {
                    if self.ub[b] == f64::INFINITY {
                        continue;
                    }
                    (self.ub[b] - self.value[b]).max(0.0) / -alpha
                };
                let better = match leave {
                    None => true,
                    Some((r, a)) => {
                        if ratio < step - 1e-12 {
                            true
                        } else if ratio <= step + 1e-12 {
                            if bland {
                                b < self.basis[r]
                            } else {
                                alpha.abs() > a.abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = step.min(ratio);
                    if ratio < step {
                        step = ratio;
                    }
                    leave = Some((i, alpha));
                }
            }
            if let Some((r, _)) = leave {
                let alpha = self.t[r * self.ncols + j] * dir;
                let b = self.basis[r];
                step = if alpha > 0.0 {
                    (self.value[b] - self.lb[b]).max(0.0) / alpha
                } else {
                    (self.ub[b] - self.value[b]).max(0.0) / -alpha
                };
            }
            if leave.is_none() && flip == f64::INFINITY {
                return Ok(LpStatus::Unbounded);
            }
            if leave.is_none() || flip <= step {
                // Bound flip, no basis change.
                self.shift_entering(j, dir * flip);
                self.value[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
                degenerate = 0;
                self.pivots += 1;
                continue;
            }
            let (r, alpha) = leave.unwrap();
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.shift_entering(j, dir * step);
            let b = self.basis[r];
            self.value[b] = if alpha > 0.0 { self.lb[b] } else { self.ub[b] };
            self.pivot(r, j);
        }
    }

    /// Moves nonbasic column `j` by `delta` and updates basic values.
    fn shift_entering(&mut self, j: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for i in 0..self.m {
            let tij = self.t[i * self.ncols + j];
            if tij != 0.0 {
                let b = self.basis[i];
                self.value[b] -= tij * delta;
            }
        }
        self.value[j] += delta;
    }

    /// Gauss-Jordan pivot making column `j` basic in row `r`.
    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let piv = self.t[r * nc + j];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            let inv = 1.0 / piv;
            self.scratch.clear();
            for (k, x) in row.iter_mut().enumerate() {
                if *x != 0.0 {
                    *x *= inv;
                    if x.abs() < ZERO_FLUSH {
                        *x = 0.0;
                    } else {
                        self.scratch.push(k);
                    }
                }
            }
            row[j] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        let nz = &self.scratch;
        let eliminate = |row: &mut [f64]| {
            let f = row[j];
            if f != 0.0 {
                for &k in nz {
                    let v = row[k] - f * prow[k];
                    row[k] = if v.abs() < ZERO_FLUSH { 0.0 } else { v };
                }
                row[j] = 0.0;
            }
        };
        for row in before.chunks_exact_mut(nc) {
            eliminate(row);
        }
        for row in after.chunks_exact_mut(nc) {
            eliminate(row);
        }
        let f = self.d[j];
        if f != 0.0 {
            for &k in nz {
                self.d[k] -= f * prow[k];
            }
            self.d[j] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = NOT_BASIC;
        self.basis[r] = j;
        self.row_of[j] = r;
        self.pivots += 1;
    }

    /// Changes the bounds of structural column `j` on an optimal tableau,
    /// moving it onto the new box if it is nonbasic.
    pub fn set_bounds(&mut self, j: usize, lb: f64, ub: f64) {
        self.lb[j] = lb;
        self.ub[j] = ub;
        if self.row_of[j] == NOT_BASIC {
            let v = self.value[j];
            let target = if v < lb {
                lb
            } else if v > ub {
                ub
            } else {
                v
            };
            if target != v {
                self.shift_entering(j, target - v);
                self.value[j] = target;
            }
        }
    }

    /// Dual simplex from a dual-feasible basis, followed by a primal cleanup.
    /// `Ok(None)` means the iteration budget ran out and the caller should
    /// rebuild from scratch.
    pub fn dual_simplex(&mut self, budget: usize) -> Result<Option<LpStatus>, SolverError> {
        let start = self.pivots;
        loop {
            if self.pivots - start > budget {
                return Ok(None);
            }
            let bland = self.pivots - start > budget / 2;
            // Leaving row: largest bound violation.
            let mut leave = None;
            let mut worst = PRIMAL_TOL;
            for i in 0..self.m {
                let b = self.basis[i];
                let v = self.value[b];
                let viol = (self.lb[b] - v).max(v - self.ub[b]);
                if viol > worst {
                    worst = viol;
                    leave = Some(i);
                    if bland {
                        break;
                    }
                }
            }
            let Some(r) = leave else {
                break;
            };
            let b = self.basis[r];
            let below = self.value[b] < self.lb[b];
            let target = if below { self.lb[b] } else { self.ub[b] };
            // Entering column: dual ratio test.
            let mut enter: Option<usize> = None;
            let mut best = f64::INFINITY;
            let mut best_abs = 0.0;
            for j in 0..self.ncols {
                if self.row_of[j] != NOT_BASIC || self.is_fixed(j) {
                    continue;
                }
                let trj = self.t[r * self.ncols + j];
                if trj.abs() <= PIVOT_TOL {
                    continue;
                }
                let can_up = self.value[j] < self.ub[j];
                let can_down = self.value[j] > self.lb[j];
                // Basic value moves by -trj * delta_j.
                let ok = if below {
                    (can_up && trj < 0.0) || (can_down && trj > 0.0)
                } else {
                    (can_up && trj > 0.0) || (can_down && trj < 0.0)
                };
                if !ok {
                    continue;
                }
                let ratio = self.d[j].abs() / trj.abs();
                if ratio < best - 1e-12 || (ratio <= best + 1e-12 && !bland && trj.abs() > best_abs) {
                    best = ratio.min(best);
                    if ratio < best {
                        best = ratio;
                    }
                    best_abs = trj.abs();
                    enter = Some(j);
                }
            }
            let Some(j) = enter else {
                return Ok(Some(LpStatus::Infeasible));
            };
            let trj = self.t[r * self.ncols + j];
            let delta = (self.value[b] - target) / trj;
            self.shift_entering(j, delta);
            self.value[b] = target;
            self.pivot(r, j);
            self.check_pivots()?;
        }
        self.primal().map(Some)
    }

    /// Largest bound violation among basic columns.
    pub fn max_primal_violation(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lb[b] - self.value[b]).max(self.value[b] - self.ub[b]).max(0.0))
            .fold(0.0, f64::max)
    }
}
