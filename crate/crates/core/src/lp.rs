//! Bounded-variable primal simplex.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    c·x
//! subject to  a_i·x  {<=, =, >=}  b_i
//!             l <= x <= u          (either side may be infinite)
//! ```
//!
//! Every row receives a slack column so the working basis is always square;
//! rows whose initial slack value is out of range get an artificial column
//! and are repaired in phase one. The solver keeps the full tableau
//! `B⁻¹[A | I | art]` densely but skips zero entries while pivoting, which is
//! enough for the block-structured scheduling and OPF models in this crate.
//!
//! Dual values are reported as `y_i = ∂objective/∂b_i` for the final basis.
//! When the optimal dual is not unique the basis duals are returned, with one
//! tie-break: an equality row whose own slack (or artificial) is still basic
//! at the optimum is pivoted so that its dual is the marginal value of
//! *increasing* its right-hand side.

use thiserror::Error;

const FEASIBILITY_TOL: f64 = 1e-7;
const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const DROP_TOL: f64 = 1e-14;
const DEGENERATE_STALL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("constraint {row} references undeclared variable {var}")]
    UnknownVariable { row: usize, var: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("variable {var} has lower bound {lower} above upper bound {upper}")]
    InvertedBounds { var: usize, lower: f64, upper: f64 },
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    terms: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

/// A linear program in maximisation form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, objective: f64, lower: f64, upper: f64) -> VarId {
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        VarId(self.objective.len() - 1)
    }

    /// Adds a row. Repeated variables in `terms` are summed.
    pub fn add_constraint<I>(&mut self, terms: I, relation: Relation, rhs: f64) -> RowId
    where
        I: IntoIterator<Item = (VarId, f64)>,
    {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (v, a) in terms {
            match merged.iter_mut().find(|(j, _)| *j == v.0) {
                Some(slot) => slot.1 += a,
                None => merged.push((v.0, a)),
            }
        }
        self.rows.push(Row {
            terms: merged,
            relation,
            rhs,
        });
        RowId(self.rows.len() - 1)
    }

    pub fn set_objective(&mut self, var: VarId, coefficient: f64) {
        self.objective[var.0] = coefficient;
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        self.lower[var.0] = lower;
        self.upper[var.0] = upper;
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let excess = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(excess);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for (j, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::NonFinite(format!("objective of variable {j}")));
            }
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::NonFinite(format!("bounds of variable {j}")));
            }
            if l > u {
                return Err(LpError::InvertedBounds {
                    var: j,
                    lower: l,
                    upper: u,
                });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("right-hand side of row {i}")));
            }
            for &(j, a) in &row.terms {
                if j >= self.objective.len() {
                    return Err(LpError::UnknownVariable { row: i, var: j });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("row {i}, variable {j}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values, one per variable. Empty unless optimal.
    pub primal: Vec<f64>,
    /// `∂objective/∂rhs` per constraint. Empty unless optimal.
    pub duals: Vec<f64>,
    /// Reduced costs of the structural variables. Empty unless optimal.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    fn without_point(status: LpStatus) -> Self {
        Self {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.primal[var.0]
    }

    pub fn dual(&self, row: RowId) -> f64 {
        self.duals[row.0]
    }

    /// `b·y + Σ d_j x_j` over the structural variables; equals the dual
    /// objective of the bounded problem at the final basis.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let by: f64 = lp
            .rows
            .iter()
            .zip(&self.duals)
            .map(|(r, y)| r.rhs * y)
            .sum();
        let bound_terms: f64 = self
            .reduced_costs
            .iter()
            .zip(&self.primal)
            .map(|(d, x)| d * x)
            .sum();
        by + bound_terms
    }
}

pub fn solve_lp(problem: &LinearProgram) -> Result<LpSolution, LpError> {
    problem.validate()?;
    Simplex::new(problem).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    m: usize,
    ns: usize,
    n: usize,
    tab: Vec<f64>,
    d: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Row in which a column is basic, if any.
    basic_row: Vec<Option<usize>>,
    /// Artificial column attached to a row, if any.
    artificial: Vec<Option<usize>>,
    iterations: usize,
    max_iterations: usize,
    scratch: Vec<usize>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let m = lp.rows.len();
        let ns = lp.objective.len();

        let mut x = Vec::with_capacity(ns + 2 * m);
        for j in 0..ns {
            let (l, u) = (lp.lower[j], lp.upper[j]);
            x.push(if l.is_finite() {
                l
            } else if u.is_finite() {
                u
            } else {
                0.0
            });
        }

        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        let mut residual = Vec::with_capacity(m);
        for row in &lp.rows {
            let (sl, su) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lower.push(sl);
            upper.push(su);
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            residual.push(row.rhs - lhs);
        }

        let mut artificial = vec![None; m];
        let mut signs = vec![1.0; m];
        let mut n = ns + m;
        for i in 0..m {
            let r = residual[i];
            if r < lower[ns + i] || r > upper[ns + i] {
                artificial[i] = Some(n);
                signs[i] = if r > 0.0 { 1.0 } else { -1.0 };
                lower.push(0.0);
                upper.push(f64::INFINITY);
                n += 1;
            }
        }

        let mut tab = vec![0.0; m * n];
        let mut basis = vec![0; m];
        let mut basic_row = vec![None; n];
        x.resize(n, 0.0);
        for (i, row) in lp.rows.iter().enumerate() {
            let s = signs[i];
            let base = i * n;
            for &(j, a) in &row.terms {
                tab[base + j] = a * s;
            }
            tab[base + ns + i] = s;
            match artificial[i] {
                Some(k) => {
                    tab[base + k] = 1.0;
                    basis[i] = k;
                    x[k] = residual[i].abs();
                    x[ns + i] = 0.0;
                }
                None => {
                    basis[i] = ns + i;
                    x[ns + i] = residual[i];
                }
            }
            basic_row[basis[i]] = Some(i);
        }

        Self {
            lp,
            m,
            ns,
            n,
            tab,
            d: vec![0.0; n],
            lower,
            upper,
            x,
            basis,
            basic_row,
            artificial,
            iterations: 0,
            max_iterations: 200 * (m + n) + 1000,
            scratch: Vec::with_capacity(n),
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.ns + self.m
    }

    fn cost(&self, phase: Phase, j: usize) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(j) {
                    -1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if j < self.ns {
                    self.lp.objective[j]
                } else {
                    0.0
                }
            }
        }
    }

    fn price(&mut self, phase: Phase) {
        let n = self.n;
        let mut d: Vec<f64> = (0..n).map(|j| self.cost(phase, j)).collect();
        for i in 0..self.m {
            let cb = self.cost(phase, self.basis[i]);
            if cb == 0.0 {
                continue;
            }
            let row = &self.tab[i * n..(i + 1) * n];
            for (dj, &a) in d.iter_mut().zip(row) {
                if a != 0.0 {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.m {
            d[self.basis[i]] = 0.0;
        }
        self.d = d;
    }

    fn run(mut self) -> Result<LpSolution, LpError> {
        if self.artificial.iter().any(Option::is_some) {
            self.price(Phase::One);
            if self.iterate()? == Outcome::Unbounded {
                // Phase one is bounded above by zero; treat as numerical trouble.
                return Err(LpError::IterationLimit(self.iterations));
            }
            let scale = 1.0 + self.lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            let infeasibility: f64 = (self.ns + self.m..self.n).map(|k| self.x[k]).sum();
            if infeasibility > FEASIBILITY_TOL * scale {
                return Ok(LpSolution::without_point(LpStatus::Infeasible));
            }
            for k in self.ns + self.m..self.n {
                self.upper[k] = 0.0;
                if self.basic_row[k].is_none() {
                    self.x[k] = 0.0;
                }
            }
        }
        self.price(Phase::Two);
        if self.iterate()? == Outcome::Unbounded {
            return Ok(LpSolution::without_point(LpStatus::Unbounded));
        }
        self.resolve_equality_duals();
        self.refresh_basic_values();
        Ok(self.extract())
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n {
            if self.basic_row[j].is_some() {
                continue;
            }
            let dj = self.d[j];
            let eligible = (dj > OPTIMALITY_TOL && self.x[j] < self.upper[j])
                || (dj < -OPTIMALITY_TOL && self.x[j] > self.lower[j]);
            if !eligible {
                continue;
            }
            if bland {
                return Some(j);
            }
            match best {
                Some((_, b)) if dj.abs() <= b => {}
                _ => best = Some((j, dj.abs())),
            }
        }
        best.map(|(j, _)| j)
    }

    fn iterate(&mut self) -> Result<Outcome, LpError> {
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit(self.iterations));
            }
            let bland = degenerate_run > DEGENERATE_STALL;
            let Some(q) = self.entering(bland) else {
                return Ok(Outcome::Optimal);
            };
            self.iterations += 1;
            let dir = if self.d[q] > 0.0 { 1.0 } else { -1.0 };
            let n = self.n;

            // Ratio test. `None` leaving row means a bound flip of q.
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            let mut leave_alpha = 0.0f64;
            for i in 0..self.m {
                let alpha = self.tab[i * n + q];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * alpha;
                let (limit, bound) = if rate < 0.0 {
                    if !self.lower[b].is_finite() {
                        continue;
                    }
                    (
                        ((self.x[b] - self.lower[b]) / -rate).max(0.0),
                        self.lower[b],
                    )
                } else {
                    if !self.upper[b].is_finite() {
                        continue;
                    }
                    (((self.upper[b] - self.x[b]) / rate).max(0.0), self.upper[b])
                };
                let better = match leave {
                    _ if limit < theta - 1e-12 => true,
                    _ if limit > theta + 1e-12 => false,
                    None => limit < theta,
                    Some((r, _)) => {
                        if bland {
                            b < self.basis[r]
                        } else {
                            alpha.abs() > leave_alpha
                        }
                    }
                };
                if better {
                    theta = limit;
                    leave = Some((i, bound));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(Outcome::Unbounded);
            }

            if theta > 1e-12 {
                degenerate_run = 0;
                for i in 0..self.m {
                    let alpha = self.tab[i * n + q];
                    if alpha != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= dir * alpha * theta;
                    }
                }
            } else {
                degenerate_run += 1;
            }
            match leave {
                None => {
                    self.x[q] = if dir > 0.0 {
                        self.upper[q]
                    } else {
                        self.lower[q]
                    };
                }
                Some((r, bound)) => {
                    self.x[q] += dir * theta;
                    let out = self.basis[r];
                    self.x[out] = bound;
                    self.pivot(r, q);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let p = self.tab[r * n + q];
        self.scratch.clear();
        {
            let row = &mut self.tab[r * n..(r + 1) * n];
            for (j, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v /= p;
                    if v.abs() < DROP_TOL {
                        *v = 0.0;
                    } else {
                        self.scratch.push(j);
                    }
                }
            }
            row[q] = 1.0;
        }
        let (head, tail) = self.tab.split_at_mut(r * n);
        let (pivot_row, rest) = tail.split_at_mut(n);
        let nz = &self.scratch;
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f == 0.0 {
                return;
            }
            for &j in nz {
                let v = row[j] - f * pivot_row[j];
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
        };
        for row in head.chunks_mut(n) {
            eliminate(row);
        }
        for row in rest.chunks_mut(n) {
            eliminate(row);
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in nz {
                self.d[j] -= f * pivot_row[j];
            }
            self.d[q] = 0.0;
        }

        let out = self.basis[r];
        self.basic_row[out] = None;
        self.basic_row[q] = Some(r);
        self.basis[r] = q;
    }

    /// Equality rows whose own slack or artificial is basic (at zero) have an
    /// arbitrary basis dual. Swap that variable out for the nonbasic column
    /// that serves an increase of the right-hand side most cheaply.
    fn resolve_equality_duals(&mut self) {
        let n = self.n;
        for r in 0..self.m {
            if self.lp.rows[r].relation != Relation::Eq {
                continue;
            }
            let slack = self.ns + r;
            let own = self.basis[r] == slack || Some(self.basis[r]) == self.artificial[r];
            if !own {
                continue;
            }
            let g = self.tab[r * n + slack];
            let y_now = -self.d[slack];
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.ns + self.m {
                if self.basic_row[j].is_some() || j == slack {
                    continue;
                }
                let alpha = self.tab[r * n + j];
                if alpha.abs() <= 1e-9 {
                    continue;
                }
                let step = g / alpha;
                let can_move = if step > 0.0 {
                    self.x[j] < self.upper[j]
                } else {
                    self.x[j] > self.lower[j]
                };
                if !can_move {
                    continue;
                }
                let rate = y_now + self.d[j] * step;
                if best.is_none_or(|(_, b)| rate > b + 1e-12) {
                    best = Some((j, rate));
                }
            }
            if let Some((j, _)) = best {
                self.pivot(r, j);
            }
        }
    }

    fn refresh_basic_values(&mut self) {
        let n = self.n;
        let mut rhs: Vec<f64> = self.lp.rows.iter().map(|r| r.rhs).collect();
        for (i, row) in self.lp.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                if self.basic_row[j].is_none() {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..self.m {
            let mut v = 0.0;
            for (k, &bk) in rhs.iter().enumerate() {
                let binv = self.tab[i * n + self.ns + k];
                if binv != 0.0 {
                    v += binv * bk;
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn extract(self) -> LpSolution {
        let primal = self.x[..self.ns].to_vec();
        let duals = (0..self.m).map(|i| -self.d[self.ns + i]).collect();
        let reduced_costs = self.d[..self.ns].to_vec();
        let objective = self.lp.objective_value(&primal);
        LpSolution {
            status: LpStatus::Optimal,
            primal,
            duals,
            reduced_costs,
            objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_active_single_variable() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, 5.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.value(x), 5.0);
        assert_eq!(sol.objective, 5.0);
    }

    #[test]
    fn two_variable_vertex_and_dual() {
        // Vertices of {x + y <= 4, x <= 2, x, y >= 0}: (0,0) (2,0) (2,2) (0,4).
        // 3x + 2y there: 0, 6, 10, 8 -> optimum (2,2). Raising the first rhs by
        // one moves the vertex to (2,3): objective +2.
        let mut lp = LinearProgram::new();
        let x = lp.add_var(3.0, 0.0, f64::INFINITY);
        let y = lp.add_var(2.0, 0.0, f64::INFINITY);
        let c1 = lp.add_constraint([(x, 1.0), (y, 1.0)], Relation::Le, 4.0);
        let c2 = lp.add_constraint([(x, 1.0)], Relation::Le, 2.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.value(x) - 2.0).abs() < 1e-12);
        assert!((sol.value(y) - 2.0).abs() < 1e-12);
        assert!((sol.objective - 10.0).abs() < 1e-12);
        assert!((sol.dual(c1) - 2.0).abs() < 1e-12);
        assert!((sol.dual(c2) - 1.0).abs() < 1e-12);
        assert!((sol.dual_objective(&lp) - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_constraint([(x, 1.0)], Relation::Ge, 1.0);
        lp.add_constraint([(x, 1.0)], Relation::Le, 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, f64::INFINITY);
        let y = lp.add_var(0.0, 0.0, f64::INFINITY);
        lp.add_constraint([(x, 1.0), (y, -1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // max -|x - 3| style: x free, x = 3 forced by equality.
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-1.0, f64::NEG_INFINITY, f64::INFINITY);
        let y = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let row = lp.add_constraint([(x, 1.0), (y, 1.0)], Relation::Eq, 3.0);
        lp.add_constraint([(y, 1.0)], Relation::Le, 5.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.value(x) + 2.0).abs() < 1e-12);
        assert!((sol.value(y) - 5.0).abs() < 1e-12);
        assert!((sol.dual(row) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_errors_are_distinct_from_infeasibility() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(f64::NAN, 0.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::NonFinite(_))));

        let mut lp = LinearProgram::new();
        lp.add_var(1.0, 0.0, 1.0);
        lp.add_constraint([(VarId(3), 1.0)], Relation::Le, 1.0);
        assert_eq!(
            solve_lp(&lp),
            Err(LpError::UnknownVariable { row: 0, var: 3 })
        );

        let mut lp = LinearProgram::new();
        lp.add_var(1.0, 2.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvertedBounds { .. })));
        let _ = x;
    }

    #[test]
    fn degenerate_equality_dual_prefers_cheapest_increase() {
        // min 10 a + 30 b  s.t. a + b = 0, a,b in [0, 100]
        let mut lp = LinearProgram::new();
        let a = lp.add_var(-30.0, 0.0, 100.0);
        let b = lp.add_var(-10.0, 0.0, 100.0);
        let bal = lp.add_constraint([(a, 1.0), (b, 1.0)], Relation::Eq, 0.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.value(a), 0.0);
        assert_eq!(sol.value(b), 0.0);
        assert!((sol.dual(bal) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn resolving_is_bit_identical() {
        let mut lp = LinearProgram::new();
        let vars: Vec<_> = (0..6)
            .map(|k| lp.add_var(1.0 + k as f64 * 0.3, 0.0, 3.0 + k as f64))
            .collect();
        lp.add_constraint(vars.iter().map(|&v| (v, 1.0)), Relation::Le, 7.5);
        lp.add_constraint(
            vars.iter()
                .enumerate()
                .map(|(k, &v)| (v, (k % 3) as f64 - 1.0)),
            Relation::Ge,
            -2.0,
        );
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.primal, b.primal);
        assert_eq!(a.duals, b.duals);
    }
}
