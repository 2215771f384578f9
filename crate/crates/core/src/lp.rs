//! Dense two-phase simplex for the small feasibility and separation programs
//! used by [`crate::signaling`].
//!
//! All variables are non-negative. Infeasible programs come back with a Farkas
//! certificate `y` such that `yᵀA ≤ 0` on every variable, `y_i ≥ 0` on `≥`
//! rows, `y_i ≤ 0` on `≤` rows and `yᵀb > 0`; no non-negative `x` can then
//! satisfy the constraints. Callers are expected to re-check both witnesses
//! and certificates against the original data, see [`LinearProgram::residual`]
//! and [`LinearProgram::farkas_margin`].

use serde::Serialize;

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-11;
/// Phase-one objective above this value means infeasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 64;
const REINVERSIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// maximize cᵀx subject to the constraints and x ≥ 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible { farkas: Vec<f64> },
    Unbounded,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars, "constraint width");
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Add a constraint from sparse (index, coefficient) pairs; repeated
    /// indices accumulate.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars];
        for &(i, a) in terms {
            coeffs[i] += a;
        }
        self.add(coeffs, relation, rhs);
    }

    /// Largest violation of any constraint or sign bound by `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, &v| w.max(-v));
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let viol = match c.relation {
                Relation::Eq => (lhs - c.rhs).abs(),
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Contradiction margin certified by `y`, given that every feasible point
    /// satisfies Σx ≤ `mass_bound`. Positive means no feasible x exists.
    ///
    /// A feasible x would give yᵀb ≤ yᵀAx ≤ mass_bound·max(0, max_j (yᵀA)_j);
    /// the margin is how far yᵀb exceeds that, with any sign-condition
    /// violation on y counted against it.
    pub fn farkas_margin(&self, y: &[f64], mass_bound: f64) -> f64 {
        if y.len() != self.constraints.len() {
            return f64::NEG_INFINITY;
        }
        let mut yt_a = vec![0.0; self.num_vars];
        let mut yt_b = 0.0;
        let mut sign_penalty: f64 = 0.0;
        for (c, &yi) in self.constraints.iter().zip(y) {
            for (acc, a) in yt_a.iter_mut().zip(&c.coeffs) {
                *acc += yi * a;
            }
            yt_b += yi * c.rhs;
            match c.relation {
                Relation::Eq => {}
                Relation::Ge => sign_penalty = sign_penalty.max(-yi),
                Relation::Le => sign_penalty = sign_penalty.max(yi),
            }
        }
        if sign_penalty > 0.0 {
            // Violating rows would need their slack bounded too; treat any
            // such certificate as unusable.
            return f64::NEG_INFINITY;
        }
        let worst = yt_a.iter().fold(0.0f64, |w, &v| w.max(v));
        yt_b - mass_bound * worst
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    cols: usize, // structural + slack + artificial, excluding rhs
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    structural: usize,
    first_artificial: usize,
    flipped: Vec<bool>,
    slack_of_row: Vec<Option<(usize, f64)>>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.constraints.len();
        let n = lp.num_vars;
        let slacks = lp.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        let first_artificial = n + slacks;
        let cols = first_artificial + m;
        let width = cols + 1;
        let mut data = vec![0.0; (m + 1) * width];
        let mut slack_of_row = vec![None; m];
        let mut flipped = vec![false; m];
        let mut next_slack = n;
        for (i, c) in lp.constraints.iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            row[..n].copy_from_slice(&c.coeffs);
            match c.relation {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    slack_of_row[i] = Some((next_slack, 1.0));
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    slack_of_row[i] = Some((next_slack, -1.0));
                    next_slack += 1;
                }
                Relation::Eq => {}
            }
            row[cols] = c.rhs;
            if c.rhs < 0.0 {
                flipped[i] = true;
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row[first_artificial + i] = 1.0;
        }
        Tableau {
            rows: m,
            cols,
            width,
            data,
            basis: (first_artificial..cols).collect(),
            structural: n,
            first_artificial,
            flipped,
            slack_of_row,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn obj_row(&self) -> usize {
        self.rows
    }

    /// Reduced-cost row for minimizing `costs` over the current basis.
    fn set_costs(&mut self, costs: &[f64]) {
        let o = self.obj_row() * self.width;
        for c in 0..self.width {
            self.data[o + c] = if c < self.cols { costs[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for c in 0..self.width {
                    self.data[o + c] -= cb * self.data[r * self.width + c];
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..w {
            self.data[pr * w + c] *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Minimize over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let o = self.obj_row();
        let mut degenerate_run = 0;
        for _ in 0..MAX_PIVOTS {
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let mut entering = None;
            let mut best = -COST_EPS;
            for c in 0..allowed {
                let rc = self.at(o, c);
                if rc < -COST_EPS {
                    if bland {
                        entering = Some(c);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        entering = Some(c);
                    }
                }
            }
            let Some(pc) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_EPS {
                    let ratio = self.at(r, self.cols).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            let tie = 1e-12 * (1.0 + lratio);
                            if ratio < lratio - tie {
                                true
                            } else if ratio <= lratio + tie {
                                // Bland needs the lowest index; otherwise the
                                // largest pivot keeps round-off down.
                                if bland {
                                    self.basis[r] < self.basis[lr]
                                } else {
                                    a > self.at(lr, pc)
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(false);
            };
            degenerate_run = if ratio <= 1e-14 { degenerate_run + 1 } else { 0 };
            self.pivot(pr, pc);
        }
        Err(Error::Lp(format!("no convergence after {MAX_PIVOTS} pivots")))
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpOutcome> {
        // Phase one: minimize the sum of artificials.
        let mut costs = vec![0.0; self.cols];
        costs[self.first_artificial..].iter_mut().for_each(|c| *c = 1.0);
        self.set_costs(&costs);
        self.optimize(self.cols)?;
        let mut infeasibility = -self.at(self.obj_row(), self.cols);
        for _ in 0..REINVERSIONS {
            if infeasibility <= FEASIBILITY_TOLERANCE {
                break;
            }
            // Accumulated round-off can stall phase one short of zero;
            // rebuild the tableau for the current basis and carry on.
            self.reinvert(lp);
            self.set_costs(&costs);
            self.optimize(self.cols)?;
            infeasibility = -self.at(self.obj_row(), self.cols);
        }
        if infeasibility > FEASIBILITY_TOLERANCE {
            return Ok(LpOutcome::Infeasible { farkas: self.farkas() });
        }

        // Drive zero-level artificials out of the basis where possible.
        for r in 0..self.rows {
            if self.basis[r] >= self.first_artificial {
                if let Some(pc) = (0..self.first_artificial)
                    .filter(|&c| self.at(r, c).abs() > 1e-9)
                    .max_by(|&a, &b| self.at(r, a).abs().total_cmp(&self.at(r, b).abs()))
                {
                    self.pivot(r, pc);
                }
            }
        }

        // Phase two: maximize cᵀx, i.e. minimize −cᵀx, artificials barred.
        let mut costs = vec![0.0; self.cols];
        for (c, v) in costs.iter_mut().zip(&lp.objective) {
            *c = -v;
        }
        self.set_costs(&costs);
        if !self.optimize(self.first_artificial)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; self.structural];
        for r in 0..self.rows {
            let b = self.basis[r];
            if b < self.structural {
                x[b] = self.at(r, self.cols).max(0.0);
            }
        }
        let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, value })
    }

    /// Fresh tableau from the original data with the current basis pivoted
    /// in, largest available element first.
    fn reinvert(&mut self, lp: &LinearProgram) {
        let basis = self.basis.clone();
        *self = Tableau::build(lp);
        let mut free: Vec<bool> = vec![true; self.rows];
        for &col in &basis {
            let pick = (0..self.rows)
                .filter(|&r| free[r] && self.at(r, col).abs() > PIVOT_EPS)
                .max_by(|&a, &b| self.at(a, col).abs().total_cmp(&self.at(b, col).abs()));
            if let Some(r) = pick {
                self.pivot(r, col);
                free[r] = false;
            }
        }
    }

    /// Phase-one duals mapped back to the original rows.
    fn farkas(&self) -> Vec<f64> {
        let o = self.obj_row();
        (0..self.rows)
            .map(|i| {
                let y_std = 1.0 - self.at(o, self.first_artificial + i);
                let y = if self.flipped[i] { -y_std } else { y_std };
                // Clean tiny sign noise on inequality rows.
                match self.slack_of_row[i] {
                    Some((_, s)) if s > 0.0 => y.min(0.0),
                    Some(_) => y.max(0.0),
                    None => y,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_optimum() {
        // max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 2.0];
        lp.add(vec![1.0, 1.0], Relation::Le, 4.0);
        lp.add(vec![1.0, 3.0], Relation::Le, 6.0);
        lp.add(vec![1.0, 0.0], Relation::Le, 3.0);
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 11.0).abs() < 1e-12);
                assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
                assert!(lp.residual(&x) < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_and_ge_rows() {
        // max -x - y, x + y = 2, x - y >= 1 -> any point with x + y = 2 works;
        // value is -2.
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -1.0];
        lp.add(vec![1.0, 1.0], Relation::Eq, 2.0);
        lp.add(vec![1.0, -1.0], Relation::Ge, 1.0);
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((value + 2.0).abs() < 1e-12);
                assert!(lp.residual(&x) < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_rhs() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.add(vec![-1.0], Relation::Le, -2.5);
        match lp.solve().unwrap() {
            LpOutcome::Optimal { x, .. } => assert!((x[0] - 2.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_with_certificate() {
        // x + y = 1, x + y >= 2
        let mut lp = LinearProgram::new(2);
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0, 0.0], Relation::Le, 5.0);
        match lp.solve().unwrap() {
            LpOutcome::Infeasible { farkas } => {
                assert!(lp.farkas_margin(&farkas, 10.0) > 0.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(3);
        lp.objective = vec![1.0, 2.0, 3.0];
        lp.add(vec![1.0, 1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0, 2.0], Relation::Eq, 2.0);
        lp.add(vec![0.0, 0.0, 1.0], Relation::Le, 0.5);
        match lp.solve().unwrap() {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 2.5).abs() < 1e-12, "{value}");
                assert!(lp.residual(&x) < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn margin_rejects_bad_certificates() {
        let mut lp = LinearProgram::new(1);
        lp.add(vec![1.0], Relation::Eq, 1.0);
        assert!(lp.farkas_margin(&[1.0], 1.0) <= 0.0);
        assert!(lp.farkas_margin(&[1.0], 2.0) < 0.0);
        assert_eq!(lp.farkas_margin(&[], 1.0), f64::NEG_INFINITY);
    }
}
