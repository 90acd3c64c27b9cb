//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Sized for the occupancy-measure programs built by the oracle: a few
//! hundred variables and rows. The tableau is stored densely.

/// Row relation `a·x (rel) rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// maximize c·x subject to rows, x ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    /// Phase one could not drive the artificial mass below the tolerance.
    Infeasible { residual: f64 },
    Unbounded,
    IterationLimit,
}

/// Pivot and reduced-cost tolerance.
const EPS: f64 = 1e-10;
/// Phase-one residual above which the program is declared infeasible.
pub const INFEASIBILITY_TOLERANCE: f64 = 1e-6;
const MAX_PIVOTS: usize = 200_000;

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars(), "row length must match objective");
        self.rows.push(Row { coeffs, relation, rhs });
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |acc, v| acc.max(-v));
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let gap = match row.relation {
                Relation::Eq => (lhs - row.rhs).abs(),
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
            };
            worst = worst.max(gap);
        }
        worst
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    n_orig: usize,
    /// Columns: originals, slacks/surpluses, artificials, then rhs.
    width: usize,
    first_artificial: usize,
    rows: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n_orig = lp.n_vars();
        let n_slack = lp.rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    let flipped = match r.relation {
                        Relation::Eq => Relation::Eq,
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                    };
                    (r.coeffs.iter().map(|v| -v).collect(), flipped, -r.rhs)
                } else {
                    (r.coeffs.clone(), r.relation, r.rhs)
                }
            })
            .collect();
        let n_art = normalized.iter().filter(|r| r.1 != Relation::Le).count();
        let first_artificial = n_orig + n_slack;
        let width = first_artificial + n_art + 1;

        let mut rows = Vec::with_capacity(normalized.len());
        let mut basis = Vec::with_capacity(normalized.len());
        let mut slack = n_orig;
        let mut art = first_artificial;
        for (coeffs, relation, rhs) in normalized {
            let mut row = vec![0.0; width];
            row[..n_orig].copy_from_slice(&coeffs);
            row[width - 1] = rhs;
            match relation {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis.push(slack);
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            rows.push(row);
        }
        Self {
            n_orig,
            width,
            first_artificial,
            rows,
            cost: vec![0.0; width],
            basis,
        }
    }

    fn rhs(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
                row[c] = 0.0;
            }
        }
        let factor = self.cost[c];
        if factor != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Sets the cost row for maximizing `c` (indexed by column) and prices
    /// out the current basis.
    fn price(&mut self, c: &[f64]) {
        self.cost = vec![0.0; self.width];
        for (j, cj) in c.iter().enumerate() {
            self.cost[j] = -cj;
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = c.get(b).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for (v, rv) in self.cost.iter_mut().zip(&self.rows[i]) {
                    *v += cb * rv;
                }
            }
        }
    }

    /// Bland's rule iterations over columns `< limit`.
    fn iterate(&mut self, limit: usize) -> Result<(), LpOutcome> {
        let rhs = self.rhs();
        for _ in 0..MAX_PIVOTS {
            let Some(enter) = (0..limit).find(|&j| self.cost[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > EPS {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return Err(LpOutcome::Unbounded),
            }
        }
        Err(LpOutcome::IterationLimit)
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        let rhs = self.rhs();
        let n_cols = self.width - 1;
        if self.first_artificial < n_cols {
            let phase_one: Vec<f64> = (0..n_cols)
                .map(|j| if j >= self.first_artificial { -1.0 } else { 0.0 })
                .collect();
            self.price(&phase_one);
            if let Err(outcome) = self.iterate(n_cols) {
                return outcome;
            }
            let residual = -self.cost[rhs];
            if residual > INFEASIBILITY_TOLERANCE {
                return LpOutcome::Infeasible { residual };
            }
            // drive remaining (zero-valued) artificials out of the basis
            let mut i = 0;
            while i < self.rows.len() {
                if self.basis[i] >= self.first_artificial {
                    let replacement = (0..self.first_artificial).find(|&j| self.rows[i][j].abs() > 1e-9);
                    match replacement {
                        Some(j) => {
                            self.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            // redundant equality
                            self.rows.remove(i);
                            self.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }
        self.price(objective);
        if let Err(outcome) = self.iterate(self.first_artificial) {
            return outcome;
        }
        let mut x = vec![0.0; self.n_orig];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_orig {
                x[b] = self.rows[i][rhs].max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { value, x }
    }
}
