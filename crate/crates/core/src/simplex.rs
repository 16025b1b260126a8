//! Dense two-phase simplex for the small linear programs solved every planning step.
//!
//! Problems are `min c^T x` subject to row constraints and `x >= 0`. Pivoting uses
//! Bland's rule (lowest eligible index enters, lowest basic index leaves on ratio ties),
//! which rules out cycling and makes the result independent of platform or scheduling.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row<T> {
    pub coeffs: Vec<T>,
    pub relation: Relation,
    pub rhs: T,
}

/// `min objective^T x` over `x >= 0` and the given rows.
#[derive(Clone, Debug)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub rows: Vec<Row<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome<T> {
    Optimal { x: Vec<T>, objective: T },
    Infeasible,
    Unbounded,
}

impl<T: Real> LpOutcome<T> {
    pub fn optimal(self) -> Option<(Vec<T>, T)> {
        match self {
            LpOutcome::Optimal { x, objective } => Some((x, objective)),
            _ => None,
        }
    }
}

impl<T: Real> LinearProgram<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![T::zero(); num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coeffs: Vec<T>, relation: Relation, rhs: T) {
        assert_eq!(coeffs.len(), self.num_vars(), "row width mismatch");
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn solve(&self) -> LpOutcome<T> {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau<T> {
    /// `rows x (cols + 1)`; the last column is the right-hand side.
    a: Vec<Vec<T>>,
    basis: Vec<usize>,
    n_struct: usize,
    n_cols: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    eps: T,
}

impl<T: Real> Tableau<T> {
    fn build(lp: &LinearProgram<T>) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        // Normalize to non-negative right-hand sides.
        let rows: Vec<(Vec<T>, Relation, T)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < T::zero() {
                    let rel = match r.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (r.coeffs.iter().map(|&c| -c).collect(), rel, -r.rhs)
                } else {
                    (r.coeffs.clone(), r.relation, r.rhs)
                }
            })
            .collect();

        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_art;

        let mut a = vec![vec![T::zero(); n_cols + 1]; m];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = first_artificial;
        for (i, (coeffs, rel, rhs)) in rows.into_iter().enumerate() {
            a[i][..n].copy_from_slice(&coeffs);
            a[i][n_cols] = rhs;
            match rel {
                Relation::Le => {
                    a[i][slack] = T::one();
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    a[i][slack] = -T::one();
                    slack += 1;
                    a[i][art] = T::one();
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    a[i][art] = T::one();
                    basis[i] = art;
                    art += 1;
                }
            }
        }

        let scale = a
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::one(), |acc, v| acc.max(v.abs()));
        Tableau {
            a,
            basis,
            n_struct: n,
            n_cols,
            first_artificial,
            eps: T::solver_eps() * scale,
        }
    }

    fn rhs(&self, i: usize) -> T {
        self.a[i][self.n_cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        self.a[row][col] = T::one();
        let pivot_row = self.a[row].clone();
        for (i, r) in self.a.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != T::zero() {
                for (v, &pv) in r.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pv;
                }
                r[col] = T::zero();
            }
        }
        self.basis[row] = col;
    }

    /// Reduced costs `c_j - c_B^T B^{-1} A_j` and the current objective value.
    fn reduced_costs(&self, cost: &[T]) -> (Vec<T>, T) {
        let mut d: Vec<T> = (0..self.n_cols)
            .map(|j| cost.get(j).copied().unwrap_or_else(T::zero))
            .collect();
        let mut z = T::zero();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost.get(b).copied().unwrap_or_else(T::zero);
            if cb == T::zero() {
                continue;
            }
            for (dj, &aij) in d.iter_mut().zip(self.a[i].iter()) {
                *dj -= cb * aij;
            }
            z += cb * self.rhs(i);
        }
        (d, z)
    }

    /// Runs Bland-rule pivots for `cost` over columns `< allowed`.
    /// Returns `false` if the problem is unbounded.
    fn optimize(&mut self, cost: &[T], allowed: usize) -> bool {
        let max_iter = 50 * (self.n_cols + self.a.len() + 1);
        for _ in 0..max_iter {
            let (d, _) = self.reduced_costs(cost);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -self.eps) else {
                return true;
            };
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.a.len() {
                let aij = self.a[i][enter];
                if aij > self.eps {
                    let ratio = self.rhs(i) / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - self.eps
                                || (ratio <= lr + self.eps && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((row, _)) => self.pivot(row, enter),
            }
        }
        // Bland's rule terminates; reaching here means numerical trouble. Keep the
        // current basic feasible solution.
        true
    }

    fn solve(mut self, objective: &[T]) -> LpOutcome<T> {
        if self.first_artificial < self.n_cols {
            let phase1: Vec<T> = (0..self.n_cols)
                .map(|j| {
                    if j >= self.first_artificial {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            self.optimize(&phase1, self.n_cols);
            let (_, infeas) = self.reduced_costs(&phase1);
            if infeas > self.eps * T::lit(1e3) {
                return LpOutcome::Infeasible;
            }
            // Drive remaining artificials out of the basis; drop redundant rows.
            let mut i = 0;
            while i < self.a.len() {
                if self.basis[i] >= self.first_artificial {
                    match (0..self.first_artificial).find(|&j| self.a[i][j].abs() > self.eps) {
                        Some(j) => {
                            self.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            self.a.remove(i);
                            self.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        if !self.optimize(objective, self.first_artificial) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![T::zero(); self.n_struct];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.rhs(i).max(T::zero());
            }
        }
        let value = objective
            .iter()
            .zip(x.iter())
            .fold(T::zero(), |acc, (&c, &xi)| acc + c * xi);
        LpOutcome::Optimal {
            x,
            objective: value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), value 36.
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![-3.0, -5.0];
        lp.push(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.push(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.push(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, obj) = lp.solve().optimal().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
        assert!((obj + 36.0).abs() < 1e-12);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y s.t. x + y >= 2, x - y = 0.5 -> (1.25, 0.75).
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.push(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.push(vec![1.0, -1.0], Relation::Eq, 0.5);
        let (x, obj) = lp.solve().optimal().unwrap();
        assert!((x[0] - 1.25).abs() < 1e-12 && (x[1] - 0.75).abs() < 1e-12);
        assert!((obj - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_le() {
        // min x s.t. -x <= -3 -> x = 3.
        let mut lp = LinearProgram::<f64>::new(1);
        lp.objective = vec![1.0];
        lp.push(vec![-1.0], Relation::Le, -3.0);
        let (x, _) = lp.solve().optimal().unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::<f64>::new(1);
        lp.objective = vec![1.0];
        lp.push(vec![1.0], Relation::Le, 1.0);
        lp.push(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![-1.0, 0.0];
        lp.push(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.push(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.push(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, obj) = lp.solve().optimal().unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!((obj - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule.
        let mut lp = LinearProgram::<f64>::new(4);
        lp.objective = vec![-0.75, 150.0, -0.02, 6.0];
        lp.push(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0);
        lp.push(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0);
        lp.push(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, obj) = lp.solve().optimal().unwrap();
        assert!((obj + 0.05).abs() < 1e-12, "{obj}");
    }

    #[test]
    fn f32_solves() {
        let mut lp = LinearProgram::<f32>::new(2);
        lp.objective = vec![-1.0, -1.0];
        lp.push(vec![1.0, 2.0], Relation::Le, 4.0);
        lp.push(vec![3.0, 1.0], Relation::Le, 6.0);
        let (x, _) = lp.solve().optimal().unwrap();
        assert!((x[0] - 1.6).abs() < 1e-4 && (x[1] - 1.2).abs() < 1e-4);
    }

    proptest::proptest! {
        /// Any vertex the solver returns is feasible and no random feasible point beats it.
        #[test]
        fn optimal_beats_random_feasible_points(
            c in proptest::collection::vec(0.1f64..3.0, 3),
            rows in proptest::collection::vec((proptest::collection::vec(-2.0f64..2.0, 3), 0.5f64..5.0), 1..5),
            probes in proptest::collection::vec(proptest::collection::vec(0.0f64..3.0, 3), 50),
        ) {
            let mut lp = LinearProgram::<f64>::new(3);
            lp.objective = c.iter().map(|v| -v).collect();
            for (a, b) in &rows {
                lp.push(a.clone(), Relation::Le, *b);
            }
            // Keep it bounded.
            lp.push(vec![1.0, 1.0, 1.0], Relation::Le, 10.0);
            let (x, obj) = lp.solve().optimal().unwrap();
            for r in &lp.rows {
                let lhs: f64 = r.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
                proptest::prop_assert!(lhs <= r.rhs + 1e-9);
            }
            for p in probes {
                let feasible = lp.rows.iter().all(|r| r.coeffs.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() <= r.rhs);
                if feasible {
                    let v: f64 = lp.objective.iter().zip(&p).map(|(a, b)| a * b).sum();
                    proptest::prop_assert!(obj <= v + 1e-9);
                }
            }
        }
    }
}
