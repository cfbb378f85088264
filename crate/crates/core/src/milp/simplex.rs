//! Dense bounded-variable revised simplex with an explicit basis inverse.
//!
//! Each row gets a slack whose bounds encode the relation (`<=`: `s >= 0`,
//! `>=`: `s <= 0`, `=`: `s = 0`), so the working system is `A x + s = b`.
//! Rows whose slack cannot absorb the initial residual get an artificial
//! variable, driven to zero in phase 1.

use ndarray::{Array1, Array2};

use super::{feasibility_tol, MilpError, MilpModel, Relation};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<T> {
    Optimal { x: Vec<T>, objective: T },
    Infeasible,
    Unbounded,
}

impl<T: Scalar> LpOutcome<T> {
    pub fn objective(&self) -> Option<T> {
        match self {
            LpOutcome::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

/// Solves the continuous relaxation of `model`.
pub fn lp_solve<T: Scalar>(model: &MilpModel<T>) -> Result<LpOutcome<T>, MilpError> {
    model.validate()?;
    DenseLp::new(model).solve(&model.lower_bounds(), &model.upper_bounds())
}

/// Solves the relaxation with the variable bounds replaced.
pub fn lp_solve_with_bounds<T: Scalar>(
    model: &MilpModel<T>,
    lower: &[T],
    upper: &[T],
) -> Result<LpOutcome<T>, MilpError> {
    model.validate()?;
    DenseLp::new(model).solve(lower, upper)
}

const REFACTOR_EVERY: usize = 50;
const DEGENERATE_SWITCH: usize = 50;

/// Constraint data shared by every solve of one model.
pub(crate) struct DenseLp<T> {
    a: Array2<T>,
    b: Array1<T>,
    c: Array1<T>,
    relations: Vec<Relation>,
}

impl<T: Scalar> DenseLp<T> {
    pub(crate) fn new(model: &MilpModel<T>) -> Self {
        let n = model.num_variables();
        let rows = model.num_constraints();
        let mut a = Array2::zeros((rows, n));
        let mut b = Array1::zeros(rows);
        let mut relations = Vec::with_capacity(rows);
        for (r, con) in model.constraints.iter().enumerate() {
            for &(j, v) in &con.coeffs {
                a[[r, j]] = a[[r, j]] + v;
            }
            b[r] = con.rhs;
            relations.push(con.relation);
        }
        let mut c = Array1::zeros(n);
        for &(j, v) in &model.objective {
            c[j] = c[j] + v;
        }
        Self { a, b, c, relations }
    }

    pub(crate) fn solve(&self, lower: &[T], upper: &[T]) -> Result<LpOutcome<T>, MilpError> {
        let n = self.a.ncols();
        if lower.len() != n || upper.len() != n {
            return Err(MilpError::InvalidModel("bound vector length".into()));
        }
        let tol = feasibility_tol::<T>();
        if lower.iter().zip(upper).any(|(&l, &u)| l > u + tol) {
            return Ok(LpOutcome::Infeasible);
        }
        let mut t = Tableau::new(self, lower, upper);
        if t.has_artificials() {
            t.set_phase1_costs();
            match t.run()? {
                Phase::Optimal => {}
                Phase::Unbounded => {
                    return Err(MilpError::SolverFailure("phase 1 reported unbounded".into()));
                }
            }
            let scale = T::one() + self.b.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
            if t.artificial_sum() > tol * scale {
                return Ok(LpOutcome::Infeasible);
            }
            t.close_artificials();
        }
        t.set_phase2_costs(&self.c);
        match t.run()? {
            Phase::Unbounded => Ok(LpOutcome::Unbounded),
            Phase::Optimal => {
                let x: Vec<T> = (0..n)
                    .map(|j| t.x[j].clamp_to(lower[j], upper[j]))
                    .collect();
                let objective = x.iter().zip(self.c.iter()).map(|(&xi, &ci)| xi * ci).sum();
                Ok(LpOutcome::Optimal { x, objective })
            }
        }
    }
}

enum Phase {
    Optimal,
    Unbounded,
}

struct Tableau<'a, T> {
    lp: &'a DenseLp<T>,
    n: usize,
    rows: usize,
    lo: Vec<T>,
    hi: Vec<T>,
    x: Vec<T>,
    cost: Vec<T>,
    /// Sign of each row's artificial column.
    art_sign: Vec<T>,
    basis: Vec<usize>,
    in_basis: Vec<Option<usize>>,
    binv: Array2<T>,
    pivots_since_refactor: usize,
}

impl<'a, T: Scalar> Tableau<'a, T> {
    fn new(lp: &'a DenseLp<T>, lower: &[T], upper: &[T]) -> Self {
        let n = lp.a.ncols();
        let rows = lp.a.nrows();
        let total = n + 2 * rows;
        let inf = T::infinity();
        let mut lo = Vec::with_capacity(total);
        let mut hi = Vec::with_capacity(total);
        lo.extend_from_slice(lower);
        hi.extend_from_slice(upper);
        for rel in &lp.relations {
            let (l, h) = match rel {
                Relation::Le => (T::zero(), inf),
                Relation::Ge => (-inf, T::zero()),
                Relation::Eq => (T::zero(), T::zero()),
            };
            lo.push(l);
            hi.push(h);
        }
        lo.extend(std::iter::repeat(T::zero()).take(rows));
        hi.extend(std::iter::repeat(T::zero()).take(rows));

        let mut x = vec![T::zero(); total];
        for j in 0..n {
            x[j] = if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                T::zero()
            };
        }
        let xs = Array1::from(x[..n].to_vec());
        let resid = &lp.b - &lp.a.dot(&xs);

        let tol = feasibility_tol::<T>();
        let mut basis = Vec::with_capacity(rows);
        let mut art_sign = vec![T::one(); rows];
        let mut binv = Array2::zeros((rows, rows));
        for r in 0..rows {
            let s = n + r;
            let v = resid[r];
            if v >= lo[s] - tol && v <= hi[s] + tol {
                x[s] = v;
                basis.push(s);
                binv[[r, r]] = T::one();
            } else {
                let clipped = v.clamp_to(lo[s], hi[s]);
                x[s] = clipped;
                let a = n + rows + r;
                let gap = v - clipped;
                art_sign[r] = if gap >= T::zero() { T::one() } else { -T::one() };
                x[a] = gap.abs();
                hi[a] = inf;
                basis.push(a);
                binv[[r, r]] = art_sign[r];
            }
        }
        let mut in_basis = vec![None; total];
        for (r, &j) in basis.iter().enumerate() {
            in_basis[j] = Some(r);
        }
        Self {
            lp,
            n,
            rows,
            lo,
            hi,
            x,
            cost: vec![T::zero(); total],
            art_sign,
            basis,
            in_basis,
            binv,
            pivots_since_refactor: 0,
        }
    }

    fn total(&self) -> usize {
        self.n + 2 * self.rows
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n + self.rows
    }

    fn has_artificials(&self) -> bool {
        self.basis.iter().any(|&j| self.is_artificial(j))
    }

    fn artificial_sum(&self) -> T {
        (self.n + self.rows..self.total()).map(|j| self.x[j]).sum()
    }

    fn set_phase1_costs(&mut self) {
        for j in 0..self.total() {
            self.cost[j] = if self.is_artificial(j) { T::one() } else { T::zero() };
        }
    }

    fn close_artificials(&mut self) {
        for j in self.n + self.rows..self.total() {
            self.hi[j] = T::zero();
            if self.in_basis[j].is_none() {
                self.x[j] = T::zero();
            }
        }
    }

    fn set_phase2_costs(&mut self, c: &Array1<T>) {
        for j in 0..self.total() {
            self.cost[j] = if j < self.n { c[j] } else { T::zero() };
        }
    }

    /// Column `j` of `[A | I | diag(sign)]`.
    fn column(&self, j: usize) -> Array1<T> {
        if j < self.n {
            self.lp.a.column(j).to_owned()
        } else {
            let mut col = Array1::zeros(self.rows);
            if j < self.n + self.rows {
                col[j - self.n] = T::one();
            } else {
                let r = j - self.n - self.rows;
                col[r] = self.art_sign[r];
            }
            col
        }
    }

    /// `y . column(j)` without materializing the column.
    fn dot_column(&self, y: &Array1<T>, j: usize) -> T {
        if j < self.n {
            y.dot(&self.lp.a.column(j))
        } else if j < self.n + self.rows {
            y[j - self.n]
        } else {
            let r = j - self.n - self.rows;
            y[r] * self.art_sign[r]
        }
    }

    /// Rebuilds `B^-1` from scratch and recomputes the basic values.
    fn refactor(&mut self) -> Result<(), MilpError> {
        let m = self.rows;
        let mut bmat = Array2::zeros((m, m));
        for (r, &j) in self.basis.iter().enumerate() {
            bmat.column_mut(r).assign(&self.column(j));
        }
        self.binv = invert(bmat)?;
        let mut rhs = self.lp.b.clone();
        for j in 0..self.total() {
            if self.in_basis[j].is_none() && self.x[j] != T::zero() {
                let xj = self.x[j];
                if j < self.n {
                    rhs.scaled_add(-xj, &self.lp.a.column(j));
                } else {
                    let col = self.column(j);
                    rhs.scaled_add(-xj, &col);
                }
            }
        }
        let xb = self.binv.dot(&rhs);
        for (r, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[r];
        }
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn run(&mut self) -> Result<Phase, MilpError> {
        let opt_tol = T::lit(1e-9).max(T::epsilon() * T::lit(1e3));
        let piv_tol = T::lit(1e-9).max(T::epsilon() * T::lit(1e3));
        let max_iter = 50 * (self.total() + 10);
        let mut degenerate_run = 0usize;
        self.refactor()?;
        for _ in 0..max_iter {
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let cb: Array1<T> = self.basis.iter().map(|&j| self.cost[j]).collect();
            let y = self.binv.t().dot(&cb);

            let mut entering: Option<(usize, T, T)> = None;
            for j in 0..self.total() {
                if self.in_basis[j].is_some() {
                    continue;
                }
                let d = self.cost[j] - self.dot_column(&y, j);
                let dir = if d < -opt_tol && self.x[j] < self.hi[j] {
                    T::one()
                } else if d > opt_tol && self.x[j] > self.lo[j] {
                    -T::one()
                } else {
                    continue;
                };
                match entering {
                    None => entering = Some((j, d, dir)),
                    Some((_, best, _)) if !bland && d.abs() > best.abs() => entering = Some((j, d, dir)),
                    _ => {}
                }
                if bland {
                    break;
                }
            }
            let Some((q, _, dir)) = entering else {
                return Ok(Phase::Optimal);
            };

            let w = self.binv.dot(&self.column(q));
            // basic r moves by -theta * dir * w[r]
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            let mut leave_piv = T::zero();
            for r in 0..self.rows {
                let rate = dir * w[r];
                let j = self.basis[r];
                let limit = if rate > piv_tol {
                    if self.lo[j].is_finite() {
                        (self.x[j] - self.lo[j]).max(T::zero()) / rate
                    } else {
                        continue;
                    }
                } else if rate < -piv_tol {
                    if self.hi[j].is_finite() {
                        (self.hi[j] - self.x[j]).max(T::zero()) / (-rate)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                let eps = T::lit(1e-12) * (T::one() + theta.abs().min(limit));
                let take = if limit < theta - eps {
                    true
                } else if (limit - theta).abs() <= eps {
                    match leave {
                        None => false,
                        Some(l) if bland => j < self.basis[l],
                        Some(_) => rate.abs() > leave_piv,
                    }
                } else {
                    false
                };
                if take {
                    theta = limit;
                    leave = Some(r);
                    leave_piv = rate.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(Phase::Unbounded);
            }
            if theta <= T::lit(1e-12) {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            let step = theta * dir;
            self.x[q] = self.x[q] + step;
            for r in 0..self.rows {
                let j = self.basis[r];
                self.x[j] = self.x[j] - step * w[r];
            }
            match leave {
                None => {
                    // bound flip
                    self.x[q] = if dir > T::zero() { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let out = self.basis[r];
                    let rate = dir * w[r];
                    self.x[out] = if rate > T::zero() { self.lo[out] } else { self.hi[out] };
                    self.pivot(r, q, &w);
                    self.in_basis[out] = None;
                    self.in_basis[q] = Some(r);
                    self.basis[r] = q;
                }
            }
        }
        Err(MilpError::SolverFailure(format!(
            "iteration limit {max_iter} reached"
        )))
    }

    /// Product-form update of `B^-1` after column `q` replaces row `r`.
    fn pivot(&mut self, r: usize, _q: usize, w: &Array1<T>) {
        let p = w[r];
        let row_r = self.binv.row(r).mapv(|v| v / p);
        for i in 0..self.rows {
            if i == r || w[i] == T::zero() {
                continue;
            }
            let f = w[i];
            let mut row = self.binv.row_mut(i);
            row.scaled_add(-f, &row_r);
        }
        self.binv.row_mut(r).assign(&row_r);
        self.pivots_since_refactor += 1;
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert<T: Scalar>(mut a: Array2<T>) -> Result<Array2<T>, MilpError> {
    let m = a.nrows();
    let mut inv = Array2::eye(m);
    let scale = a.iter().fold(T::zero(), |s, &v| s.max(v.abs())).max(T::one());
    for col in 0..m {
        let (piv, pval) = (col..m)
            .map(|r| (r, a[[r, col]].abs()))
            .fold((col, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= T::epsilon() * scale {
            return Err(MilpError::SolverFailure(format!("singular basis at column {col}")));
        }
        if piv != col {
            for k in 0..m {
                a.swap([piv, k], [col, k]);
                inv.swap([piv, k], [col, k]);
            }
        }
        let d = a[[col, col]];
        a.row_mut(col).mapv_inplace(|v| v / d);
        inv.row_mut(col).mapv_inplace(|v| v / d);
        let arow = a.row(col).to_owned();
        let irow = inv.row(col).to_owned();
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[[r, col]];
            if f != T::zero() {
                a.row_mut(r).scaled_add(-f, &arow);
                inv.row_mut(r).scaled_add(-f, &irow);
            }
        }
    }
    Ok(inv)
}
