//! Small dense MILP toolkit: model, bounded simplex, branch and bound, and
//! LP-format export.
//!
//! Every objective is minimized. Variables carry explicit bounds; integer
//! variables are branched on by splitting their bound range.

mod bnb;
mod lpfile;
mod simplex;

pub use bnb::{branch_and_bound, BranchOptions, SolveOutcome, SolveStatus};
pub use lpfile::{export_lp, parse_lp, write_lp};
pub use simplex::{lp_solve, lp_solve_with_bounds, LpOutcome};

use thiserror::Error;

use crate::scalar::Scalar;

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("LP solver failure: {0}")]
    SolverFailure(String),
    #[error("LP file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(&self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable<T> {
    pub name: String,
    pub lower: T,
    pub upper: T,
    pub integer: bool,
}

impl<T: Scalar> Variable<T> {
    pub fn is_binary(&self) -> bool {
        self.integer && self.lower == T::zero() && self.upper == T::one()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub name: String,
    pub coeffs: Vec<(usize, T)>,
    pub relation: Relation,
    pub rhs: T,
}

impl<T: Scalar> Constraint<T> {
    pub fn activity(&self, x: &[T]) -> T {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[T]) -> T {
        let act = self.activity(x);
        match self.relation {
            Relation::Le => (act - self.rhs).max(T::zero()),
            Relation::Ge => (self.rhs - act).max(T::zero()),
            Relation::Eq => (act - self.rhs).abs(),
        }
    }
}

/// Minimization model.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel<T> {
    pub name: String,
    pub variables: Vec<Variable<T>>,
    pub constraints: Vec<Constraint<T>>,
    pub objective: Vec<(usize, T)>,
}

impl<T: Scalar> MilpModel<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: T, upper: T, integer: bool) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer,
        });
        self.variables.len() - 1
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: T, upper: T) -> usize {
        self.add_variable(name, lower, upper, false)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.add_variable(name, T::zero(), T::one(), true)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, T)>,
        relation: Relation,
        rhs: T,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, coeffs: Vec<(usize, T)>) {
        self.objective = coeffs;
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_integers(&self) -> usize {
        self.variables.iter().filter(|v| v.integer).count()
    }

    pub fn lower_bounds(&self) -> Vec<T> {
        self.variables.iter().map(|v| v.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<T> {
        self.variables.iter().map(|v| v.upper).collect()
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Largest bound, constraint or integrality violation of `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (v, &xi) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
            if v.integer {
                worst = worst.max((xi - xi.round()).abs());
            }
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(x));
        }
        worst
    }

    /// Checks indices, finiteness of coefficients and `lower <= upper`.
    pub fn validate(&self) -> Result<(), MilpError> {
        let n = self.variables.len();
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::InvalidModel(format!(
                    "variable {} has bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
        }
        let check = |what: &str, coeffs: &[(usize, T)]| {
            for &(j, a) in coeffs {
                if j >= n {
                    return Err(MilpError::InvalidModel(format!("{what}: variable index {j} out of range")));
                }
                if !a.is_finite() {
                    return Err(MilpError::InvalidModel(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        check("objective", &self.objective)?;
        for c in &self.constraints {
            check(&c.name, &c.coeffs)?;
            if !c.rhs.is_finite() {
                return Err(MilpError::InvalidModel(format!("{}: non-finite rhs", c.name)));
            }
        }
        Ok(())
    }
}

pub(crate) fn feasibility_tol<T: Scalar>() -> T {
    T::lit(FEASIBILITY_TOL).max(T::epsilon() * T::lit(1e3))
}

pub(crate) fn integrality_tol<T: Scalar>() -> T {
    T::lit(INTEGRALITY_TOL).max(T::epsilon() * T::lit(1e3))
}
