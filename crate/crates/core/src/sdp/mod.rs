//! Dense semidefinite programming for small LMI problems.
//!
//! Problems are stated over matrix-valued decision variables (symmetric,
//! rectangular or scalar) that are flattened into a vector of scalar unknowns.
//! Constraints are affine symmetric blocks required to be positive or negative
//! semidefinite with an optional margin; the objective is linear.

mod eig;
mod expr;
mod solver;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

pub use eig::{check_symmetric, max_eigenvalue, min_eigenvalue, sym_eig, SymEigen};
pub use expr::AffineExpr;
pub use solver::{solve, SdpSolution, SolveStatus, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: entries ({row},{col}) differ by {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("block grid rows have different lengths")]
    RaggedBlockGrid,
    #[error("constraint `{0}` is not symmetric for every assignment")]
    AsymmetricConstraint(String),
    #[error("problem has no constraints")]
    NoConstraints,
    #[error("objective must be a 1x1 expression")]
    ObjectiveShape,
    #[error("assignment has {found} unknowns, problem has {expected}")]
    AssignmentLength { expected: usize, found: usize },
    #[error("unknown variable id {0}")]
    UnknownVariable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl VarKind {
    fn unknowns(self) -> usize {
        match self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Rectangular(p, q) => p * q,
            VarKind::Scalar => 1,
        }
    }

    fn shape(self) -> (usize, usize) {
        match self {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Rectangular(p, q) => (p, q),
            VarKind::Scalar => (1, 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    offset: usize,
}

/// Which side of zero a constraint block must sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(y) ⪰ margin·I`
    Psd,
    /// `F(y) ⪯ −margin·I`
    Nsd,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub expr: AffineExpr,
    pub sense: Sense,
    pub margin: f64,
}

impl Constraint {
    pub fn size(&self) -> usize {
        self.expr.nrows()
    }

    /// The block in `⪰ 0` normal form: `±F(y) − margin·I`.
    pub(crate) fn normal_form(&self, y: &[f64]) -> DMatrix<f64> {
        let mut g = self.expr.eval(y);
        if self.sense == Sense::Nsd {
            g.neg_mut();
        }
        for i in 0..g.nrows() {
            g[(i, i)] -= self.margin;
        }
        g
    }
}

/// Affine matrix inequalities over named decision variables with a linear objective.
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<Variable>,
    unknowns: usize,
    constraints: Vec<Constraint>,
    objective: BTreeMap<usize, f64>,
    objective_offset: f64,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_var(&mut self, name: &str, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Variable {
            name: name.to_owned(),
            kind,
            offset: self.unknowns,
        });
        self.unknowns += kind.unknowns();
        id
    }

    /// Symmetric `n×n` variable parameterized by its upper triangle.
    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.push_var(name, VarKind::Symmetric(n))
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.push_var(name, VarKind::Rectangular(rows, cols))
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.push_var(name, VarKind::Scalar)
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknowns
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn var(&self, id: VarId) -> Result<&Variable, SdpError> {
        self.vars.get(id.0).ok_or(SdpError::UnknownVariable(id.0))
    }

    /// The variable as an affine expression of the unknowns.
    pub fn expr(&self, id: VarId) -> AffineExpr {
        let v = &self.vars[id.0];
        let (rows, cols) = v.kind.shape();
        let mut terms = BTreeMap::new();
        match v.kind {
            VarKind::Symmetric(n) => {
                let mut k = v.offset;
                for i in 0..n {
                    for j in i..n {
                        let mut e = DMatrix::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            VarKind::Rectangular(p, q) => {
                for i in 0..p {
                    for j in 0..q {
                        let mut e = DMatrix::zeros(p, q);
                        e[(i, j)] = 1.0;
                        terms.insert(v.offset + i * q + j, e);
                    }
                }
            }
            VarKind::Scalar => {
                terms.insert(v.offset, DMatrix::from_element(1, 1, 1.0));
            }
        }
        AffineExpr::from_terms(rows, cols, terms)
    }

    /// Scalar variable times the `n×n` identity.
    pub fn scaled_identity(&self, id: VarId, n: usize) -> AffineExpr {
        let v = &self.vars[id.0];
        debug_assert_eq!(v.kind, VarKind::Scalar);
        let mut terms = BTreeMap::new();
        terms.insert(v.offset, DMatrix::identity(n, n));
        AffineExpr::from_terms(n, n, terms)
    }

    /// Adds `expr ⪰ margin·I` (Psd) or `expr ⪯ −margin·I` (Nsd).
    pub fn add_constraint(
        &mut self,
        name: &str,
        expr: AffineExpr,
        sense: Sense,
        margin: f64,
    ) -> Result<usize, SdpError> {
        if !expr.is_symmetric(1e-12) {
            return Err(SdpError::AsymmetricConstraint(name.to_owned()));
        }
        if expr.unknown_span() > self.unknowns {
            return Err(SdpError::UnknownVariable(expr.unknown_span() - 1));
        }
        self.constraints.push(Constraint {
            name: name.to_owned(),
            expr,
            sense,
            margin,
        });
        Ok(self.constraints.len() - 1)
    }

    /// Strict constraint whose margin is `eps` times the block's coefficient scale,
    /// so the requirement is invariant under positive rescaling of the block.
    pub fn add_strict(
        &mut self,
        name: &str,
        expr: AffineExpr,
        sense: Sense,
        eps: f64,
    ) -> Result<usize, SdpError> {
        let scale = expr.coefficient_scale().max(expr.constant_part().norm());
        let margin = if scale > 0.0 { eps * scale } else { eps };
        self.add_constraint(name, expr, sense, margin)
    }

    /// Sets the objective to minimize a 1×1 expression.
    pub fn minimize(&mut self, expr: &AffineExpr) -> Result<(), SdpError> {
        if expr.shape() != (1, 1) {
            return Err(SdpError::ObjectiveShape);
        }
        self.objective = expr.terms().map(|(k, m)| (k, m[(0, 0)])).collect();
        self.objective_offset = expr.constant_part()[(0, 0)];
        Ok(())
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective_offset
            + self
                .objective
                .iter()
                .map(|(&k, &c)| c * y.get(k).copied().unwrap_or(0.0))
                .sum::<f64>()
    }

    pub(crate) fn objective_vector(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.unknowns];
        for (&k, &v) in &self.objective {
            c[k] = v;
        }
        c
    }

    /// Packs per-variable values into the unknown vector.
    ///
    /// Symmetric values are read from their upper triangle; unlisted variables are zero.
    pub fn pack(&self, values: &[(VarId, DMatrix<f64>)]) -> Result<Vec<f64>, SdpError> {
        let mut y = vec![0.0; self.unknowns];
        for (id, m) in values {
            let v = self.var(*id)?;
            let shape = v.kind.shape();
            if m.shape() != shape {
                return Err(SdpError::Shape {
                    context: "pack",
                    expected: shape,
                    found: m.shape(),
                });
            }
            match v.kind {
                VarKind::Symmetric(n) => {
                    let mut k = v.offset;
                    for i in 0..n {
                        for j in i..n {
                            y[k] = m[(i, j)];
                            k += 1;
                        }
                    }
                }
                VarKind::Rectangular(_, q) => {
                    for (idx, slot) in y[v.offset..v.offset + v.kind.unknowns()].iter_mut().enumerate() {
                        *slot = m[(idx / q, idx % q)];
                    }
                }
                VarKind::Scalar => y[v.offset] = m[(0, 0)],
            }
        }
        Ok(y)
    }

    /// Extracts one variable's value from an unknown vector.
    pub fn unpack(&self, id: VarId, y: &[f64]) -> DMatrix<f64> {
        self.expr(id).eval(y)
    }
}

/// Per-constraint slack on the required side of zero.
#[derive(Debug, Clone)]
pub struct MarginReport {
    /// `λ_min(±F(y)) − margin` for each constraint, in declaration order.
    pub per_constraint: Vec<f64>,
}

impl MarginReport {
    pub fn min(&self) -> f64 {
        self.per_constraint.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the constraint with the smallest slack.
    pub fn worst(&self) -> Option<usize> {
        self.per_constraint
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// Evaluates every constraint at `y` using only the symmetric eigensolver.
pub fn check_assignment(problem: &LmiProblem, y: &[f64]) -> Result<MarginReport, SdpError> {
    if y.len() != problem.num_unknowns() {
        return Err(SdpError::AssignmentLength {
            expected: problem.num_unknowns(),
            found: y.len(),
        });
    }
    let per_constraint = problem
        .constraints
        .iter()
        .map(|c| min_eigenvalue(&c.normal_form(y)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MarginReport { per_constraint })
}
