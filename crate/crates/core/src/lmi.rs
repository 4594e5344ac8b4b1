//! Per-rule H∞ state-feedback synthesis with input and initial-condition bounds.
//!
//! Each rule `i` yields an independent SDP in `(X_i, M_i, γ_i)`:
//!
//! ```text
//! minimize γ  s.t.  [[He(AX+BM), E, XCᵀ], [Eᵀ, −γI, Dᵀ], [CX, D, −γI]] ⪯ −ε·I
//!                   X ⪰ ε·I
//!                   [[1, x0ᵀ], [x0, X]] ⪰ 0
//!                   [[X, Mᵀ], [M, μ²I]] ⪰ 0
//!                   γ ≤ γ_max
//! ```
//!
//! and the gain `K_i = M_i X_i⁻¹`. The state is diagonally rescaled before the
//! solve so that badly scaled plants (entries spanning many decades) stay
//! well conditioned; all returned matrices are in the original coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::fuzzy::{TsModel, TsRule};
use crate::sdp::{
    self, check_symmetric, max_eigenvalue, min_eigenvalue, AffineExpr, LmiProblem, SdpError, Sense, SolveStatus,
    SolverOptions, VarId,
};
use crate::verify::{balancing_scaling, spectral_abscissa};

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("invalid synthesis option: {0}")]
    InvalidOption(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("transformation matrix is singular")]
    Singular,
    #[error("rule {rule} is infeasible; binding constraint family: {family}")]
    Infeasible { rule: usize, family: &'static str },
    #[error("rule {rule}: solver stopped with status {status:?} after {iterations} iterations")]
    SolverFailure {
        rule: usize,
        status: SolveStatus,
        iterations: usize,
    },
    #[error("rule {rule}: solution fails the a-posteriori eigenvalue check of `{family}` (slack {margin:e})")]
    Unverified {
        rule: usize,
        family: &'static str,
        margin: f64,
    },
    #[error("coupled multi-rule synthesis is not supported")]
    Unsupported,
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Bound on the input 2-norm.
    pub mu: f64,
    /// Initial state; `None` means the origin.
    pub x0: Option<DVector<f64>>,
    pub eps_feas: f64,
    pub gamma_max: f64,
    pub per_rule_independent: bool,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            mu: 1.0,
            x0: None,
            eps_feas: 1e-7,
            gamma_max: 1e4,
            per_rule_independent: true,
            solver: SolverOptions::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> Result<(), LmiError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(LmiError::InvalidOption("mu must be positive"));
        }
        if !(self.eps_feas > 0.0 && self.eps_feas.is_finite()) {
            return Err(LmiError::InvalidOption("eps_feas must be positive"));
        }
        if !(self.gamma_max > 0.0 && self.gamma_max.is_finite()) {
            return Err(LmiError::InvalidOption("gamma_max must be positive"));
        }
        if let Some(x0) = &self.x0 {
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(LmiError::InvalidOption("x0 must be finite"));
            }
        }
        Ok(())
    }

    fn x0_for(&self, n: usize) -> Result<DVector<f64>, LmiError> {
        match &self.x0 {
            None => Ok(DVector::zeros(n)),
            Some(x0) if x0.len() == n => Ok(x0.clone()),
            Some(x0) => Err(LmiError::Dimension(format!("x0 has {} entries, model has {n} states", x0.len()))),
        }
    }
}

/// Decision variables of one rule's program.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisVars {
    pub x: VarId,
    pub m: VarId,
    pub gamma: VarId,
}

impl SynthesisVars {
    pub fn declare(problem: &mut LmiProblem, states: usize, inputs: usize) -> Self {
        Self {
            x: problem.symmetric("X", states),
            m: problem.rectangular("M", inputs, states),
            gamma: problem.scalar("gamma"),
        }
    }
}

/// The bounded-real block, to be constrained `⪯ −ε·I`. Empty disturbance or
/// output channels drop their rows and columns.
pub fn build_hinf_lmi(problem: &LmiProblem, rule: &TsRule, vars: SynthesisVars) -> Result<AffineExpr, LmiError> {
    rule.check_dims().map_err(|e| LmiError::Dimension(e.to_string()))?;
    let x = problem.expr(vars.x);
    let m = problem.expr(vars.m);
    let (n, q, p) = (rule.states(), rule.disturbances(), rule.outputs());
    if x.shape() != (n, n) || m.shape() != (rule.inputs(), n) {
        return Err(LmiError::Dimension(format!(
            "X {:?} and M {:?} do not fit a rule with {n} states and {} inputs",
            x.shape(),
            m.shape(),
            rule.inputs()
        )));
    }
    let ax_bm = x.left_mul(&rule.a_mat)?.try_add(&m.left_mul(&rule.b_mat)?)?;
    let corner = ax_bm.try_add(&ax_bm.transpose())?;
    let cx = x.left_mul(&rule.c_mat)?;
    let e = AffineExpr::constant(rule.e_mat.clone());
    let d = AffineExpr::constant(rule.d_mat.clone());

    let mut rows = vec![vec![corner]];
    if q > 0 {
        rows[0].push(e.clone());
        rows.push(vec![e.transpose(), -problem.scaled_identity(vars.gamma, q)]);
    }
    if p > 0 {
        rows[0].push(cx.transpose());
        if q > 0 {
            rows[1].push(d.transpose());
        }
        let mut last = vec![cx];
        if q > 0 {
            last.push(d);
        }
        last.push(-problem.scaled_identity(vars.gamma, p));
        rows.push(last);
    }
    Ok(AffineExpr::block(&rows)?)
}

/// `[[1, x0ᵀ], [x0, X]]`, to be constrained `⪰ 0`.
pub fn build_initial_condition_lmi(problem: &LmiProblem, x0: &DVector<f64>, x: VarId) -> Result<AffineExpr, LmiError> {
    let xe = problem.expr(x);
    if xe.nrows() != x0.len() {
        return Err(LmiError::Dimension(format!("x0 has {} entries, X is {}×{}", x0.len(), xe.nrows(), xe.ncols())));
    }
    let col = AffineExpr::constant(DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()));
    Ok(AffineExpr::block(&[
        vec![AffineExpr::identity(1), col.transpose()],
        vec![col, xe],
    ])?)
}

/// `[[X, Mᵀ], [M, μ²I]]`, to be constrained `⪰ 0`.
pub fn build_input_bound_lmi(problem: &LmiProblem, x: VarId, m: VarId, mu: f64) -> Result<AffineExpr, LmiError> {
    if !(mu > 0.0) {
        return Err(LmiError::InvalidOption("mu must be positive"));
    }
    let xe = problem.expr(x);
    let me = problem.expr(m);
    if me.ncols() != xe.nrows() {
        return Err(LmiError::Dimension(format!("M {:?} does not match X {:?}", me.shape(), xe.shape())));
    }
    let rows = me.nrows();
    Ok(AffineExpr::block(&[
        vec![xe, me.transpose()],
        vec![me, AffineExpr::constant(DMatrix::identity(rows, rows) * (mu * mu))],
    ])?)
}

/// `Tᵀ A T` for nonsingular `T` and symmetric `A`.
pub fn congruence(t_mat: &DMatrix<f64>, a_mat: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    check_symmetric(a_mat)?;
    if !t_mat.is_square() || t_mat.nrows() != a_mat.nrows() {
        return Err(LmiError::Dimension(format!("T {:?} and A {:?}", t_mat.shape(), a_mat.shape())));
    }
    let sv = t_mat.singular_values();
    let smax = sv.max();
    if t_mat.nrows() > 0 && !(sv.min() > 1e-14 * smax) {
        return Err(LmiError::Singular);
    }
    let out = t_mat.transpose() * a_mat * t_mat;
    Ok((&out + out.transpose()) * 0.5)
}

/// Power-of-two diagonal state scaling `T` balancing `[[A, B, E], [C, ·, ·]]`.
pub fn balance(rule: &TsRule) -> DVector<f64> {
    let inputs = DMatrix::from_fn(rule.states(), rule.inputs() + rule.disturbances(), |i, j| {
        if j < rule.inputs() {
            rule.b_mat[(i, j)]
        } else {
            rule.e_mat[(i, j - rule.inputs())]
        }
    });
    balancing_scaling(&rule.a_mat, &inputs, &rule.c_mat)
}

fn scale_rule(rule: &TsRule, t: &DVector<f64>) -> TsRule {
    let n = rule.states();
    let a = DMatrix::from_fn(n, n, |i, j| rule.a_mat[(i, j)] * t[j] / t[i]);
    let b = DMatrix::from_fn(n, rule.inputs(), |i, j| rule.b_mat[(i, j)] / t[i]);
    let e = DMatrix::from_fn(n, rule.disturbances(), |i, j| rule.e_mat[(i, j)] / t[i]);
    let c = DMatrix::from_fn(rule.outputs(), n, |i, j| rule.c_mat[(i, j)] * t[j]);
    TsRule {
        a_mat: a,
        b_mat: b,
        e_mat: e,
        c_mat: c,
        d_mat: rule.d_mat.clone(),
    }
}

/// One rule's synthesized quantities, in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSolution {
    pub x_block: DMatrix<f64>,
    pub m_block: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub gamma: f64,
    pub iterations: usize,
    /// Smallest constraint slack of the scaled program.
    pub margin: f64,
    /// Barrier duality gap at exit.
    pub gap: f64,
}

impl RuleSolution {
    /// `P = X⁻¹`.
    pub fn lyapunov(&self) -> Option<DMatrix<f64>> {
        self.x_block.clone().cholesky().map(|c| c.inverse())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub rules: Vec<RuleSolution>,
    pub mu: f64,
    pub x0: DVector<f64>,
    pub eps_feas: f64,
}

impl SynthesisResult {
    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        self.rules.iter().map(|r| r.gain.clone()).collect()
    }

    pub fn max_gamma(&self) -> f64 {
        self.rules.iter().map(|r| r.gamma).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Relative slack below zero tolerated on non-strict blocks after solving.
const BOUNDARY_ROUNDING: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Family {
    Hinf,
    Positivity,
    InitialCondition,
    InputBound,
    GammaCap,
}

impl Family {
    const ALL: [Family; 5] = [
        Family::Hinf,
        Family::Positivity,
        Family::InitialCondition,
        Family::InputBound,
        Family::GammaCap,
    ];

    fn name(self) -> &'static str {
        match self {
            Family::Hinf => "hinf",
            Family::Positivity => "x_positive",
            Family::InitialCondition => "initial_condition",
            Family::InputBound => "input_bound",
            Family::GammaCap => "gamma_cap",
        }
    }
}

fn rule_program(
    rule: &TsRule,
    x0: &DVector<f64>,
    opts: &SynthesisOptions,
    skip: Option<Family>,
) -> Result<(LmiProblem, SynthesisVars), LmiError> {
    let mut p = LmiProblem::new();
    let vars = SynthesisVars::declare(&mut p, rule.states(), rule.inputs());
    for family in Family::ALL {
        if Some(family) == skip {
            continue;
        }
        let name = family.name();
        match family {
            Family::Hinf => {
                let blk = build_hinf_lmi(&p, rule, vars)?;
                p.add_strict(name, blk, Sense::Nsd, opts.eps_feas)?;
            }
            Family::Positivity => {
                let xe = p.expr(vars.x);
                p.add_strict(name, xe, Sense::Psd, opts.eps_feas)?;
            }
            Family::InitialCondition => {
                let blk = build_initial_condition_lmi(&p, x0, vars.x)?;
                p.add_constraint(name, blk, Sense::Psd, 0.0)?;
            }
            Family::InputBound => {
                // Congruence with diag(I, I/mu) keeps the constant block at unit size.
                let blk = build_input_bound_lmi(&p, vars.x, vars.m, opts.mu)?;
                let n = rule.states();
                let mut scale = DMatrix::identity(blk.nrows(), blk.nrows());
                scale.view_mut((n, n), (rule.inputs(), rule.inputs())).fill_diagonal(1.0 / opts.mu);
                p.add_constraint(name, blk.left_mul(&scale)?.right_mul(&scale)?, Sense::Psd, 0.0)?;
            }
            Family::GammaCap => {
                let cap = p.expr(vars.gamma) - AffineExpr::constant(DMatrix::from_element(1, 1, opts.gamma_max));
                p.add_constraint(name, cap, Sense::Nsd, 0.0)?;
            }
        }
    }
    let gamma = p.expr(vars.gamma);
    p.minimize(&gamma)?;
    Ok((p, vars))
}

/// Names the first constraint family whose removal restores feasibility.
fn binding_family(rule: &TsRule, x0: &DVector<f64>, opts: &SynthesisOptions) -> &'static str {
    for family in [Family::InputBound, Family::InitialCondition, Family::GammaCap] {
        let feasible = rule_program(rule, x0, opts, Some(family))
            .ok()
            .and_then(|(p, _)| sdp::solve(&p, &opts.solver).ok())
            .is_some_and(|s| s.status.is_feasible());
        if feasible {
            return family.name();
        }
    }
    Family::Hinf.name()
}

/// Solves one rule's program.
pub fn synthesize_rule(index: usize, rule: &TsRule, opts: &SynthesisOptions) -> Result<RuleSolution, LmiError> {
    opts.validate()?;
    rule.check_dims().map_err(|e| LmiError::Dimension(e.to_string()))?;
    let x0 = opts.x0_for(rule.states())?;
    let t = balance(rule);
    let scaled = scale_rule(rule, &t);
    let x0s = x0.component_div(&t);

    let (problem, vars) = rule_program(&scaled, &x0s, opts, None)?;
    let sol = sdp::solve(&problem, &opts.solver)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            return Err(LmiError::Infeasible {
                rule: index,
                family: binding_family(&scaled, &x0s, opts),
            })
        }
        status => {
            return Err(LmiError::SolverFailure {
                rule: index,
                status,
                iterations: sol.iterations,
            })
        }
    }
    let report = sdp::check_assignment(&problem, &sol.values)?;
    for (c, &slack) in problem.constraints().iter().zip(&report.per_constraint) {
        // Rounding may push a block past its boundary, but never eats more than half of a strict margin.
        let mut floor = -BOUNDARY_ROUNDING * c.expr.eval(&sol.values).norm().max(1.0);
        if c.margin > 0.0 {
            floor = floor.max(-0.5 * c.margin);
        }
        if !(slack >= floor) {
            return Err(LmiError::Unverified {
                rule: index,
                family: Family::ALL
                    .into_iter()
                    .find(|f| f.name() == c.name)
                    .map_or("unknown", Family::name),
                margin: slack,
            });
        }
    }

    let xs = problem.unpack(vars.x, &sol.values);
    let ms = problem.unpack(vars.m, &sol.values);
    let gamma = problem.unpack(vars.gamma, &sol.values)[(0, 0)];
    let chol = xs.clone().cholesky().ok_or(LmiError::Unverified {
        rule: index,
        family: Family::Positivity.name(),
        margin: sol.margin,
    })?;
    let ks = chol.solve(&ms.transpose()).transpose();

    let tmat = DMatrix::from_diagonal(&t);
    let tinv = DMatrix::from_diagonal(&t.map(|v| 1.0 / v));
    Ok(RuleSolution {
        x_block: &tmat * xs * &tmat,
        m_block: ms * &tmat,
        gain: ks * tinv,
        gamma,
        iterations: sol.iterations,
        margin: sol.margin,
        gap: sol.gap,
    })
}

/// Solves every rule's program, concurrently.
pub fn synthesize(model: &TsModel, opts: &SynthesisOptions) -> Result<SynthesisResult, LmiError> {
    opts.validate()?;
    if !opts.per_rule_independent {
        return Err(LmiError::Unsupported);
    }
    let x0 = opts.x0_for(model.states())?;
    let rules = model
        .rules
        .par_iter()
        .enumerate()
        .map(|(i, rule)| synthesize_rule(i, rule, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthesisResult {
        rules,
        mu: opts.mu,
        x0,
        eps_feas: opts.eps_feas,
    })
}

/// A-posteriori checks of one rule in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleVerification {
    pub rule: usize,
    /// Largest eigenvalue of the bounded-real block at `P = X⁻¹`, `K`, `γ`; must be negative.
    pub hinf_block_max_eig: f64,
    /// Largest real part of the eigenvalues of `A + BK`; must be negative.
    pub spectral_abscissa: f64,
    /// `λ_max(MᵀM/μ² − X)`; must be at most zero.
    pub input_bound_residual: f64,
    /// `x0ᵀ X⁻¹ x0 − 1`; must be at most zero.
    pub initial_condition_residual: f64,
    /// `‖M − K X‖ / ‖M‖`.
    pub gain_identity_residual: f64,
}

impl RuleVerification {
    pub fn hinf_ok(&self) -> bool {
        self.hinf_block_max_eig < 0.0
    }

    pub fn stable(&self) -> bool {
        self.spectral_abscissa < 0.0
    }

    pub fn input_bound_ok(&self, tol: f64) -> bool {
        self.input_bound_residual <= tol
    }

    pub fn initial_condition_ok(&self, tol: f64) -> bool {
        self.initial_condition_residual <= tol
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.hinf_ok() && self.stable() && self.input_bound_ok(tol) && self.initial_condition_ok(tol)
    }
}

/// Bounded-real block `[[(A+BK)ᵀP + P(A+BK), PE, Cᵀ], [EᵀP, −γI, Dᵀ], [C, D, −γI]]`.
pub fn closed_loop_hinf_block(rule: &TsRule, gain: &DMatrix<f64>, p: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let (n, q, r) = (rule.states(), rule.disturbances(), rule.outputs());
    let acl = &rule.a_mat + &rule.b_mat * gain;
    let corner = acl.transpose() * p + p * &acl;
    let pe = p * &rule.e_mat;
    let mut blk = DMatrix::zeros(n + q + r, n + q + r);
    blk.view_mut((0, 0), (n, n)).copy_from(&corner);
    blk.view_mut((0, n), (n, q)).copy_from(&pe);
    blk.view_mut((n, 0), (q, n)).copy_from(&pe.transpose());
    blk.view_mut((0, n + q), (n, r)).copy_from(&rule.c_mat.transpose());
    blk.view_mut((n + q, 0), (r, n)).copy_from(&rule.c_mat);
    blk.view_mut((n, n + q), (q, r)).copy_from(&rule.d_mat.transpose());
    blk.view_mut((n + q, n), (r, q)).copy_from(&rule.d_mat);
    for k in n..n + q + r {
        blk[(k, k)] = -gamma;
    }
    (&blk + blk.transpose()) * 0.5
}

/// Checks one rule's solution; failures are reported through the returned values.
pub fn verify_rule(index: usize, rule: &TsRule, sol: &RuleSolution, mu: f64, x0: &DVector<f64>) -> RuleVerification {
    let p = sol.lyapunov();
    let hinf_block_max_eig = p
        .as_ref()
        .and_then(|p| max_eigenvalue(&closed_loop_hinf_block(rule, &sol.gain, p, sol.gamma)).ok())
        .unwrap_or(f64::INFINITY);
    let acl = &rule.a_mat + &rule.b_mat * &sol.gain;
    let abscissa = spectral_abscissa(&acl).unwrap_or(f64::INFINITY);
    let slack = &sol.x_block - sol.m_block.transpose() * &sol.m_block / (mu * mu);
    let input_bound_residual = min_eigenvalue(&((&slack + slack.transpose()) * 0.5)).map_or(f64::INFINITY, |v| -v);
    let initial_condition_residual = match &p {
        Some(p) if x0.len() == p.nrows() => (x0.transpose() * p * x0)[(0, 0)] - 1.0,
        _ => f64::INFINITY,
    };
    let m_norm = sol.m_block.norm();
    let identity = (&sol.m_block - &sol.gain * &sol.x_block).norm();
    RuleVerification {
        rule: index,
        hinf_block_max_eig,
        spectral_abscissa: abscissa,
        input_bound_residual,
        initial_condition_residual,
        gain_identity_residual: if m_norm > 0.0 { identity / m_norm } else { identity },
    }
}

pub fn verify_solution(result: &SynthesisResult, model: &TsModel) -> Result<Vec<RuleVerification>, LmiError> {
    if result.rules.len() != model.len() {
        return Err(LmiError::Dimension(format!(
            "{} solutions for {} rules",
            result.rules.len(),
            model.len()
        )));
    }
    Ok(model
        .rules
        .iter()
        .zip(&result.rules)
        .enumerate()
        .map(|(i, (rule, sol))| verify_rule(i, rule, sol, result.mu, &result.x0))
        .collect())
}
