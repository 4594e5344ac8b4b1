//! Log-det barrier interior-point method.
//!
//! Phase 1 maximizes the common eigenvalue margin `s` of all constraint blocks
//! (`G_k(y) ⪰ s·I`) until a strictly feasible point appears or the margin is
//! provably below `-tol`. Phase 2 follows the central path of
//! `t·cᵀy − Σ log det G_k(y)` until the barrier duality gap `m/t` drops below
//! `tol`. A box `|y_j| ≤ R` keeps both barrier problems bounded.

use nalgebra::{DMatrix, DVector};

use super::{check_assignment, min_eigenvalue, LmiProblem, SdpError};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Absolute optimality tolerance on the objective and the infeasibility threshold.
    pub tol: f64,
    /// Newton iteration budget per phase.
    pub max_iter: usize,
    /// Radius of the box bounding every scalar unknown.
    pub box_radius: f64,
    /// Growth factor of the barrier weight between centering steps.
    pub barrier_growth: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 5000,
            box_radius: 1e6,
            barrier_growth: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Strictly feasible and within `tol` of the optimal objective.
    Optimal,
    /// Strictly feasible but not optimized (pure feasibility problem).
    Feasible,
    /// No strictly feasible point: the phase-1 margin is certified negative, or
    /// is within `1e-3·tol` of zero with no interior point found.
    Infeasible,
    /// Budget exhausted; the best iterate is attached.
    MaxIterations,
}

impl SolveStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Unknown vector; use [`LmiProblem::unpack`] to read variables.
    pub values: Vec<f64>,
    pub objective: f64,
    /// Smallest raw constraint slack at `values` (see [`check_assignment`]).
    pub margin: f64,
    /// Best phase-1 margin over the normalized blocks.
    pub phase1_margin: f64,
    /// Upper bound on the phase-1 margin when infeasibility was declared.
    pub phase1_bound: f64,
    /// Barrier duality gap bound at exit.
    pub gap: f64,
    pub iterations: usize,
}

/// Newton decrement `λ²/2` below which a centering step is complete.
const CENTERING_TOL: f64 = 1e-8;

struct Block {
    f0: DMatrix<f64>,
    coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    fn eval(&self, z: &[f64]) -> DMatrix<f64> {
        let mut g = self.f0.clone();
        for (k, f) in &self.coeffs {
            if z[*k] != 0.0 {
                g += f * z[*k];
            }
        }
        g
    }
}

struct Barrier {
    blocks: Vec<Block>,
    c: Vec<f64>,
    /// Unknowns constrained to `[-radius, radius]`.
    boxed: usize,
    radius: f64,
}

enum Centering {
    Converged,
    Budget,
}

impl Barrier {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn degree(&self) -> f64 {
        (self.blocks.iter().map(|b| b.f0.nrows()).sum::<usize>() + 2 * self.boxed) as f64
    }

    /// Barrier value at `z`, or `None` outside the domain.
    fn value(&self, z: &[f64], t: f64) -> Option<f64> {
        let mut f = t * dot(&self.c, z);
        for b in &self.blocks {
            let chol = b.eval(z).cholesky()?;
            f -= 2.0 * chol.l_dirty().diagonal().iter().take(b.f0.nrows()).map(|d| d.ln()).sum::<f64>();
        }
        for &zj in &z[..self.boxed] {
            let lo = self.radius + zj;
            let hi = self.radius - zj;
            if lo <= 0.0 || hi <= 0.0 {
                return None;
            }
            f -= lo.ln() + hi.ln();
        }
        f.is_finite().then_some(f)
    }

    fn grad_hess(&self, z: &[f64], t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let mut g = DVector::from_iterator(n, self.c.iter().map(|c| t * c));
        let mut h = DMatrix::zeros(n, n);
        for b in &self.blocks {
            let chol = b.eval(z).cholesky()?;
            let l = chol.l();
            // W_k = L⁻¹ F_k L⁻ᵀ, so that ∂²/∂z_a∂z_b = ⟨W_a, W_b⟩ is a Gram matrix.
            let w: Vec<(usize, DMatrix<f64>)> = b
                .coeffs
                .iter()
                .map(|(k, f)| {
                    let left = l.solve_lower_triangular(f)?;
                    let both = l.solve_lower_triangular(&left.transpose())?;
                    Some((*k, both))
                })
                .collect::<Option<_>>()?;
            for (a, (ka, wa)) in w.iter().enumerate() {
                g[*ka] -= wa.trace();
                for (kb, wb) in &w[a..] {
                    let v = wa.dot(wb);
                    h[(*ka, *kb)] += v;
                    if ka != kb {
                        h[(*kb, *ka)] += v;
                    }
                }
            }
        }
        for (j, &zj) in z[..self.boxed].iter().enumerate() {
            let lo = self.radius + zj;
            let hi = self.radius - zj;
            g[j] += 1.0 / hi - 1.0 / lo;
            h[(j, j)] += 1.0 / (hi * hi) + 1.0 / (lo * lo);
        }
        Some((g, h))
    }

    /// Solves `H d = −g` after symmetric diagonal scaling of `H` to unit
    /// diagonal, adding a small ridge if the factorization fails.
    fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
        let s = h.diagonal().map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 });
        let hs = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * s[i] * s[j]);
        let gs = g.component_mul(&s);
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut hr = hs.clone();
            for i in 0..hr.nrows() {
                hr[(i, i)] += reg;
            }
            if let Some(chol) = hr.cholesky() {
                let d = chol.solve(&(-&gs)).component_mul(&s);
                if d.iter().all(|v| v.is_finite()) {
                    return Some(d);
                }
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        }
        None
    }

    /// Damped Newton minimization of the barrier at weight `t`.
    fn center(&self, z: &mut [f64], t: f64, iterations: &mut usize, budget: usize) -> Centering {
        loop {
            if *iterations >= budget {
                return Centering::Budget;
            }
            let Some((g, h)) = self.grad_hess(z, t) else {
                return Centering::Converged;
            };
            let Some(dz) = Self::newton_direction(&g, &h) else {
                return Centering::Converged;
            };
            let slope = g.dot(&dz);
            *iterations += 1;
            if -slope / 2.0 <= CENTERING_TOL {
                return Centering::Converged;
            }
            let f0 = match self.value(z, t) {
                Some(f) => f,
                None => return Centering::Converged,
            };
            let mut alpha = 1.0;
            let mut trial = z.to_vec();
            let accepted = loop {
                for (ti, (zi, di)) in trial.iter_mut().zip(z.iter().zip(dz.iter())) {
                    *ti = zi + alpha * di;
                }
                if let Some(f) = self.value(&trial, t) {
                    if f <= f0 + 0.25 * alpha * slope {
                        break true;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break false;
                }
            };
            if !accepted {
                return Centering::Converged;
            }
            z.copy_from_slice(&trial);
            // Predicted decrease below the rounding level of the barrier value.
            if -alpha * slope <= 64.0 * f64::EPSILON * f0.abs().max(1.0) {
                return Centering::Converged;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized `⪰ 0` blocks of the problem, each divided by its own scale.
fn normalized_blocks(problem: &LmiProblem) -> Vec<Block> {
    let n = problem.num_unknowns();
    let zero = vec![0.0; n];
    problem
        .constraints()
        .iter()
        .map(|c| {
            let sign = if c.sense == super::Sense::Nsd { -1.0 } else { 1.0 };
            let f0 = c.normal_form(&zero);
            let scale = c.expr.coefficient_scale().max(f0.norm()).max(f64::MIN_POSITIVE);
            Block {
                f0: f0 / scale,
                coeffs: c.expr.terms().map(|(k, m)| (k, m * (sign / scale))).collect(),
            }
        })
        .collect()
}

/// Minimizes the problem's objective subject to its constraints.
pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    if problem.constraints().is_empty() {
        return Err(SdpError::NoConstraints);
    }
    let n = problem.num_unknowns();
    let blocks = normalized_blocks(problem);
    let mut iterations = 0;

    // Phase 1 over (y, s): maximize s subject to G_k(y) - s I ⪰ 0.
    let mut y = vec![0.0; n];
    let start_margin = blocks
        .iter()
        .map(|b| min_eigenvalue(&b.eval(&y)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let mut phase1_margin = start_margin;
    let mut phase1_bound = f64::INFINITY;
    if start_margin <= 0.0 {
        let phase1 = Barrier {
            blocks: blocks
                .iter()
                .map(|b| {
                    let mut coeffs = b.coeffs.clone();
                    coeffs.push((n, -DMatrix::identity(b.f0.nrows(), b.f0.nrows())));
                    Block {
                        f0: b.f0.clone(),
                        coeffs,
                    }
                })
                .collect(),
            c: (0..=n).map(|k| if k == n { -1.0 } else { 0.0 }).collect(),
            boxed: n,
            radius: opts.box_radius,
        };
        let mut z = y.clone();
        z.push(start_margin - 1.0);
        let degree = phase1.degree();
        let mut t = 1.0;
        let mut budget_hit = false;
        loop {
            if let Centering::Budget = phase1.center(&mut z, t, &mut iterations, opts.max_iter) {
                budget_hit = true;
            }
            let s = z[n];
            phase1_margin = s;
            phase1_bound = s + degree / t;
            if s > 0.0 {
                break;
            }
            if phase1_bound < 0.0 || degree / t < 1e-3 * opts.tol {
                y.copy_from_slice(&z[..n]);
                return Ok(finish(problem, y, SolveStatus::Infeasible, phase1_margin, phase1_bound, degree / t, iterations));
            }
            if budget_hit {
                y.copy_from_slice(&z[..n]);
                return Ok(finish(problem, y, SolveStatus::MaxIterations, phase1_margin, phase1_bound, degree / t, iterations));
            }
            t *= opts.barrier_growth;
        }
        y.copy_from_slice(&z[..n]);
    }

    let c = problem.objective_vector();
    if c.iter().all(|&v| v == 0.0) {
        return Ok(finish(problem, y, SolveStatus::Feasible, phase1_margin, phase1_bound, 0.0, iterations));
    }

    // Phase 2: central path of the objective.
    let phase2 = Barrier {
        blocks,
        c,
        boxed: n,
        radius: opts.box_radius,
    };
    let degree = phase2.degree();
    let phase2_start = iterations;
    let mut t = 1.0;
    loop {
        let outcome = phase2.center(&mut y, t, &mut iterations, phase2_start + opts.max_iter);
        let gap = degree / t;
        if let Centering::Budget = outcome {
            return Ok(finish(problem, y, SolveStatus::MaxIterations, phase1_margin, phase1_bound, gap, iterations));
        }
        if gap <= opts.tol {
            return Ok(finish(problem, y, SolveStatus::Optimal, phase1_margin, phase1_bound, gap, iterations));
        }
        t *= opts.barrier_growth;
    }
}

fn finish(
    problem: &LmiProblem,
    values: Vec<f64>,
    status: SolveStatus,
    phase1_margin: f64,
    phase1_bound: f64,
    gap: f64,
    iterations: usize,
) -> SdpSolution {
    let margin = check_assignment(problem, &values).map_or(f64::NAN, |r| r.min());
    SdpSolution {
        status,
        objective: problem.objective_value(&values),
        values,
        margin,
        phase1_margin,
        phase1_bound,
        gap,
        iterations,
    }
}
