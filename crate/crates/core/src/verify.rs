//! Analysis oracles independent of the synthesis path: H∞ norms of LTI
//! vertices, Lyapunov decrease along simulated trajectories, and the empirical
//! disturbance-to-output energy ratio.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use thiserror::Error;

use crate::fuzzy::{TsModel, TsRule};
use crate::lmi::SynthesisResult;
use crate::sim::SimTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("system is not Hurwitz (spectral abscissa {0:e})")]
    Unstable(f64),
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("trace has {0} samples; at least 2 are needed")]
    ShortTrace(usize),
    #[error("disturbance has zero energy on the trace")]
    ZeroDisturbance,
}

/// Power-of-two diagonal similarity `T` that balances the off-diagonal row and
/// column norms of `[[A, B], [C, ·]]` over the state indices.
pub fn balancing_scaling(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut t = DVector::from_element(n, 1.0);
    for _ in 0..64 {
        let mut changed = false;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                if j != i {
                    row += (a[(i, j)] * t[j] / t[i]).powi(2);
                    col += (a[(j, i)] * t[i] / t[j]).powi(2);
                }
            }
            row += b.row(i).norm_squared() / (t[i] * t[i]);
            col += c.column(i).norm_squared() * t[i] * t[i];
            if row == 0.0 || col == 0.0 {
                continue;
            }
            // Scaling t_i by f multiplies the column norm by f and divides the row norm by f.
            let f = (row.sqrt() / col.sqrt()).sqrt();
            let f = 2f64.powi(f.log2().round() as i32);
            if f != 1.0 {
                t[i] *= f;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    t
}

/// Eigenvalues of a real square matrix, after diagonal balancing.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, VerifyError> {
    if !a.is_square() {
        return Err(VerifyError::Dimension(format!("matrix is {:?}", a.shape())));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(VerifyError::NoConvergence);
    }
    let empty = DMatrix::zeros(a.nrows(), 0);
    let t = balancing_scaling(a, &empty, &empty.transpose());
    let ab = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * t[j] / t[i]);
    let schur = Schur::try_new(ab, f64::EPSILON, 10_000).ok_or(VerifyError::NoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part of the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64, VerifyError> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// One LTI vertex `ẋ = A x + B v`, `y = C x + D v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSystem {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
}

impl VertexSystem {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        c_mat: DMatrix<f64>,
        d_mat: DMatrix<f64>,
    ) -> Result<Self, VerifyError> {
        let n = a_mat.nrows();
        if !a_mat.is_square()
            || b_mat.nrows() != n
            || c_mat.ncols() != n
            || d_mat.shape() != (c_mat.nrows(), b_mat.ncols())
        {
            return Err(VerifyError::Dimension(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a_mat.shape(),
                b_mat.shape(),
                c_mat.shape(),
                d_mat.shape()
            )));
        }
        Ok(Self {
            a_mat,
            b_mat,
            c_mat,
            d_mat,
        })
    }

    /// Closed-loop vertex `(A + BK, E, C, D)` of a rule under gain `K`.
    pub fn closed_loop(rule: &TsRule, gain: &DMatrix<f64>) -> Result<Self, VerifyError> {
        if gain.shape() != (rule.inputs(), rule.states()) {
            return Err(VerifyError::Dimension(format!("gain {:?}", gain.shape())));
        }
        Self::new(
            &rule.a_mat + &rule.b_mat * gain,
            rule.e_mat.clone(),
            rule.c_mat.clone(),
            rule.d_mat.clone(),
        )
    }

    /// Same transfer function with a balanced state basis.
    fn balanced(&self) -> Self {
        let t = balancing_scaling(&self.a_mat, &self.b_mat, &self.c_mat);
        let n = self.a_mat.nrows();
        Self {
            a_mat: DMatrix::from_fn(n, n, |i, j| self.a_mat[(i, j)] * t[j] / t[i]),
            b_mat: DMatrix::from_fn(n, self.b_mat.ncols(), |i, j| self.b_mat[(i, j)] / t[i]),
            c_mat: DMatrix::from_fn(self.c_mat.nrows(), n, |i, j| self.c_mat[(i, j)] * t[j]),
            d_mat: self.d_mat.clone(),
        }
    }

    /// Largest singular value of `G(jω) = C (jωI − A)⁻¹ B + D`.
    pub fn gain_at(&self, omega: f64) -> f64 {
        let n = self.a_mat.nrows();
        let jw_a = DMatrix::from_fn(n, n, |i, j| {
            let re = -self.a_mat[(i, j)];
            Complex::new(re, if i == j { omega } else { 0.0 })
        });
        let b = self.b_mat.map(|v| Complex::new(v, 0.0));
        let c = self.c_mat.map(|v| Complex::new(v, 0.0));
        let d = self.d_mat.map(|v| Complex::new(v, 0.0));
        let Some(x) = jw_a.lu().solve(&b) else {
            return f64::INFINITY;
        };
        let g = c * x + d;
        if g.is_empty() {
            return 0.0;
        }
        g.singular_values().max()
    }
}

/// Largest `σ_max(G(jω))` over `points` log-spaced frequencies on `[0, omega_max]`
/// (including `ω = 0`).
pub fn frequency_sweep(sys: &VertexSystem, omega_max: f64, points: usize) -> f64 {
    let sys = sys.balanced();
    let mut best = sys.gain_at(0.0);
    let lo = (omega_max * 1e-6).ln();
    let hi = omega_max.ln();
    for k in 0..points {
        let w = (lo + (hi - lo) * k as f64 / (points.max(2) - 1) as f64).exp();
        best = best.max(sys.gain_at(w));
    }
    best
}

/// Hamiltonian whose imaginary-axis eigenvalues mark frequencies with
/// `σ_max(G(jω)) = γ`, for `γ > σ_max(D)`.
fn hamiltonian(sys: &VertexSystem, gamma: f64) -> Option<DMatrix<f64>> {
    let (a, b, c, d) = (&sys.a_mat, &sys.b_mat, &sys.c_mat, &sys.d_mat);
    let n = a.nrows();
    let q = b.ncols();
    let dtd = d.transpose() * d;
    let r = DMatrix::identity(q, q) * (gamma * gamma) - dtd;
    let r_inv = r.cholesky()?.inverse();
    let p = c.nrows();
    let s = DMatrix::identity(p, p) + d * &r_inv * d.transpose();
    let ah = a + b * &r_inv * d.transpose() * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ah);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose()));
    h.view_mut((n, 0), (n, n)).copy_from(&(-(c.transpose() * s * c)));
    h.view_mut((n, n), (n, n)).copy_from(&(-ah.transpose()));
    Some(h)
}

/// Largest gain at the frequencies suggested by the near-imaginary eigenvalues
/// of the Hamiltonian at level `gamma`, probing the crossings and the midpoints
/// between them. `None` when no eigenvalue lies near the imaginary axis.
fn crossing_probe(sys: &VertexSystem, gamma: f64) -> Result<Option<f64>, VerifyError> {
    let Some(h) = hamiltonian(sys, gamma) else {
        return Ok(Some(f64::INFINITY));
    };
    let scale = h.norm().max(1.0);
    let mut omegas: Vec<f64> = eigenvalues(&h)?
        .into_iter()
        .filter(|z| z.re.abs() <= 1e-7 * scale.max(z.norm()))
        .map(|z| z.im.abs())
        .collect();
    if omegas.is_empty() {
        return Ok(None);
    }
    omegas.push(0.0);
    omegas.sort_by(f64::total_cmp);
    omegas.dedup();
    let mut best = 0.0f64;
    for w in omegas.windows(2) {
        best = best.max(sys.gain_at(0.5 * (w[0] + w[1]))).max(sys.gain_at(w[1]));
    }
    best = best.max(sys.gain_at(0.0));
    Ok(Some(best))
}

/// H∞ norm by bisection on the Hamiltonian test, to absolute accuracy `tol`.
pub fn hinf_norm(sys: &VertexSystem, tol: f64) -> Result<f64, VerifyError> {
    if !(tol > 0.0) {
        return Err(VerifyError::BadTolerance);
    }
    let abscissa = spectral_abscissa(&sys.a_mat)?;
    if abscissa >= 0.0 {
        return Err(VerifyError::Unstable(abscissa));
    }
    let sys = sys.balanced();
    if sys.b_mat.ncols() == 0 || sys.c_mat.nrows() == 0 {
        return Ok(0.0);
    }
    let d_norm = if sys.d_mat.is_empty() { 0.0 } else { sys.d_mat.singular_values().max() };
    let mut lo = d_norm.max(sys.gain_at(0.0));
    for z in eigenvalues(&sys.a_mat)? {
        lo = lo.max(sys.gain_at(z.im.abs())).max(sys.gain_at(z.norm()));
    }
    let mut hi = (2.0 * lo).max(lo + tol);
    loop {
        match crossing_probe(&sys, hi)? {
            None => break,
            Some(g) if g <= hi => break,
            Some(g) => {
                lo = lo.max(g);
                hi = 2.0 * hi.max(g);
            }
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match crossing_probe(&sys, mid)? {
            Some(g) if g > mid => lo = lo.max(g),
            _ => hi = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `V(x) = Σ h_j(x) xᵀ P_j x`.
pub fn vector_lyapunov(model: &TsModel, lyapunov: &[DMatrix<f64>], x: &[f64]) -> Result<f64, VerifyError> {
    if lyapunov.len() != model.len() {
        return Err(VerifyError::Dimension(format!(
            "{} Lyapunov matrices for {} rules",
            lyapunov.len(),
            model.len()
        )));
    }
    let h = model.memberships(x).map_err(|e| VerifyError::Dimension(e.to_string()))?;
    let xv = DVector::from_column_slice(x);
    Ok(h.iter().zip(lyapunov).map(|(hj, p)| hj * (xv.transpose() * p * &xv)[(0, 0)]).sum())
}

/// Fraction of consecutive samples over which `V` strictly decreases (pairs
/// with `V = 0` at both ends count as decreasing).
pub fn decrease_fraction(values: &[f64]) -> Result<f64, VerifyError> {
    if values.len() < 2 {
        return Err(VerifyError::ShortTrace(values.len()));
    }
    let good = values
        .windows(2)
        .filter(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0))
        .count();
    Ok(good as f64 / (values.len() - 1) as f64)
}

/// Decrease fraction of `V = Σ h_j xᵀ X_j⁻¹ x` along a trace.
pub fn lyapunov_trajectory_check(
    trace: &SimTrace,
    result: &SynthesisResult,
    model: &TsModel,
) -> Result<f64, VerifyError> {
    let p: Vec<DMatrix<f64>> = result
        .rules
        .iter()
        .map(|r| r.lyapunov().ok_or_else(|| VerifyError::Dimension("X is not positive definite".into())))
        .collect::<Result<_, _>>()?;
    let values = trace
        .samples
        .iter()
        .map(|s| vector_lyapunov(model, &p, &s.x))
        .collect::<Result<Vec<_>, _>>()?;
    decrease_fraction(&values)
}

/// `√(Σ y² Δt) / √(Σ v² Δt)` with the rectangle rule on the recorded samples.
pub fn energy_ratio(t: &[f64], y: &[f64], v: &[f64]) -> Result<f64, VerifyError> {
    if t.len() < 2 || y.len() != t.len() || v.len() != t.len() {
        return Err(VerifyError::ShortTrace(t.len().min(y.len()).min(v.len())));
    }
    let mut ey = 0.0;
    let mut ev = 0.0;
    for k in 0..t.len() - 1 {
        let dt = t[k + 1] - t[k];
        ey += y[k] * y[k] * dt;
        ev += v[k] * v[k] * dt;
    }
    if !(ev > 0.0) {
        return Err(VerifyError::ZeroDisturbance);
    }
    Ok((ey / ev).sqrt())
}

/// Empirical `‖y‖₂ / ‖v‖₂` of a trace.
pub fn empirical_hinf(trace: &SimTrace) -> Result<f64, VerifyError> {
    let t: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let y: Vec<f64> = trace.samples.iter().map(|s| s.y).collect();
    let v: Vec<f64> = trace.samples.iter().map(|s| s.v).collect();
    energy_ratio(&t, &y, &v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siso(a: &[f64], n: usize, b: &[f64], c: &[f64]) -> VertexSystem {
        VertexSystem::new(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_column_slice(n, 1, b),
            DMatrix::from_row_slice(1, n, c),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn first_order_norms() {
        let s = siso(&[-1.0], 1, &[1.0], &[1.0]);
        assert!((hinf_norm(&s, 1e-9).unwrap() - 1.0).abs() < 1e-8);
        let s = siso(&[-2.0], 1, &[1.0], &[1.0]);
        assert!((hinf_norm(&s, 1e-9).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn diagonal_pair_matches_sweep() {
        let s = siso(&[-1.0, 0.0, 0.0, -2.0], 2, &[1.0, 1.0], &[1.0, 1.0]);
        let exact = hinf_norm(&s, 1e-9).unwrap();
        // peak at ω = 0: 1 + 1/2
        assert!((exact - 1.5).abs() < 1e-8);
        let sweep = frequency_sweep(&s, 100.0, 10_000);
        assert!((exact - sweep).abs() < 1e-3);
    }

    #[test]
    fn resonant_peak_found_off_zero() {
        // ω_n = 1, ζ = 0.05: peak 1/(2ζ√(1−ζ²)) near ω = √(1 − 2ζ²)
        let zeta: f64 = 0.05;
        let s = siso(&[0.0, 1.0, -1.0, -2.0 * zeta], 2, &[0.0, 1.0], &[1.0, 0.0]);
        let want = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert!((hinf_norm(&s, 1e-9).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn feedthrough_is_respected() {
        // G(s) = 1/(s+1) + 2, peak 3 at ω = 0
        let s = VertexSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert!((hinf_norm(&s, 1e-9).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn unstable_is_rejected() {
        let s = siso(&[1.0], 1, &[1.0], &[1.0]);
        assert!(matches!(hinf_norm(&s, 1e-6), Err(VerifyError::Unstable(_))));
        assert!(hinf_norm(&siso(&[-1.0], 1, &[1.0], &[1.0]), 0.0).is_err());
    }

    #[test]
    fn abscissa_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 3.0, -3.0, -0.5]);
        assert!((spectral_abscissa(&a).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn decrease_fraction_conventions() {
        assert_eq!(decrease_fraction(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(decrease_fraction(&[3.0, 2.0, 2.0, 1.0]).unwrap(), 2.0 / 3.0);
        assert!(decrease_fraction(&[1.0]).is_err());
    }

    #[test]
    fn energy_ratio_conventions() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        assert!((energy_ratio(&t, &v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(energy_ratio(&t, &vec![0.0; 100], &v).unwrap(), 0.0);
        assert!(matches!(energy_ratio(&t, &v, &vec![0.0; 100]), Err(VerifyError::ZeroDisturbance)));
    }
}
