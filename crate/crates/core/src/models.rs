//! Nonlinear glucose-insulin plants, their parameter sets and meal disturbances.
//!
//! Both plants are written in deviation coordinates: the Bergman state is
//! glucose/insulin above basal, the Tolic state carries the shifted glucose
//! `G' = G + G_op`. Inputs are the transformed signals the fuzzy models use
//! (`u*`, `v*`); the pump maps in [`crate::sim`] convert to physical rates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("state has {found} components, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("equilibrium search did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

fn require(ok: bool, name: &'static str, reason: &'static str) -> Result<(), ModelError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter { name, reason })
    }
}

fn finite(values: &[f64], what: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

/// Minimal model parameters. `g_b` is in mg/dl (4.5 mmol/L converted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BergmanParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub v1: f64,
    pub n: f64,
    pub g_b: f64,
    pub i_b: f64,
    /// Lower bound of `G + G_b` over which the fuzzy model is exact, mg/dl.
    pub a1: f64,
    /// Upper bound of `G + G_b`, mg/dl.
    pub a2: f64,
}

impl Default for BergmanParams {
    fn default() -> Self {
        Self {
            p1: 0.0,
            p2: 0.025,
            p3: 0.000013,
            v1: 12.0,
            n: 0.0926,
            g_b: 81.0,
            i_b: 15.0,
            a1: 60.0,
            a2: 120.0,
        }
    }
}

impl BergmanParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        finite(
            &[self.p1, self.p2, self.p3, self.v1, self.n, self.g_b, self.i_b, self.a1, self.a2],
            "Bergman parameters",
        )?;
        require(self.p2 > 0.0, "p2", "must be positive")?;
        require(self.n > 0.0, "n", "must be positive")?;
        require(self.v1 > 0.0, "v1", "must be positive")?;
        require(self.a1 > 0.0, "a1", "must be positive")?;
        require(self.a1 < self.a2, "a2", "must exceed a1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BergmanState {
    /// Glucose above basal, mg/dl.
    pub g: f64,
    /// Insulin above basal, mU/L.
    pub i: f64,
    /// Remote-compartment insulin action, 1/min.
    pub x: f64,
}

impl BergmanState {
    pub fn new(g: f64, i: f64, x: f64) -> Self {
        Self { g, i, x }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.g, self.i, self.x])
    }

    pub fn from_slice(s: &[f64]) -> Result<Self, ModelError> {
        match *s {
            [g, i, x] => Ok(Self { g, i, x }),
            _ => Err(ModelError::Dimension { expected: 3, found: s.len() }),
        }
    }
}

/// Time derivative of the minimal model.
///
/// `u_star = −n·I_b + u/V1` is the transformed insulin input and `v` the meal
/// glucose appearance rate.
pub fn bergman_derivative(
    s: &BergmanState,
    u_star: f64,
    v: f64,
    p: &BergmanParams,
) -> Result<BergmanState, ModelError> {
    finite(&[s.g, s.i, s.x, u_star, v], "Bergman state or inputs")?;
    Ok(BergmanState {
        g: -p.p1 * s.g - s.x * (s.g + p.g_b) + v,
        i: -p.n * s.i + u_star,
        x: -p.p2 * s.x + p.p3 * s.i,
    })
}

/// Simplified Sturis/Tolic model parameters (published defaults).
///
/// `b_u` scales the pump input in `u* = c·G_op + d − u/b_u`. It is never
/// tabulated anywhere and defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolicParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub k: f64,
    pub l: f64,
    pub n: f64,
    pub p: f64,
    pub r: f64,
    /// Operating glucose shift, mg/dl.
    pub g_op: f64,
    pub b_u: f64,
    /// Half-width of the shifted-glucose validity interval, mg/dl.
    pub g_range: f64,
    /// Half-width of the `x3` validity interval, mU.
    pub x3_range: f64,
}

impl Default for TolicParams {
    fn default() -> Self {
        Self {
            a: -0.233,
            b: 0.0182,
            c: 4.79e-3,
            d: -43.9,
            e: 0.0667,
            f: -0.0282,
            g: -9.44e-5,
            h: 2.64e-3,
            k: 17.5,
            l: -0.315,
            n: 1.48e-3,
            p: 80.5,
            r: 0.0833,
            g_op: 80.0,
            b_u: 1.0,
            g_range: 30.0,
            x3_range: 10.0,
        }
    }
}

impl TolicParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        finite(
            &[
                self.a, self.b, self.c, self.d, self.e, self.f, self.g, self.h, self.k, self.l, self.n, self.p,
                self.r, self.g_op, self.b_u, self.g_range, self.x3_range,
            ],
            "Tolic parameters",
        )?;
        require(self.r > 0.0, "r", "must be positive")?;
        require(self.g_range > 0.0, "g_range", "must be positive")?;
        require(self.x3_range > 0.0, "x3_range", "must be positive")?;
        require(self.b_u != 0.0, "b_u", "must be nonzero")
    }

    /// `u* = c·G_op + d − u/b_u` for a physical pump rate `u`.
    pub fn transformed_input(&self, u_pump: f64) -> f64 {
        self.c * self.g_op + self.d - u_pump / self.b_u
    }

    /// `v* = h·G_op + p + d(t)`.
    pub fn transformed_disturbance(&self, meal: f64) -> f64 {
        self.h * self.g_op + self.p + meal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TolicState {
    pub i_p: f64,
    pub i_i: f64,
    pub g_prime: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl TolicState {
    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.i_p, self.i_i, self.g_prime, self.x1, self.x2, self.x3])
    }

    pub fn from_slice(s: &[f64]) -> Result<Self, ModelError> {
        match *s {
            [i_p, i_i, g_prime, x1, x2, x3] => Ok(Self { i_p, i_i, g_prime, x1, x2, x3 }),
            _ => Err(ModelError::Dimension { expected: 6, found: s.len() }),
        }
    }
}

/// Time derivative of the shifted Tolic model.
pub fn tolic_derivative(
    s: &TolicState,
    u_star: f64,
    v_star: f64,
    p: &TolicParams,
) -> Result<TolicState, ModelError> {
    finite(&[s.i_p, s.i_i, s.g_prime, s.x1, s.x2, s.x3, u_star, v_star], "Tolic state or inputs")?;
    let hepatic = (p.k + p.l * s.x3 + p.n * s.x3 * s.x3) * s.x3;
    Ok(TolicState {
        i_p: p.a * s.i_p + p.b * s.i_i + p.c * s.g_prime + u_star,
        i_i: p.e * s.i_p + p.f * s.i_i,
        g_prime: p.g * s.i_i * s.g_prime + p.g * p.g_op * s.i_i + p.h * s.g_prime + hepatic + v_star,
        x1: p.r * s.i_p - p.r * s.x1,
        x2: p.r * s.x1 - p.r * s.x2,
        x3: p.r * s.x2 - p.r * s.x3,
    })
}

/// Exponentially decaying meal glucose appearance `alpha·exp(−decay·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MealDisturbance {
    pub alpha: f64,
    pub decay: f64,
}

impl Default for MealDisturbance {
    fn default() -> Self {
        Self { alpha: 1.0, decay: 0.05 }
    }
}

impl MealDisturbance {
    pub fn new(alpha: f64, decay: f64) -> Result<Self, ModelError> {
        let m = Self { alpha, decay };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        finite(&[self.alpha, self.decay], "meal disturbance")?;
        require(self.alpha >= 0.0, "alpha", "must be nonnegative")?;
        require(self.decay > 0.0, "decay", "must be positive")
    }
}

pub fn meal_disturbance(t: f64, m: &MealDisturbance) -> Result<f64, ModelError> {
    if t.is_nan() || t < 0.0 {
        return Err(ModelError::NegativeTime(t));
    }
    Ok(m.alpha * (-m.decay * t).exp())
}

/// One of the two supported plants, carrying its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum PlantModel {
    Bergman(BergmanParams),
    Tolic(TolicParams),
}

impl PlantModel {
    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::Bergman(_) => "bergman",
            PlantModel::Tolic(_) => "tolic",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PlantModel::Bergman(_) => 3,
            PlantModel::Tolic(_) => 6,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            PlantModel::Bergman(_) => &["g", "i", "x"],
            PlantModel::Tolic(_) => &["i_p", "i_i", "g_prime", "x1", "x2", "x3"],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            PlantModel::Bergman(p) => p.validate(),
            PlantModel::Tolic(p) => p.validate(),
        }
    }

    /// Index of the glucose deviation in the state vector.
    pub fn glucose_index(&self) -> usize {
        match self {
            PlantModel::Bergman(_) => 0,
            PlantModel::Tolic(_) => 2,
        }
    }

    /// Glucose reference about which deviations are measured, mg/dl.
    pub fn basal_glucose(&self) -> f64 {
        match self {
            PlantModel::Bergman(p) => p.g_b,
            PlantModel::Tolic(p) => p.g_op,
        }
    }

    /// Derivative in transformed inputs (`u*`, and `v` or `v*`).
    pub fn derivative(&self, x: &[f64], u_star: f64, v: f64) -> Result<DVector<f64>, ModelError> {
        match self {
            PlantModel::Bergman(p) => {
                let s = BergmanState::from_slice(x)?;
                Ok(bergman_derivative(&s, u_star, v, p)?.to_vector())
            }
            PlantModel::Tolic(p) => {
                let s = TolicState::from_slice(x)?;
                Ok(tolic_derivative(&s, u_star, v, p)?.to_vector())
            }
        }
    }

    /// Equilibrium for fixed transformed inputs.
    pub fn equilibrium(
        &self,
        u_fixed: f64,
        v_fixed: f64,
        guess: &DVector<f64>,
        opts: &EquilibriumOptions,
    ) -> Result<Equilibrium, ModelError> {
        if guess.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                found: guess.len(),
            });
        }
        find_equilibrium(|x| self.derivative(x.as_slice(), u_fixed, v_fixed), guess, opts)
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step for the central-difference Jacobian.
    pub fd_step: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub state: DVector<f64>,
    /// Infinity norm of the derivative at `state`.
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton search for `f(x) = 0` with a central-difference Jacobian.
pub fn find_equilibrium<F>(f: F, guess: &DVector<f64>, opts: &EquilibriumOptions) -> Result<Equilibrium, ModelError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, ModelError>,
{
    if !(opts.tol > 0.0) {
        return Err(ModelError::BadTolerance);
    }
    let n = guess.len();
    let mut x = guess.clone();
    let mut fx = f(&x)?;
    let mut residual = fx.amax();
    for it in 0..opts.max_iter {
        if residual <= opts.tol {
            return Ok(Equilibrium {
                state: x,
                residual,
                iterations: it,
            });
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (f(&xp)? - f(&xm)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let Some(step) = jac.lu().solve(&(-&fx)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-8 {
            let trial = &x + &step * lambda;
            if let Ok(ft) = f(&trial) {
                let r = ft.amax();
                if r.is_finite() && r < residual {
                    x = trial;
                    fx = ft;
                    residual = r;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if residual <= opts.tol {
        return Ok(Equilibrium {
            state: x,
            residual,
            iterations: opts.max_iter,
        });
    }
    Err(ModelError::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}
