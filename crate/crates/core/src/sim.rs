//! Fixed-step RK4 closed-loop simulation of the nonlinear plants under a PDC
//! controller with a saturated insulin pump.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{pdc_control, FuzzyError, PdcController, TsModel};
use crate::models::{meal_disturbance, EquilibriumOptions, MealDisturbance, ModelError, PlantModel};
use crate::verify::{self, vector_lyapunov};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

/// Classical fourth-order Runge-Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step<F, E>(mut f: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>, SimError>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
    SimError: From<E>,
{
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig("dt must be positive"));
    }
    let half = 0.5 * dt;
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + &k1 * half))?;
    let k3 = f(t + half, &(x + &k2 * half))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(SimError::NonFinite { t: t + dt })
    }
}

/// How the controller's transformed input maps to a physical pump rate and back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMap {
    /// Bergman: `u_pump = V1·(u_cmd + n·I_b)`. Tolic: `u_pump = b_u·(c·G_op + d − u_cmd)`.
    Absolute,
    /// Bergman: `u_pump = V1·u_cmd`, the infusion on top of a separately supplied
    /// basal rate. Tolic: identical to [`PumpMap::Absolute`].
    Deviation,
}

impl PumpMap {
    pub fn default_for(plant: &PlantModel) -> Self {
        match plant {
            PlantModel::Bergman(_) => PumpMap::Deviation,
            PlantModel::Tolic(_) => PumpMap::Absolute,
        }
    }

    /// Unclamped pump rate for a transformed command.
    fn rate(self, plant: &PlantModel, u_cmd: f64) -> f64 {
        match (plant, self) {
            (PlantModel::Bergman(p), PumpMap::Absolute) => p.v1 * (u_cmd + p.n * p.i_b),
            (PlantModel::Bergman(p), PumpMap::Deviation) => p.v1 * u_cmd,
            (PlantModel::Tolic(p), _) => p.b_u * (p.c * p.g_op + p.d - u_cmd),
        }
    }

    /// Transformed input delivered by a pump rate.
    fn applied(self, plant: &PlantModel, u_pump: f64) -> f64 {
        match (plant, self) {
            (PlantModel::Bergman(p), PumpMap::Absolute) => u_pump / p.v1 - p.n * p.i_b,
            (PlantModel::Bergman(p), PumpMap::Deviation) => u_pump / p.v1,
            (PlantModel::Tolic(p), _) => p.transformed_input(u_pump),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step, min.
    pub dt: f64,
    /// Horizon, min.
    pub t_end: f64,
    /// Meal amplitude.
    pub alpha: f64,
    /// Meal decay rate, 1/min.
    pub meal_decay: f64,
    /// Upper pump bound.
    pub u_max: f64,
    /// Initial deviation state; `None` is the origin.
    pub x0: Option<Vec<f64>>,
    /// Integration steps per recorded sample.
    pub record_stride: usize,
    /// `None` picks [`PumpMap::default_for`] the plant.
    pub pump_map: Option<PumpMap>,
    /// Record states relative to the plant's equilibrium under zero command and
    /// zero meal instead of absolute deviation coordinates.
    pub subtract_baseline: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            t_end: 500.0,
            alpha: 1.0,
            meal_decay: 0.05,
            u_max: 6.0,
            x0: None,
            record_stride: 1,
            pump_map: None,
            subtract_baseline: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig("dt must be positive"));
        }
        if !(self.t_end > self.dt && self.t_end.is_finite()) {
            return Err(SimError::InvalidConfig("t_end must exceed dt"));
        }
        if !(self.u_max >= 0.0) {
            return Err(SimError::InvalidConfig("u_max must be nonnegative"));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidConfig("record_stride must be at least 1"));
        }
        MealDisturbance::new(self.alpha, self.meal_decay)?;
        Ok(())
    }

    pub fn meal(&self) -> MealDisturbance {
        MealDisturbance {
            alpha: self.alpha,
            decay: self.meal_decay,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub u_cmd: f64,
    pub u_pump: f64,
    pub u_applied: f64,
    pub v: f64,
    pub y: f64,
    pub v_lyap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub samples: Vec<SimSample>,
    /// Set when integration stopped early; the samples up to that point are kept.
    pub failure: Option<String>,
    /// Equilibrium subtracted from the recorded states, if any.
    pub baseline: Option<Vec<f64>>,
}

impl SimTrace {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn glucose(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }
}

/// Disturbance entering the plant: the meal for Bergman, `h·G_op + p + meal` for Tolic.
pub fn plant_disturbance(plant: &PlantModel, meal: &MealDisturbance, t: f64) -> Result<f64, ModelError> {
    let d = meal_disturbance(t, meal)?;
    Ok(match plant {
        PlantModel::Bergman(_) => d,
        PlantModel::Tolic(p) => p.transformed_disturbance(d),
    })
}

/// Integrates the nonlinear plant in closed loop with the PDC controller.
///
/// The control input is held constant over each step; the disturbance is
/// evaluated at every RK4 stage. When `lyapunov` holds `P_j = X_j⁻¹`, the
/// vector Lyapunov function is recorded.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    ts: &TsModel,
    ctrl: &PdcController,
    cfg: &SimConfig,
    lyapunov: Option<&[DMatrix<f64>]>,
) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    plant.validate()?;
    ctrl.check_model(ts)?;
    let n = plant.dim();
    if ts.states() != n || ts.inputs() != 1 || ts.disturbances() != 1 {
        return Err(SimError::Dimension(format!(
            "fuzzy model with {} states, {} inputs, {} disturbances for a {n}-state plant",
            ts.states(),
            ts.inputs(),
            ts.disturbances()
        )));
    }
    if let Some(p) = lyapunov {
        if p.len() != ts.len() || p.iter().any(|m| m.shape() != (n, n)) {
            return Err(SimError::Dimension("Lyapunov matrices do not match the model".into()));
        }
    }
    let mut x = match &cfg.x0 {
        None => DVector::zeros(n),
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => return Err(SimError::Dimension(format!("x0 has {} entries, plant has {n}", v.len()))),
    };
    let map = cfg.pump_map.unwrap_or_else(|| PumpMap::default_for(plant));
    let meal = cfg.meal();
    let gi = plant.glucose_index();

    let baseline = if cfg.subtract_baseline {
        let u0 = map.applied(plant, map.rate(plant, 0.0).clamp(0.0, cfg.u_max));
        let v0 = plant_disturbance(plant, &MealDisturbance { alpha: 0.0, ..meal }, 0.0)?;
        let eq = plant.equilibrium(u0, v0, &DVector::zeros(n), &EquilibriumOptions::default())?;
        Some(eq.state)
    } else {
        None
    };

    let steps = cfg.steps();
    let mut samples = Vec::with_capacity(steps / cfg.record_stride + 1);
    let mut failure = None;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let xs = x.as_slice();
        let h = ts.memberships(xs)?;
        let u_cmd = pdc_control(ctrl, &h, xs)?[0];
        let u_pump = map.rate(plant, u_cmd).clamp(0.0, cfg.u_max);
        let u_applied = map.applied(plant, u_pump);
        if k % cfg.record_stride == 0 {
            let rec = match &baseline {
                Some(b) => (&x - b).as_slice().to_vec(),
                None => xs.to_vec(),
            };
            let v_lyap = match lyapunov {
                Some(p) => Some(vector_lyapunov(ts, p, xs).map_err(|e| SimError::Dimension(e.to_string()))?),
                None => None,
            };
            samples.push(SimSample {
                t,
                y: rec[gi],
                x: rec,
                h,
                u_cmd,
                u_pump,
                u_applied,
                v: plant_disturbance(plant, &meal, t)?,
                v_lyap,
            });
        }
        if k == steps {
            break;
        }
        let step = rk4_step(
            |s, y: &DVector<f64>| plant.derivative(y.as_slice(), u_applied, plant_disturbance(plant, &meal, s)?),
            &x,
            t,
            cfg.dt,
        );
        match step {
            Ok(next) => x = next,
            Err(SimError::NonFinite { t }) => {
                failure = Some(format!("non-finite state at t = {t}"));
                break;
            }
            Err(SimError::Model(ModelError::NonFinite(_))) => {
                failure = Some(format!("non-finite state during the step from t = {t}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SimTrace {
        samples,
        failure,
        baseline: baseline.map(|b| b.as_slice().to_vec()),
    })
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Highest absolute glucose concentration, mg/dl.
    pub peak_glucose: f64,
    /// Lowest absolute glucose concentration, mg/dl.
    pub min_glucose: f64,
    /// Time after which glucose stays within ±5 mg/dl of its reference; `None`
    /// if it is outside the band at the last sample.
    pub settling_time: Option<f64>,
    /// Glucose deviation at the last sample.
    pub final_deviation: f64,
    pub max_u_pump: f64,
    /// Any concentration below 60 mg/dl.
    pub hypoglycemia: bool,
    /// `‖y‖₂ / ‖v‖₂` when the disturbance has energy.
    pub hinf_ratio: Option<f64>,
    pub failed: bool,
}

pub const SETTLING_BAND: f64 = 5.0;
pub const HYPOGLYCEMIA_LIMIT: f64 = 60.0;

pub fn metrics(trace: &SimTrace, plant: &PlantModel) -> Metrics {
    let basal = plant.basal_glucose();
    let y = trace.glucose();
    let peak = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + basal;
    let min = y.iter().copied().fold(f64::INFINITY, f64::min) + basal;
    let settling_time = match y.iter().rposition(|g| g.abs() > SETTLING_BAND) {
        None => trace.samples.first().map(|s| s.t),
        Some(k) if k + 1 < trace.samples.len() => Some(trace.samples[k + 1].t),
        Some(_) => None,
    };
    Metrics {
        peak_glucose: if y.is_empty() { basal } else { peak },
        min_glucose: if y.is_empty() { basal } else { min },
        settling_time,
        final_deviation: y.last().copied().unwrap_or(0.0),
        max_u_pump: trace.samples.iter().map(|s| s.u_pump).fold(0.0, f64::max),
        hypoglycemia: min < HYPOGLYCEMIA_LIMIT,
        hinf_ratio: verify::empirical_hinf(trace).ok(),
        failed: trace.failed(),
    }
}

/// One run of a scenario sweep.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub label: String,
    pub controller: &'a PdcController,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub alpha: f64,
    pub u_max: f64,
    pub metrics: Metrics,
}

/// Runs every scenario in parallel; rows come back in input order.
pub fn sweep(plant: &PlantModel, ts: &TsModel, scenarios: &[Scenario<'_>]) -> Result<Vec<SweepRow>, SimError> {
    use rayon::prelude::*;
    scenarios
        .par_iter()
        .map(|sc| {
            let trace = simulate_closed_loop(plant, ts, sc.controller, &sc.config, None)?;
            Ok(SweepRow {
                label: sc.label.clone(),
                alpha: sc.config.alpha,
                u_max: sc.config.u_max,
                metrics: metrics(&trace, plant),
            })
        })
        .collect()
}
