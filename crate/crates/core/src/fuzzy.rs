//! Takagi-Sugeno fuzzy models built by the sector-nonlinearity construction,
//! membership evaluation, blended dynamics and the PDC control law.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{BergmanParams, ModelError, PlantModel, TolicParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("degenerate premise range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("sector bounds must satisfy {0}")]
    BadBounds(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model has no rules")]
    NoRules,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Shape of a scalar premise nonlinearity of one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PremiseShape {
    /// `slope · z`
    Linear { slope: f64 },
    /// `lin · z + quad · z²`
    Quadratic { lin: f64, quad: f64 },
}

impl PremiseShape {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            PremiseShape::Linear { slope } => slope * z,
            PremiseShape::Quadratic { lin, quad } => lin * z + quad * z * z,
        }
    }
}

/// Exact extremes of a premise nonlinearity over `[lo, hi]`.
///
/// A point range (`lo == hi`) collapses both bounds to the single value.
pub fn derive_sector_bounds(shape: PremiseShape, lo: f64, hi: f64) -> Result<(f64, f64), FuzzyError> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(FuzzyError::DegenerateRange { lo, hi });
    }
    let mut candidates = vec![shape.eval(lo), shape.eval(hi)];
    if let PremiseShape::Quadratic { lin, quad } = shape {
        if quad != 0.0 {
            let vertex = -lin / (2.0 * quad);
            if vertex > lo && vertex < hi {
                candidates.push(shape.eval(vertex));
            }
        }
    }
    let min = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let max = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

/// Local linear model `ẋ = A x + B u + E v`, `y = C x + D v`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsRule {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub e_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
}

impl TsRule {
    pub fn states(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn disturbances(&self) -> usize {
        self.e_mat.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c_mat.nrows()
    }

    pub fn check_dims(&self) -> Result<(), FuzzyError> {
        let n = self.states();
        let ok = self.a_mat.is_square()
            && self.b_mat.nrows() == n
            && self.e_mat.nrows() == n
            && self.c_mat.ncols() == n
            && self.d_mat.shape() == (self.outputs(), self.disturbances());
        if ok {
            Ok(())
        } else {
            Err(FuzzyError::Dimension(format!(
                "A {:?}, B {:?}, E {:?}, C {:?}, D {:?}",
                self.a_mat.shape(),
                self.b_mat.shape(),
                self.e_mat.shape(),
                self.c_mat.shape(),
                self.d_mat.shape()
            )))
        }
    }
}

/// Membership evaluator of a fuzzy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Membership {
    /// Single rule; `h = [1]`.
    Single,
    /// Premise `G + G_b` on the glucose state, interpolated over `[a1, a2]`.
    Bergman { g_b: f64, a1: f64, a2: f64 },
    /// Two premises, `g·G'` and `l·x3 + n·x3²`, combined as a tensor product.
    Tolic {
        g: f64,
        l: f64,
        n: f64,
        bounds: SectorBounds,
    },
}

/// Premise extremes of the four-rule Tolic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl SectorBounds {
    /// The rounded values printed alongside the original four-rule model.
    /// `m11`/`m12` correspond to `|G'| ≤ 60`, not the stated 30.
    pub const PRINTED: SectorBounds = SectorBounds {
        m11: -0.0057,
        m12: 0.0057,
        m21: -3.01,
        m22: 3.29,
    };

    pub fn derived(p: &TolicParams) -> Result<Self, FuzzyError> {
        let (m11, m12) = derive_sector_bounds(PremiseShape::Linear { slope: p.g }, -p.g_range, p.g_range)?;
        let (m21, m22) = derive_sector_bounds(
            PremiseShape::Quadratic { lin: p.l, quad: p.n },
            -p.x3_range,
            p.x3_range,
        )?;
        Ok(Self { m11, m12, m21, m22 })
    }

    fn validate(&self) -> Result<(), FuzzyError> {
        if !(self.m11 < self.m12) {
            return Err(FuzzyError::BadBounds("m11 < m12"));
        }
        if !(self.m21 < self.m22) {
            return Err(FuzzyError::BadBounds("m21 < m22"));
        }
        Ok(())
    }
}

/// Weight of the lower vertex of a two-level sector, with the premise clamped.
fn lower_weight(z: f64, lo: f64, hi: f64) -> f64 {
    let z = z.clamp(lo, hi);
    (hi - z) / (hi - lo)
}

impl Membership {
    pub fn rules(&self) -> usize {
        match self {
            Membership::Single => 1,
            Membership::Bergman { .. } => 2,
            Membership::Tolic { .. } => 4,
        }
    }

    /// Evaluates `h(x)`; premise values outside their sectors are clamped.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Membership::Single => vec![1.0],
            Membership::Bergman { g_b, a1, a2 } => {
                let h1 = lower_weight(x[0] + g_b, a1, a2);
                vec![h1, 1.0 - h1]
            }
            Membership::Tolic { g, l, n, bounds } => {
                let z1 = g * x[2];
                let x3 = x[5];
                let z2 = l * x3 + n * x3 * x3;
                let w1 = lower_weight(z1, bounds.m11, bounds.m12);
                let w2 = lower_weight(z2, bounds.m21, bounds.m22);
                vec![w1 * w2, w1 * (1.0 - w2), (1.0 - w1) * w2, (1.0 - w1) * (1.0 - w2)]
            }
        }
    }
}

/// Convex blend of linear rules sharing state, input, disturbance and output spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct TsModel {
    pub rules: Vec<TsRule>,
    pub membership: Membership,
    /// Premise intervals `(lower, upper)` over which the blend is exact.
    pub premise_bounds: Vec<(f64, f64)>,
}

impl TsModel {
    pub fn new(rules: Vec<TsRule>, membership: Membership, premise_bounds: Vec<(f64, f64)>) -> Result<Self, FuzzyError> {
        let first = rules.first().ok_or(FuzzyError::NoRules)?;
        for r in &rules {
            r.check_dims()?;
            if r.a_mat.shape() != first.a_mat.shape()
                || r.b_mat.shape() != first.b_mat.shape()
                || r.e_mat.shape() != first.e_mat.shape()
                || r.c_mat.shape() != first.c_mat.shape()
            {
                return Err(FuzzyError::Dimension("rules disagree on dimensions".into()));
            }
        }
        if membership.rules() != rules.len() {
            return Err(FuzzyError::Dimension(format!(
                "membership yields {} weights for {} rules",
                membership.rules(),
                rules.len()
            )));
        }
        Ok(Self {
            rules,
            membership,
            premise_bounds,
        })
    }

    pub fn states(&self) -> usize {
        self.rules[0].states()
    }

    pub fn inputs(&self) -> usize {
        self.rules[0].inputs()
    }

    pub fn disturbances(&self) -> usize {
        self.rules[0].disturbances()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn memberships(&self, x: &[f64]) -> Result<Vec<f64>, FuzzyError> {
        if x.len() != self.states() {
            return Err(FuzzyError::Dimension(format!(
                "state has {} components, model has {}",
                x.len(),
                self.states()
            )));
        }
        Ok(self.membership.eval(x))
    }

    /// `Σ h_i (A_i x + B_i u + E_i v)`.
    pub fn blend_dynamics(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<DVector<f64>, FuzzyError> {
        if u.len() != self.inputs() || v.len() != self.disturbances() {
            return Err(FuzzyError::Dimension(format!(
                "input {} / disturbance {} vs model {} / {}",
                u.len(),
                v.len(),
                self.inputs(),
                self.disturbances()
            )));
        }
        let h = self.memberships(x)?;
        let xv = DVector::from_column_slice(x);
        let uv = DVector::from_column_slice(u);
        let vv = DVector::from_column_slice(v);
        let mut dx = DVector::zeros(self.states());
        for (hi, r) in h.iter().zip(&self.rules) {
            if *hi != 0.0 {
                dx += (&r.a_mat * &xv + &r.b_mat * &uv + &r.e_mat * &vv) * *hi;
            }
        }
        Ok(dx)
    }

    /// `Σ h_i (C_i x + D_i v)`.
    pub fn blend_output(&self, x: &[f64], v: &[f64]) -> Result<DVector<f64>, FuzzyError> {
        let h = self.memberships(x)?;
        let xv = DVector::from_column_slice(x);
        let vv = DVector::from_column_slice(v);
        let mut y = DVector::zeros(self.rules[0].outputs());
        for (hi, r) in h.iter().zip(&self.rules) {
            y += (&r.c_mat * &xv + &r.d_mat * &vv) * *hi;
        }
        Ok(y)
    }
}

fn unit_column(n: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, 1);
    m[(k, 0)] = 1.0;
    m
}

fn unit_row(n: usize, k: usize) -> DMatrix<f64> {
    unit_column(n, k).transpose()
}

/// Two-rule model of the minimal model over `a1 ≤ G + G_b ≤ a2`.
pub fn bergman_ts_model(p: &BergmanParams) -> Result<TsModel, FuzzyError> {
    p.validate()?;
    let rule = |a: f64| TsRule {
        a_mat: DMatrix::from_row_slice(3, 3, &[-p.p1, 0.0, -a, 0.0, -p.n, 0.0, 0.0, p.p3, -p.p2]),
        b_mat: unit_column(3, 1),
        e_mat: unit_column(3, 0),
        c_mat: unit_row(3, 0),
        d_mat: DMatrix::zeros(1, 1),
    };
    TsModel::new(
        vec![rule(p.a1), rule(p.a2)],
        Membership::Bergman {
            g_b: p.g_b,
            a1: p.a1,
            a2: p.a2,
        },
        vec![(p.a1, p.a2)],
    )
}

/// TS model of either plant; `bounds_override` only affects the Tolic model.
pub fn ts_model_for(plant: &PlantModel, bounds_override: Option<SectorBounds>) -> Result<TsModel, FuzzyError> {
    match plant {
        PlantModel::Bergman(p) => bergman_ts_model(p),
        PlantModel::Tolic(p) => tolic_ts_model(p, bounds_override),
    }
}

/// Four-rule model of the shifted Tolic model.
///
/// Rule order: (m11, m21), (m11, m22), (m12, m21), (m12, m22). Bounds default to
/// the exact extremes over `|G'| ≤ g_range`, `|x3| ≤ x3_range`.
pub fn tolic_ts_model(p: &TolicParams, bounds_override: Option<SectorBounds>) -> Result<TsModel, FuzzyError> {
    p.validate()?;
    let bounds = match bounds_override {
        Some(b) => {
            b.validate()?;
            b
        }
        None => SectorBounds::derived(p)?,
    };
    let rule = |m1: f64, m2: f64| {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(6, 6, &[
            p.a, p.b,                 p.c, 0.0,  0.0,  0.0,
            p.e, p.f,                 0.0, 0.0,  0.0,  0.0,
            0.0, m1 + p.g * p.g_op,   p.h, 0.0,  0.0,  p.k + m2,
            p.r, 0.0,                 0.0, -p.r, 0.0,  0.0,
            0.0, 0.0,                 0.0, p.r,  -p.r, 0.0,
            0.0, 0.0,                 0.0, 0.0,  p.r,  -p.r,
        ]);
        TsRule {
            a_mat: a,
            b_mat: unit_column(6, 0),
            e_mat: unit_column(6, 2),
            c_mat: unit_row(6, 2),
            d_mat: DMatrix::zeros(1, 1),
        }
    };
    TsModel::new(
        vec![
            rule(bounds.m11, bounds.m21),
            rule(bounds.m11, bounds.m22),
            rule(bounds.m12, bounds.m21),
            rule(bounds.m12, bounds.m22),
        ],
        Membership::Tolic {
            g: p.g,
            l: p.l,
            n: p.n,
            bounds,
        },
        vec![(bounds.m11, bounds.m12), (bounds.m21, bounds.m22)],
    )
}

/// Parallel distributed compensation: one state-feedback gain per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PdcController {
    pub gains: Vec<DMatrix<f64>>,
}

impl PdcController {
    pub fn new(gains: Vec<DMatrix<f64>>) -> Result<Self, FuzzyError> {
        let first = gains.first().ok_or(FuzzyError::NoRules)?;
        if gains.iter().any(|k| k.shape() != first.shape()) {
            return Err(FuzzyError::Dimension("gains disagree on shape".into()));
        }
        if gains.iter().flat_map(|k| k.iter()).any(|v| !v.is_finite()) {
            return Err(FuzzyError::Dimension("gain has non-finite entries".into()));
        }
        Ok(Self { gains })
    }

    /// Zero gains for a model (open loop).
    pub fn zeros(model: &TsModel) -> Self {
        Self {
            gains: vec![DMatrix::zeros(model.inputs(), model.states()); model.len()],
        }
    }

    pub fn check_model(&self, model: &TsModel) -> Result<(), FuzzyError> {
        if self.gains.len() != model.len() || self.gains[0].shape() != (model.inputs(), model.states()) {
            return Err(FuzzyError::Dimension(format!(
                "{} gains of shape {:?} for {} rules with {} inputs and {} states",
                self.gains.len(),
                self.gains[0].shape(),
                model.len(),
                model.inputs(),
                model.states()
            )));
        }
        Ok(())
    }
}

/// `u = Σ h_i K_i x`.
pub fn pdc_control(ctrl: &PdcController, h: &[f64], x: &[f64]) -> Result<DVector<f64>, FuzzyError> {
    if h.len() != ctrl.gains.len() {
        return Err(FuzzyError::Dimension(format!(
            "{} weights for {} gains",
            h.len(),
            ctrl.gains.len()
        )));
    }
    let (m, n) = ctrl.gains[0].shape();
    if x.len() != n {
        return Err(FuzzyError::Dimension(format!("state has {} components, gains expect {n}", x.len())));
    }
    let xv = DVector::from_column_slice(x);
    let mut u = DVector::zeros(m);
    for (hi, k) in h.iter().zip(&ctrl.gains) {
        if *hi != 0.0 {
            u += (k * &xv) * *hi;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_sector_includes_vertex_only_inside() {
        let (lo, hi) = derive_sector_bounds(PremiseShape::Quadratic { lin: -0.315, quad: 1.48e-3 }, -10.0, 10.0).unwrap();
        assert!((lo - (-3.002)).abs() < 1e-12);
        assert!((hi - 3.298).abs() < 1e-12);
        // vertex of z^2 - 2z at z = 1
        let (lo, hi) = derive_sector_bounds(PremiseShape::Quadratic { lin: -2.0, quad: 1.0 }, -1.0, 2.0).unwrap();
        assert_eq!((lo, hi), (-1.0, 3.0));
    }

    #[test]
    fn linear_sector_endpoints() {
        let (lo, hi) = derive_sector_bounds(PremiseShape::Linear { slope: -9.44e-5 }, -30.0, 30.0).unwrap();
        assert!((lo + 2.832e-3).abs() < 1e-15);
        assert!((hi - 2.832e-3).abs() < 1e-15);
    }

    #[test]
    fn point_range_and_bad_range() {
        let s = PremiseShape::Quadratic { lin: 1.0, quad: 2.0 };
        assert_eq!(derive_sector_bounds(s, 3.0, 3.0).unwrap(), (21.0, 21.0));
        assert!(derive_sector_bounds(s, 3.0, 2.0).is_err());
        assert!(derive_sector_bounds(s, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn bergman_memberships() {
        let p = BergmanParams::default();
        let m = bergman_ts_model(&p).unwrap();
        let at = |conc: f64| m.memberships(&[conc - p.g_b, 0.0, 0.0]).unwrap();
        assert_eq!(at(60.0), vec![1.0, 0.0]);
        assert_eq!(at(120.0), vec![0.0, 1.0]);
        assert_eq!(at(90.0), vec![0.5, 0.5]);
        assert_eq!(at(75.0), vec![0.75, 0.25]);
        // clamped outside the validity box
        assert_eq!(at(30.0), vec![1.0, 0.0]);
        assert_eq!(at(400.0), vec![0.0, 1.0]);
    }

    #[test]
    fn bergman_rules_differ_only_in_coupling_entry() {
        let p = BergmanParams::default();
        let m = bergman_ts_model(&p).unwrap();
        let diff = &m.rules[0].a_mat - &m.rules[1].a_mat;
        assert_eq!(diff[(0, 2)], p.a2 - p.a1);
        assert_eq!(diff.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(m.rules[0].a_mat[(1, 1)], -p.n);
        assert_eq!(m.rules[0].b_mat, m.rules[1].b_mat);
    }

    #[test]
    fn tolic_corner_weights() {
        let p = TolicParams::default();
        let m = tolic_ts_model(&p, None).unwrap();
        let b = match m.membership {
            Membership::Tolic { bounds, .. } => bounds,
            _ => unreachable!(),
        };
        // g·G' = m12 needs G' = m12/g; x3 = -10 gives l x3 + n x3² = m22, x3 = 10 gives m21.
        let g_hi = b.m12 / p.g;
        let h = m.memberships(&[0.0, 0.0, g_hi, 0.0, 0.0, 10.0]).unwrap();
        assert!((h[2] - 1.0).abs() < 1e-12 && h[0].abs() < 1e-12 && h[1].abs() < 1e-12);
        let h = m.memberships(&[0.0, 0.0, -g_hi, 0.0, 0.0, -10.0]).unwrap();
        assert!((h[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tolic_center_weights_are_products() {
        // G' = 0 puts premise 1 at its midpoint; x3 solving l x3 + n x3² = mid puts premise 2 there too.
        let p = TolicParams::default();
        let m = tolic_ts_model(&p, None).unwrap();
        let b = SectorBounds::derived(&p).unwrap();
        let mid = 0.5 * (b.m21 + b.m22);
        let x3 = (-p.l - (p.l * p.l + 4.0 * p.n * mid).sqrt()) / (2.0 * p.n);
        assert!((p.l * x3 + p.n * x3 * x3 - mid).abs() < 1e-12);
        let h = m.memberships(&[0.0, 0.0, 0.0, 0.0, 0.0, x3]).unwrap();
        for hi in h {
            assert!((hi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn tolic_override_validation() {
        let p = TolicParams::default();
        assert!(tolic_ts_model(&p, Some(SectorBounds::PRINTED)).is_ok());
        let bad = SectorBounds { m11: 1.0, ..SectorBounds::PRINTED };
        assert!(matches!(tolic_ts_model(&p, Some(bad)), Err(FuzzyError::BadBounds(_))));
    }

    #[test]
    fn single_rule_blend_is_linear_model() {
        let rule = TsRule {
            a_mat: DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]),
            b_mat: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            e_mat: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            c_mat: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d_mat: DMatrix::zeros(1, 1),
        };
        let m = TsModel::new(vec![rule], Membership::Single, vec![]).unwrap();
        let dx = m.blend_dynamics(&[1.0, 1.0], &[2.0], &[3.0]).unwrap();
        assert_eq!(dx.as_slice(), &[4.0, -1.0]);
        assert!(m.blend_dynamics(&[1.0, 1.0], &[2.0, 1.0], &[3.0]).is_err());
        assert!(m.blend_dynamics(&[1.0], &[2.0], &[3.0]).is_err());
    }

    #[test]
    fn zero_state_disturbance_picks_e_column() {
        let m = bergman_ts_model(&BergmanParams::default()).unwrap();
        let dx = m.blend_dynamics(&[0.0, 0.0, 0.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(dx.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn pdc_examples() {
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let same = PdcController::new(vec![k.clone(), k.clone()]).unwrap();
        let u = pdc_control(&same, &[0.3, 0.7], &[1.0, 2.0]).unwrap();
        assert!((u[0] - 3.0).abs() < 1e-15);

        let k1 = DMatrix::from_row_slice(1, 1, &[2.0]);
        let k2 = DMatrix::from_row_slice(1, 1, &[4.0]);
        let c = PdcController::new(vec![k1, k2]).unwrap();
        assert_eq!(pdc_control(&c, &[1.0, 0.0], &[1.0]).unwrap()[0], 2.0);
        assert_eq!(pdc_control(&c, &[0.5, 0.5], &[1.0]).unwrap()[0], 3.0);
        assert!(pdc_control(&c, &[1.0], &[1.0]).is_err());
        assert!(PdcController::new(vec![]).is_err());
    }
}
