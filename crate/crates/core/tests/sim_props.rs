use glycontrol::fuzzy::{bergman_ts_model, PdcController};
use glycontrol::lmi::{synthesize, SynthesisOptions};
use glycontrol::models::{BergmanParams, PlantModel};
use glycontrol::sim::{metrics, rk4_step, simulate_closed_loop, PumpMap, SimConfig, SimError};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn decay_error(steps: usize) -> f64 {
    let dt = 1.0 / steps as f64;
    let mut x = DVector::from_element(1, 1.0);
    for k in 0..steps {
        x = rk4_step(|_, x: &DVector<f64>| Ok::<_, SimError>(-x), &x, k as f64 * dt, dt).unwrap();
    }
    (x[0] - (-1.0f64).exp()).abs()
}

/// Observed order of accuracy from successive halvings on ẋ = −x over [0, 1].
fn rk4_observed_order() -> f64 {
    let e1 = decay_error(10);
    let e2 = decay_error(20);
    (e1 / e2).log2()
}

#[test]
fn rk4_converges_at_fourth_order() {
    let order = rk4_observed_order();
    assert!((order - 4.0).abs() <= 0.2, "{order}");
    let ratio = decay_error(10) / decay_error(20);
    assert!((ratio - 16.0).abs() < 1.5, "{ratio}");
}

fn sat6_controller() -> PdcController {
    let ts = bergman_ts_model(&BergmanParams::default()).unwrap();
    let r = synthesize(&ts, &SynthesisOptions { mu: 0.095, ..Default::default() }).unwrap();
    PdcController::new(r.gains()).unwrap()
}

#[test]
fn identical_configs_give_identical_traces() {
    let p = BergmanParams::default();
    let plant = PlantModel::Bergman(p);
    let ts = bergman_ts_model(&p).unwrap();
    let ctrl = sat6_controller();
    let cfg = SimConfig { alpha: 2.0, t_end: 200.0, ..Default::default() };
    let a = simulate_closed_loop(&plant, &ts, &ctrl, &cfg, None).unwrap();
    let b = simulate_closed_loop(&plant, &ts, &ctrl, &cfg, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn peak_grows_with_meal_size() {
    let p = BergmanParams::default();
    let plant = PlantModel::Bergman(p);
    let ts = bergman_ts_model(&p).unwrap();
    let ctrl = sat6_controller();
    let peaks: Vec<f64> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&alpha| {
            let cfg = SimConfig { alpha, ..Default::default() };
            metrics(&simulate_closed_loop(&plant, &ts, &ctrl, &cfg, None).unwrap(), &plant).peak_glucose
        })
        .collect();
    assert!(peaks[0] < peaks[1] && peaks[1] < peaks[2], "{peaks:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pump_rate_respects_bounds(
        k in proptest::collection::vec(-5.0f64..5.0, 6),
        alpha in 0.0f64..4.0,
        u_max in 0.0f64..30.0,
        absolute in proptest::bool::ANY,
    ) {
        let p = BergmanParams::default();
        let plant = PlantModel::Bergman(p);
        let ts = bergman_ts_model(&p).unwrap();
        let gains = vec![DMatrix::from_row_slice(1, 3, &k[..3]), DMatrix::from_row_slice(1, 3, &k[3..])];
        let ctrl = PdcController::new(gains).unwrap();
        let cfg = SimConfig {
            alpha,
            u_max,
            t_end: 60.0,
            pump_map: Some(if absolute { PumpMap::Absolute } else { PumpMap::Deviation }),
            ..Default::default()
        };
        let trace = simulate_closed_loop(&plant, &ts, &ctrl, &cfg, None).unwrap();
        for s in &trace.samples {
            prop_assert!((0.0..=u_max).contains(&s.u_pump), "{}", s.u_pump);
        }
    }
}
