use glycontrol::fuzzy::{
    bergman_ts_model, derive_sector_bounds, tolic_ts_model, PremiseShape, SectorBounds, TsModel,
};
use glycontrol::models::{BergmanParams, PlantModel, TolicParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Random state inside the validity box of the plant's fuzzy model.
fn in_range_state(plant: &PlantModel, rng: &mut impl Rng) -> Vec<f64> {
    match plant {
        PlantModel::Bergman(p) => vec![
            rng.random_range(p.a1 - p.g_b..=p.a2 - p.g_b),
            rng.random_range(-15.0..15.0),
            rng.random_range(-0.05..0.05),
        ],
        PlantModel::Tolic(p) => vec![
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-p.g_range..=p.g_range),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-p.x3_range..=p.x3_range),
        ],
    }
}

fn reconstruction_error(plant: &PlantModel, ts: &TsModel, seed: u64) -> f64 {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = in_range_state(plant, &mut rng);
        let u = rng.random_range(-5.0..5.0);
        let v = rng.random_range(-5.0..5.0);
        let exact = plant.derivative(&x, u, v).unwrap();
        let blended = ts.blend_dynamics(&x, &[u], &[v]).unwrap();
        let err = (&blended - &exact).amax() / exact.amax().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn bergman_blend_is_exact() {
    let p = BergmanParams::default();
    let err = reconstruction_error(&PlantModel::Bergman(p), &bergman_ts_model(&p).unwrap(), 1);
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn tolic_blend_is_exact() {
    let p = TolicParams::default();
    let err = reconstruction_error(&PlantModel::Tolic(p), &tolic_ts_model(&p, None).unwrap(), 2);
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn printed_tolic_bounds_are_exact_inside_their_sectors() {
    // The printed x3 sector is narrower than the true range of l·x3 + n·x3², so
    // the blend is exact only where the premise stays inside it.
    let p = TolicParams::default();
    let b = SectorBounds::PRINTED;
    let ts = tolic_ts_model(&p, Some(b)).unwrap();
    let plant = PlantModel::Tolic(p);
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let (mut inside, mut outside_err) = (0, 0.0f64);
    for _ in 0..2000 {
        let x = in_range_state(&plant, &mut rng);
        let z2 = p.l * x[5] + p.n * x[5] * x[5];
        let exact = plant.derivative(&x, 0.5, 1.0).unwrap();
        let err = (&ts.blend_dynamics(&x, &[0.5], &[1.0]).unwrap() - &exact).amax() / exact.amax().max(1.0);
        if (b.m21..=b.m22).contains(&z2) {
            inside += 1;
            assert!(err < 1e-10, "{err:e} at {x:?}");
        } else {
            outside_err = outside_err.max(err);
        }
    }
    assert!(inside > 1500);
    assert!(outside_err > 1e-8);
}

#[test]
fn corners_select_one_rule() {
    let p = TolicParams::default();
    let ts = tolic_ts_model(&p, None).unwrap();
    let b = SectorBounds::derived(&p).unwrap();
    // x3 values attaining m21 and m22 over [-10, 10]
    let z2 = |x3: f64| p.l * x3 + p.n * x3 * x3;
    let mut cands = vec![-p.x3_range, p.x3_range];
    let vertex = -p.l / (2.0 * p.n);
    if vertex.abs() <= p.x3_range {
        cands.push(vertex);
    }
    let x3_lo = cands.iter().cloned().min_by(|a, b| z2(*a).total_cmp(&z2(*b))).unwrap();
    let x3_hi = cands.iter().cloned().max_by(|a, b| z2(*a).total_cmp(&z2(*b))).unwrap();
    assert!((z2(x3_lo) - b.m21).abs() < 1e-12 && (z2(x3_hi) - b.m22).abs() < 1e-12);
    let (g_lo, g_hi) = (b.m11 / p.g, b.m12 / p.g);
    let corners = [(g_lo, x3_lo, 0), (g_lo, x3_hi, 1), (g_hi, x3_lo, 2), (g_hi, x3_hi, 3)];
    for (g, x3, rule) in corners {
        let h = ts.memberships(&[0.0, 0.0, g, 0.0, 0.0, x3]).unwrap();
        for (i, hi) in h.iter().enumerate() {
            let want = if i == rule { 1.0 } else { 0.0 };
            assert!((hi - want).abs() < 1e-12, "corner {rule}: {h:?}");
        }
    }
    let bm = bergman_ts_model(&BergmanParams::default()).unwrap();
    assert_eq!(bm.memberships(&[-21.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    assert_eq!(bm.memberships(&[39.0, 0.0, 0.0]).unwrap(), vec![0.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn memberships_partition_unity(
        g in -200.0f64..200.0,
        gp in -80.0f64..80.0,
        x3 in -30.0f64..30.0,
    ) {
        let bm = bergman_ts_model(&BergmanParams::default()).unwrap();
        let tm = tolic_ts_model(&TolicParams::default(), None).unwrap();
        for h in [bm.memberships(&[g, 0.0, 0.0]).unwrap(), tm.memberships(&[0.0, 0.0, gp, 0.0, 0.0, x3]).unwrap()] {
            prop_assert!(h.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_bounds_bracket_the_premise(
        slope in -5.0f64..5.0,
        lin in -5.0f64..5.0,
        quad in -5.0f64..5.0,
        lo in -20.0f64..0.0,
        width in 0.0f64..40.0,
        fracs in proptest::collection::vec(0.0f64..=1.0, 64),
    ) {
        let hi = lo + width;
        for shape in [PremiseShape::Linear { slope }, PremiseShape::Quadratic { lin, quad }] {
            let (m1, m2) = derive_sector_bounds(shape, lo, hi).unwrap();
            prop_assert!(m1 <= m2);
            for f in &fracs {
                let z = shape.eval(lo + f * width);
                prop_assert!(z >= m1 - 1e-12 * m1.abs().max(1.0) && z <= m2 + 1e-12 * m2.abs().max(1.0));
            }
            // Bounds are tight: each is attained at an endpoint or the vertex.
            let mut cands = vec![shape.eval(lo), shape.eval(hi)];
            if let PremiseShape::Quadratic { lin, quad } = shape {
                if quad != 0.0 {
                    let v = -lin / (2.0 * quad);
                    if (lo..=hi).contains(&v) {
                        cands.push(shape.eval(v));
                    }
                }
            }
            let cmin = cands.iter().cloned().fold(f64::INFINITY, f64::min);
            let cmax = cands.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((cmin - m1).abs() <= 1e-12 * m1.abs().max(1.0));
            prop_assert!((cmax - m2).abs() <= 1e-12 * m2.abs().max(1.0));
        }
    }
}

#[test]
fn sector_bounds_hold_on_dense_sample() {
    let p = TolicParams::default();
    let b = SectorBounds::derived(&p).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(4);
    for _ in 0..10_000 {
        let x3: f64 = rng.random_range(-p.x3_range..=p.x3_range);
        let gp: f64 = rng.random_range(-p.g_range..=p.g_range);
        let z2 = p.l * x3 + p.n * x3 * x3;
        assert!(b.m21 <= z2 && z2 <= b.m22);
        assert!(b.m11 <= p.g * gp && p.g * gp <= b.m12);
    }
}
