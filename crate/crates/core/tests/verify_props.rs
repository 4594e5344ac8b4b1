use glycontrol::fuzzy::{TsModel, TsRule, Membership};
use glycontrol::sim::{rk4_step, SimError};
use glycontrol::verify::{
    decrease_fraction, energy_ratio, frequency_sweep, hinf_norm, spectral_abscissa, vector_lyapunov, VertexSystem,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

fn random_stable(rng: &mut impl Rng) -> VertexSystem {
    let n = rng.random_range(1..=6);
    let q = rng.random_range(1..=2);
    let p = rng.random_range(1..=2);
    let mut r = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    let raw = r(n, n);
    let rho = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let shift = spectral_abscissa(&raw).unwrap() + 0.1 + 0.3 * rho;
    let a = raw - DMatrix::identity(n, n) * shift;
    VertexSystem::new(a, r(n, q), r(p, n), r(p, q) * 0.5).unwrap()
}

#[test]
fn bisection_agrees_with_dense_sweep() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    for case in 0..20 {
        let sys = random_stable(&mut rng);
        let rho = sys.a_mat.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let exact = hinf_norm(&sys, 1e-9).unwrap();
        let swept = frequency_sweep(&sys, 100.0 * (rho + 1.0), 10_000);
        assert!(swept <= exact * (1.0 + 1e-8), "case {case}: sweep {swept} above {exact}");
        assert!((exact - swept) <= 1e-3 * exact, "case {case}: {exact} vs {swept}");
    }
}

fn simulate_lti(sys: &VertexSystem, v: impl Fn(f64) -> DVector<f64>, dt: f64, t_end: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = sys.a_mat.nrows();
    let mut x = DVector::zeros(n);
    let (mut ts, mut ys, mut vs) = (vec![], vec![], vec![]);
    let steps = (t_end / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let vk = v(t);
        let y = &sys.c_mat * &x + &sys.d_mat * &vk;
        ts.push(t);
        ys.push(y.norm());
        vs.push(vk.norm());
        x = rk4_step(|s, x: &DVector<f64>| Ok::<_, SimError>(&sys.a_mat * x + &sys.b_mat * v(s)), &x, t, dt).unwrap();
    }
    (ts, ys, vs)
}

#[test]
fn decaying_input_ratio_matches_closed_form() {
    // ẋ = −x + v, v = e^{−0.05 t}: x = (e^{−0.05t} − e^{−t}) / 0.95
    let sys = VertexSystem::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let (t, y, v) = simulate_lti(&sys, |t| DVector::from_element(1, (-0.05 * t).exp()), 0.01, 400.0);
    let num: f64 = (1.0 / 0.1 - 2.0 / 1.05 + 0.5) / (0.95 * 0.95);
    let want = (num / 10.0).sqrt();
    let got = energy_ratio(&t, &y, &v).unwrap();
    assert!((got - want).abs() < 1e-2, "{got} vs {want}");
    assert_eq!(energy_ratio(&t, &y, &y).unwrap(), 1.0);
    assert_eq!(energy_ratio(&t, &vec![0.0; t.len()], &v).unwrap(), 0.0);
    assert!(energy_ratio(&t, &y, &vec![0.0; t.len()]).is_err());
}

#[test]
fn empirical_gain_stays_below_norm() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(12);
    for _ in 0..10 {
        let mut sys = random_stable(&mut rng);
        sys.b_mat = sys.b_mat.columns(0, 1).into_owned();
        sys.c_mat = sys.c_mat.rows(0, 1).into_owned();
        sys.d_mat = DMatrix::zeros(1, 1);
        let norm = hinf_norm(&sys, 1e-9).unwrap();
        let w: f64 = rng.random_range(0.01..3.0);
        let decay: f64 = rng.random_range(0.01..0.2);
        let (t, y, v) = simulate_lti(&sys, |t| DVector::from_element(1, (-decay * t).exp() * (w * t).cos()), 0.01, 300.0);
        let ratio = energy_ratio(&t, &y, &v).unwrap();
        assert!(ratio <= norm * 1.01, "{ratio} > {norm}");
    }
}

#[test]
fn lyapunov_decreases_on_stable_scalar_flow() {
    let rule = TsRule {
        a_mat: DMatrix::from_element(1, 1, -1.0),
        b_mat: DMatrix::zeros(1, 1),
        e_mat: DMatrix::zeros(1, 1),
        c_mat: DMatrix::from_element(1, 1, 1.0),
        d_mat: DMatrix::zeros(1, 1),
    };
    let model = TsModel::new(vec![rule], Membership::Single, vec![]).unwrap();
    let p = [DMatrix::from_element(1, 1, 1.0)];
    let values: Vec<f64> = (0..200)
        .map(|k| {
            let x = (-(k as f64) * 0.1).exp();
            vector_lyapunov(&model, &p, &[x]).unwrap()
        })
        .collect();
    assert_eq!(decrease_fraction(&values).unwrap(), 1.0);
}
