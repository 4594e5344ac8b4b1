use criterion::{criterion_group, criterion_main, Criterion};
use glycontrol::fuzzy::{bergman_ts_model, tolic_ts_model};
use glycontrol::lmi::{synthesize, synthesize_rule, SynthesisOptions};
use glycontrol::models::{BergmanParams, TolicParams};

fn bench_synthesis(c: &mut Criterion) {
    let bergman = bergman_ts_model(&BergmanParams::default()).unwrap();
    let tolic = tolic_ts_model(&TolicParams::default(), None).unwrap();

    let mut group = c.benchmark_group("synthesize");
    group.sample_size(10);
    for (name, ts, mu) in [("bergman_sat6", &bergman, 0.095), ("bergman_sat25", &bergman, 1.2), ("tolic_sat12", &tolic, 0.08)] {
        let opts = SynthesisOptions { mu, ..Default::default() };
        group.bench_function(name, |b| b.iter(|| synthesize(ts, &opts).unwrap()));
    }
    let opts = SynthesisOptions { mu: 0.095, ..Default::default() };
    group.bench_function("bergman_single_rule", |b| {
        b.iter(|| synthesize_rule(0, &bergman.rules[0], &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_synthesis);
criterion_main!(benches);
