use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use covspread_core::forecast::{fit_forest, ForestParams, SupervisedFrame};
use covspread_core::volatility::{fit_egarch, simulate, EgarchParams, EgarchSpec, FitOptions};

// Roughly the size of a P2 training frame: 40 pre-split days, 15 lags.
fn frame(rows: usize, cols: usize) -> SupervisedFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random()).collect()).collect();
    let y = x.iter().map(|r| r[0] - 0.5 * r[1] + 0.1 * rng.random::<f64>()).collect();
    SupervisedFrame {
        names: (0..cols).map(|i| format!("f{i}")).collect(),
        x,
        y,
        dates: vec![NaiveDate::MIN; rows],
        horizon: 1,
    }
}

fn forest(c: &mut Criterion) {
    let f = frame(40, 15);
    let params = ForestParams {
        seed: 1,
        ..Default::default()
    };
    c.bench_function("forest_500_trees_40x15", |b| b.iter(|| fit_forest(&f, &params).unwrap()));
}

fn egarch(c: &mut Criterion) {
    let truth = EgarchParams {
        mu: 0.0,
        omega0: -0.2,
        omega: -0.1,
        gamma: 0.15,
        tau: 0.95,
        lambda: vec![],
    };
    let r = simulate(&truth, 2000, 500, &[], &mut ChaCha8Rng::seed_from_u64(5));
    c.bench_function("egarch_fit_n2000", |b| {
        b.iter(|| fit_egarch(&EgarchSpec::default(), &r, &[], &FitOptions::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forest, egarch
}
criterion_main!(benches);
