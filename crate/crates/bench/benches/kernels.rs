use std::hint::black_box;
use std::sync::Arc;

use carnot_core::maps::DifferentialEvaluator;
use carnot_core::measures::{level_set_box_measure, MeasureConvention};
use carnot_core::coarea::{lhs_integral, CoareaSettings};
use carnot_core::metrics::{d2_raw, Box2Ball};
use carnot_core::quadrature::QuadratureSettings;
use carnot_core::{CarnotGroup, GradedNilpotentAlgebra, PolynomialContactMap};
use criterion::{criterion_group, criterion_main, Criterion};

fn groups() -> Vec<Arc<CarnotGroup>> {
    [
        GradedNilpotentAlgebra::heisenberg(1),
        GradedNilpotentAlgebra::heisenberg(2),
        GradedNilpotentAlgebra::engel(),
    ]
    .into_iter()
    .map(|a| Arc::new(CarnotGroup::new(a).unwrap()))
    .collect()
}

fn point(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (phase + i as f64).sin()).collect()
}

fn group_kernels(c: &mut Criterion) {
    for g in groups() {
        let n = g.dim();
        let (x, y) = (point(n, 0.3), point(n, 1.7));
        let mut out = vec![0.0; n];
        let name = g.algebra().name().to_string();
        c.bench_function(&format!("product/{name}"), |b| {
            b.iter(|| g.product_into(black_box(&x), black_box(&y), &mut out))
        });
        c.bench_function(&format!("d2/{name}"), |b| b.iter(|| d2_raw(&g, black_box(&x), black_box(&y))));
    }
}

fn map_kernels(c: &mut Criterion) {
    let gs = groups();
    let r1 = Arc::new(CarnotGroup::new(GradedNilpotentAlgebra::abelian(1)).unwrap());
    let engel = PolynomialContactMap::parse("engel_x2", gs[2].clone(), r1.clone(), &["u2 + u1^2/10"]).unwrap();
    let mut ev = DifferentialEvaluator::new(&engel);
    let x = point(4, 0.5);
    c.bench_function("differential/engel_x2", |b| {
        b.iter(|| {
            ev.eval(black_box(&x));
            ev.gram_hc()
        })
    });

    let curved = PolynomialContactMap::parse("x1_curved", gs[0].clone(), r1, &["u1 + u2^2/2"]).unwrap();
    let q = QuadratureSettings::default();
    let mut slow = c.benchmark_group("integrals");
    slow.sample_size(10);
    slow.bench_function("level_set/x1_curved", |b| {
        b.iter(|| level_set_box_measure(&curved, &[0.0; 3], 0.1, &q).unwrap())
    });
    let ball = Box2Ball::centered(3, 1.0).unwrap();
    slow.bench_function("lhs/x1_curved", |b| {
        b.iter(|| lhs_integral(&curved, &ball, MeasureConvention::default(), &CoareaSettings::default()).unwrap())
    });
    slow.finish();
}

criterion_group!(kernels, group_kernels, map_kernels);
criterion_main!(kernels);
