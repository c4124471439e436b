use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use safeplan_bench::{align_inputs, corpus, evaluator};
use safeplan_core::align::{batch_loss, policy_loss_and_grad, LossVariant};
use safeplan_core::fixtures::{labeled_plans, scene};
use safeplan_core::{is_safe, SafetyRuleSet, SceneGraph, Simulator};

fn verify(c: &mut Criterion) {
    let sim = Simulator::default();
    let rules = SafetyRuleSet::builtin();
    let cases: Vec<_> = labeled_plans()
        .into_iter()
        .map(|p| {
            (
                SceneGraph::from_json(scene(&p.scene).unwrap()).unwrap(),
                p.plan.parse().unwrap(),
            )
        })
        .collect();
    c.bench_function("verify/labeled_fixtures", |b| {
        b.iter(|| {
            cases
                .iter()
                .filter(|(g, plan)| is_safe(&sim.run_plan(g, plan), &rules).safe)
                .count()
        })
    });
}

fn evaluate(c: &mut Criterion) {
    let ev = evaluator();
    let lines = corpus(500, 2027);
    let mut group = c.benchmark_group("evaluate/500");
    group.sample_size(10);
    for threads in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| ev.evaluate_corpus(black_box(&lines), t))
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let inputs = align_inputs(3, 64);
    let mut group = c.benchmark_group("loss");
    for v in LossVariant::ALL {
        group.bench_function(BenchmarkId::new("batch", v.name()), |b| {
            b.iter(|| batch_loss(v, black_box(&inputs.samples), &inputs.cfg).unwrap())
        });
        group.bench_function(BenchmarkId::new("policy_grad", v.name()), |b| {
            b.iter(|| {
                policy_loss_and_grad(
                    v,
                    &inputs.theta,
                    &inputs.reference,
                    &inputs.examples,
                    &inputs.cfg,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, verify, evaluate, loss);
criterion_main!(benches);
