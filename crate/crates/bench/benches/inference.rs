use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use dare_core::adaptive::{SessionBank, SessionState};
use dare_core::ep::{cell_message_update, CellCavity, PrecisionCavity};
use dare_core::synth::{sample, SynthConfig};
use dare_core::{build_graph, infer, Discrete, EpConfig, GammaDist, Gaussian1D, ModelVariant, PriorSpec};

fn cell_update(c: &mut Criterion) {
    let fixed = CellCavity {
        ability: Gaussian1D::new(0.3, 0.8).unwrap(),
        difficulty: Gaussian1D::new(-0.2, 1.1).unwrap(),
        precision: PrecisionCavity::Fixed(1.0),
        answer: Discrete::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
        response: 1,
    };
    let learned = CellCavity { precision: PrecisionCavity::Learned(GammaDist::new(2.0, 0.5).unwrap()), ..fixed.clone() };
    c.bench_function("cell_update/fixed", |b| b.iter(|| cell_message_update(black_box(&fixed), 32).unwrap()));
    c.bench_function("cell_update/learned", |b| b.iter(|| cell_message_update(black_box(&learned), 32).unwrap()));
}

fn population(c: &mut Criterion) {
    let mut group = c.benchmark_group("population");
    group.sample_size(10);
    for (name, priors) in [
        ("fixed", PriorSpec::default().with_discrimination(dare_core::DiscriminationMode::Fixed(1.0))),
        ("learned", PriorSpec::default()),
    ] {
        let synth = sample(&SynthConfig { num_participants: 40, num_questions: 20, priors, ..SynthConfig::population(1) }).unwrap();
        let graph = build_graph(&synth.data, &Default::default(), &priors, ModelVariant::Full).unwrap();
        group.bench_function(format!("ep_40x20/{name}"), |b| b.iter(|| infer(black_box(&graph), &EpConfig::default()).unwrap()));
    }
    group.finish();
}

fn adaptive(c: &mut Criterion) {
    let synth = sample(&SynthConfig { num_participants: 40, num_questions: 60, ..SynthConfig::population(2) }).unwrap();
    let bank = SessionBank::calibrate(&synth.data, &synth.gold, &PriorSpec::default(), &EpConfig::default(), None).unwrap();
    let state = SessionState::new("bench", Arc::new(bank), Gaussian1D::standard(), 10, EpConfig::default()).unwrap();
    c.bench_function("adaptive/next_question_60", |b| b.iter(|| black_box(&state).next_question().unwrap()));
}

criterion_group!(benches, cell_update, population, adaptive);
criterion_main!(benches);
