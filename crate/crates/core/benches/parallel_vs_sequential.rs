//! Sequential vs rayon execution of the mock experiment, the per-factor
//! analysis and the topic pipeline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use convdepth_core::experiment::{analyze_run, execute, ExperimentSettings};
use convdepth_core::gateway::{Backend, MockBehavior};
use convdepth_core::protocol::default_themes;
use convdepth_core::questionnaire::builtin;
use convdepth_core::store::{load_run, LoadedRun, RunStore};
use convdepth_core::topics::{cluster, extract_utterances, tfidf_vectors};
use convdepth_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn settings(exec: Exec) -> ExperimentSettings {
    let mut s = ExperimentSettings::new(
        vec!["mock-a".into(), "mock-b".into()],
        default_themes(),
        ["BFI", "LMS", "GSE"].iter().map(|id| builtin(id).unwrap().clone()).collect(),
    );
    s.sessions_per_model = 4;
    s.repetitions = 3;
    s.master_seed = 11;
    s.exec = exec;
    s
}

fn mock() -> Backend {
    Backend::from_mock(MockBehavior::parse("seed 5").unwrap())
}

fn fresh_run(exec: Exec) -> (tempfile::TempDir, LoadedRun) {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(exec);
    let store = RunStore::create(dir.path(), s.manifest("bench", serde_json::json!({}))).unwrap();
    execute(&store, &s, &mock()).unwrap();
    let run = load_run(dir.path()).unwrap();
    (dir, run)
}

fn bench_experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fresh_run(exec)));
    }
    group.finish();
}

fn bench_analysis(c: &mut Criterion) {
    let (_dir, run) = fresh_run(Exec::Parallel);
    let questionnaires = settings(Exec::Parallel).questionnaires;
    let mut group = c.benchmark_group("analysis");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| analyze_run(&run, &questionnaires, 0.05, exec))
        });
    }
    group.finish();
}

fn bench_topics(c: &mut Criterion) {
    let (_dir, run) = fresh_run(Exec::Parallel);
    let logs: Vec<_> = run.conversation_logs().into_values().collect();
    let corpus = extract_utterances(&logs);
    let mut group = c.benchmark_group("topics");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let vectors = tfidf_vectors(&corpus, exec);
                cluster(&vectors, 8, 3, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_experiment, bench_analysis, bench_topics);
criterion_main!(benches);
