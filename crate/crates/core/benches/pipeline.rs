//! Golden run against a scripted backend with simulated latency, at
//! several worker counts. Build with `--no-default-features --features http`
//! to measure the sequential loop instead of the rayon pool.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use abm_extract::gateway::{ScriptFile, ScriptedBackend};
use abm_extract::{load_document, Config, Gateway, Pipeline, RetryPolicy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const LATENCY: Duration = Duration::from_millis(5);

fn bench_pipeline(c: &mut Criterion) {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/predator_prey");
    let script: ScriptFile =
        serde_json::from_str(&fs::read_to_string(fixtures.join("script.json")).unwrap()).unwrap();
    let document = load_document(&fixtures.join("document.md"), 1 << 21).unwrap();
    let mode = if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    };

    let mut group = c.benchmark_group(format!("golden_run/{mode}"));
    group.sample_size(10);
    for workers in [1usize, 2, 4, 8] {
        group.bench_with_input(
            BenchmarkId::from_parameter(workers),
            &workers,
            |b, &workers| {
                let mut config = Config::default();
                config.pipeline.parallelism = workers;
                b.iter(|| {
                    let dir = tempfile::tempdir().unwrap();
                    let backend =
                        Arc::new(ScriptedBackend::from_script(&script).with_latency(LATENCY));
                    let gateway = Gateway::new(backend, RetryPolicy::immediate(0));
                    Pipeline::new(gateway, config.clone())
                        .execute(&document, dir.path())
                        .unwrap()
                });
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
