use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mtrcnet::eval::predict_videos;
use mtrcnet::losses::{ActiveTerms, Lambdas};
use mtrcnet::model::{init_parameters, ArchConfig, PartitionSet};
use mtrcnet::parallel::Exec;
use mtrcnet::synth::{generate_video, ClipSampler, VideoRecord, WorkflowSpec};
use mtrcnet::training::evaluate_batch;

fn bench(c: &mut Criterion) {
    let spec = WorkflowSpec::default();
    let cfg = ArchConfig::default();
    let params = init_parameters(&cfg, 1).unwrap();
    let videos: Vec<VideoRecord> = (0..4)
        .map(|i| generate_video(&spec, &format!("video{i:02}"), i).unwrap())
        .collect();

    let refs: Vec<&VideoRecord> = videos.iter().collect();
    let sampler = ClipSampler::new(refs.clone(), cfg.clip_len, cfg.clip_len, cfg.frame_size).unwrap();
    let batch = sampler.plain_batch(&sampler.clips()[..8]).unwrap();
    let mut g = c.benchmark_group("evaluate_batch");
    g.sample_size(10);
    for (name, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
        g.bench_function(name, |b| {
            b.iter(|| {
                evaluate_batch(&params, black_box(&batch), Lambdas::default(), ActiveTerms::FULL, PartitionSet::ALL, exec)
                    .unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("predict_videos");
    g.sample_size(10);
    for (name, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
        g.bench_function(name, |b| b.iter(|| predict_videos(&params, black_box(&refs), exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
