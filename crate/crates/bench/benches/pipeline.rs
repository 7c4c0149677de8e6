use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hapfuse_bench::{desk_config, episodes, train_set};
use hapfuse_core::pipeline::mel::log_mel;
use hapfuse_core::pipeline::{farthest_point_sample, observation_at, Pipeline};
use hapfuse_core::policy::train::Trainer;
use hapfuse_core::{rng, FusionMode, Policy};
use rand::Rng;

fn observation(c: &mut Criterion) {
    let cfg = desk_config();
    let p = &cfg.pipeline;
    let ep = &episodes(&cfg, 1)[0];
    let wave: Vec<f64> = ep.waveform.iter().map(|&v| v as f64).collect();
    let second = &wave[..cfg.world.sample_rate as usize];
    c.bench_function("log_mel_1s", |b| {
        b.iter(|| log_mel(second, cfg.world.sample_rate, p.n_fft, p.hop, p.mel_bins, p.f_lo, p.f_hi).unwrap())
    });
    let mut r = rng::stream(0, "bench");
    let cloud: Vec<[f64; 3]> = (0..cfg.world.raw_points).map(|_| [r.random(), r.random(), r.random()]).collect();
    c.bench_function("farthest_point_sample", |b| b.iter(|| farthest_point_sample(&cloud, p.points, 0)));
    let pipe = Pipeline::new(p, &cfg.world);
    c.bench_function("episode_frames", |b| b.iter(|| pipe.episode_frames(ep).unwrap()));
}

fn policy(c: &mut Criterion) {
    let cfg = desk_config();
    let data = train_set(&cfg, 4);
    let norm = data.fit_norm().unwrap();
    let idx: Vec<usize> = (0..cfg.train.batch).map(|i| i % data.len()).collect();
    let (batch, _) = data.batch(&idx, &norm).unwrap();
    let mut group = c.benchmark_group("fused_latent");
    for mode in FusionMode::ALL {
        let mut m = cfg.clone();
        m.model.fusion = mode.as_str().into();
        let policy = Policy::new(&m, norm.clone()).unwrap();
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| {
                let mut t = hapfuse_core::autograd::Tape::new(&policy.store);
                policy.latent(&mut t, &batch)
            })
        });
    }
    group.finish();

    let trainer = Trainer::new(Policy::new(&cfg, norm).unwrap());
    c.bench_function("train_step", |b| {
        b.iter_batched(|| trainer.clone(), |mut t| t.train_step(&data).unwrap(), BatchSize::LargeInput)
    });
    let ep = &episodes(&cfg, 1)[0];
    let frames = Pipeline::new(&cfg.pipeline, &cfg.world).episode_frames(ep).unwrap();
    let obs = observation_at(&frames, 10, cfg.pipeline.frames_stacked).unwrap();
    let z = trainer.policy.encode(&[&obs]).unwrap();
    c.bench_function("sample_chunk", |b| b.iter(|| trainer.policy.sample_actions(&z, &mut rng::stream(0, "bench"))));
}

criterion_group!(benches, observation, policy);
criterion_main!(benches);
