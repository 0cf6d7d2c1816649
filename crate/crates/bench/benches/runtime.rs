//! Hot-path microbenchmarks at the default desk-scale dimensions:
//! incremental backbone steps, frame refinement, RVQ encode, codec
//! synthesis, and one full streaming second.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cadenza_core::backbone::{BackboneItem, GenerateOptions};
use cadenza_core::harness::{instrument_generation, TimingMode};
use cadenza_core::mat::Mat;
use cadenza_core::model::SpeechModel;
use cadenza_core::pipeline::{prefix_from_speaker_seed, tokens_from_text, SessionInput};
use cadenza_core::refiner::RefineInput;
use cadenza_core::sampler::SamplerConfig;
use cadenza_core::RuntimeConfig;

fn model() -> SpeechModel {
    SpeechModel::seeded(RuntimeConfig::default()).expect("default model")
}

fn bench_backbone_step(c: &mut Criterion) {
    let m = model();
    let prefix = prefix_from_speaker_seed(&m, 1, 4).unwrap();
    c.bench_function("backbone_step_d64", |b| {
        b.iter_batched(
            || {
                let mut cache = m.backbone.prefill(&m.store, &prefix).unwrap();
                // Warm the cache to a realistic depth.
                for i in 0..64u32 {
                    let emb = m
                        .backbone
                        .embed_item(&m.store, &BackboneItem::Code(i % 250));
                    m.backbone.step(&m.store, &mut cache, &emb).unwrap();
                }
                cache
            },
            |mut cache| {
                let emb = m.backbone.embed_item(&m.store, &BackboneItem::Code(17));
                black_box(m.backbone.step(&m.store, &mut cache, &emb).unwrap())
            },
            criterion::BatchSize::SmallInput,
        )
    });
}

fn bench_refine_frame(c: &mut Criterion) {
    let m = model();
    let input = RefineInput {
        coarse_code: 42,
        backbone_hidden: (0..m.backbone.cfg.d).map(|i| (i as f64 * 0.13).sin()).collect(),
    };
    c.bench_function("refine_frame_n8", |b| {
        b.iter(|| {
            black_box(
                m.refiner
                    .refine_frame(&m.store, black_box(&input), SamplerConfig::greedy())
                    .unwrap(),
            )
        })
    });
}

fn bench_rvq_encode(c: &mut Criterion) {
    let m = model();
    let features = Mat::from_fn(50, m.cfg.codec_dim, |r, k| ((r * 7 + k) as f64 * 0.31).sin());
    c.bench_function("rvq_encode_50_frames", |b| {
        b.iter(|| black_box(m.codec.rvq_encode(black_box(&features), m.cfg.rvq_levels).unwrap()))
    });
}

fn bench_codec_synthesis(c: &mut Criterion) {
    let m = model();
    let features = Mat::from_fn(50, m.cfg.codec_dim, |r, k| ((r * 3 + k) as f64 * 0.17).cos());
    c.bench_function("synth_50_frames", |b| {
        b.iter(|| black_box(m.codec.synth_waveform(black_box(&features)).unwrap()))
    });
}

fn bench_streaming_second(c: &mut Criterion) {
    let m = model();
    let input = SessionInput {
        input_tokens: tokens_from_text(&m.stub.vocab(), "one second benchmark"),
        input_features: None,
        prefix: prefix_from_speaker_seed(&m, 1, 4).unwrap(),
        sampler: SamplerConfig::greedy(),
        opts: GenerateOptions { max_frames: 50, min_frames: 50 },
    };
    c.bench_function("stream_one_second", |b| {
        b.iter(|| {
            black_box(
                instrument_generation(&m, black_box(&input), TimingMode::Sequential).unwrap(),
            )
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets =
        bench_backbone_step,
        bench_refine_frame,
        bench_rvq_encode,
        bench_codec_synthesis,
        bench_streaming_second
}
criterion_main!(benches);
