//! End-to-end latency instrumentation.
//!
//! Two timing modes. Sequential runs each component to completion in order
//! and uses additive accounting: overall TTFT is the sum of component
//! TTFTs. Pipelined runs generator, refiner and codec as workers behind
//! bounded channels (the stub reasoner completes first; it is a plain
//! feature provider) and reports the measured wall time to the first audio
//! chunk. All stamps come from a monotonic clock.

pub mod report;
pub mod sim;

pub use report::{
    emit_report, parse_report_json, Component, ComponentTiming, LatencyReport, ReportFormat,
    TimingMode, TABLE_HEADER,
};
pub use sim::{compute_sim, extract_speaker_embedding, SpeakerEmbedding};

use crate::codec::Waveform;
use crate::error::Error;
use crate::model::SpeechModel;
use crate::pipeline::{SessionInput, SessionOutput};
use crate::refiner::RefineInput;
use crate::token_domain::AcousticFrame;
use std::time::Instant;

/// Generation time divided by generated audio duration. Exact quotient;
/// rounding to two decimals happens in the reporting layer.
pub fn compute_rtf(generation_s: f64, audio_s: f64) -> crate::error::Result<f64> {
    if audio_s <= 0.0 {
        return Err(Error::ZeroAudio(audio_s));
    }
    if generation_s < 0.0 {
        return Err(Error::Config(format!("negative generation time {}", generation_s)));
    }
    Ok(generation_s / audio_s)
}

/// A failed run with whatever component timings were completed before the
/// failure.
#[derive(Debug)]
pub struct PipelineFailure {
    pub component: Component,
    pub source: Error,
    pub partial: Vec<ComponentTiming>,
}

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pipeline failed in {} after {} completed component(s): {}",
            self.component.display_name(),
            self.partial.len(),
            self.source
        )
    }
}

impl std::error::Error for PipelineFailure {}

impl From<PipelineFailure> for Error {
    fn from(p: PipelineFailure) -> Self {
        Error::PipelineFailure {
            component: p.component.display_name().to_string(),
            reason: p.source.to_string(),
        }
    }
}

type InstrumentResult = std::result::Result<(LatencyReport, SessionOutput), Box<PipelineFailure>>;

/// Run one generation session under the chosen timing mode.
pub fn instrument_generation(
    model: &SpeechModel,
    input: &SessionInput,
    mode: TimingMode,
) -> InstrumentResult {
    match mode {
        TimingMode::Sequential => instrument_sequential(model, input),
        TimingMode::Pipelined => instrument_pipelined(model, input),
    }
}

fn fail(
    component: Component,
    source: Error,
    partial: &[ComponentTiming],
) -> Box<PipelineFailure> {
    Box::new(PipelineFailure { component, source, partial: partial.to_vec() })
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn instrument_sequential(model: &SpeechModel, input: &SessionInput) -> InstrumentResult {
    let mut partial: Vec<ComponentTiming> = Vec::new();
    let t0 = Instant::now();

    // Reasoner.
    let mut first_row = None;
    let reasoner_out = model
        .stub
        .reason_observed(&input.input_tokens, input.input_features.as_ref(), |t| {
            if t == 0 {
                first_row = Some(t0.elapsed());
            }
        })
        .map_err(|e| fail(Component::Reasoner, e, &partial))?;
    let reasoner_total = t0.elapsed();
    let reasoner_ttft = first_row.unwrap_or(reasoner_total);
    let n_tokens = reasoner_out.len();
    partial.push(ComponentTiming {
        component: Component::Reasoner,
        ttft_ms: Some(ms(reasoner_ttft)),
        avg_frame_ms: ms(reasoner_total) / n_tokens as f64,
        total_s: reasoner_total.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });

    // Backbone: prefill plus autoregressive coarse generation.
    let b_start = Instant::now();
    let mut stream = model
        .backbone
        .generate_stream(
            &model.store,
            &input.prefix,
            &reasoner_out,
            input.sampler.clone(),
            input.opts.clone(),
        )
        .map_err(|e| fail(Component::Backbone, e, &partial))?;
    let mut coarse: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut b_first = None;
    for item in &mut stream {
        let pair = item.map_err(|e| fail(Component::Backbone, e, &partial))?;
        if b_first.is_none() {
            b_first = Some(b_start.elapsed());
        }
        coarse.push(pair);
    }
    let b_total = b_start.elapsed();
    let n_frames = coarse.len();
    let schedule = stream.schedule();
    let stop = stream.stop_reason();
    if n_frames == 0 {
        return Err(fail(
            Component::Backbone,
            Error::EmptyInput("generation produced no frames".into()),
            &partial,
        ));
    }
    partial[0].avg_ms_per_audio_frame = Some(ms(reasoner_total) / n_frames as f64);
    partial.push(ComponentTiming {
        component: Component::Backbone,
        ttft_ms: Some(ms(b_first.unwrap_or(b_total))),
        avg_frame_ms: ms(b_total) / n_frames as f64,
        total_s: b_total.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });

    // Refiner: frame-synchronous residual levels.
    let d_start = Instant::now();
    let mut frames: Vec<AcousticFrame> = Vec::with_capacity(n_frames);
    let mut d_first = None;
    for (code, hidden) in &coarse {
        let refine_input = RefineInput { coarse_code: *code, backbone_hidden: hidden.clone() };
        let frame = model
            .refiner
            .refine_frame(&model.store, &refine_input, input.sampler.clone())
            .map_err(|e| fail(Component::Decoder, e, &partial))?;
        if d_first.is_none() {
            d_first = Some(d_start.elapsed());
        }
        frames.push(frame);
    }
    let d_total = d_start.elapsed();
    partial.push(ComponentTiming {
        component: Component::Decoder,
        ttft_ms: Some(ms(d_first.unwrap_or(d_total))),
        avg_frame_ms: ms(d_total) / n_frames as f64,
        total_s: d_total.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });

    // Codec decoder: grouped chunks.
    let c_start = Instant::now();
    let mut samples: Vec<f64> = Vec::new();
    {
        let mut chunks = model
            .codec
            .decode_batched(frames.iter().cloned(), model.cfg.decode_group);
        loop {
            let step_start = Instant::now();
            match chunks.next() {
                Some(Ok(chunk)) => {
                    let _ = step_start;
                    samples.extend(chunk.samples);
                }
                Some(Err(e)) => return Err(fail(Component::CodecDecoder, e, &partial)),
                None => break,
            }
        }
    }
    let c_total = c_start.elapsed();
    partial.push(ComponentTiming {
        component: Component::CodecDecoder,
        ttft_ms: None,
        avg_frame_ms: ms(c_total) / n_frames as f64,
        total_s: c_total.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });

    let waveform = Waveform { samples, sample_rate: model.cfg.sample_rate };
    let overall_total = t0.elapsed();
    let audio_len_s = waveform.duration_s();
    let overall_ttft_ms: f64 = partial.iter().filter_map(|t| t.ttft_ms).sum();
    let rtf = compute_rtf(overall_total.as_secs_f64(), audio_len_s)
        .map_err(|e| fail(Component::CodecDecoder, e, &partial))?;
    let report = LatencyReport {
        mode: TimingMode::Sequential,
        per_component: partial.clone(),
        overall_ttft_ms,
        overall_total_s: overall_total.as_secs_f64(),
        audio_len_s,
        rtf,
    };
    report.validate().map_err(|e| fail(Component::CodecDecoder, e, &partial))?;
    let output = SessionOutput { waveform, frames, schedule, stop, reasoner_tokens: n_tokens };
    Ok((report, output))
}

struct StageStats {
    first_out: Option<std::time::Duration>,
    busy: std::time::Duration,
    units: usize,
}

impl StageStats {
    fn new() -> Self {
        StageStats { first_out: None, busy: std::time::Duration::ZERO, units: 0 }
    }
}

fn instrument_pipelined(model: &SpeechModel, input: &SessionInput) -> InstrumentResult {
    let mut partial: Vec<ComponentTiming> = Vec::new();
    let t0 = Instant::now();

    // The stub reasoner is a pure feature provider and completes before the
    // streaming stages spin up; generator, refiner and codec overlap.
    let mut first_row = None;
    let reasoner_out = model
        .stub
        .reason_observed(&input.input_tokens, input.input_features.as_ref(), |t| {
            if t == 0 {
                first_row = Some(t0.elapsed());
            }
        })
        .map_err(|e| fail(Component::Reasoner, e, &partial))?;
    let reasoner_total = t0.elapsed();
    let n_tokens = reasoner_out.len();

    let budget = model.cfg.frame_budget.max(1);
    type CoarseMsg = (u32, Vec<f64>);
    let (tx_coarse, rx_coarse) = crossbeam_channel::bounded::<CoarseMsg>(budget);
    let (tx_frame, rx_frame) = crossbeam_channel::bounded::<AcousticFrame>(budget);

    struct BackboneOut {
        stats: StageStats,
        schedule: crate::token_domain::InterleavedSequence,
        stop: Option<crate::backbone::StopReason>,
        result: crate::error::Result<()>,
    }

    let mut backbone_out: Option<BackboneOut> = None;
    let mut refiner_out: Option<(StageStats, crate::error::Result<()>)> = None;
    let mut codec_out: Option<(StageStats, crate::error::Result<()>)> = None;
    let mut frames_all: Vec<AcousticFrame> = Vec::new();
    let mut samples: Vec<f64> = Vec::new();
    let mut first_chunk_at: Option<std::time::Duration> = None;

    std::thread::scope(|scope| {
        let reasoner_ref = &reasoner_out;
        let backbone_handle = scope.spawn(move || {
            let mut stats = StageStats::new();
            let stream = model.backbone.generate_stream(
                &model.store,
                &input.prefix,
                reasoner_ref,
                input.sampler.clone(),
                input.opts.clone(),
            );
            let mut stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    return BackboneOut {
                        stats,
                        schedule: Default::default(),
                        stop: None,
                        result: Err(e),
                    }
                }
            };
            let mut result = Ok(());
            loop {
                let step = Instant::now();
                let item = stream.next();
                stats.busy += step.elapsed();
                match item {
                    Some(Ok(pair)) => {
                        if stats.first_out.is_none() {
                            stats.first_out = Some(t0.elapsed());
                        }
                        stats.units += 1;
                        // Bounded send: blocks when the refiner lags by more
                        // than the frame budget.
                        if tx_coarse.send(pair).is_err() {
                            break;
                        }
                    }
                    Some(Err(e)) => {
                        result = Err(e);
                        break;
                    }
                    None => break,
                }
            }
            drop(tx_coarse);
            BackboneOut { stats, schedule: stream.schedule(), stop: stream.stop_reason(), result }
        });

        let refiner_handle = scope.spawn(move || {
            let mut stats = StageStats::new();
            let mut result = Ok(());
            for (code, hidden) in rx_coarse.iter() {
                let step = Instant::now();
                let refine_input = RefineInput { coarse_code: code, backbone_hidden: hidden };
                let frame = model.refiner.refine_frame(
                    &model.store,
                    &refine_input,
                    input.sampler.clone(),
                );
                stats.busy += step.elapsed();
                match frame {
                    Ok(f) => {
                        if stats.first_out.is_none() {
                            stats.first_out = Some(t0.elapsed());
                        }
                        stats.units += 1;
                        if tx_frame.send(f).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        result = Err(e);
                        break;
                    }
                }
            }
            drop(tx_frame);
            (stats, result)
        });

        // Codec stage runs on this thread.
        let mut stats = StageStats::new();
        let mut result = Ok(());
        let mut pending: Vec<AcousticFrame> = Vec::new();
        let mut synth_state = crate::codec::SynthState::new();
        let flush = |pending: &mut Vec<AcousticFrame>,
                         stats: &mut StageStats,
                         synth_state: &mut crate::codec::SynthState,
                         samples: &mut Vec<f64>,
                         first_chunk_at: &mut Option<std::time::Duration>|
         -> crate::error::Result<()> {
            let step = Instant::now();
            let group: Vec<AcousticFrame> = std::mem::take(pending);
            let n = group.len();
            let features = model.codec.rvq_decode(&group, model.codec.cfg.n_levels)?;
            let chunk = model.codec.synth_chunk(&features, synth_state)?;
            stats.busy += step.elapsed();
            stats.units += n;
            samples.extend(chunk.samples);
            if first_chunk_at.is_none() {
                *first_chunk_at = Some(t0.elapsed());
            }
            Ok(())
        };
        for frame in rx_frame.iter() {
            frames_all.push(frame.clone());
            pending.push(frame);
            if pending.len() == model.cfg.decode_group.max(1) {
                if let Err(e) =
                    flush(&mut pending, &mut stats, &mut synth_state, &mut samples, &mut first_chunk_at)
                {
                    result = Err(e);
                    break;
                }
            }
        }
        if result.is_ok() && !pending.is_empty() {
            result = flush(&mut pending, &mut stats, &mut synth_state, &mut samples, &mut first_chunk_at);
        }
        codec_out = Some((stats, result));
        backbone_out = Some(backbone_handle.join().expect("backbone worker panicked"));
        refiner_out = Some(refiner_handle.join().expect("refiner worker panicked"));
    });

    let overall_total = t0.elapsed();
    let backbone_out = backbone_out.expect("backbone stage missing");
    let (refiner_stats, refiner_result) = refiner_out.expect("refiner stage missing");
    let (codec_stats, codec_result) = codec_out.expect("codec stage missing");
    let n_frames = backbone_out.stats.units.max(1);

    partial.push(ComponentTiming {
        component: Component::Reasoner,
        ttft_ms: Some(ms(first_row.unwrap_or(reasoner_total))),
        avg_frame_ms: ms(reasoner_total) / n_tokens as f64,
        total_s: reasoner_total.as_secs_f64(),
        avg_ms_per_audio_frame: Some(ms(reasoner_total) / n_frames as f64),
    });
    partial.push(ComponentTiming {
        component: Component::Backbone,
        ttft_ms: Some(ms(backbone_out.stats.first_out.unwrap_or(overall_total))),
        avg_frame_ms: ms(backbone_out.stats.busy) / n_frames as f64,
        total_s: backbone_out.stats.busy.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });
    partial.push(ComponentTiming {
        component: Component::Decoder,
        ttft_ms: Some(ms(refiner_stats.first_out.unwrap_or(overall_total))),
        avg_frame_ms: ms(refiner_stats.busy) / refiner_stats.units.max(1) as f64,
        total_s: refiner_stats.busy.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });
    partial.push(ComponentTiming {
        component: Component::CodecDecoder,
        ttft_ms: None,
        avg_frame_ms: ms(codec_stats.busy) / codec_stats.units.max(1) as f64,
        total_s: codec_stats.busy.as_secs_f64(),
        avg_ms_per_audio_frame: None,
    });

    if let Err(e) = backbone_out.result {
        return Err(fail(Component::Backbone, e, &partial));
    }
    if let Err(e) = refiner_result {
        return Err(fail(Component::Decoder, e, &partial));
    }
    if let Err(e) = codec_result {
        return Err(fail(Component::CodecDecoder, e, &partial));
    }
    if backbone_out.stats.units == 0 {
        return Err(fail(
            Component::Backbone,
            Error::EmptyInput("generation produced no frames".into()),
            &partial,
        ));
    }

    let waveform = Waveform { samples, sample_rate: model.cfg.sample_rate };
    let audio_len_s = waveform.duration_s();
    // Wall time from input receipt to the first audio chunk.
    let overall_ttft_ms = ms(first_chunk_at.unwrap_or(overall_total));
    let rtf = compute_rtf(overall_total.as_secs_f64(), audio_len_s)
        .map_err(|e| fail(Component::CodecDecoder, e, &partial))?;
    let report = LatencyReport {
        mode: TimingMode::Pipelined,
        per_component: partial.clone(),
        overall_ttft_ms,
        overall_total_s: overall_total.as_secs_f64(),
        audio_len_s,
        rtf,
    };
    report.validate().map_err(|e| fail(Component::CodecDecoder, e, &partial))?;
    let output = SessionOutput {
        waveform,
        frames: frames_all,
        schedule: backbone_out.schedule,
        stop: backbone_out.stop,
        reasoner_tokens: n_tokens,
    };
    Ok((report, output))
}
