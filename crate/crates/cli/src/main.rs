//! Command-line front end: instrumented benchmarking, generation, training,
//! codec round-trips, and speaker similarity.

use anyhow::{bail, Context, Result};
use cadenza_core::audio;
use cadenza_core::backbone::GenerateOptions;
use cadenza_core::config::RuntimeConfig;
use cadenza_core::harness::{
    compute_sim, emit_report, extract_speaker_embedding, instrument_generation, ReportFormat,
    TimingMode,
};
use cadenza_core::model::SpeechModel;
use cadenza_core::pipeline::{
    prefix_from_reference, prefix_from_speaker_seed, run_session, tokens_from_text, SessionInput,
};
use cadenza_core::sampler::SamplerConfig;
use cadenza_core::token_domain::{parse_frames, write_frames};
use cadenza_core::training::{train, StageSchedule};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "cadenza", about = "Desk-scale streaming speech generation runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Flat key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight checkpoint to load; a seeded model is built when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn config(&self) -> Result<RuntimeConfig> {
        let mut cfg = match &self.config {
            Some(path) => RuntimeConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RuntimeConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn model(&self) -> Result<SpeechModel> {
        let cfg = self.config()?;
        let model = match &self.checkpoint {
            Some(path) => SpeechModel::load(path, cfg)
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
            None => SpeechModel::seeded(cfg)?,
        };
        Ok(model)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run instrumented generation and print the latency report.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_parser = parse_mode, default_value = "sequential")]
        mode: TimingMode,
        #[arg(long, value_parser = parse_format, default_value = "table")]
        format: ReportFormat,
        /// Number of frames to generate (end-of-audio is masked so the run
        /// always covers exactly this many frames).
        #[arg(long, default_value_t = 500)]
        frames_cap: usize,
        /// Input text fed to the reasoner.
        #[arg(long, default_value = "a quick latency measurement run")]
        text: String,
        /// Synthetic speaker used for the conditioning prefix.
        #[arg(long, default_value_t = 1)]
        speaker_seed: u64,
        /// Reference recording for voice cloning instead of the synthetic
        /// speaker.
        #[arg(long)]
        ref_audio: Option<PathBuf>,
    },
    /// Generate speech for text and write a WAV (or raw .f32) file.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        /// Reference recording for voice cloning.
        #[arg(long)]
        ref_audio: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        speaker_seed: u64,
        /// Target duration in seconds (exact frame count).
        #[arg(long, conflicts_with = "frames")]
        duration: Option<f64>,
        /// Frame cap with natural end-of-audio stopping.
        #[arg(long)]
        frames: Option<usize>,
        /// 0 = greedy.
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Train on synthetic data and save a checkpoint.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        stage: u8,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Output checkpoint path.
        #[arg(long, default_value = "cadenza.ckpt")]
        out: PathBuf,
        /// Append the per-step loss trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Encode a waveform into frame-major RVQ code lines.
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Quantization depth (defaults to all levels).
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Decode frame-major RVQ code lines back into a waveform.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Speaker similarity between two recordings.
    Sim {
        a: PathBuf,
        b: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<TimingMode, String> {
    match s {
        "sequential" => Ok(TimingMode::Sequential),
        "pipelined" => Ok(TimingMode::Pipelined),
        other => Err(format!("unknown mode `{other}` (sequential|pipelined)")),
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "table" => Ok(ReportFormat::Table),
        "json" => Ok(ReportFormat::Json),
        other => Err(format!("unknown format `{other}` (table|json)")),
    }
}

fn read_audio(path: &Path, sample_rate: u32) -> Result<cadenza_core::Waveform> {
    let w = if path.extension().is_some_and(|e| e == "f32") {
        audio::read_raw_f32(path, sample_rate)?
    } else {
        audio::read_wav(path)?
    };
    Ok(w)
}

fn write_audio(path: &Path, w: &cadenza_core::Waveform) -> Result<()> {
    if path.extension().is_some_and(|e| e == "f32") {
        audio::write_raw_f32(path, w)?;
    } else {
        audio::write_wav(path, w)?;
    }
    Ok(())
}

fn build_prefix(
    model: &SpeechModel,
    ref_audio: &Option<PathBuf>,
    speaker_seed: u64,
) -> Result<cadenza_core::ConditioningPrefix> {
    match ref_audio {
        Some(path) => {
            let wave = read_audio(path, model.cfg.sample_rate)?;
            Ok(prefix_from_reference(model, &wave, 25)?)
        }
        None => Ok(prefix_from_speaker_seed(model, speaker_seed, 4)?),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Bench { model, mode, format, frames_cap, text, speaker_seed, ref_audio } => {
            if frames_cap == 0 {
                bail!("--frames-cap must be at least 1");
            }
            let m = model.model()?;
            let input = SessionInput {
                input_tokens: tokens_from_text(&m.stub.vocab(), &text),
                input_features: None,
                prefix: build_prefix(&m, &ref_audio, speaker_seed)?,
                sampler: SamplerConfig { seed: m.cfg.seed, ..SamplerConfig::greedy() },
                opts: GenerateOptions { max_frames: frames_cap, min_frames: frames_cap },
            };
            let (report, output) = instrument_generation(&m, &input, mode)
                .map_err(|f| anyhow::anyhow!(f.to_string()))?;
            println!("{}", emit_report(&report, format));
            if format == ReportFormat::Table {
                println!(
                    "frames: {}   audio: {:.2}s   stop: {:?}",
                    output.frames.len(),
                    output.waveform.duration_s(),
                    output.stop
                );
            }
        }
        Command::Generate {
            model,
            text,
            out,
            ref_audio,
            speaker_seed,
            duration,
            frames,
            temperature,
            top_k,
        } => {
            let m = model.model()?;
            let frames_for = |secs: f64| -> usize {
                ((secs * m.cfg.sample_rate as f64) / m.cfg.frame_hop as f64).ceil().max(1.0)
                    as usize
            };
            let opts = match (duration, frames) {
                (Some(secs), None) => {
                    let n = frames_for(secs);
                    GenerateOptions { max_frames: n, min_frames: n }
                }
                (None, Some(n)) => GenerateOptions { max_frames: n.max(1), min_frames: 1 },
                (None, None) => {
                    let n = frames_for(2.0);
                    GenerateOptions { max_frames: n, min_frames: n }
                }
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            };
            let input = SessionInput {
                input_tokens: tokens_from_text(&m.stub.vocab(), &text),
                input_features: None,
                prefix: build_prefix(&m, &ref_audio, speaker_seed)?,
                sampler: SamplerConfig { temperature, top_k, seed: m.cfg.seed },
                opts,
            };
            let output = run_session(&m, &input)?;
            write_audio(&out, &output.waveform)?;
            println!(
                "wrote {} ({} frames, {:.2}s, stop {:?})",
                out.display(),
                output.frames.len(),
                output.waveform.duration_s(),
                output.stop
            );
        }
        Command::Train { model, stage, steps, out, trace } => {
            let schedule = StageSchedule::from_stage(stage)?;
            let mut m = model.model()?;
            let tcfg = m.cfg.train();
            let outcome = train(&mut m, &tcfg, &schedule, steps, trace.as_deref())?;
            let first = outcome.trace.first().expect("at least one step");
            let last = outcome.trace.last().expect("at least one step");
            println!(
                "stage {} | {} steps | combined {:.4} -> {:.4} (backbone {:.4} -> {:.4}, decoder {:.4} -> {:.4})",
                stage,
                steps,
                first.breakdown.combined,
                last.breakdown.combined,
                first.breakdown.backbone_loss,
                last.breakdown.backbone_loss,
                first.breakdown.decoder_loss,
                last.breakdown.decoder_loss,
            );
            m.save(&out)?;
            println!("checkpoint saved to {}", out.display());
        }
        Command::Encode { model, input, output, levels } => {
            let m = model.model()?;
            let levels = levels.unwrap_or(m.cfg.rvq_levels);
            let wave = read_audio(&input, m.cfg.sample_rate)?;
            let features = m.codec.analyze_waveform(&wave)?;
            let frames = m.codec.rvq_encode(&features, levels)?;
            std::fs::write(&output, write_frames(&frames))?;
            println!("encoded {} frames to {}", frames.len(), output.display());
        }
        Command::Decode { model, input, output, levels } => {
            let m = model.model()?;
            let levels = levels.unwrap_or(m.cfg.rvq_levels);
            let text = std::fs::read_to_string(&input)?;
            let frames = parse_frames(&text, m.cfg.rvq_levels, m.cfg.acoustic_vocab)?;
            let features = m.codec.rvq_decode(&frames, levels)?;
            let wave = m.codec.synth_waveform(&features)?;
            write_audio(&output, &wave)?;
            println!(
                "decoded {} frames ({:.2}s) to {}",
                frames.len(),
                wave.duration_s(),
                output.display()
            );
        }
        Command::Sim { a, b } => {
            let wa = read_audio(&a, 24000)?;
            let wb = read_audio(&b, 24000)?;
            let ea = extract_speaker_embedding(&wa)?;
            let eb = extract_speaker_embedding(&wb)?;
            let sim = compute_sim(&ea, &eb)?;
            println!("SIM {:.4} ({})", sim, ea.extractor_id);
        }
    }
    Ok(())
}
