//! Session assembly: turning raw text/audio into model inputs and running
//! end-to-end generation.

use crate::backbone::{ConditioningPrefix, GenerateOptions, StopReason};
use crate::codec::Waveform;
use crate::error::Result;
use crate::harness::sim::{extract_speaker_embedding, SpeakerEmbedding};
use crate::harness::{instrument_generation, TimingMode};
use crate::mat::Mat;
use crate::model::SpeechModel;
use crate::nn::init_normal;
use crate::sampler::SamplerConfig;
use crate::token_domain::{AcousticFrame, InterleavedSequence, TextToken, TextVocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SessionInput {
    pub input_tokens: Vec<TextToken>,
    /// Optional input-audio features for the reasoner (speech-to-speech).
    pub input_features: Option<Mat>,
    pub prefix: ConditioningPrefix,
    pub sampler: SamplerConfig,
    pub opts: GenerateOptions,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub waveform: Waveform,
    pub frames: Vec<AcousticFrame>,
    pub schedule: InterleavedSequence,
    pub stop: Option<StopReason>,
    pub reasoner_tokens: usize,
}

/// There is no real tokenizer; bytes map deterministically onto the content
/// id range.
pub fn tokens_from_text(vocab: &TextVocab, text: &str) -> Vec<TextToken> {
    let lo = vocab.first_content_id();
    let span = vocab.size as u32 - lo;
    text.bytes()
        .map(|b| {
            let id = lo + (b as u32) % span;
            vocab.token(id).expect("content id in range")
        })
        .collect()
}

/// Project a 192-dim extractor embedding into the backbone dimension with a
/// fixed seeded map (unit-normalized input, so scale is stable).
pub fn adapt_speaker_embedding(emb: &SpeakerEmbedding, d: usize, seed: u64) -> Vec<f64> {
    let n = emb.vector.len();
    let norm = emb.vector.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let mut proj = vec![0.0; d * n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xadab);
    init_normal(&mut proj, &mut rng, 1.0 / (n as f64).sqrt());
    (0..d)
        .map(|i| {
            let row = &proj[i * n..(i + 1) * n];
            row.iter().zip(&emb.vector).map(|(w, x)| w * x / norm).sum()
        })
        .collect()
}

/// Voice-cloning prefix from a reference recording: analysis frames encoded
/// through the codec plus the adapted speaker embedding. The reference must
/// be long enough for the embedding extractor (0.5 s).
pub fn prefix_from_reference(
    model: &SpeechModel,
    reference: &Waveform,
    max_ref_frames: usize,
) -> Result<ConditioningPrefix> {
    let features = model.codec.analyze_waveform(reference)?;
    let keep = features.rows().min(max_ref_frames.max(1));
    let mut head = Mat::zeros(keep, features.cols());
    for r in 0..keep {
        head.row_mut(r).copy_from_slice(features.row(r));
    }
    let ref_audio_codes = model.codec.rvq_encode(&head, model.codec.cfg.n_levels)?;
    let emb = extract_speaker_embedding(reference)?;
    let speaker_embedding = adapt_speaker_embedding(&emb, model.backbone.cfg.d, model.cfg.seed);
    Ok(ConditioningPrefix { ref_audio_codes, ref_text_tokens: Vec::new(), speaker_embedding })
}

/// Prefix for a synthetic speaker seed, mirroring the training data layout.
pub fn prefix_from_speaker_seed(
    model: &SpeechModel,
    speaker_seed: u64,
    ref_frames: usize,
) -> Result<ConditioningPrefix> {
    let gen = crate::training::SyntheticGenerator {
        stub: &model.stub,
        codec: &model.codec,
        d: model.backbone.cfg.d,
    };
    let pair = gen.generate_pair(&crate::training::PairSpec {
        seed: speaker_seed.wrapping_mul(31).wrapping_add(7),
        speaker_seed,
        frames: ref_frames.max(1),
    })?;
    Ok(pair.prefix)
}

/// Run a full generation session (sequential order) and return the audio.
pub fn run_session(model: &SpeechModel, input: &SessionInput) -> Result<SessionOutput> {
    let (_, output) = instrument_generation(model, input, TimingMode::Sequential)
        .map_err(|failure| crate::error::Error::from(*failure))?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RuntimeConfig;

    fn tiny_cfg() -> RuntimeConfig {
        RuntimeConfig {
            embed_dim: 16,
            backbone_layers: 1,
            backbone_heads: 2,
            acoustic_vocab: 16,
            context_limit: 512,
            refiner_dim: 8,
            refiner_layers: 1,
            refiner_heads: 2,
            rvq_levels: 3,
            codec_dim: 4,
            frame_hop: 64,
            sample_rate: 8000,
            text_vocab: 32,
            ..RuntimeConfig::default()
        }
    }

    #[test]
    fn text_tokenization_is_deterministic_and_in_range() {
        let vocab = TextVocab::new(32).unwrap();
        let a = tokens_from_text(&vocab, "hello world");
        let b = tokens_from_text(&vocab, "hello world");
        assert_eq!(a, b);
        assert!(a.iter().all(|t| !t.is_pad && !t.is_eos && (t.id as usize) < 32));
    }

    #[test]
    fn session_produces_audio_with_valid_schedule() {
        let model = SpeechModel::seeded(tiny_cfg()).unwrap();
        let vocab = model.stub.vocab();
        let input = SessionInput {
            input_tokens: tokens_from_text(&vocab, "hi"),
            input_features: None,
            prefix: prefix_from_speaker_seed(&model, 3, 4).unwrap(),
            sampler: SamplerConfig::greedy(),
            opts: GenerateOptions { max_frames: 12, min_frames: 12 },
        };
        let out = run_session(&model, &input).unwrap();
        assert_eq!(out.frames.len(), 12);
        assert_eq!(out.waveform.samples.len(), 12 * model.cfg.frame_hop);
        assert!(crate::token_domain::validate_ratio(&out.schedule));
        for f in &out.frames {
            assert_eq!(f.n_levels(), model.cfg.rvq_levels);
        }
    }

    #[test]
    fn reference_prefix_roundtrip() {
        let model = SpeechModel::seeded(tiny_cfg()).unwrap();
        // Build a reference clip out of the codec itself.
        let speaker = crate::training::SyntheticSpeaker::new(9, model.cfg.codec_dim);
        let vocab = model.stub.vocab();
        let tokens = tokens_from_text(&vocab, "ref");
        let features = speaker.features(&tokens, 80, 5);
        let wave = model.codec.synth_waveform(&features).unwrap();
        assert!(wave.duration_s() >= 0.5);
        let prefix = prefix_from_reference(&model, &wave, 6).unwrap();
        assert_eq!(prefix.ref_audio_codes.len(), 6);
        assert_eq!(prefix.speaker_embedding.len(), model.backbone.cfg.d);
        assert!(prefix.speaker_embedding.iter().any(|&x| x != 0.0));
    }
}
