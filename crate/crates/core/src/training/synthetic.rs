//! Desk-scale analog of the two-stage data pipeline: deterministic text via
//! the reasoner stub, deterministic target features via a procedural
//! generator keyed to the response tokens, with timbre keyed to a speaker
//! seed so reference and target audio share speaker statistics.

use crate::backbone::ConditioningPrefix;
use crate::codec::RvqCodec;
use crate::error::Result;
use crate::mat::Mat;
use crate::reasoner::ReasonerStub;
use crate::token_domain::TextToken;
use crate::training::TrainingBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hash64(x: u64) -> u64 {
    let mut h = x.wrapping_mul(0x9e3779b97f4a7c15);
    h ^= h >> 32;
    h = h.wrapping_mul(0xd6e8feb86659fd93);
    h ^ (h >> 32)
}

/// Signed unit value derived from (token, channel); drives the content
/// component of a feature channel.
fn content_value(token_id: u32, channel: usize, seed: u64) -> f64 {
    let h = hash64(token_id as u64 ^ (channel as u64) << 20 ^ seed);
    (h as f64 / u64::MAX as f64) * 2.0 - 1.0
}

/// A synthetic voice: per-channel gains, slow oscillations, and an active
/// channel mask, all drawn from the speaker seed.
#[derive(Debug, Clone)]
pub struct SyntheticSpeaker {
    pub seed: u64,
    envelope: Vec<f64>,
    rates: Vec<f64>,
    phases: Vec<f64>,
}

impl SyntheticSpeaker {
    pub fn new(seed: u64, d_c: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(seed ^ 0x5eed));
        let envelope = (0..d_c)
            .map(|_| {
                let gain = rng.gen_range(0.2..1.4);
                if rng.gen_bool(0.3) {
                    gain * 0.15
                } else {
                    gain
                }
            })
            .collect();
        let rates = (0..d_c).map(|_| rng.gen_range(0.05..0.9)).collect();
        let phases = (0..d_c).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        SyntheticSpeaker { seed, envelope, rates, phases }
    }

    /// Feature rows for `frames` steps. Frame t is governed by response
    /// token t/2 under the 1:2 schedule; tokens past the transcript repeat
    /// the last one.
    pub fn features(&self, tokens: &[TextToken], frames: usize, content_seed: u64) -> Mat {
        let d_c = self.envelope.len();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(hash64(
            content_seed ^ self.seed.rotate_left(17) ^ tokens.iter().map(|t| t.id as u64).sum::<u64>(),
        ));
        Mat::from_fn(frames, d_c, |t, k| {
            let group = t / 2;
            let token = tokens
                .get(group.min(tokens.len().saturating_sub(1)))
                .map_or(0, |tok| tok.id);
            let osc = (self.rates[k] * t as f64 + self.phases[k]).sin();
            let content = content_value(token, k, content_seed);
            let noise = noise_rng.gen_range(-1.0..1.0);
            self.envelope[k] * (0.6 * osc + 0.5 * content + 0.15 * noise)
        })
    }

    /// Mean per-channel magnitude profile, the statistic that separates
    /// speakers.
    pub fn profile(&self) -> &[f64] {
        &self.envelope
    }
}

/// Multi-speaker feature pool for codec codebook training.
pub fn codec_training_features(d_c: usize, seed: u64, rows: usize) -> Mat {
    let speakers: Vec<SyntheticSpeaker> =
        (0..4).map(|i| SyntheticSpeaker::new(seed.wrapping_add(i * 7919), d_c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hash64(seed ^ 0xc0de));
    let mut out = Mat::zeros(rows, d_c);
    let per = rows.div_ceil(speakers.len());
    let mut r = 0;
    for (si, sp) in speakers.iter().enumerate() {
        let tokens: Vec<TextToken> = (0..8)
            .map(|_| TextToken { id: rng.gen_range(2..64), is_pad: false, is_eos: false })
            .collect();
        let block = sp.features(&tokens, per, seed ^ (si as u64));
        for t in 0..per {
            if r >= rows {
                break;
            }
            out.row_mut(r).copy_from_slice(block.row(t));
            r += 1;
        }
    }
    out
}

/// Inputs for one synthetic training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub seed: u64,
    pub speaker_seed: u64,
    /// Target length in frames (L >= 1).
    pub frames: usize,
}

pub struct SyntheticGenerator<'a> {
    pub stub: &'a ReasonerStub,
    pub codec: &'a RvqCodec,
    /// Backbone model dimension, for the speaker embedding.
    pub d: usize,
}

impl<'a> SyntheticGenerator<'a> {
    pub fn generate_pair(&self, spec: &PairSpec) -> Result<TrainingBatch> {
        let frames = spec.frames.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(spec.seed));
        let vocab = self.stub.vocab();
        let content_lo = vocab.first_content_id();
        let content_hi = self.stub.cfg.v_text as u32;
        let n_input = (frames / 4).max(1);
        let input: Vec<TextToken> = (0..n_input)
            .map(|_| vocab.token(rng.gen_range(content_lo..content_hi)).unwrap())
            .collect();
        let reasoner_out = self.stub.reason(&input, None)?;

        let speaker = SyntheticSpeaker::new(spec.speaker_seed, self.codec.cfg.d_c);
        let features = speaker.features(&reasoner_out.text_tokens, frames, spec.seed);
        let target_frames = self.codec.rvq_encode(&features, self.codec.cfg.n_levels)?;

        // Reference clip: same speaker, different content.
        let ref_tokens: Vec<TextToken> = (0..2)
            .map(|_| vocab.token(rng.gen_range(content_lo..content_hi)).unwrap())
            .collect();
        let ref_features = speaker.features(&ref_tokens, 4, hash64(spec.seed ^ 0xbeef));
        let ref_audio_codes = self.codec.rvq_encode(&ref_features, self.codec.cfg.n_levels)?;
        let mut spk_rng = ChaCha8Rng::seed_from_u64(hash64(spec.speaker_seed ^ 0x5bea));
        let speaker_embedding = (0..self.d).map(|_| spk_rng.gen_range(-1.0..1.0)).collect();

        Ok(TrainingBatch {
            reasoner_out,
            target_frames,
            prefix: ConditioningPrefix {
                ref_audio_codes,
                ref_text_tokens: ref_tokens,
                speaker_embedding,
            },
        })
    }
}
