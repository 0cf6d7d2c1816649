//! Deterministic stand-in for the semantic reasoner.
//!
//! The real system puts a pretrained multimodal model here; downstream
//! modules only consume its output shapes. This stub maps an input token
//! sequence to a response token sequence via a fixed echo policy, then
//! produces text embeddings and multimodal hidden states from seeded
//! tables. Frozen by construction: nothing in it ever mutates.

use crate::config::StubConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::init_normal;
use crate::token_domain::{TextToken, TextVocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerOutput {
    /// E rows, one per response token.
    pub text_embeddings: Mat,
    /// H rows, same shape as the embeddings.
    pub hidden_states: Mat,
    pub text_tokens: Vec<TextToken>,
}

impl ReasonerOutput {
    pub fn len(&self) -> usize {
        self.text_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text_tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReasonerStub {
    pub cfg: StubConfig,
    vocab: TextVocab,
    /// v_text x d token embedding table.
    embed: Vec<f64>,
    /// d x d mixing layer producing hidden states from embeddings.
    mix: Vec<f64>,
    /// d-vector folding optional input features into the hidden states.
    feat_gain: Vec<f64>,
}

impl ReasonerStub {
    pub fn new(cfg: StubConfig) -> Result<Self> {
        if cfg.d == 0 {
            return Err(Error::Config("stub embedding dimension must be >= 1".into()));
        }
        let vocab = TextVocab::new(cfg.v_text)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut embed = vec![0.0; cfg.v_text * cfg.d];
        init_normal(&mut embed, &mut rng, 1.0);
        let mut mix = vec![0.0; cfg.d * cfg.d];
        init_normal(&mut mix, &mut rng, 1.0 / (cfg.d as f64).sqrt());
        let mut feat_gain = vec![0.0; cfg.d];
        init_normal(&mut feat_gain, &mut rng, 1.0);
        Ok(ReasonerStub { cfg, vocab, embed, mix, feat_gain })
    }

    pub fn vocab(&self) -> TextVocab {
        self.vocab
    }

    /// The fixed echo policy: each input token maps to one content token,
    /// followed by a single end-of-sequence token.
    pub fn response_tokens(&self, input_tokens: &[TextToken]) -> Vec<TextToken> {
        let content_span = (self.cfg.v_text - 2) as u64;
        let mut out: Vec<TextToken> = input_tokens
            .iter()
            .map(|t| {
                let mixed = (t.id as u64)
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add(self.cfg.seed);
                let id = 2 + (mixed % content_span) as u32;
                self.vocab.token(id).expect("content id in range")
            })
            .collect();
        out.push(self.vocab.eos());
        out
    }

    /// Map input tokens (and optional frame features) to text embeddings and
    /// multimodal hidden states. Deterministic: identical inputs and seed
    /// give bit-identical matrices.
    pub fn reason(
        &self,
        input_tokens: &[TextToken],
        input_features: Option<&Mat>,
    ) -> Result<ReasonerOutput> {
        self.reason_observed(input_tokens, input_features, |_| {})
    }

    /// Same as [`ReasonerStub::reason`], invoking `observer` with the row
    /// index right after each (E, H) row pair is produced. The latency
    /// harness uses this to timestamp incremental text output.
    pub fn reason_observed(
        &self,
        input_tokens: &[TextToken],
        input_features: Option<&Mat>,
        mut observer: impl FnMut(usize),
    ) -> Result<ReasonerOutput> {
        if input_tokens.is_empty() {
            return Err(Error::EmptyInput("reasoner needs at least one input token".into()));
        }
        let d = self.cfg.d;
        let tokens = self.response_tokens(input_tokens);
        let feat = self.fold_features(input_features);
        let t_len = tokens.len();
        let mut e = Mat::zeros(t_len, d);
        let mut h = Mat::zeros(t_len, d);
        for (t, token) in tokens.iter().enumerate() {
            let base = token.id as usize * d;
            e.row_mut(t).copy_from_slice(&self.embed[base..base + d]);
            let e_row = e.row(t).to_vec();
            let h_row = h.row_mut(t);
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += e_row[j] * self.mix[j * d + i];
                }
                if let Some(f) = feat.as_deref() {
                    acc += 0.1 * self.feat_gain[i] * f[i];
                }
                h_row[i] = acc.tanh();
            }
            observer(t);
        }
        Ok(ReasonerOutput { text_embeddings: e, hidden_states: h, text_tokens: tokens })
    }

    /// Column means of the feature block, folded cyclically into d slots.
    fn fold_features(&self, features: Option<&Mat>) -> Option<Vec<f64>> {
        let f = features?;
        if f.rows() == 0 || f.cols() == 0 {
            return None;
        }
        let d = self.cfg.d;
        let mut folded = vec![0.0; d];
        let mut counts = vec![0usize; d];
        for c in 0..f.cols() {
            let mut mean = 0.0;
            for r in 0..f.rows() {
                mean += f.row(r)[c];
            }
            mean /= f.rows() as f64;
            folded[c % d] += mean;
            counts[c % d] += 1;
        }
        for i in 0..d {
            if counts[i] > 0 {
                folded[i] /= counts[i] as f64;
            }
        }
        Some(folded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(seed: u64) -> ReasonerStub {
        ReasonerStub::new(StubConfig { d: 16, v_text: 32, seed }).unwrap()
    }

    fn tokens(stub: &ReasonerStub, ids: &[u32]) -> Vec<TextToken> {
        ids.iter().map(|&i| stub.vocab().token(i).unwrap()).collect()
    }

    #[test]
    fn deterministic_across_calls() {
        let s = stub(9);
        let input = tokens(&s, &[4, 5, 6]);
        let a = s.reason(&input, None).unwrap();
        let b = s.reason(&input, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shapes_follow_echo_policy() {
        let s = stub(9);
        let input = tokens(&s, &[4, 5, 6]);
        let out = s.reason(&input, None).unwrap();
        assert_eq!(out.len(), 4, "echo plus eos");
        assert_eq!(out.text_embeddings.rows(), 4);
        assert_eq!(out.text_embeddings.cols(), 16);
        assert_eq!(out.hidden_states.rows(), 4);
        assert_eq!(out.hidden_states.cols(), 16);
        assert!(out.text_embeddings.is_finite());
        assert!(out.hidden_states.is_finite());
        assert!(out.text_tokens.last().unwrap().is_eos);
    }

    #[test]
    fn seed_changes_output() {
        let base = stub(0);
        let input = tokens(&base, &[4, 5]);
        let reference = base.reason(&input, None).unwrap();
        for seed in 1..=20 {
            let other = stub(seed);
            let out = other.reason(&input, None).unwrap();
            assert_ne!(
                out.text_embeddings, reference.text_embeddings,
                "seed {} produced identical embeddings",
                seed
            );
        }
    }

    #[test]
    fn empty_input_rejected() {
        let s = stub(9);
        assert!(matches!(s.reason(&[], None).unwrap_err(), Error::EmptyInput(_)));
    }

    #[test]
    fn hidden_states_differ_from_embeddings() {
        let s = stub(9);
        let input = tokens(&s, &[4]);
        let out = s.reason(&input, None).unwrap();
        assert_ne!(out.text_embeddings.row(0), out.hidden_states.row(0));
    }

    #[test]
    fn features_steer_hidden_states_only() {
        let s = stub(9);
        let input = tokens(&s, &[4, 5]);
        let plain = s.reason(&input, None).unwrap();
        let feat = Mat::from_fn(3, 5, |r, c| (r + c) as f64 * 0.3);
        let with_feat = s.reason(&input, Some(&feat)).unwrap();
        assert_eq!(plain.text_embeddings, with_feat.text_embeddings);
        assert_ne!(plain.hidden_states, with_feat.hidden_states);
    }
}
