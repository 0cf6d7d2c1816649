//! Code sampling: greedy argmax by default, optional temperature and top-k.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// 0 selects greedy argmax with lowest-index tie-breaking.
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 0.0, top_k: None, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
}

pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Sampler { cfg, rng }
    }

    pub fn sample(&mut self, logits: &[f64]) -> usize {
        if self.cfg.is_greedy() {
            return argmax(logits);
        }
        let mut indices: Vec<usize> = (0..logits.len()).collect();
        if let Some(k) = self.cfg.top_k {
            let k = k.max(1).min(logits.len());
            indices.sort_by(|&a, &b| {
                logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal)
            });
            indices.truncate(k);
            indices.sort_unstable();
        }
        let max = indices.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = indices
            .iter()
            .map(|&i| ((logits[i] - max) / self.cfg.temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut draw = self.rng.gen::<f64>() * total;
        for (w, &i) in weights.iter().zip(&indices) {
            draw -= w;
            if draw <= 0.0 {
                return i;
            }
        }
        *indices.last().unwrap()
    }
}
