//! Speaker-similarity machinery: a deterministic band-statistics embedding
//! extractor and cosine similarity.
//!
//! The embedding is 192 numbers from windowed band energies: per-band
//! log-energy means, per-band log-energy deviations, and the mean
//! normalized spectral shape. Enough structure for relative comparisons
//! between synthetic speakers; no pretrained model involved.

use crate::codec::Waveform;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 192;
pub const EXTRACTOR_ID: &str = "toy-band-stats-v1";

const WINDOW: usize = 512;
const HOP: usize = 256;
const BANDS: usize = 64;
const MIN_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
    pub extractor_id: String,
}

/// Cosine similarity between two speaker embeddings: symmetric and
/// invariant to positive rescaling of either argument.
pub fn compute_sim(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch { expected: a.vector.len(), got: b.vector.len() });
    }
    let na: f64 = a.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Deterministic 192-dimensional statistics vector over band energies.
pub fn extract_speaker_embedding(w: &Waveform) -> Result<SpeakerEmbedding> {
    let need = (MIN_SECONDS * w.sample_rate as f64).ceil() as usize;
    if w.samples.len() < need.max(WINDOW) {
        return Err(Error::TooShort { got: w.samples.len(), need: need.max(WINDOW) });
    }
    let n_windows = (w.samples.len() - WINDOW) / HOP + 1;
    let mut log_energy = vec![vec![0.0f64; n_windows]; BANDS];
    let mut shape_sum = vec![0.0f64; BANDS];
    for win in 0..n_windows {
        let frame = &w.samples[win * HOP..win * HOP + WINDOW];
        let mut energies = [0.0f64; BANDS];
        let mut total = 0.0;
        for (b, e) in energies.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (s, &x) in frame.iter().enumerate() {
                let basis = (std::f64::consts::PI * (b as f64 + 0.5) * (s as f64 + 0.5)
                    / WINDOW as f64)
                    .cos();
                acc += x * basis;
            }
            *e = acc * acc;
            total += *e;
        }
        for b in 0..BANDS {
            log_energy[b][win] = (energies[b] + 1e-12).ln();
            if total > 0.0 {
                shape_sum[b] += energies[b] / total;
            }
        }
    }
    let inv_n = 1.0 / n_windows as f64;
    let mut vector = Vec::with_capacity(EMBEDDING_DIM);
    let means: Vec<f64> =
        log_energy.iter().map(|band| band.iter().sum::<f64>() * inv_n).collect();
    vector.extend_from_slice(&means);
    for (band, mean) in log_energy.iter().zip(&means) {
        let var = band.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * inv_n;
        vector.push(var.sqrt());
    }
    for s in &shape_sum {
        vector.push(s * inv_n);
    }
    debug_assert_eq!(vector.len(), EMBEDDING_DIM);
    if vector.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(SpeakerEmbedding { vector, extractor_id: EXTRACTOR_ID.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, seconds: f64, rate: u32) -> Waveform {
        let n = (seconds * rate as f64) as usize;
        Waveform {
            samples: (0..n)
                .map(|i| (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin() * 0.4)
                .collect(),
            sample_rate: rate,
        }
    }

    #[test]
    fn identical_and_orthogonal_vectors() {
        let a = SpeakerEmbedding { vector: vec![1.0, 0.0, 2.0], extractor_id: "t".into() };
        assert!((compute_sim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = SpeakerEmbedding { vector: vec![0.0, 3.0, 0.0], extractor_id: "t".into() };
        assert_eq!(compute_sim(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v1: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v2: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = SpeakerEmbedding { vector: v1.clone(), extractor_id: "t".into() };
            let b = SpeakerEmbedding { vector: v2, extractor_id: "t".into() };
            let scaled =
                SpeakerEmbedding { vector: v1.iter().map(|x| x * 2.0).collect(), extractor_id: "t".into() };
            let ab = compute_sim(&a, &b).unwrap();
            let ba = compute_sim(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((compute_sim(&scaled, &b).unwrap() - ab).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let a = SpeakerEmbedding { vector: vec![0.0; 4], extractor_id: "t".into() };
        let b = SpeakerEmbedding { vector: vec![1.0; 4], extractor_id: "t".into() };
        assert!(matches!(compute_sim(&a, &b).unwrap_err(), Error::ZeroVector));
    }

    #[test]
    fn extraction_is_deterministic_and_shaped() {
        let w = tone(440.0, 0.7, 16000);
        let a = extract_speaker_embedding(&w).unwrap();
        let b = extract_speaker_embedding(&w).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), EMBEDDING_DIM);
        assert_eq!(a.extractor_id, EXTRACTOR_ID);
    }

    #[test]
    fn short_input_rejected() {
        let w = tone(440.0, 0.1, 16000);
        assert!(matches!(extract_speaker_embedding(&w).unwrap_err(), Error::TooShort { .. }));
    }

    #[test]
    fn different_tones_are_distinguishable() {
        let a = extract_speaker_embedding(&tone(300.0, 0.6, 16000)).unwrap();
        let b = extract_speaker_embedding(&tone(2500.0, 0.6, 16000)).unwrap();
        let sim = compute_sim(&a, &b).unwrap();
        assert!(sim < 0.999, "distinct spectra should not be identical: {}", sim);
    }
}
