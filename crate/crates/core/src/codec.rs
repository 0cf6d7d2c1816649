//! Toy RVQ codec: analysis framing, residual quantization against k-means
//! codebooks, and causal filterbank synthesis.
//!
//! Entry 0 of every codebook is pinned to the zero vector, so quantizing a
//! residual can never increase its norm and reconstruction error is exactly
//! non-increasing in the number of levels. On the coarse level the top index
//! is reserved for the end-of-audio control code and excluded from nearest-
//! neighbor search.
//!
//! Synthesis filters span two hops: an orthonormal main window plus a small
//! decaying tail that bleeds into the following frame only, keeping sample
//! `s` dependent on feature rows `t <= floor(s / hop)`.

use crate::config::CodecConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::ParamStore;
use crate::token_domain::{end_of_audio_code, AcousticFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output gain keeping toy-scale features inside [-1, 1] without clipping.
const SYNTH_GAIN: f64 = 0.25;
/// Relative amplitude of the cross-frame filter tail.
const TAIL_GAIN: f64 = 0.1;
pub const KMEANS_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub level: usize,
    /// `v x d_c`, entry 0 pinned to zero.
    pub entries: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone)]
pub struct RvqCodec {
    pub cfg: CodecConfig,
    codebooks: Vec<Codebook>,
    /// `d_c x (2 * frame_hop)` synthesis filters.
    synth_filters: Mat,
}

impl RvqCodec {
    /// Codec with untrained (zero) codebooks and seeded filters.
    pub fn untrained(cfg: CodecConfig) -> Self {
        let codebooks = (0..cfg.n_levels)
            .map(|level| Codebook { level, entries: Mat::zeros(cfg.v, cfg.d_c) })
            .collect();
        let synth_filters = build_filters(&cfg);
        RvqCodec { cfg, codebooks, synth_filters }
    }

    /// Train per-level codebooks with seeded k-means on the given features;
    /// each level clusters the residuals left by the levels before it.
    pub fn train(cfg: CodecConfig, features: &Mat) -> Result<Self> {
        if features.cols() != cfg.d_c {
            return Err(Error::DimensionMismatch { expected: cfg.d_c, got: features.cols() });
        }
        let mut codec = Self::untrained(cfg.clone());
        let mut residuals = features.clone();
        let eoa = end_of_audio_code(cfg.v) as usize;
        for level in 0..cfg.n_levels {
            // Entry 0 stays zero; the coarse level also keeps the reserved
            // end-of-audio slot out of the trainable set.
            let trainable: Vec<usize> = (1..cfg.v).filter(|&i| level != 0 || i != eoa).collect();
            let centroids = kmeans(
                &residuals,
                trainable.len(),
                KMEANS_ITERS,
                cfg.seed ^ (level as u64).wrapping_mul(0x9e37),
            );
            for (slot, &idx) in trainable.iter().enumerate() {
                codec.codebooks[level]
                    .entries
                    .row_mut(idx)
                    .copy_from_slice(centroids.row(slot));
            }
            // Subtract this level's quantization to expose the next residual.
            for r in 0..residuals.rows() {
                let code = codec.nearest_code(level, residuals.row(r));
                let entry = codec.codebooks[level].entries.row(code as usize).to_vec();
                let row = residuals.row_mut(r);
                for i in 0..row.len() {
                    row[i] -= entry[i];
                }
            }
        }
        Ok(codec)
    }

    pub fn from_parts(cfg: CodecConfig, codebooks: Vec<Codebook>) -> Result<Self> {
        if codebooks.len() != cfg.n_levels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} codebooks, got {}",
                cfg.n_levels,
                codebooks.len()
            )));
        }
        for cb in &codebooks {
            if cb.entries.rows() != cfg.v || cb.entries.cols() != cfg.d_c {
                return Err(Error::ShapeMismatch(format!(
                    "codebook {} is {}x{}, want {}x{}",
                    cb.level,
                    cb.entries.rows(),
                    cb.entries.cols(),
                    cfg.v,
                    cfg.d_c
                )));
            }
        }
        let synth_filters = build_filters(&cfg);
        Ok(RvqCodec { cfg, codebooks, synth_filters })
    }

    pub fn codebook(&self, level: usize) -> &Codebook {
        &self.codebooks[level]
    }

    /// Write codec state into the shared checkpoint store.
    pub fn install(&self, store: &mut ParamStore) {
        for (j, cb) in self.codebooks.iter().enumerate() {
            let name = format!("codec.codebook{j}");
            let id = store
                .id(&name)
                .unwrap_or_else(|_| store.alloc(&name, &[self.cfg.v, self.cfg.d_c]));
            store.view_mut(id).copy_from_slice(cb.entries.data());
        }
        let name = "codec.synth_filters";
        let id = store
            .id(name)
            .unwrap_or_else(|_| store.alloc(name, &[self.cfg.d_c, 2 * self.cfg.frame_hop]));
        store.view_mut(id).copy_from_slice(self.synth_filters.data());
    }

    pub fn from_store(store: &ParamStore, cfg: CodecConfig) -> Result<Self> {
        let mut codec = Self::untrained(cfg.clone());
        for j in 0..cfg.n_levels {
            let id = store.id(&format!("codec.codebook{j}"))?;
            codec.codebooks[j].entries.data_mut().copy_from_slice(store.view(id));
        }
        let id = store.id("codec.synth_filters")?;
        codec.synth_filters.data_mut().copy_from_slice(store.view(id));
        Ok(codec)
    }

    /// Nearest codeword by squared Euclidean distance, lowest index on ties.
    /// The reserved end-of-audio slot never competes on the coarse level.
    fn nearest_code(&self, level: usize, target: &[f64]) -> u32 {
        let cb = &self.codebooks[level];
        let skip = if level == 0 { Some(end_of_audio_code(self.cfg.v) as usize) } else { None };
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.cfg.v {
            if Some(i) == skip {
                continue;
            }
            let e = cb.entries.row(i);
            let mut dist = 0.0;
            for k in 0..self.cfg.d_c {
                let diff = target[k] - e[k];
                dist += diff * diff;
            }
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        best as u32
    }

    /// Quantize feature rows into N-level frames using the first `levels`
    /// levels; the remaining levels are zero-filled (entry 0 decodes to the
    /// zero vector, so they contribute nothing).
    pub fn rvq_encode(&self, features: &Mat, levels: usize) -> Result<Vec<AcousticFrame>> {
        if features.cols() != self.cfg.d_c {
            return Err(Error::DimensionMismatch { expected: self.cfg.d_c, got: features.cols() });
        }
        if levels == 0 || levels > self.cfg.n_levels {
            return Err(Error::LevelOutOfRange { level: levels, max: self.cfg.n_levels });
        }
        let mut frames = Vec::with_capacity(features.rows());
        for r in 0..features.rows() {
            let mut residual = features.row(r).to_vec();
            let mut codes = vec![0u32; self.cfg.n_levels];
            for (level, code_slot) in codes.iter_mut().enumerate().take(levels) {
                let code = self.nearest_code(level, &residual);
                *code_slot = code;
                let entry = self.codebooks[level].entries.row(code as usize);
                for k in 0..self.cfg.d_c {
                    residual[k] -= entry[k];
                }
            }
            frames.push(AcousticFrame::new(codes, self.cfg.v)?);
        }
        Ok(frames)
    }

    /// Sum the first `levels` codeword rows per frame.
    pub fn rvq_decode(&self, frames: &[AcousticFrame], levels: usize) -> Result<Mat> {
        if levels == 0 || levels > self.cfg.n_levels {
            return Err(Error::LevelOutOfRange { level: levels, max: self.cfg.n_levels });
        }
        let mut out = Mat::zeros(frames.len(), self.cfg.d_c);
        for (r, frame) in frames.iter().enumerate() {
            if frame.n_levels() != self.cfg.n_levels {
                return Err(Error::ShapeMismatch(format!(
                    "frame {} has {} levels, codec uses {}",
                    r,
                    frame.n_levels(),
                    self.cfg.n_levels
                )));
            }
            let row = out.row_mut(r);
            for level in 0..levels {
                let code = frame.code(level);
                if code as usize >= self.cfg.v {
                    return Err(Error::CodeOutOfRange { value: code, size: self.cfg.v });
                }
                let entry = self.codebooks[level].entries.row(code as usize);
                for k in 0..self.cfg.d_c {
                    row[k] += entry[k];
                }
            }
        }
        Ok(out)
    }

    /// Reconstruct `rows * frame_hop` samples from feature rows.
    pub fn synth_waveform(&self, features: &Mat) -> Result<Waveform> {
        let mut state = SynthState::new();
        self.synth_chunk(features, &mut state)
    }

    /// Streaming synthesis: consumes the next feature rows, carrying the
    /// previous row across calls so chunked output concatenates exactly.
    pub fn synth_chunk(&self, features: &Mat, state: &mut SynthState) -> Result<Waveform> {
        if features.cols() != self.cfg.d_c {
            return Err(Error::DimensionMismatch { expected: self.cfg.d_c, got: features.cols() });
        }
        let hop = self.cfg.frame_hop;
        let d_c = self.cfg.d_c;
        let mut samples = vec![0.0; features.rows() * hop];
        for t in 0..features.rows() {
            let out = &mut samples[t * hop..(t + 1) * hop];
            let row = features.row(t);
            for k in 0..d_c {
                let fk = row[k];
                if fk == 0.0 {
                    continue;
                }
                let filt = self.synth_filters.row(k);
                for s in 0..hop {
                    out[s] += SYNTH_GAIN * fk * filt[s];
                }
            }
            if let Some(prev) = &state.prev_row {
                for k in 0..d_c {
                    let fk = prev[k];
                    if fk == 0.0 {
                        continue;
                    }
                    let filt = self.synth_filters.row(k);
                    for s in 0..hop {
                        out[s] += SYNTH_GAIN * fk * filt[hop + s];
                    }
                }
            }
            state.prev_row = Some(row.to_vec());
        }
        for s in samples.iter_mut() {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Waveform { samples, sample_rate: self.cfg.sample_rate })
    }

    /// Frame the waveform and project each hop window onto the analysis side
    /// of the filterbank. Row t reads samples `[t*hop, (t+1)*hop)` only.
    pub fn analyze_waveform(&self, w: &Waveform) -> Result<Mat> {
        let hop = self.cfg.frame_hop;
        if w.samples.len() < hop {
            return Err(Error::TooShort { got: w.samples.len(), need: hop });
        }
        let rows = w.samples.len() / hop;
        let mut out = Mat::zeros(rows, self.cfg.d_c);
        for t in 0..rows {
            let window = &w.samples[t * hop..(t + 1) * hop];
            let row = out.row_mut(t);
            for k in 0..self.cfg.d_c {
                let filt = self.synth_filters.row(k);
                let mut acc = 0.0;
                for s in 0..hop {
                    acc += window[s] * filt[s];
                }
                row[k] = acc / SYNTH_GAIN;
            }
        }
        Ok(out)
    }

    /// Grouped streaming decode. Emits one chunk per `group` full frames and
    /// flushes the partial tail, concatenating sample-exactly with unbatched
    /// synthesis of the same frames.
    pub fn decode_batched<'a>(
        &'a self,
        frames: impl IntoIterator<Item = AcousticFrame> + 'a,
        group: usize,
    ) -> impl Iterator<Item = Result<Waveform>> + 'a {
        BatchedDecode {
            codec: self,
            inner: frames.into_iter(),
            group: group.max(1),
            state: SynthState::new(),
            pending: Vec::new(),
            done: false,
        }
    }
}

/// Cross-chunk synthesis carry: the previous feature row, whose filter tail
/// bleeds into the next frame.
#[derive(Debug, Clone, Default)]
pub struct SynthState {
    prev_row: Option<Vec<f64>>,
}

impl SynthState {
    pub fn new() -> Self {
        Self::default()
    }
}

struct BatchedDecode<'a, I: Iterator<Item = AcousticFrame>> {
    codec: &'a RvqCodec,
    inner: I,
    group: usize,
    state: SynthState,
    pending: Vec<AcousticFrame>,
    done: bool,
}

impl<'a, I: Iterator<Item = AcousticFrame>> BatchedDecode<'a, I> {
    fn emit(&mut self) -> Result<Waveform> {
        let frames = std::mem::take(&mut self.pending);
        let features = self.codec.rvq_decode(&frames, self.codec.cfg.n_levels)?;
        self.codec.synth_chunk(&features, &mut self.state)
    }
}

impl<'a, I: Iterator<Item = AcousticFrame>> Iterator for BatchedDecode<'a, I> {
    type Item = Result<Waveform>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        for frame in self.inner.by_ref() {
            self.pending.push(frame);
            if self.pending.len() == self.group {
                return Some(self.emit());
            }
        }
        self.done = true;
        if self.pending.is_empty() {
            None
        } else {
            // Final partial group is flushed, never dropped.
            Some(self.emit())
        }
    }
}

/// Orthonormal main window (Gram-Schmidt over seeded-perturbed cosine rows)
/// plus a decaying seeded tail for the second hop.
fn build_filters(cfg: &CodecConfig) -> Mat {
    let hop = cfg.frame_hop;
    let d_c = cfg.d_c;
    assert!(d_c <= hop, "filterbank needs d_c <= frame_hop");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf117);
    let mut main: Vec<Vec<f64>> = (0..d_c)
        .map(|k| {
            (0..hop)
                .map(|s| {
                    let c = (std::f64::consts::PI * (k as f64 + 0.5) * (s as f64 + 0.5)
                        / hop as f64)
                        .cos();
                    c * (2.0 / hop as f64).sqrt() + 0.02 * rng.gen_range(-1.0..1.0)
                })
                .collect()
        })
        .collect();
    for k in 0..d_c {
        for prev in 0..k {
            let dot: f64 = main[k].iter().zip(&main[prev]).map(|(a, b)| a * b).sum();
            for s in 0..hop {
                main[k][s] -= dot * main[prev][s];
            }
        }
        let norm: f64 = main[k].iter().map(|x| x * x).sum::<f64>().sqrt();
        for s in 0..hop {
            main[k][s] /= norm;
        }
    }
    Mat::from_fn(d_c, 2 * hop, |k, s| {
        if s < hop {
            main[k][s]
        } else {
            let decay = 1.0 - (s - hop) as f64 / hop as f64;
            TAIL_GAIN * decay * rng.gen_range(-1.0..1.0) / (hop as f64).sqrt()
        }
    })
}

/// Plain Lloyd iterations with seeded sampling for the initial centroids;
/// empty clusters keep their previous centroid.
fn kmeans(data: &Mat, k: usize, iters: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.cols();
    let n = data.rows();
    let mut centroids = Mat::zeros(k, d);
    for c in 0..k {
        if n > 0 {
            let pick = rng.gen_range(0..n);
            centroids.row_mut(c).copy_from_slice(data.row(pick));
        }
    }
    if n == 0 {
        return centroids;
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (r, slot) in assign.iter_mut().enumerate() {
            let row = data.row(r);
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for c in 0..k {
                let ce = centroids.row(c);
                let mut dist = 0.0;
                for i in 0..d {
                    let diff = row[i] - ce[i];
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            *slot = best;
        }
        let mut sums = Mat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            let row = data.row(r);
            let s = sums.row_mut(c);
            for i in 0..d {
                s[i] += row[i];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let s = sums.row(c).to_vec();
                let ce = centroids.row_mut(c);
                for i in 0..d {
                    ce[i] = s[i] / counts[c] as f64;
                }
            }
        }
    }
    centroids
}
