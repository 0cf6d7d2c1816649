//! Frame-synchronous refinement of residual quantization levels.
//!
//! Given one frame's coarse code and the backbone hidden state, a small
//! causal transformer runs over an intra-frame sequence of length N:
//! position 0 holds the projected (c^0, h^B) pair, positions 1..N-1 hold the
//! embeddings of previously decided levels. Level j is read off position
//! j-1 through its own projection head, so level j can never see levels
//! above it. Nothing here depends on other frames: refinement is a pure
//! function of one frame's inputs.

use crate::config::RefinerConfig;
use crate::error::{Error, Result};
use crate::nn::{init_normal, linear_row, KvState, Trunk, TrunkCache, TrunkConfig};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::sampler::{Sampler, SamplerConfig};
use crate::token_domain::AcousticFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineInput {
    pub coarse_code: u32,
    pub backbone_hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Refiner {
    pub cfg: RefinerConfig,
    trunk: Trunk,
    /// d_backbone x d_r adapter for the backbone hidden state.
    h_proj: ParamId,
    /// v x d_r coarse-code table for position 0.
    c0_embed: ParamId,
    /// Per-level code tables for positions 1..N-1 (index j-1 embeds level j).
    level_embed: Vec<ParamId>,
    /// Per-level output heads, d_r x v each (index j-1 predicts level j).
    heads: Vec<ParamId>,
}

impl Refiner {
    pub fn new(store: &mut ParamStore, cfg: RefinerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d_r = cfg.d_r;
        let trunk = Trunk::new(
            store,
            "refiner.trunk",
            TrunkConfig::new(d_r, cfg.n_layers, cfg.n_heads),
            &mut rng,
        );
        let h_proj = store.alloc("refiner.h_proj", &[cfg.d_backbone, d_r]);
        init_normal(store.view_mut(h_proj), &mut rng, 1.0 / (cfg.d_backbone as f64).sqrt());
        let c0_embed = store.alloc("refiner.c0_embed", &[cfg.v, d_r]);
        init_normal(store.view_mut(c0_embed), &mut rng, 1.0);
        let mut level_embed = Vec::with_capacity(cfg.n_levels - 1);
        let mut heads = Vec::with_capacity(cfg.n_levels - 1);
        for j in 1..cfg.n_levels {
            let e = store.alloc(&format!("refiner.level_embed{j}"), &[cfg.v, d_r]);
            init_normal(store.view_mut(e), &mut rng, 1.0);
            level_embed.push(e);
            let h = store.alloc(&format!("refiner.head{j}"), &[d_r, cfg.v]);
            init_normal(store.view_mut(h), &mut rng, 1.0 / (d_r as f64).sqrt());
            heads.push(h);
        }
        Refiner { cfg, trunk, h_proj, c0_embed, level_embed, heads }
    }

    pub fn bind(store: &ParamStore, cfg: RefinerConfig) -> Result<Self> {
        let trunk = Trunk::bind(
            store,
            "refiner.trunk",
            TrunkConfig::new(cfg.d_r, cfg.n_layers, cfg.n_heads),
        )?;
        let mut level_embed = Vec::with_capacity(cfg.n_levels - 1);
        let mut heads = Vec::with_capacity(cfg.n_levels - 1);
        for j in 1..cfg.n_levels {
            level_embed.push(store.id(&format!("refiner.level_embed{j}"))?);
            heads.push(store.id(&format!("refiner.head{j}"))?);
        }
        Ok(Refiner {
            trunk,
            h_proj: store.id("refiner.h_proj")?,
            c0_embed: store.id("refiner.c0_embed")?,
            level_embed,
            heads,
            cfg,
        })
    }

    fn check_input(&self, input: &RefineInput) -> Result<()> {
        if input.coarse_code as usize >= self.cfg.v {
            return Err(Error::CodeOutOfRange { value: input.coarse_code, size: self.cfg.v });
        }
        if input.backbone_hidden.len() != self.cfg.d_backbone {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.d_backbone,
                got: input.backbone_hidden.len(),
            });
        }
        Ok(())
    }

    /// Position-0 embedding: projected hidden state plus coarse-code row.
    pub fn input_embedding(&self, ps: &ParamStore, input: &RefineInput) -> Vec<f64> {
        let d_r = self.cfg.d_r;
        let mut out = vec![0.0; d_r];
        linear_row(
            ps.view(self.h_proj),
            &input.backbone_hidden,
            self.cfg.d_backbone,
            d_r,
            &mut out,
        );
        let table = ps.view(self.c0_embed);
        let base = input.coarse_code as usize * d_r;
        for i in 0..d_r {
            out[i] += table[base + i];
        }
        out
    }

    fn level_embedding(&self, ps: &ParamStore, level: usize, code: u32) -> Vec<f64> {
        let d_r = self.cfg.d_r;
        let table = ps.view(self.level_embed[level - 1]);
        table[code as usize * d_r..(code as usize + 1) * d_r].to_vec()
    }

    fn head_logits(&self, ps: &ParamStore, level: usize, hidden: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.cfg.v];
        linear_row(ps.view(self.heads[level - 1]), hidden, self.cfg.d_r, self.cfg.v, &mut logits);
        logits
    }

    /// Logits for level `j` given the teacher-forced prefix `c^{1:j-1}`.
    pub fn level_logits(
        &self,
        ps: &ParamStore,
        input: &RefineInput,
        prefix: &[u32],
        level: usize,
    ) -> Result<Vec<f64>> {
        if level == 0 || level >= self.cfg.n_levels {
            return Err(Error::LevelOutOfRange { level, max: self.cfg.n_levels });
        }
        self.check_input(input)?;
        if prefix.len() != level - 1 {
            return Err(Error::ShapeMismatch(format!(
                "level {} needs a prefix of {} codes, got {}",
                level,
                level - 1,
                prefix.len()
            )));
        }
        for &c in prefix {
            if c as usize >= self.cfg.v {
                return Err(Error::CodeOutOfRange { value: c, size: self.cfg.v });
            }
        }
        let d_r = self.cfg.d_r;
        let mut inputs = vec![0.0; level * d_r];
        inputs[..d_r].copy_from_slice(&self.input_embedding(ps, input));
        for (i, &c) in prefix.iter().enumerate() {
            let emb = self.level_embedding(ps, i + 1, c);
            inputs[(i + 1) * d_r..(i + 2) * d_r].copy_from_slice(&emb);
        }
        let (hidden, _) = self.trunk.forward_batch(ps, &inputs);
        Ok(self.head_logits(ps, level, &hidden[(level - 1) * d_r..level * d_r]))
    }

    /// Generate the full N-level frame. Level 0 is the given coarse code;
    /// levels 1..N-1 are decoded sequentially, each conditioned on
    /// (c^0, h^B) and all previously decoded levels.
    pub fn refine_frame(
        &self,
        ps: &ParamStore,
        input: &RefineInput,
        sampler: SamplerConfig,
    ) -> Result<AcousticFrame> {
        self.check_input(input)?;
        let mut sampler = Sampler::new(sampler);
        let mut codes = Vec::with_capacity(self.cfg.n_levels);
        codes.push(input.coarse_code);
        let mut kv = KvState::new(self.cfg.n_layers);
        let mut emb = self.input_embedding(ps, input);
        for level in 1..self.cfg.n_levels {
            let hidden = self.trunk.step(ps, &mut kv, &emb);
            let logits = self.head_logits(ps, level, &hidden);
            let code = sampler.sample(&logits) as u32;
            codes.push(code);
            if level + 1 < self.cfg.n_levels {
                emb = self.level_embedding(ps, level, code);
            }
        }
        AcousticFrame::new(codes, self.cfg.v)
    }

    /// Log-probability of a complete refinement `codes = c^{1:N-1}`:
    /// the sum of per-level log-softmax terms of the factorized model.
    pub fn refinement_log_prob(
        &self,
        ps: &ParamStore,
        input: &RefineInput,
        codes: &[u32],
    ) -> Result<f64> {
        if codes.len() != self.cfg.n_levels - 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} refinement codes, got {}",
                self.cfg.n_levels - 1,
                codes.len()
            )));
        }
        let mut total = 0.0;
        for (i, &c) in codes.iter().enumerate() {
            let level = i + 1;
            let logits = self.level_logits(ps, input, &codes[..i], level)?;
            total += log_softmax_at(&logits, c as usize);
        }
        Ok(total)
    }

    /// Teacher-forced forward over the full intra-frame sequence.
    /// Returns per-level logits (levels 1..N-1) and the activation cache.
    pub fn forward_frame(
        &self,
        ps: &ParamStore,
        input: &RefineInput,
        teacher_codes: &[u32],
    ) -> Result<(Vec<Vec<f64>>, FrameCache)> {
        self.check_input(input)?;
        let n = self.cfg.n_levels;
        if teacher_codes.len() != n - 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} teacher codes, got {}",
                n - 1,
                teacher_codes.len()
            )));
        }
        let d_r = self.cfg.d_r;
        let mut inputs = vec![0.0; n * d_r];
        inputs[..d_r].copy_from_slice(&self.input_embedding(ps, input));
        for (i, &c) in teacher_codes.iter().enumerate() {
            let emb = self.level_embedding(ps, i + 1, c);
            inputs[(i + 1) * d_r..(i + 2) * d_r].copy_from_slice(&emb);
        }
        let (hidden, cache) = self.trunk.forward_batch(ps, &inputs);
        let logits: Vec<Vec<f64>> = (1..n)
            .map(|level| self.head_logits(ps, level, &hidden[(level - 1) * d_r..level * d_r]))
            .collect();
        Ok((logits, FrameCache { hidden, trunk: cache }))
    }

    /// Backward pass for [`Refiner::forward_frame`]. `d_logits` holds one
    /// gradient row per refinement level. Returns the gradient with respect
    /// to the backbone hidden state.
    pub fn backward_frame(
        &self,
        ps: &ParamStore,
        grads: &mut GradBuffer,
        input: &RefineInput,
        teacher_codes: &[u32],
        cache: &FrameCache,
        d_logits: &[Vec<f64>],
    ) -> Vec<f64> {
        let n = self.cfg.n_levels;
        let d_r = self.cfg.d_r;
        let v = self.cfg.v;
        assert_eq!(d_logits.len(), n - 1);
        let mut d_hidden = vec![0.0; n * d_r];
        for (i, dl) in d_logits.iter().enumerate() {
            let level = i + 1;
            let pos = level - 1;
            let h_row = &cache.hidden[pos * d_r..(pos + 1) * d_r];
            let w = ps.view(self.heads[level - 1]);
            for a in 0..d_r {
                let row = &w[a * v..(a + 1) * v];
                let mut acc = 0.0;
                for o in 0..v {
                    acc += row[o] * dl[o];
                }
                d_hidden[pos * d_r + a] += acc;
            }
            let dw = grads.view_mut(ps, self.heads[level - 1]);
            for a in 0..d_r {
                let xa = h_row[a];
                for o in 0..v {
                    dw[a * v + o] += xa * dl[o];
                }
            }
        }
        let d_inputs = self.trunk.backward_batch(ps, grads, &cache.trunk, &d_hidden);

        // Position 0: coarse-code table and the hidden-state adapter.
        let d_emb0 = &d_inputs[..d_r];
        {
            let base = input.coarse_code as usize * d_r;
            let dt = grads.view_mut(ps, self.c0_embed);
            for i in 0..d_r {
                dt[base + i] += d_emb0[i];
            }
        }
        let mut d_backbone_hidden = vec![0.0; self.cfg.d_backbone];
        {
            let w = ps.view(self.h_proj);
            for i in 0..self.cfg.d_backbone {
                let row = &w[i * d_r..(i + 1) * d_r];
                let mut acc = 0.0;
                for o in 0..d_r {
                    acc += row[o] * d_emb0[o];
                }
                d_backbone_hidden[i] = acc;
            }
            let dw = grads.view_mut(ps, self.h_proj);
            for i in 0..self.cfg.d_backbone {
                let xi = input.backbone_hidden[i];
                if xi == 0.0 {
                    continue;
                }
                for o in 0..d_r {
                    dw[i * d_r + o] += xi * d_emb0[o];
                }
            }
        }
        // Positions 1..N-1: level code tables.
        for (i, &c) in teacher_codes.iter().enumerate() {
            let pos = i + 1;
            let base = c as usize * d_r;
            let dt = grads.view_mut(ps, self.level_embed[i]);
            for k in 0..d_r {
                dt[base + k] += d_inputs[pos * d_r + k];
            }
        }
        d_backbone_hidden
    }
}

/// Activations kept between a teacher-forced frame forward and its backward.
#[derive(Debug, Clone)]
pub struct FrameCache {
    hidden: Vec<f64>,
    trunk: TrunkCache,
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}
