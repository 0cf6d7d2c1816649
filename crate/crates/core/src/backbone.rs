//! Autoregressive coarse-code generator.
//!
//! A small causal transformer consumes a conditioning prefix (speaker vector,
//! reference transcript, reference audio frames) followed by the interleaved
//! 1:2 text/audio stream, and predicts the next coarse code `c_t^0` while
//! exposing its hidden state `h_t^B` for the frame refiner.
//!
//! Inference runs through [`Backbone::prefill`] and [`Backbone::step`] over a
//! [`KvCache`]; training and equivalence checks run through
//! [`Backbone::forward_batch`], which computes the same values layer-major
//! without a cache.

use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::nn::{init_normal, linear_row, KvState, Trunk, TrunkCache, TrunkConfig};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::reasoner::ReasonerOutput;
use crate::sampler::{Sampler, SamplerConfig};
use crate::token_domain::{
    end_of_audio_code, AcousticFrame, InterleavedItem, InterleavedSequence, TextToken, TextVocab,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reference conditioning prepended to every generation session.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningPrefix {
    pub ref_audio_codes: Vec<AcousticFrame>,
    pub ref_text_tokens: Vec<TextToken>,
    /// Length-d speaker vector. An all-zero vector means "no speaker
    /// conditioning" and contributes no prefix position.
    pub speaker_embedding: Vec<f64>,
}

impl ConditioningPrefix {
    pub fn empty(d: usize) -> Self {
        ConditioningPrefix {
            ref_audio_codes: Vec::new(),
            ref_text_tokens: Vec::new(),
            speaker_embedding: vec![0.0; d],
        }
    }

    fn has_speaker(&self) -> bool {
        self.speaker_embedding.iter().any(|&x| x != 0.0)
    }

    /// Number of context positions this prefix occupies.
    pub fn len(&self) -> usize {
        usize::from(self.has_speaker()) + self.ref_text_tokens.len() + self.ref_audio_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One context position of a backbone sequence.
#[derive(Debug, Clone)]
pub enum BackboneItem<'a> {
    /// Projected speaker vector, one position at the front of the prefix.
    Speaker(&'a [f64]),
    /// Reference-transcript token, embedded through the backbone's own table.
    RefText(u32),
    /// Reference audio frame: the sum of all per-level code embeddings.
    RefFrame(&'a AcousticFrame),
    /// Interleaved text position. `None` rows stand for the pad token, which
    /// carries no reasoner signal.
    Text { e_row: Option<&'a [f64]>, h_row: Option<&'a [f64]> },
    /// Interleaved coarse-code position.
    Code(u32),
}

#[derive(Debug, Clone)]
pub struct BackboneStepOutput {
    pub logits: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Per-layer attention key/value history plus its fill level.
#[derive(Debug)]
pub struct KvCache {
    state: KvState,
    context_limit: usize,
}

impl KvCache {
    pub fn cached_length(&self) -> usize {
        self.state.len
    }

    pub fn context_limit(&self) -> usize {
        self.context_limit
    }

    /// Key and value history of one layer, `cached_length x d` each.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        (&self.state.k[l], &self.state.v[l])
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    trunk: Trunk,
    /// One `v x d` table per RVQ level; level 0 also embeds stream codes.
    level_embed: Vec<ParamId>,
    bias_text: ParamId,
    bias_audio: ParamId,
    /// d x d projection applied to the speaker vector.
    spk_proj: ParamId,
    /// Reference-transcript token table, `v_text x d`.
    ref_text_embed: ParamId,
    /// Output head, `d x v`.
    head: ParamId,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: BackboneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d;
        let trunk = Trunk::new(
            store,
            "backbone.trunk",
            TrunkConfig::new(d, cfg.n_layers, cfg.n_heads),
            &mut rng,
        );
        let mut level_embed = Vec::with_capacity(cfg.n_levels);
        for j in 0..cfg.n_levels {
            let id = store.alloc(&format!("backbone.level_embed{j}"), &[cfg.v, d]);
            init_normal(store.view_mut(id), &mut rng, 1.0);
            level_embed.push(id);
        }
        let bias_text = store.alloc("backbone.bias_text", &[d]);
        init_normal(store.view_mut(bias_text), &mut rng, 0.5);
        let bias_audio = store.alloc("backbone.bias_audio", &[d]);
        init_normal(store.view_mut(bias_audio), &mut rng, 0.5);
        let spk_proj = store.alloc("backbone.spk_proj", &[d, d]);
        init_normal(store.view_mut(spk_proj), &mut rng, 1.0 / (d as f64).sqrt());
        let ref_text_embed = store.alloc("backbone.ref_text_embed", &[cfg.v_text, d]);
        init_normal(store.view_mut(ref_text_embed), &mut rng, 1.0);
        let head = store.alloc("backbone.head", &[d, cfg.v]);
        init_normal(store.view_mut(head), &mut rng, 1.0 / (d as f64).sqrt());
        Backbone { cfg, trunk, level_embed, bias_text, bias_audio, spk_proj, ref_text_embed, head }
    }

    pub fn bind(store: &ParamStore, cfg: BackboneConfig) -> Result<Self> {
        let trunk = Trunk::bind(
            store,
            "backbone.trunk",
            TrunkConfig::new(cfg.d, cfg.n_layers, cfg.n_heads),
        )?;
        let mut level_embed = Vec::with_capacity(cfg.n_levels);
        for j in 0..cfg.n_levels {
            level_embed.push(store.id(&format!("backbone.level_embed{j}"))?);
        }
        Ok(Backbone {
            trunk,
            level_embed,
            bias_text: store.id("backbone.bias_text")?,
            bias_audio: store.id("backbone.bias_audio")?,
            spk_proj: store.id("backbone.spk_proj")?,
            ref_text_embed: store.id("backbone.ref_text_embed")?,
            head: store.id("backbone.head")?,
            cfg,
        })
    }

    pub fn end_of_audio(&self) -> u32 {
        end_of_audio_code(self.cfg.v)
    }

    /// Embed one context position into the model dimension.
    ///
    /// Text positions sum their reasoner embedding row, hidden-state row and
    /// the text modality bias; code positions sum the level-0 code embedding
    /// and the audio modality bias. Values must already be range-checked.
    pub fn embed_item(&self, ps: &ParamStore, item: &BackboneItem) -> Vec<f64> {
        let d = self.cfg.d;
        let mut out = vec![0.0; d];
        match item {
            BackboneItem::Speaker(vector) => {
                assert_eq!(vector.len(), d, "speaker vector must be length d");
                linear_row(ps.view(self.spk_proj), vector, d, d, &mut out);
            }
            BackboneItem::RefText(id) => {
                let table = ps.view(self.ref_text_embed);
                let base = *id as usize * d;
                let bias = ps.view(self.bias_text);
                for i in 0..d {
                    out[i] = table[base + i] + bias[i];
                }
            }
            BackboneItem::RefFrame(frame) => {
                assert_eq!(frame.n_levels(), self.cfg.n_levels, "frame level count");
                let bias = ps.view(self.bias_audio);
                out.copy_from_slice(bias);
                for (j, &table_id) in self.level_embed.iter().enumerate() {
                    let table = ps.view(table_id);
                    let base = frame.code(j) as usize * d;
                    for i in 0..d {
                        out[i] += table[base + i];
                    }
                }
            }
            BackboneItem::Text { e_row, h_row } => {
                let bias = ps.view(self.bias_text);
                out.copy_from_slice(bias);
                if let Some(e) = e_row {
                    for i in 0..d {
                        out[i] += e[i];
                    }
                }
                if let Some(h) = h_row {
                    for i in 0..d {
                        out[i] += h[i];
                    }
                }
            }
            BackboneItem::Code(c) => {
                let table = ps.view(self.level_embed[0]);
                let base = *c as usize * d;
                let bias = ps.view(self.bias_audio);
                for i in 0..d {
                    out[i] = table[base + i] + bias[i];
                }
            }
        }
        out
    }

    /// Scatter an embedding gradient back into the tables that produced it.
    /// Reasoner rows are frozen, so text-position gradients only reach the
    /// modality bias.
    pub fn embed_item_backward(
        &self,
        ps: &ParamStore,
        grads: &mut GradBuffer,
        item: &BackboneItem,
        d_emb: &[f64],
    ) {
        let d = self.cfg.d;
        match item {
            BackboneItem::Speaker(vector) => {
                let dw = grads.view_mut(ps, self.spk_proj);
                for i in 0..d {
                    let xi = vector[i];
                    if xi == 0.0 {
                        continue;
                    }
                    for o in 0..d {
                        dw[i * d + o] += xi * d_emb[o];
                    }
                }
            }
            BackboneItem::RefText(id) => {
                let base = *id as usize * d;
                let dt = grads.view_mut(ps, self.ref_text_embed);
                for i in 0..d {
                    dt[base + i] += d_emb[i];
                }
                let db = grads.view_mut(ps, self.bias_text);
                for i in 0..d {
                    db[i] += d_emb[i];
                }
            }
            BackboneItem::RefFrame(frame) => {
                for (j, &table_id) in self.level_embed.iter().enumerate() {
                    let base = frame.code(j) as usize * d;
                    let dt = grads.view_mut(ps, table_id);
                    for i in 0..d {
                        dt[base + i] += d_emb[i];
                    }
                }
                let db = grads.view_mut(ps, self.bias_audio);
                for i in 0..d {
                    db[i] += d_emb[i];
                }
            }
            BackboneItem::Text { .. } => {
                let db = grads.view_mut(ps, self.bias_text);
                for i in 0..d {
                    db[i] += d_emb[i];
                }
            }
            BackboneItem::Code(c) => {
                let base = *c as usize * d;
                let dt = grads.view_mut(ps, self.level_embed[0]);
                for i in 0..d {
                    dt[base + i] += d_emb[i];
                }
                let db = grads.view_mut(ps, self.bias_audio);
                for i in 0..d {
                    db[i] += d_emb[i];
                }
            }
        }
    }

    /// Expand a conditioning prefix into its context positions.
    pub fn prefix_items<'a>(&self, prefix: &'a ConditioningPrefix) -> Result<Vec<BackboneItem<'a>>> {
        let mut items = Vec::with_capacity(prefix.len());
        if prefix.speaker_embedding.len() != self.cfg.d {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.d,
                got: prefix.speaker_embedding.len(),
            });
        }
        if prefix.has_speaker() {
            items.push(BackboneItem::Speaker(&prefix.speaker_embedding));
        }
        for t in &prefix.ref_text_tokens {
            if t.id as usize >= self.cfg.v_text {
                return Err(Error::CodeOutOfRange { value: t.id, size: self.cfg.v_text });
            }
            items.push(BackboneItem::RefText(t.id));
        }
        for f in &prefix.ref_audio_codes {
            if f.n_levels() != self.cfg.n_levels {
                return Err(Error::ShapeMismatch(format!(
                    "reference frame has {} levels, codec uses {}",
                    f.n_levels(),
                    self.cfg.n_levels
                )));
            }
            for j in 0..f.n_levels() {
                if f.code(j) as usize >= self.cfg.v {
                    return Err(Error::CodeOutOfRange { value: f.code(j), size: self.cfg.v });
                }
            }
            items.push(BackboneItem::RefFrame(f));
        }
        Ok(items)
    }

    /// Encode the conditioning prefix into a fresh KV cache.
    pub fn prefill(&self, ps: &ParamStore, prefix: &ConditioningPrefix) -> Result<KvCache> {
        let items = self.prefix_items(prefix)?;
        if items.len() > self.cfg.context_limit {
            return Err(Error::ContextOverflow {
                needed: items.len(),
                limit: self.cfg.context_limit,
            });
        }
        let mut cache = KvCache {
            state: KvState::new(self.cfg.n_layers),
            context_limit: self.cfg.context_limit,
        };
        for item in &items {
            let emb = self.embed_item(ps, item);
            self.trunk.step(ps, &mut cache.state, &emb);
        }
        Ok(cache)
    }

    /// Advance the cache by one position and return logits over the coarse
    /// codebook plus the hidden state.
    pub fn step(
        &self,
        ps: &ParamStore,
        cache: &mut KvCache,
        input_embedding: &[f64],
    ) -> Result<BackboneStepOutput> {
        if cache.cached_length() >= cache.context_limit {
            return Err(Error::ContextOverflow {
                needed: cache.cached_length() + 1,
                limit: cache.context_limit,
            });
        }
        let hidden = self.trunk.step(ps, &mut cache.state, input_embedding);
        let logits = self.head_logits(ps, &hidden);
        Ok(BackboneStepOutput { logits, hidden })
    }

    pub fn head_logits(&self, ps: &ParamStore, hidden: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.cfg.v];
        linear_row(ps.view(self.head), hidden, self.cfg.d, self.cfg.v, &mut logits);
        logits
    }

    /// d_hidden += W_head d_logits; accumulates the head weight gradient.
    pub fn head_backward(
        &self,
        ps: &ParamStore,
        grads: &mut GradBuffer,
        hidden: &[f64],
        d_logits: &[f64],
        d_hidden: &mut [f64],
    ) {
        let d = self.cfg.d;
        let v = self.cfg.v;
        let w = ps.view(self.head);
        for i in 0..d {
            let row = &w[i * v..(i + 1) * v];
            let mut acc = 0.0;
            for o in 0..v {
                acc += row[o] * d_logits[o];
            }
            d_hidden[i] += acc;
        }
        let dw = grads.view_mut(ps, self.head);
        for i in 0..d {
            let xi = hidden[i];
            for o in 0..v {
                dw[i * v + o] += xi * d_logits[o];
            }
        }
    }

    /// Full-sequence forward over explicit items: the non-cached reference
    /// path and the training path. Returns per-position hidden rows and the
    /// trunk activation cache.
    pub fn forward_batch(
        &self,
        ps: &ParamStore,
        items: &[BackboneItem],
    ) -> Result<(Vec<f64>, TrunkCache)> {
        if items.len() > self.cfg.context_limit {
            return Err(Error::ContextOverflow {
                needed: items.len(),
                limit: self.cfg.context_limit,
            });
        }
        let d = self.cfg.d;
        let mut inputs = vec![0.0; items.len() * d];
        for (t, item) in items.iter().enumerate() {
            let emb = self.embed_item(ps, item);
            inputs[t * d..(t + 1) * d].copy_from_slice(&emb);
        }
        let (hidden, cache) = self.trunk.forward_batch(ps, &inputs);
        Ok((hidden, cache))
    }

    /// Backward pass matching [`Backbone::forward_batch`]. `d_hidden` is the
    /// gradient on the hidden rows (head and refiner contributions already
    /// accumulated by the caller).
    pub fn backward_batch(
        &self,
        ps: &ParamStore,
        grads: &mut GradBuffer,
        items: &[BackboneItem],
        cache: &TrunkCache,
        d_hidden: &[f64],
    ) {
        let d = self.cfg.d;
        let d_inputs = self.trunk.backward_batch(ps, grads, cache, d_hidden);
        for (t, item) in items.iter().enumerate() {
            self.embed_item_backward(ps, grads, item, &d_inputs[t * d..(t + 1) * d]);
        }
    }

    /// Start a streaming generation session over a prefilled cache.
    pub fn generate_stream<'a>(
        &'a self,
        ps: &'a ParamStore,
        prefix: &ConditioningPrefix,
        reasoner: &'a ReasonerOutput,
        sampler: SamplerConfig,
        opts: GenerateOptions,
    ) -> Result<BackboneStream<'a>> {
        if reasoner.is_empty() {
            return Err(Error::EmptyInput("reasoner output is empty".into()));
        }
        let cache = self.prefill(ps, prefix)?;
        Ok(BackboneStream {
            backbone: self,
            ps,
            reasoner,
            cache,
            sampler: Sampler::new(sampler),
            opts,
            frames_emitted: 0,
            pending_code: None,
            schedule: Vec::new(),
            stop: None,
            vocab: TextVocab::new(self.cfg.v_text).expect("vocab validated at config time"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Hard stop: at most this many frames are emitted.
    pub max_frames: usize,
    /// The end-of-audio code is suppressed until this many frames exist.
    pub min_frames: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { max_frames: 512, min_frames: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The model emitted the reserved end-of-audio code.
    EndOfAudio,
    /// The frame cap fired before end-of-audio.
    Capped,
}

/// Produces one `(c_t^0, h_t^B)` pair per call, consuming one text item per
/// two emitted codes. The iterator is pull-driven: wrapping it in a bounded
/// channel gives the producer/consumer contract for pipelined runs.
pub struct BackboneStream<'a> {
    backbone: &'a Backbone,
    ps: &'a ParamStore,
    reasoner: &'a ReasonerOutput,
    cache: KvCache,
    sampler: Sampler,
    opts: GenerateOptions,
    frames_emitted: usize,
    /// Code sampled last step, to be fed back before the next prediction.
    pending_code: Option<u32>,
    schedule: Vec<InterleavedItem>,
    stop: Option<StopReason>,
    vocab: TextVocab,
}

impl<'a> BackboneStream<'a> {
    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn frames_emitted(&self) -> usize {
        self.frames_emitted
    }

    pub fn cached_length(&self) -> usize {
        self.cache.cached_length()
    }

    /// The interleaved schedule walked so far (consumed text plus emitted
    /// codes, in stream order).
    pub fn schedule(&self) -> InterleavedSequence {
        InterleavedSequence { items: self.schedule.clone() }
    }

    fn feed(&mut self, item: BackboneItem) -> Result<BackboneStepOutput> {
        let emb = self.backbone.embed_item(self.ps, &item);
        self.backbone.step(self.ps, &mut self.cache, &emb)
    }

    fn text_item_for_group(&self, group: usize) -> (TextToken, BackboneItem<'a>) {
        if group < self.reasoner.len() {
            let token = self.reasoner.text_tokens[group];
            let item = BackboneItem::Text {
                e_row: Some(self.reasoner.text_embeddings.row(group)),
                h_row: Some(self.reasoner.hidden_states.row(group)),
            };
            (token, item)
        } else {
            // Audio outlasts the transcript: keep the 1:2 schedule alive with
            // the pad token, which carries no reasoner rows.
            (self.vocab.pad(), BackboneItem::Text { e_row: None, h_row: None })
        }
    }

    fn next_frame(&mut self) -> Option<Result<(u32, Vec<f64>)>> {
        if self.stop.is_some() {
            return None;
        }
        if self.frames_emitted >= self.opts.max_frames {
            self.stop = Some(StopReason::Capped);
            return None;
        }
        let frame = self.frames_emitted;
        let out = if frame % 2 == 0 {
            // New group: flush the previous pair's trailing code into the
            // context, then feed the group's text item.
            if let Some(code) = self.pending_code.take() {
                if let Err(e) = self.feed(BackboneItem::Code(code)) {
                    return Some(Err(e));
                }
            }
            let (token, item) = self.text_item_for_group(frame / 2);
            self.schedule.push(InterleavedItem::Text(token));
            self.feed(item)
        } else {
            let code = self.pending_code.take().expect("odd frame follows an emitted code");
            self.feed(BackboneItem::Code(code))
        };
        let out = match out {
            Ok(o) => o,
            Err(e) => return Some(Err(e)),
        };
        let eoa = self.backbone.end_of_audio() as usize;
        let code = if self.frames_emitted < self.opts.min_frames {
            let mut masked = out.logits.clone();
            masked[eoa] = f64::NEG_INFINITY;
            self.sampler.sample(&masked) as u32
        } else {
            self.sampler.sample(&out.logits) as u32
        };
        if code as usize == eoa {
            self.stop = Some(StopReason::EndOfAudio);
            return None;
        }
        self.schedule.push(InterleavedItem::Code(code));
        self.pending_code = Some(code);
        self.frames_emitted += 1;
        Some(Ok((code, out.hidden)))
    }
}

impl<'a> Iterator for BackboneStream<'a> {
    type Item = Result<(u32, Vec<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame()
    }
}
