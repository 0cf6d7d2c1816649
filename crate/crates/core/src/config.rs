//! Runtime configuration.
//!
//! A single flat key-value text file covers every module. Lines are
//! `key = value`, `#` starts a comment, unknown keys are rejected so typos
//! surface early.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct StubConfig {
    /// Embedding dimension, shared with the backbone input space.
    pub d: usize,
    /// Text vocabulary size (pad and eos included).
    pub v_text: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Acoustic codebook size; value `v - 1` is the reserved end-of-audio code.
    pub v: usize,
    pub context_limit: usize,
    /// RVQ levels, for embedding multi-level reference frames.
    pub n_levels: usize,
    /// Text vocabulary size, for embedding reference transcripts.
    pub v_text: usize,
    pub seed: u64,
    /// Arithmetic is single-threaded with stable summation order; when set,
    /// prefill+step is asserted bit-exact against the full forward pass.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerConfig {
    pub d_r: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Total RVQ levels including the coarse level 0.
    pub n_levels: usize,
    pub v: usize,
    /// Backbone hidden dimension feeding the input projection.
    pub d_backbone: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub n_levels: usize,
    pub v: usize,
    pub d_c: usize,
    pub frame_hop: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Distinct synthetic batches cycled by the training loop.
    pub pool_size: usize,
    /// Frames per synthetic target sample.
    pub sample_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub text_vocab: usize,
    pub acoustic_vocab: usize,
    pub backbone_layers: usize,
    pub backbone_heads: usize,
    pub context_limit: usize,
    pub refiner_dim: usize,
    pub refiner_layers: usize,
    pub refiner_heads: usize,
    pub rvq_levels: usize,
    pub codec_dim: usize,
    pub frame_hop: usize,
    pub sample_rate: u32,
    /// Frames concatenated per codec-decoder chunk.
    pub decode_group: usize,
    /// Bounded-buffer budget between pipelined stages, in frames.
    pub frame_budget: usize,
    pub deterministic: bool,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub pool_size: usize,
    pub sample_frames: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            seed: 42,
            embed_dim: 64,
            text_vocab: 512,
            acoustic_vocab: 256,
            backbone_layers: 4,
            backbone_heads: 4,
            context_limit: 2048,
            refiner_dim: 32,
            refiner_layers: 2,
            refiner_heads: 4,
            rvq_levels: 8,
            codec_dim: 16,
            frame_hop: 480,
            sample_rate: 24000,
            decode_group: 4,
            frame_budget: 8,
            deterministic: true,
            lr: 5e-5,
            momentum: 0.9,
            clip_norm: 1.0,
            batch_size: 4,
            pool_size: 4,
            sample_frames: 16,
        }
    }
}

impl RuntimeConfig {
    pub fn stub(&self) -> StubConfig {
        StubConfig { d: self.embed_dim, v_text: self.text_vocab, seed: self.seed ^ 0x5457 }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            d: self.embed_dim,
            n_layers: self.backbone_layers,
            n_heads: self.backbone_heads,
            v: self.acoustic_vocab,
            context_limit: self.context_limit,
            n_levels: self.rvq_levels,
            v_text: self.text_vocab,
            seed: self.seed ^ 0xb0b0,
            deterministic: self.deterministic,
        }
    }

    pub fn refiner(&self) -> RefinerConfig {
        RefinerConfig {
            d_r: self.refiner_dim,
            n_layers: self.refiner_layers,
            n_heads: self.refiner_heads,
            n_levels: self.rvq_levels,
            v: self.acoustic_vocab,
            d_backbone: self.embed_dim,
            seed: self.seed ^ 0xdec0,
        }
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            n_levels: self.rvq_levels,
            v: self.acoustic_vocab,
            d_c: self.codec_dim,
            frame_hop: self.frame_hop,
            sample_rate: self.sample_rate,
            seed: self.seed ^ 0xc0dec,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            pool_size: self.pool_size,
            sample_frames: self.sample_frames,
            seed: self.seed ^ 0x7a17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.backbone_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of backbone_heads {}",
                self.embed_dim, self.backbone_heads
            )));
        }
        if self.refiner_dim == 0 || self.refiner_dim % self.refiner_heads != 0 {
            return Err(Error::Config(format!(
                "refiner_dim {} must be a positive multiple of refiner_heads {}",
                self.refiner_dim, self.refiner_heads
            )));
        }
        if self.acoustic_vocab < 2 {
            return Err(Error::Config("acoustic_vocab must be >= 2".into()));
        }
        if self.text_vocab < 3 {
            return Err(Error::Config("text_vocab must be >= 3 (pad, eos, content)".into()));
        }
        if self.rvq_levels < 2 {
            return Err(Error::Config("rvq_levels must be >= 2".into()));
        }
        if self.context_limit == 0 || self.frame_hop == 0 || self.decode_group == 0 {
            return Err(Error::Config("context_limit, frame_hop, decode_group must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RuntimeConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{}`", v))
        }
        match key {
            "seed" => self.seed = num(value)?,
            "embed_dim" => self.embed_dim = num(value)?,
            "text_vocab" => self.text_vocab = num(value)?,
            "acoustic_vocab" => self.acoustic_vocab = num(value)?,
            "backbone_layers" => self.backbone_layers = num(value)?,
            "backbone_heads" => self.backbone_heads = num(value)?,
            "context_limit" => self.context_limit = num(value)?,
            "refiner_dim" => self.refiner_dim = num(value)?,
            "refiner_layers" => self.refiner_layers = num(value)?,
            "refiner_heads" => self.refiner_heads = num(value)?,
            "rvq_levels" => self.rvq_levels = num(value)?,
            "codec_dim" => self.codec_dim = num(value)?,
            "frame_hop" => self.frame_hop = num(value)?,
            "sample_rate" => self.sample_rate = num(value)?,
            "decode_group" => self.decode_group = num(value)?,
            "frame_budget" => self.frame_budget = num(value)?,
            "deterministic" => self.deterministic = num(value)?,
            "lr" => self.lr = num(value)?,
            "momentum" => self.momentum = num(value)?,
            "clip_norm" => self.clip_norm = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "pool_size" => self.pool_size = num(value)?,
            "sample_frames" => self.sample_frames = num(value)?,
            other => return Err(format!("unknown key `{}`", other)),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{} = {}", k, v);
        };
        kv("seed", self.seed.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("text_vocab", self.text_vocab.to_string());
        kv("acoustic_vocab", self.acoustic_vocab.to_string());
        kv("backbone_layers", self.backbone_layers.to_string());
        kv("backbone_heads", self.backbone_heads.to_string());
        kv("context_limit", self.context_limit.to_string());
        kv("refiner_dim", self.refiner_dim.to_string());
        kv("refiner_layers", self.refiner_layers.to_string());
        kv("refiner_heads", self.refiner_heads.to_string());
        kv("rvq_levels", self.rvq_levels.to_string());
        kv("codec_dim", self.codec_dim.to_string());
        kv("frame_hop", self.frame_hop.to_string());
        kv("sample_rate", self.sample_rate.to_string());
        kv("decode_group", self.decode_group.to_string());
        kv("frame_budget", self.frame_budget.to_string());
        kv("deterministic", self.deterministic.to_string());
        kv("lr", format!("{:e}", self.lr));
        kv("momentum", self.momentum.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("pool_size", self.pool_size.to_string());
        kv("sample_frames", self.sample_frames.to_string());
        out
    }
}

impl std::str::FromStr for RuntimeConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        Self::parse_text(text)
    }
}
