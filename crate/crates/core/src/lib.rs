//! Desk-scale streaming speech-generation runtime.
//!
//! The pipeline couples four stages: a frozen reasoner stub providing text
//! embeddings and hidden states, an autoregressive backbone generating
//! coarse acoustic codes over an interleaved 1:2 text/audio schedule with
//! KV-cache prefill, a frame-synchronous refiner filling in the residual
//! quantization levels, and a causal codec reconstructing the waveform in
//! grouped chunks. Training (two-stage NLL objective), gradient
//! verification, and a latency harness with TTFT/RTF accounting round out
//! the runtime.

// Numeric kernels use plain index loops on purpose: the loop bodies mirror
// the per-coordinate math and mix reads across several buffers.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod audio;
pub mod backbone;
pub mod codec;
pub mod config;
pub mod error;
pub mod harness;
pub mod mat;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod reasoner;
pub mod refiner;
pub mod sampler;
pub mod token_domain;
pub mod training;

pub use backbone::{Backbone, ConditioningPrefix, GenerateOptions, KvCache};
pub use codec::{RvqCodec, Waveform};
pub use config::RuntimeConfig;
pub use error::{Error, Result};
pub use harness::{compute_rtf, instrument_generation, LatencyReport, TimingMode};
pub use model::SpeechModel;
pub use reasoner::{ReasonerOutput, ReasonerStub};
pub use refiner::Refiner;
pub use sampler::SamplerConfig;
pub use token_domain::{AcousticFrame, InterleavedSequence, TextToken};
