//! Two-stage training: joint coarse+refinement NLL with equal weighting,
//! then refiner-only fine-tuning with the coarse generator frozen.

pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod synthetic;

pub use gradcheck::grad_check;
pub use losses::{
    backbone_loss, backbone_loss_grad, combined_loss, decoder_loss, decoder_loss_grad,
    LossBreakdown, StageSchedule,
};
pub use optim::MomentumSgd;
pub use synthetic::{PairSpec, SyntheticGenerator, SyntheticSpeaker};

use crate::backbone::{Backbone, BackboneItem, ConditioningPrefix};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::SpeechModel;
use crate::params::GradBuffer;
use crate::reasoner::ReasonerOutput;
use crate::refiner::{RefineInput, Refiner};
use crate::token_domain::AcousticFrame;
use std::io::Write;
use std::path::Path;

/// One synthetic (transcript, audio) pair with its conditioning prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub reasoner_out: ReasonerOutput,
    pub target_frames: Vec<AcousticFrame>,
    pub prefix: ConditioningPrefix,
}

/// Teacher-forced backbone context for one sample: the prefix positions
/// followed by the interleaved 1:2 stream, plus the index of the position
/// whose output predicts each frame's coarse code.
pub fn build_training_items<'a>(
    backbone: &Backbone,
    batch: &'a TrainingBatch,
) -> Result<(Vec<BackboneItem<'a>>, Vec<usize>)> {
    let frames = &batch.target_frames;
    if frames.is_empty() {
        return Err(Error::EmptyInput("training sample has no frames".into()));
    }
    let mut items = backbone.prefix_items(&batch.prefix)?;
    let reasoner = &batch.reasoner_out;
    let mut predictor_pos = Vec::with_capacity(frames.len());
    let groups = frames.len().div_ceil(2);
    for g in 0..groups {
        let text_item = if g < reasoner.len() {
            BackboneItem::Text {
                e_row: Some(reasoner.text_embeddings.row(g)),
                h_row: Some(reasoner.hidden_states.row(g)),
            }
        } else {
            BackboneItem::Text { e_row: None, h_row: None }
        };
        predictor_pos.push(items.len());
        items.push(text_item);
        items.push(BackboneItem::Code(frames[2 * g].code(0)));
        if 2 * g + 1 < frames.len() {
            predictor_pos.push(items.len() - 1);
            items.push(BackboneItem::Code(frames[2 * g + 1].code(0)));
        }
    }
    Ok((items, predictor_pos))
}

/// Mean losses over a batch of samples. When `grads` is given, accumulates
/// the weighted gradient of the combined objective; with a frozen backbone
/// only the refiner side is differentiated.
pub fn batch_objective(
    backbone: &Backbone,
    refiner: &Refiner,
    ps: &crate::params::ParamStore,
    schedule: &StageSchedule,
    batch: &[TrainingBatch],
    mut grads: Option<&mut GradBuffer>,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let d = backbone.cfg.d;
    let v = backbone.cfg.v;
    let n_levels = refiner.cfg.n_levels;
    let inv_b = 1.0 / batch.len() as f64;
    let w_backbone = (1.0 - schedule.lambda) * inv_b;
    let w_decoder = schedule.lambda * inv_b;
    let mut sum_backbone = 0.0;
    let mut sum_decoder = 0.0;

    for sample in batch {
        let (items, predictor_pos) = build_training_items(backbone, sample)?;
        let (hidden, trunk_cache) = backbone.forward_batch(ps, &items)?;
        let frames = &sample.target_frames;
        let l = frames.len();

        // Coarse loss over the predictor positions.
        let mut logit_rows = Mat::zeros(l, v);
        for (t, &pos) in predictor_pos.iter().enumerate() {
            let row = backbone.head_logits(ps, &hidden[pos * d..(pos + 1) * d]);
            logit_rows.row_mut(t).copy_from_slice(&row);
        }
        let targets: Vec<u32> = frames.iter().map(|f| f.code(0)).collect();
        let (loss_b, dlogits_b) = backbone_loss_grad(&logit_rows, &targets)?;
        sum_backbone += loss_b;

        // Refinement loss, teacher-forced per frame.
        let mut blocks = Vec::with_capacity(l);
        let mut frame_caches = Vec::with_capacity(l);
        let mut refine_inputs = Vec::with_capacity(l);
        let mut teacher: Vec<Vec<u32>> = Vec::with_capacity(l);
        for (t, frame) in frames.iter().enumerate() {
            let pos = predictor_pos[t];
            let input = RefineInput {
                coarse_code: frame.code(0),
                backbone_hidden: hidden[pos * d..(pos + 1) * d].to_vec(),
            };
            let codes: Vec<u32> = (1..n_levels).map(|j| frame.code(j)).collect();
            let (level_logits, cache) = refiner.forward_frame(ps, &input, &codes)?;
            let mut block = Mat::zeros(n_levels - 1, v);
            for (j, row) in level_logits.iter().enumerate() {
                block.row_mut(j).copy_from_slice(row);
            }
            blocks.push(block);
            frame_caches.push(cache);
            refine_inputs.push(input);
            teacher.push(codes);
        }
        let (loss_d, dlogits_d) = decoder_loss_grad(&blocks, &teacher)?;
        sum_decoder += loss_d;

        let Some(g) = grads.as_deref_mut() else { continue };
        let mut d_hidden = vec![0.0; hidden.len()];
        if !schedule.backbone_frozen && w_backbone != 0.0 {
            for (t, &pos) in predictor_pos.iter().enumerate() {
                let scaled: Vec<f64> =
                    dlogits_b.row(t).iter().map(|x| x * w_backbone).collect();
                backbone.head_backward(
                    ps,
                    g,
                    &hidden[pos * d..(pos + 1) * d],
                    &scaled,
                    &mut d_hidden[pos * d..(pos + 1) * d],
                );
            }
        }
        for t in 0..l {
            let scaled: Vec<Vec<f64>> = (0..n_levels - 1)
                .map(|j| dlogits_d[t].row(j).iter().map(|x| x * w_decoder).collect())
                .collect();
            let d_bh = refiner.backward_frame(
                ps,
                g,
                &refine_inputs[t],
                &teacher[t],
                &frame_caches[t],
                &scaled,
            );
            if !schedule.backbone_frozen {
                let pos = predictor_pos[t];
                for i in 0..d {
                    d_hidden[pos * d + i] += d_bh[i];
                }
            }
        }
        if !schedule.backbone_frozen {
            backbone.backward_batch(ps, g, &items, &trunk_cache, &d_hidden);
        }
    }
    Ok((sum_backbone * inv_b, sum_decoder * inv_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub breakdown: LossBreakdown,
    /// Post-clip global gradient norm over the trainable set.
    pub grad_norm: f64,
}

impl TraceRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.breakdown.backbone_loss,
            self.breakdown.decoder_loss,
            self.breakdown.lambda,
            self.breakdown.combined,
            self.grad_norm
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
}

/// Run `steps` optimizer steps over a seeded synthetic batch pool.
///
/// The pool is generated up front (pool_size batches of batch_size samples,
/// drawn from a small set of synthetic speakers) and cycled in order, so a
/// run is fully determined by the config seeds. The loss trace is appended
/// to `trace_path` when given, one delimited line per step:
/// `step,backbone_loss,decoder_loss,lambda,combined,grad_norm`.
pub fn train(
    model: &mut SpeechModel,
    tcfg: &TrainConfig,
    schedule: &StageSchedule,
    steps: usize,
    trace_path: Option<&Path>,
) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(Error::EmptyInput("training needs at least one step".into()));
    }
    let pool: Vec<Vec<TrainingBatch>> = {
        let gen = SyntheticGenerator {
            stub: &model.stub,
            codec: &model.codec,
            d: model.backbone.cfg.d,
        };
        (0..tcfg.pool_size.max(1))
            .map(|p| {
                (0..tcfg.batch_size.max(1))
                    .map(|i| {
                        let idx = (p * tcfg.batch_size + i) as u64;
                        gen.generate_pair(&PairSpec {
                            seed: tcfg.seed.wrapping_add(idx * 131),
                            speaker_seed: tcfg.seed ^ (idx % 3),
                            frames: tcfg.sample_frames.max(1),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };

    // Codec weights live in the same store but are trained by k-means, not
    // by gradient descent; the reasoner is frozen by construction.
    let mut frozen: Vec<&str> = vec!["codec."];
    if schedule.backbone_frozen {
        frozen.push("backbone.");
    }
    let mut opt = MomentumSgd::new(&model.store, tcfg, &frozen);
    let mut grads = GradBuffer::zeros_like(&model.store);
    let mut trace = Vec::with_capacity(steps);
    let mut trace_file = match trace_path {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    for step in 1..=steps {
        let batch = &pool[(step - 1) % pool.len()];
        grads.clear();
        let (loss_b, loss_d) = batch_objective(
            &model.backbone,
            &model.refiner,
            &model.store,
            schedule,
            batch,
            Some(&mut grads),
        )?;
        let breakdown = combined_loss(loss_b, loss_d, schedule);
        if !breakdown.combined.is_finite() {
            return Err(Error::DivergenceDetected { step, loss: breakdown.combined });
        }
        let grad_norm = opt.step(&mut model.store, &grads);
        let row = TraceRow { step, breakdown, grad_norm };
        if let Some(f) = trace_file.as_mut() {
            writeln!(f, "{}", row.to_line())?;
        }
        trace.push(row);
    }
    Ok(TrainOutcome { trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RuntimeConfig;
    use crate::token_domain::validate_ratio;

    fn tiny_cfg() -> RuntimeConfig {
        RuntimeConfig {
            embed_dim: 16,
            backbone_layers: 1,
            backbone_heads: 2,
            acoustic_vocab: 16,
            context_limit: 256,
            refiner_dim: 8,
            refiner_layers: 1,
            refiner_heads: 2,
            rvq_levels: 3,
            codec_dim: 4,
            frame_hop: 16,
            text_vocab: 32,
            sample_frames: 6,
            pool_size: 2,
            batch_size: 2,
            ..RuntimeConfig::default()
        }
    }

    fn sample_batch(model: &SpeechModel, seed: u64, frames: usize) -> TrainingBatch {
        let gen = SyntheticGenerator {
            stub: &model.stub,
            codec: &model.codec,
            d: model.backbone.cfg.d,
        };
        gen.generate_pair(&PairSpec { seed, speaker_seed: 1, frames }).unwrap()
    }

    #[test]
    fn training_items_obey_the_schedule() {
        let model = SpeechModel::seeded(tiny_cfg()).unwrap();
        for frames in [1usize, 2, 5, 8] {
            let batch = sample_batch(&model, frames as u64, frames);
            let (items, predictors) = build_training_items(&model.backbone, &batch).unwrap();
            assert_eq!(predictors.len(), frames);
            // Reconstruct the stream portion as an interleaved sequence.
            let prefix_len = batch.prefix.len();
            let stream = &items[prefix_len..];
            let mut seq = crate::token_domain::InterleavedSequence::default();
            let vocab = model.stub.vocab();
            for item in stream {
                match item {
                    BackboneItem::Text { .. } => {
                        seq.items.push(crate::token_domain::InterleavedItem::Text(vocab.pad()))
                    }
                    BackboneItem::Code(c) => {
                        seq.items.push(crate::token_domain::InterleavedItem::Code(*c))
                    }
                    other => panic!("prefix item {:?} in stream", other),
                }
            }
            assert!(validate_ratio(&seq), "{} frames produced a bad schedule", frames);
        }
    }

    #[test]
    fn each_predictor_position_precedes_its_code() {
        let model = SpeechModel::seeded(tiny_cfg()).unwrap();
        let batch = sample_batch(&model, 3, 7);
        let (items, predictors) = build_training_items(&model.backbone, &batch).unwrap();
        for (t, &pos) in predictors.iter().enumerate() {
            match &items[pos + 1] {
                BackboneItem::Code(c) => {
                    assert_eq!(*c, batch.target_frames[t].code(0), "frame {}", t)
                }
                other => panic!("predictor {} followed by {:?}", t, other),
            }
        }
    }

    #[test]
    fn teacher_forcing_uses_the_given_prefix() {
        // Corrupting a level-1 code must change the loss: the level-2 logits
        // are conditioned on it.
        let model = SpeechModel::seeded(tiny_cfg()).unwrap();
        let batch = sample_batch(&model, 5, 4);
        let schedule = StageSchedule::stage1();
        let (_, loss_clean) = batch_objective(
            &model.backbone,
            &model.refiner,
            &model.store,
            &schedule,
            std::slice::from_ref(&batch),
            None,
        )
        .unwrap();
        let mut corrupted = batch.clone();
        let codes = corrupted.target_frames[0].codes().to_vec();
        let mut new_codes = codes.clone();
        new_codes[1] = (codes[1] + 1) % model.cfg.acoustic_vocab as u32;
        corrupted.target_frames[0] =
            AcousticFrame::new(new_codes, model.cfg.acoustic_vocab).unwrap();
        let (_, loss_corrupted) = batch_objective(
            &model.backbone,
            &model.refiner,
            &model.store,
            &schedule,
            std::slice::from_ref(&corrupted),
            None,
        )
        .unwrap();
        assert_ne!(loss_clean, loss_corrupted);
    }

    #[test]
    fn short_run_produces_finite_trace_and_bounded_norms() {
        let cfg = tiny_cfg();
        let mut model = SpeechModel::seeded(cfg.clone()).unwrap();
        let tcfg = cfg.train();
        let out = train(&mut model, &tcfg, &StageSchedule::stage1(), 10, None).unwrap();
        assert_eq!(out.trace.len(), 10);
        for row in &out.trace {
            assert!(row.breakdown.combined.is_finite());
            assert!(row.grad_norm <= tcfg.clip_norm + 1e-6);
            assert!(row.breakdown.lambda == 0.5);
        }
    }

    #[test]
    fn stage_two_never_touches_backbone_weights() {
        let cfg = tiny_cfg();
        let mut model = SpeechModel::seeded(cfg.clone()).unwrap();
        let before: Vec<u64> = {
            let ranges = model.store.ranges_with_prefix("backbone.");
            ranges
                .iter()
                .flat_map(|r| model.store.data()[r.clone()].iter().map(|x| x.to_bits()))
                .collect()
        };
        let tcfg = cfg.train();
        let out = train(&mut model, &tcfg, &StageSchedule::stage2(), 12, None).unwrap();
        let after: Vec<u64> = {
            let ranges = model.store.ranges_with_prefix("backbone.");
            ranges
                .iter()
                .flat_map(|r| model.store.data()[r.clone()].iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(before, after, "stage 2 must freeze the backbone bit-exactly");
        // And the refiner must still have moved.
        assert!(out.trace.iter().any(|r| r.grad_norm > 0.0));
    }

    #[test]
    fn trace_file_is_appended_with_delimited_rows() {
        let cfg = tiny_cfg();
        let mut model = SpeechModel::seeded(cfg.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let tcfg = cfg.train();
        train(&mut model, &tcfg, &StageSchedule::stage1(), 3, Some(&path)).unwrap();
        train(&mut model, &tcfg, &StageSchedule::stage1(), 2, Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5, "append-only trace");
        for line in lines {
            assert_eq!(line.split(',').count(), 6);
        }
    }
}
