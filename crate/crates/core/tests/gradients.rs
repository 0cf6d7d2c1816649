//! End-to-end gradient verification: analytic gradients of both losses
//! through 2-layer toy models against central finite differences.

mod common;

use cadenza_core::config::RuntimeConfig;
use cadenza_core::model::SpeechModel;
use cadenza_core::params::GradBuffer;
use cadenza_core::training::{
    batch_objective, grad_check, synthetic::PairSpec, SyntheticGenerator, StageSchedule,
    TrainingBatch,
};

fn toy_cfg() -> RuntimeConfig {
    RuntimeConfig {
        embed_dim: 12,
        backbone_layers: 2,
        backbone_heads: 2,
        acoustic_vocab: 10,
        context_limit: 128,
        refiner_dim: 8,
        refiner_layers: 2,
        refiner_heads: 2,
        rvq_levels: 3,
        codec_dim: 4,
        frame_hop: 16,
        text_vocab: 24,
        ..RuntimeConfig::default()
    }
}

fn toy_batch(model: &SpeechModel, seed: u64) -> Vec<TrainingBatch> {
    let gen = SyntheticGenerator {
        stub: &model.stub,
        codec: &model.codec,
        d: model.backbone.cfg.d,
    };
    vec![gen.generate_pair(&PairSpec { seed, speaker_seed: 2, frames: 5 }).unwrap()]
}

fn check_loss_path(schedule: StageSchedule, pick_backbone_loss: bool, seed: u64) -> f64 {
    let model = SpeechModel::seeded(toy_cfg()).unwrap();
    let batch = toy_batch(&model, seed);

    let mut grads = GradBuffer::zeros_like(&model.store);
    batch_objective(
        &model.backbone,
        &model.refiner,
        &model.store,
        &schedule,
        &batch,
        Some(&mut grads),
    )
    .unwrap();

    let mut scratch = model.store.clone();
    let backbone = &model.backbone;
    let refiner = &model.refiner;
    let batch_ref = &batch;
    let mut loss_fn = move |params: &[f64]| -> f64 {
        scratch.data_mut().copy_from_slice(params);
        let (lb, ld) =
            batch_objective(backbone, refiner, &scratch, &schedule, batch_ref, None).unwrap();
        if pick_backbone_loss {
            lb
        } else {
            ld
        }
    };
    grad_check(&mut loss_fn, model.store.data(), grads.data(), 1e-5, 99).unwrap()
}

#[test]
fn backbone_loss_gradients_match_finite_differences() {
    // lambda 0 isolates the coarse NLL while keeping the full training path.
    let schedule = StageSchedule { stage: 1, lambda: 0.0, backbone_frozen: false };
    let err = check_loss_path(schedule, true, 7);
    println!("backbone_loss grad check: max relative error {err:.3e}");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn decoder_loss_gradients_match_finite_differences() {
    // lambda 1 with the backbone trainable: the refinement gradient must
    // also flow into the backbone through h_t^B.
    let schedule = StageSchedule { stage: 1, lambda: 1.0, backbone_frozen: false };
    let err = check_loss_path(schedule, false, 11);
    println!("decoder_loss grad check: max relative error {err:.3e}");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn decoder_gradient_reaches_backbone_parameters() {
    let model = SpeechModel::seeded(toy_cfg()).unwrap();
    let batch = toy_batch(&model, 13);
    let schedule = StageSchedule { stage: 1, lambda: 1.0, backbone_frozen: false };
    let mut grads = GradBuffer::zeros_like(&model.store);
    batch_objective(
        &model.backbone,
        &model.refiner,
        &model.store,
        &schedule,
        &batch,
        Some(&mut grads),
    )
    .unwrap();
    let backbone_grad_sq: f64 = model
        .store
        .ranges_with_prefix("backbone.")
        .into_iter()
        .flat_map(|r| grads.data()[r].iter().map(|g| g * g))
        .sum();
    assert!(
        backbone_grad_sq > 0.0,
        "refinement loss must back-propagate into the backbone via the hidden state"
    );
}
