//! Assembly of the full runtime: stub reasoner, coarse generator, refiner,
//! and codec sharing one parameter store / checkpoint file.

use crate::backbone::Backbone;
use crate::codec::RvqCodec;
use crate::config::RuntimeConfig;
use crate::error::Result;
use crate::params::ParamStore;
use crate::reasoner::ReasonerStub;
use crate::refiner::Refiner;
use crate::training::synthetic::codec_training_features;
use std::path::Path;

pub struct SpeechModel {
    pub cfg: RuntimeConfig,
    pub store: ParamStore,
    pub stub: ReasonerStub,
    pub backbone: Backbone,
    pub refiner: Refiner,
    pub codec: RvqCodec,
}

impl SpeechModel {
    /// Fresh model: seeded weights, codec codebooks trained with k-means on
    /// a synthetic multi-speaker feature pool.
    pub fn seeded(cfg: RuntimeConfig) -> Result<Self> {
        cfg.validate()?;
        let stub = ReasonerStub::new(cfg.stub())?;
        let codec_cfg = cfg.codec();
        let rows = (4 * codec_cfg.v).max(1024);
        let pool = codec_training_features(codec_cfg.d_c, codec_cfg.seed, rows);
        let codec = RvqCodec::train(codec_cfg, &pool)?;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, cfg.backbone());
        let refiner = Refiner::new(&mut store, cfg.refiner());
        codec.install(&mut store);
        Ok(SpeechModel { cfg, store, stub, backbone, refiner, codec })
    }

    pub fn save<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        self.codec.install(&mut self.store);
        self.store.save(path)
    }

    pub fn load<P: AsRef<Path>>(path: P, cfg: RuntimeConfig) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::load(path)?;
        let stub = ReasonerStub::new(cfg.stub())?;
        let backbone = Backbone::bind(&store, cfg.backbone())?;
        let refiner = Refiner::bind(&store, cfg.refiner())?;
        let codec = RvqCodec::from_store(&store, cfg.codec())?;
        Ok(SpeechModel { cfg, store, stub, backbone, refiner, codec })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RuntimeConfig {
        RuntimeConfig {
            embed_dim: 16,
            backbone_layers: 1,
            backbone_heads: 2,
            acoustic_vocab: 16,
            context_limit: 128,
            refiner_dim: 8,
            refiner_layers: 1,
            refiner_heads: 2,
            rvq_levels: 3,
            codec_dim: 4,
            frame_hop: 16,
            text_vocab: 32,
            ..RuntimeConfig::default()
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_all_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = SpeechModel::seeded(tiny_cfg()).unwrap();
        model.save(&path).unwrap();
        let loaded = SpeechModel::load(&path, tiny_cfg()).unwrap();
        assert_eq!(
            model.store.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            loaded.store.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        for level in 0..model.cfg.rvq_levels {
            assert_eq!(
                model.codec.codebook(level).entries,
                loaded.codec.codebook(level).entries
            );
        }
    }

    #[test]
    fn seeding_is_reproducible() {
        let a = SpeechModel::seeded(tiny_cfg()).unwrap();
        let b = SpeechModel::seeded(tiny_cfg()).unwrap();
        assert_eq!(a.store.data(), b.store.data());
    }
}
