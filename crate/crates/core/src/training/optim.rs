//! Momentum SGD with global-norm gradient clipping and prefix-based
//! parameter freezing.

use crate::config::TrainConfig;
use crate::params::{GradBuffer, ParamStore};

#[derive(Debug)]
pub struct MomentumSgd {
    lr: f64,
    momentum: f64,
    clip_norm: f64,
    velocity: GradBuffer,
    /// Per-element mask; frozen elements are never read or written.
    frozen: Vec<bool>,
}

impl MomentumSgd {
    pub fn new(store: &ParamStore, tcfg: &TrainConfig, frozen_prefixes: &[&str]) -> Self {
        let mut frozen = vec![false; store.len()];
        for prefix in frozen_prefixes {
            for range in store.ranges_with_prefix(prefix) {
                for f in &mut frozen[range] {
                    *f = true;
                }
            }
        }
        MomentumSgd {
            lr: tcfg.lr,
            momentum: tcfg.momentum,
            clip_norm: tcfg.clip_norm,
            velocity: GradBuffer::zeros_like(store),
            frozen,
        }
    }

    /// Clip the trainable gradient to the configured global norm, fold it
    /// into the velocity, and apply the update. Returns the post-clip norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> f64 {
        let g = grads.data();
        let mut sq = 0.0;
        for i in 0..g.len() {
            if !self.frozen[i] {
                sq += g[i] * g[i];
            }
        }
        let norm = sq.sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        let data = store.data_mut();
        let v = self.velocity.data_mut();
        for i in 0..g.len() {
            if self.frozen[i] {
                continue;
            }
            v[i] = self.momentum * v[i] + g[i] * scale;
            data[i] -= self.lr * v[i];
        }
        norm.min(self.clip_norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, TrainConfig) {
        let mut store = ParamStore::new();
        let a = store.alloc("backbone.w", &[4]);
        store.view_mut(a).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let b = store.alloc("refiner.w", &[2]);
        store.view_mut(b).copy_from_slice(&[5.0, 6.0]);
        let tcfg = TrainConfig {
            lr: 0.1,
            momentum: 0.0,
            clip_norm: 1.0,
            batch_size: 1,
            pool_size: 1,
            sample_frames: 1,
            seed: 0,
        };
        (store, tcfg)
    }

    #[test]
    fn clipping_bounds_the_applied_norm() {
        let (mut store, tcfg) = setup();
        let mut opt = MomentumSgd::new(&store, &tcfg, &[]);
        let mut grads = GradBuffer::zeros_like(&store);
        grads.data_mut().copy_from_slice(&[3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let norm = opt.step(&mut store, &grads);
        assert!((norm - 1.0).abs() < 1e-12);
        // Applied update is the clipped gradient times lr.
        let a = store.id("backbone.w").unwrap();
        assert!((store.view(a)[0] - (1.0 - 0.1 * 3.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn frozen_prefix_is_untouched_and_excluded_from_norm() {
        let (mut store, tcfg) = setup();
        let before: Vec<u64> = store
            .view(store.id("backbone.w").unwrap())
            .iter()
            .map(|x| x.to_bits())
            .collect();
        let mut opt = MomentumSgd::new(&store, &tcfg, &["backbone."]);
        let mut grads = GradBuffer::zeros_like(&store);
        grads.data_mut().copy_from_slice(&[100.0, 100.0, 100.0, 100.0, 0.6, 0.8]);
        let norm = opt.step(&mut store, &grads);
        assert!((norm - 1.0).abs() < 1e-12, "norm must ignore frozen coords, got {}", norm);
        let after: Vec<u64> = store
            .view(store.id("backbone.w").unwrap())
            .iter()
            .map(|x| x.to_bits())
            .collect();
        assert_eq!(before, after, "frozen parameters moved");
        assert_ne!(store.view(store.id("refiner.w").unwrap()), &[5.0, 6.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut store, mut tcfg) = setup();
        tcfg.momentum = 0.9;
        tcfg.clip_norm = 1e9;
        let mut opt = MomentumSgd::new(&store, &tcfg, &[]);
        let mut grads = GradBuffer::zeros_like(&store);
        grads.data_mut()[0] = 1.0;
        opt.step(&mut store, &grads);
        let x1 = store.view(store.id("backbone.w").unwrap())[0];
        opt.step(&mut store, &grads);
        let x2 = store.view(store.id("backbone.w").unwrap())[0];
        let step1 = 1.0 - x1;
        let step2 = x1 - x2;
        assert!((step2 / step1 - 1.9).abs() < 1e-9, "second step should be 1.9x the first");
    }
}
