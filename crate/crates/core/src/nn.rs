//! Minimal causal transformer trunk shared by the coarse-code generator and
//! the frame refiner.
//!
//! Two forward paths exist on purpose. `forward_batch` walks the sequence
//! layer by layer and records every intermediate needed by `backward_batch`;
//! it doubles as the non-cached reference for cache-equivalence checks.
//! `step` extends a [`KvState`] by one position. Both paths run the same
//! row-level primitives with identical summation order, so their outputs are
//! bit-identical, not merely close.

use crate::params::{GradBuffer, ParamId, ParamStore};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const NORM_EPS: f64 = 1e-6;

pub fn init_normal<R: Rng>(slice: &mut [f64], rng: &mut R, std: f64) {
    let dist = Normal::new(0.0, std).unwrap();
    for x in slice.iter_mut() {
        *x = dist.sample(rng);
    }
}

/// y = x W, with W stored row-major as `in_dim x out_dim`.
pub fn linear_row(w: &[f64], x: &[f64], in_dim: usize, out_dim: usize, y: &mut [f64]) {
    y.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..in_dim {
        let xi = x[i];
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for o in 0..out_dim {
            y[o] += xi * row[o];
        }
    }
}

/// dx += dy W^T
fn linear_acc_dx(w: &[f64], dy: &[f64], in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    for i in 0..in_dim {
        let row = &w[i * out_dim..(i + 1) * out_dim];
        let mut acc = 0.0;
        for o in 0..out_dim {
            acc += row[o] * dy[o];
        }
        dx[i] += acc;
    }
}

/// dW += x^T dy
fn linear_acc_dw(dw: &mut [f64], x: &[f64], dy: &[f64], in_dim: usize, out_dim: usize) {
    for i in 0..in_dim {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        let row = &mut dw[i * out_dim..(i + 1) * out_dim];
        for o in 0..out_dim {
            row[o] += xi * dy[o];
        }
    }
}

/// Returns 1/rms; y = g * x / rms.
pub fn rmsnorm_row(g: &[f64], x: &[f64], y: &mut [f64]) -> f64 {
    let d = x.len();
    let mut ss = 0.0;
    for &xi in x {
        ss += xi * xi;
    }
    let inv = 1.0 / (ss / d as f64 + NORM_EPS).sqrt();
    for i in 0..d {
        y[i] = g[i] * x[i] * inv;
    }
    inv
}

/// Accumulates into `dx` and `dg`.
fn rmsnorm_row_bwd(g: &[f64], x: &[f64], inv: f64, dy: &[f64], dg: &mut [f64], dx: &mut [f64]) {
    let d = x.len();
    let mut dot = 0.0;
    for i in 0..d {
        dg[i] += dy[i] * x[i] * inv;
        dot += dy[i] * g[i] * x[i];
    }
    let k = dot * inv * inv * inv / d as f64;
    for i in 0..d {
        dx[i] += dy[i] * g[i] * inv - x[i] * k;
    }
}

/// Rotary position encoding over half-split pairs within each head.
/// `inverse` applies the transposed rotation (used by the backward pass).
pub fn rope_row(x: &mut [f64], pos: usize, n_heads: usize, base: f64, inverse: bool) {
    let d = x.len();
    let dh = d / n_heads;
    let half = dh / 2;
    for h in 0..n_heads {
        let off = h * dh;
        for i in 0..half {
            let theta = pos as f64 * base.powf(-2.0 * i as f64 / dh as f64);
            let (s, c) = theta.sin_cos();
            let s = if inverse { -s } else { s };
            let a = x[off + i];
            let b = x[off + half + i];
            x[off + i] = a * c - b * s;
            x[off + half + i] = a * s + b * c;
        }
    }
}

/// Causal attention for one query row against a history of `hist_len` rows.
/// `probs_out`, when given, receives the attention weights head-major
/// (`n_heads * hist_len` values).
#[allow(clippy::too_many_arguments)]
pub fn attend_row(
    q: &[f64],
    k_hist: &[f64],
    v_hist: &[f64],
    hist_len: usize,
    d: usize,
    n_heads: usize,
    out: &mut [f64],
    mut probs_out: Option<&mut Vec<f64>>,
) {
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut scores = vec![0.0; hist_len];
    for h in 0..n_heads {
        let qh = &q[h * dh..(h + 1) * dh];
        let mut max = f64::NEG_INFINITY;
        for u in 0..hist_len {
            let kh = &k_hist[u * d + h * dh..u * d + (h + 1) * dh];
            let mut s = 0.0;
            for j in 0..dh {
                s += qh[j] * kh[j];
            }
            let s = s * scale;
            scores[u] = s;
            if s > max {
                max = s;
            }
        }
        let mut denom = 0.0;
        for u in 0..hist_len {
            scores[u] = (scores[u] - max).exp();
            denom += scores[u];
        }
        let oh = &mut out[h * dh..(h + 1) * dh];
        for u in 0..hist_len {
            let p = scores[u] / denom;
            scores[u] = p;
            let vh = &v_hist[u * d + h * dh..u * d + (h + 1) * dh];
            for j in 0..dh {
                oh[j] += p * vh[j];
            }
        }
        if let Some(probs) = probs_out.as_deref_mut() {
            probs.extend_from_slice(&scores[..hist_len]);
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone)]
pub struct TrunkConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub rope_base: f64,
}

impl TrunkConfig {
    pub fn new(d: usize, n_layers: usize, n_heads: usize) -> Self {
        assert!(d % n_heads == 0, "d must divide into heads");
        assert!((d / n_heads) % 2 == 0, "head dim must be even for rotary pairs");
        TrunkConfig { d, n_layers, n_heads, d_ff: 2 * d, rope_base: 10000.0 }
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    norm1: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm2: ParamId,
    wg: ParamId,
    wu: ParamId,
    wd: ParamId,
}

/// Pre-norm causal transformer: attention and gated-silu FFN blocks with
/// residual connections and a final normalization.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub cfg: TrunkConfig,
    layers: Vec<LayerIds>,
    final_norm: ParamId,
}

impl Trunk {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: TrunkConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d;
        let d_ff = cfg.d_ff;
        let w_std = 1.0 / (d as f64).sqrt();
        let ff_std = 1.0 / (d_ff as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |name: &str| format!("{prefix}.layer{l}.{name}");
            let norm1 = store.alloc(&p("norm1"), &[d]);
            store.view_mut(norm1).iter_mut().for_each(|x| *x = 1.0);
            let wq = store.alloc(&p("wq"), &[d, d]);
            init_normal(store.view_mut(wq), rng, w_std);
            let wk = store.alloc(&p("wk"), &[d, d]);
            init_normal(store.view_mut(wk), rng, w_std);
            let wv = store.alloc(&p("wv"), &[d, d]);
            init_normal(store.view_mut(wv), rng, w_std);
            let wo = store.alloc(&p("wo"), &[d, d]);
            init_normal(store.view_mut(wo), rng, w_std);
            let norm2 = store.alloc(&p("norm2"), &[d]);
            store.view_mut(norm2).iter_mut().for_each(|x| *x = 1.0);
            let wg = store.alloc(&p("wg"), &[d, d_ff]);
            init_normal(store.view_mut(wg), rng, w_std);
            let wu = store.alloc(&p("wu"), &[d, d_ff]);
            init_normal(store.view_mut(wu), rng, w_std);
            let wd = store.alloc(&p("wd"), &[d_ff, d]);
            init_normal(store.view_mut(wd), rng, ff_std);
            layers.push(LayerIds { norm1, wq, wk, wv, wo, norm2, wg, wu, wd });
        }
        let final_norm = store.alloc(&format!("{prefix}.final_norm"), &[d]);
        store.view_mut(final_norm).iter_mut().for_each(|x| *x = 1.0);
        Trunk { cfg, layers, final_norm }
    }

    /// Rebind parameter handles from a loaded store.
    pub fn bind(store: &ParamStore, prefix: &str, cfg: TrunkConfig) -> crate::error::Result<Self> {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |name: &str| format!("{prefix}.layer{l}.{name}");
            layers.push(LayerIds {
                norm1: store.id(&p("norm1"))?,
                wq: store.id(&p("wq"))?,
                wk: store.id(&p("wk"))?,
                wv: store.id(&p("wv"))?,
                wo: store.id(&p("wo"))?,
                norm2: store.id(&p("norm2"))?,
                wg: store.id(&p("wg"))?,
                wu: store.id(&p("wu"))?,
                wd: store.id(&p("wd"))?,
            });
        }
        let final_norm = store.id(&format!("{prefix}.final_norm"))?;
        Ok(Trunk { cfg, layers, final_norm })
    }
}

/// Per-layer key/value history for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvState {
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub len: usize,
}

impl KvState {
    pub fn new(n_layers: usize) -> Self {
        KvState { k: vec![Vec::new(); n_layers], v: vec![Vec::new(); n_layers], len: 0 }
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    x_in: Vec<f64>,
    x1: Vec<f64>,
    inv1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights per position, head-major, `n_heads * (t + 1)` each.
    probs: Vec<Vec<f64>>,
    attn: Vec<f64>,
    x_mid: Vec<f64>,
    x2: Vec<f64>,
    inv2: Vec<f64>,
    g_lin: Vec<f64>,
    u_lin: Vec<f64>,
    h: Vec<f64>,
}

/// Every intermediate of a batch forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    len: usize,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    inv_final: Vec<f64>,
}

impl Trunk {
    /// Full-sequence forward pass, layer-major. Returns the normalized output
    /// rows (`len x d`) and the activation cache.
    pub fn forward_batch(&self, ps: &ParamStore, inputs: &[f64]) -> (Vec<f64>, TrunkCache) {
        let d = self.cfg.d;
        let d_ff = self.cfg.d_ff;
        let h = self.cfg.n_heads;
        assert!(inputs.len() % d == 0);
        let len = inputs.len() / d;
        let mut x = inputs.to_vec();
        let mut layer_caches = Vec::with_capacity(self.layers.len());

        for ids in &self.layers {
            let mut lc = LayerCache {
                x_in: x.clone(),
                x1: vec![0.0; len * d],
                inv1: vec![0.0; len],
                q: vec![0.0; len * d],
                k: vec![0.0; len * d],
                v: vec![0.0; len * d],
                probs: Vec::with_capacity(len),
                attn: vec![0.0; len * d],
                x_mid: vec![0.0; len * d],
                x2: vec![0.0; len * d],
                inv2: vec![0.0; len],
                g_lin: vec![0.0; len * d_ff],
                u_lin: vec![0.0; len * d_ff],
                h: vec![0.0; len * d_ff],
            };
            let norm1 = ps.view(ids.norm1);
            let wq = ps.view(ids.wq);
            let wk = ps.view(ids.wk);
            let wv = ps.view(ids.wv);
            for t in 0..len {
                lc.inv1[t] =
                    rmsnorm_row(norm1, &lc.x_in[t * d..(t + 1) * d], &mut lc.x1[t * d..(t + 1) * d]);
                let x1t = &lc.x1[t * d..(t + 1) * d];
                linear_row(wq, x1t, d, d, &mut lc.q[t * d..(t + 1) * d]);
                linear_row(wk, x1t, d, d, &mut lc.k[t * d..(t + 1) * d]);
                linear_row(wv, x1t, d, d, &mut lc.v[t * d..(t + 1) * d]);
                rope_row(&mut lc.q[t * d..(t + 1) * d], t, h, self.cfg.rope_base, false);
                rope_row(&mut lc.k[t * d..(t + 1) * d], t, h, self.cfg.rope_base, false);
            }
            let wo = ps.view(ids.wo);
            for t in 0..len {
                let mut probs = Vec::with_capacity(h * (t + 1));
                let (q_part, _) = lc.q.split_at((t + 1) * d);
                attend_row(
                    &q_part[t * d..],
                    &lc.k[..(t + 1) * d],
                    &lc.v[..(t + 1) * d],
                    t + 1,
                    d,
                    h,
                    &mut lc.attn[t * d..(t + 1) * d],
                    Some(&mut probs),
                );
                lc.probs.push(probs);
                let mut o = vec![0.0; d];
                linear_row(wo, &lc.attn[t * d..(t + 1) * d], d, d, &mut o);
                for j in 0..d {
                    lc.x_mid[t * d + j] = lc.x_in[t * d + j] + o[j];
                }
            }
            let norm2 = ps.view(ids.norm2);
            let wg = ps.view(ids.wg);
            let wu = ps.view(ids.wu);
            let wd = ps.view(ids.wd);
            for t in 0..len {
                lc.inv2[t] =
                    rmsnorm_row(norm2, &lc.x_mid[t * d..(t + 1) * d], &mut lc.x2[t * d..(t + 1) * d]);
                let x2t = &lc.x2[t * d..(t + 1) * d];
                linear_row(wg, x2t, d, d_ff, &mut lc.g_lin[t * d_ff..(t + 1) * d_ff]);
                linear_row(wu, x2t, d, d_ff, &mut lc.u_lin[t * d_ff..(t + 1) * d_ff]);
                for j in 0..d_ff {
                    lc.h[t * d_ff + j] =
                        silu(lc.g_lin[t * d_ff + j]) * lc.u_lin[t * d_ff + j];
                }
                let mut y = vec![0.0; d];
                linear_row(wd, &lc.h[t * d_ff..(t + 1) * d_ff], d_ff, d, &mut y);
                for j in 0..d {
                    x[t * d + j] = lc.x_mid[t * d + j] + y[j];
                }
            }
            layer_caches.push(lc);
        }

        let fg = ps.view(self.final_norm);
        let mut out = vec![0.0; len * d];
        let mut inv_final = vec![0.0; len];
        for t in 0..len {
            inv_final[t] = rmsnorm_row(fg, &x[t * d..(t + 1) * d], &mut out[t * d..(t + 1) * d]);
        }
        let cache = TrunkCache { len, layers: layer_caches, x_final: x, inv_final };
        (out, cache)
    }

    /// Incremental forward for one position. Appends this position's keys and
    /// values to `kv` and returns the normalized output row.
    pub fn step(&self, ps: &ParamStore, kv: &mut KvState, input: &[f64]) -> Vec<f64> {
        let d = self.cfg.d;
        let d_ff = self.cfg.d_ff;
        let h = self.cfg.n_heads;
        let pos = kv.len;
        let mut x = input.to_vec();
        for (l, ids) in self.layers.iter().enumerate() {
            let mut x1 = vec![0.0; d];
            rmsnorm_row(ps.view(ids.norm1), &x, &mut x1);
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut v = vec![0.0; d];
            linear_row(ps.view(ids.wq), &x1, d, d, &mut q);
            linear_row(ps.view(ids.wk), &x1, d, d, &mut k);
            linear_row(ps.view(ids.wv), &x1, d, d, &mut v);
            rope_row(&mut q, pos, h, self.cfg.rope_base, false);
            rope_row(&mut k, pos, h, self.cfg.rope_base, false);
            kv.k[l].extend_from_slice(&k);
            kv.v[l].extend_from_slice(&v);
            let mut attn = vec![0.0; d];
            attend_row(&q, &kv.k[l], &kv.v[l], pos + 1, d, h, &mut attn, None);
            let mut o = vec![0.0; d];
            linear_row(ps.view(ids.wo), &attn, d, d, &mut o);
            let x_mid: Vec<f64> = (0..d).map(|j| x[j] + o[j]).collect();
            let mut x2 = vec![0.0; d];
            rmsnorm_row(ps.view(ids.norm2), &x_mid, &mut x2);
            let mut g_lin = vec![0.0; d_ff];
            let mut u_lin = vec![0.0; d_ff];
            linear_row(ps.view(ids.wg), &x2, d, d_ff, &mut g_lin);
            linear_row(ps.view(ids.wu), &x2, d, d_ff, &mut u_lin);
            let hact: Vec<f64> = (0..d_ff).map(|j| silu(g_lin[j]) * u_lin[j]).collect();
            let mut y = vec![0.0; d];
            linear_row(ps.view(ids.wd), &hact, d_ff, d, &mut y);
            for j in 0..d {
                x[j] = x_mid[j] + y[j];
            }
        }
        kv.len += 1;
        let mut out = vec![0.0; d];
        rmsnorm_row(ps.view(self.final_norm), &x, &mut out);
        out
    }

    /// Backward pass for `forward_batch`. Accumulates parameter gradients
    /// into `grads` and returns the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        ps: &ParamStore,
        grads: &mut GradBuffer,
        cache: &TrunkCache,
        d_out: &[f64],
    ) -> Vec<f64> {
        let d = self.cfg.d;
        let d_ff = self.cfg.d_ff;
        let h = self.cfg.n_heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let len = cache.len;
        assert_eq!(d_out.len(), len * d);

        // Final norm.
        let mut dcur = vec![0.0; len * d];
        {
            let fg = ps.view(self.final_norm);
            let mut dg = vec![0.0; d];
            for t in 0..len {
                rmsnorm_row_bwd(
                    fg,
                    &cache.x_final[t * d..(t + 1) * d],
                    cache.inv_final[t],
                    &d_out[t * d..(t + 1) * d],
                    &mut dg,
                    &mut dcur[t * d..(t + 1) * d],
                );
            }
            for (a, b) in grads.view_mut(ps, self.final_norm).iter_mut().zip(dg) {
                *a += b;
            }
        }

        for (ids, lc) in self.layers.iter().zip(&cache.layers).rev() {
            // FFN block: x_out = x_mid + (silu(x2 Wg) * (x2 Wu)) Wd
            let mut dxmid = vec![0.0; len * d];
            {
                let wd = ps.view(ids.wd);
                let wu = ps.view(ids.wu);
                let wg = ps.view(ids.wg);
                let norm2 = ps.view(ids.norm2);
                let mut dwd = vec![0.0; d_ff * d];
                let mut dwu = vec![0.0; d * d_ff];
                let mut dwg = vec![0.0; d * d_ff];
                let mut dnorm2 = vec![0.0; d];
                for t in 0..len {
                    let dy = &dcur[t * d..(t + 1) * d];
                    let ht = &lc.h[t * d_ff..(t + 1) * d_ff];
                    let mut dht = vec![0.0; d_ff];
                    linear_acc_dx(wd, dy, d_ff, d, &mut dht);
                    linear_acc_dw(&mut dwd, ht, dy, d_ff, d);
                    let gt = &lc.g_lin[t * d_ff..(t + 1) * d_ff];
                    let ut = &lc.u_lin[t * d_ff..(t + 1) * d_ff];
                    let mut du = vec![0.0; d_ff];
                    let mut dg_pre = vec![0.0; d_ff];
                    for j in 0..d_ff {
                        du[j] = dht[j] * silu(gt[j]);
                        dg_pre[j] = dht[j] * ut[j] * silu_deriv(gt[j]);
                    }
                    let x2t = &lc.x2[t * d..(t + 1) * d];
                    let mut dx2 = vec![0.0; d];
                    linear_acc_dx(wu, &du, d, d_ff, &mut dx2);
                    linear_acc_dx(wg, &dg_pre, d, d_ff, &mut dx2);
                    linear_acc_dw(&mut dwu, x2t, &du, d, d_ff);
                    linear_acc_dw(&mut dwg, x2t, &dg_pre, d, d_ff);
                    rmsnorm_row_bwd(
                        norm2,
                        &lc.x_mid[t * d..(t + 1) * d],
                        lc.inv2[t],
                        &dx2,
                        &mut dnorm2,
                        &mut dxmid[t * d..(t + 1) * d],
                    );
                    // Residual path around the FFN.
                    for j in 0..d {
                        dxmid[t * d + j] += dy[j];
                    }
                }
                for (a, b) in grads.view_mut(ps, ids.wd).iter_mut().zip(dwd) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.wu).iter_mut().zip(dwu) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.wg).iter_mut().zip(dwg) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.norm2).iter_mut().zip(dnorm2) {
                    *a += b;
                }
            }

            // Attention block: x_mid = x_in + attn(x1) Wo
            let mut dx_in = vec![0.0; len * d];
            {
                let wo = ps.view(ids.wo);
                let wq = ps.view(ids.wq);
                let wk = ps.view(ids.wk);
                let wv = ps.view(ids.wv);
                let norm1 = ps.view(ids.norm1);
                let mut dwo = vec![0.0; d * d];
                let mut da = vec![0.0; len * d];
                for t in 0..len {
                    let dy = &dxmid[t * d..(t + 1) * d];
                    linear_acc_dx(wo, dy, d, d, &mut da[t * d..(t + 1) * d]);
                    linear_acc_dw(&mut dwo, &lc.attn[t * d..(t + 1) * d], dy, d, d);
                }
                let mut dq = vec![0.0; len * d];
                let mut dk = vec![0.0; len * d];
                let mut dv = vec![0.0; len * d];
                for t in 0..len {
                    for hd in 0..h {
                        let p = &lc.probs[t][hd * (t + 1)..(hd + 1) * (t + 1)];
                        let da_h = &da[t * d + hd * dh..t * d + (hd + 1) * dh];
                        let mut dp = vec![0.0; t + 1];
                        for u in 0..=t {
                            let vh = &lc.v[u * d + hd * dh..u * d + (hd + 1) * dh];
                            let mut acc = 0.0;
                            for j in 0..dh {
                                acc += da_h[j] * vh[j];
                                dv[u * d + hd * dh + j] += p[u] * da_h[j];
                            }
                            dp[u] = acc;
                        }
                        let mut pp = 0.0;
                        for u in 0..=t {
                            pp += p[u] * dp[u];
                        }
                        for u in 0..=t {
                            let ds = p[u] * (dp[u] - pp);
                            for j in 0..dh {
                                dq[t * d + hd * dh + j] += ds * lc.k[u * d + hd * dh + j] * scale;
                                dk[u * d + hd * dh + j] += ds * lc.q[t * d + hd * dh + j] * scale;
                            }
                        }
                    }
                }
                // Undo the rotation: d(pre-rope) = R^T d(post-rope).
                for t in 0..len {
                    rope_row(&mut dq[t * d..(t + 1) * d], t, h, self.cfg.rope_base, true);
                    rope_row(&mut dk[t * d..(t + 1) * d], t, h, self.cfg.rope_base, true);
                }
                let mut dwq = vec![0.0; d * d];
                let mut dwk = vec![0.0; d * d];
                let mut dwv = vec![0.0; d * d];
                let mut dnorm1 = vec![0.0; d];
                for t in 0..len {
                    let x1t = &lc.x1[t * d..(t + 1) * d];
                    let mut dx1 = vec![0.0; d];
                    linear_acc_dx(wq, &dq[t * d..(t + 1) * d], d, d, &mut dx1);
                    linear_acc_dx(wk, &dk[t * d..(t + 1) * d], d, d, &mut dx1);
                    linear_acc_dx(wv, &dv[t * d..(t + 1) * d], d, d, &mut dx1);
                    linear_acc_dw(&mut dwq, x1t, &dq[t * d..(t + 1) * d], d, d);
                    linear_acc_dw(&mut dwk, x1t, &dk[t * d..(t + 1) * d], d, d);
                    linear_acc_dw(&mut dwv, x1t, &dv[t * d..(t + 1) * d], d, d);
                    rmsnorm_row_bwd(
                        norm1,
                        &lc.x_in[t * d..(t + 1) * d],
                        lc.inv1[t],
                        &dx1,
                        &mut dnorm1,
                        &mut dx_in[t * d..(t + 1) * d],
                    );
                    // Residual path around attention.
                    for j in 0..d {
                        dx_in[t * d + j] += dxmid[t * d + j];
                    }
                }
                for (a, b) in grads.view_mut(ps, ids.wo).iter_mut().zip(dwo) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.wq).iter_mut().zip(dwq) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.wk).iter_mut().zip(dwk) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.wv).iter_mut().zip(dwv) {
                    *a += b;
                }
                for (a, b) in grads.view_mut(ps, ids.norm1).iter_mut().zip(dnorm1) {
                    *a += b;
                }
            }
            dcur = dx_in;
        }
        dcur
    }
}
