//! Negative log-likelihood objectives for the coarse generator and the
//! refiner, with gradients.
//!
//! Both losses average over frames: the coarse loss is the mean per-frame
//! NLL, the refinement loss sums its per-level terms inside each frame
//! before taking the same per-frame mean. Log-softmax is stabilized by max
//! subtraction so uniform and sharply peaked logits both stay finite.

use crate::error::{Error, Result};
use crate::mat::Mat;

fn log_softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for &x in logits {
        denom += (x - max).exp();
    }
    let lse = denom.ln() + max;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = x - lse;
    }
}

/// Mean NLL of the coarse codes: `-(1/L) sum_t log p(c_t^0)`.
pub fn backbone_loss(logit_rows: &Mat, targets: &[u32]) -> Result<f64> {
    Ok(backbone_loss_grad(logit_rows, targets)?.0)
}

/// Loss plus `d loss / d logits`, same shape as the input rows.
pub fn backbone_loss_grad(logit_rows: &Mat, targets: &[u32]) -> Result<(f64, Mat)> {
    let l = logit_rows.rows();
    let v = logit_rows.cols();
    if targets.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows but {} targets",
            l,
            targets.len()
        )));
    }
    if l == 0 {
        return Err(Error::EmptyInput("loss over zero frames".into()));
    }
    let mut grad = Mat::zeros(l, v);
    let mut total = 0.0;
    let inv_l = 1.0 / l as f64;
    let mut logp = vec![0.0; v];
    for t in 0..l {
        let target = targets[t] as usize;
        if target >= v {
            return Err(Error::CodeOutOfRange { value: targets[t], size: v });
        }
        log_softmax_row(logit_rows.row(t), &mut logp);
        total -= logp[target];
        let g = grad.row_mut(t);
        for i in 0..v {
            g[i] = (logp[i].exp() - if i == target { 1.0 } else { 0.0 }) * inv_l;
        }
    }
    Ok((total * inv_l, grad))
}

/// Refinement NLL: `-(1/L) sum_t sum_j log p(c_t^j | ...)`, teacher-forced.
/// `level_logits[t]` holds one `(N-1) x V` block per frame.
pub fn decoder_loss(level_logits: &[Mat], targets: &[Vec<u32>]) -> Result<f64> {
    Ok(decoder_loss_grad(level_logits, targets)?.0)
}

pub fn decoder_loss_grad(level_logits: &[Mat], targets: &[Vec<u32>]) -> Result<(f64, Vec<Mat>)> {
    let l = level_logits.len();
    if targets.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "{} logit blocks but {} target frames",
            l,
            targets.len()
        )));
    }
    if l == 0 {
        return Err(Error::EmptyInput("loss over zero frames".into()));
    }
    let levels = level_logits[0].rows();
    let v = level_logits[0].cols();
    let inv_l = 1.0 / l as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(l);
    let mut logp = vec![0.0; v];
    for t in 0..l {
        let block = &level_logits[t];
        if block.rows() != levels || block.cols() != v {
            return Err(Error::ShapeMismatch(format!(
                "frame {} logits are {}x{}, want {}x{}",
                t,
                block.rows(),
                block.cols(),
                levels,
                v
            )));
        }
        if targets[t].len() != levels {
            return Err(Error::ShapeMismatch(format!(
                "frame {} has {} targets, want {}",
                t,
                targets[t].len(),
                levels
            )));
        }
        let mut g = Mat::zeros(levels, v);
        for j in 0..levels {
            let target = targets[t][j] as usize;
            if target >= v {
                return Err(Error::CodeOutOfRange { value: targets[t][j], size: v });
            }
            log_softmax_row(block.row(j), &mut logp);
            total -= logp[target];
            let gr = g.row_mut(j);
            for i in 0..v {
                gr[i] = (logp[i].exp() - if i == target { 1.0 } else { 0.0 }) * inv_l;
            }
        }
        grads.push(g);
    }
    Ok((total * inv_l, grads))
}

/// Per-stage loss weighting and freeze policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSchedule {
    pub stage: u8,
    pub lambda: f64,
    pub backbone_frozen: bool,
}

impl StageSchedule {
    /// Joint stage: both components trained, equal weighting.
    pub fn stage1() -> Self {
        StageSchedule { stage: 1, lambda: 0.5, backbone_frozen: false }
    }

    /// Refinement stage: coarse generator frozen, refiner-only objective.
    pub fn stage2() -> Self {
        StageSchedule { stage: 2, lambda: 1.0, backbone_frozen: true }
    }

    pub fn from_stage(stage: u8) -> Result<Self> {
        match stage {
            1 => Ok(Self::stage1()),
            2 => Ok(Self::stage2()),
            other => Err(Error::Config(format!("unknown training stage {}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub backbone_loss: f64,
    pub decoder_loss: f64,
    pub lambda: f64,
    pub combined: f64,
}

/// Convex combination `(1 - lambda) * backbone + lambda * decoder`, which
/// reproduces both stage regimes: equal joint weighting at lambda 0.5 and a
/// pure refinement objective at lambda 1.
pub fn combined_loss(backbone: f64, decoder: f64, schedule: &StageSchedule) -> LossBreakdown {
    LossBreakdown {
        backbone_loss: backbone,
        decoder_loss: decoder,
        lambda: schedule.lambda,
        combined: (1.0 - schedule.lambda) * backbone + schedule.lambda * decoder,
    }
}
