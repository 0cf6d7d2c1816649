//! Shared independent oracles for the integration suites.
//!
//! Everything here deliberately avoids the implementation's numerically
//! stabilized code paths: probabilities are normalized directly and summed
//! with Kahan compensation, and the refinement likelihood is expanded as an
//! explicit per-level product before taking a single logarithm.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use cadenza_core::mat::Mat;

/// Kahan-compensated sum.
pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Direct softmax probability of `index`: exp(x_i) / sum_j exp(x_j), no
/// max-subtraction (safe for the small logits these suites generate).
pub fn direct_prob(logits: &[f64], index: usize) -> f64 {
    let denom = ksum(logits.iter().map(|&x| x.exp()));
    logits[index].exp() / denom
}

/// Mean NLL over coarse-code rows via the direct-probability route.
pub fn backbone_nll_oracle(logit_rows: &Mat, targets: &[u32]) -> f64 {
    let l = logit_rows.rows();
    let total = ksum((0..l).map(|t| -direct_prob(logit_rows.row(t), targets[t] as usize).ln()));
    total / l as f64
}

/// Refinement NLL via the explicit factorization: each frame's likelihood is
/// the product of its per-level probabilities, logged once.
pub fn decoder_nll_oracle(level_logits: &[Mat], targets: &[Vec<u32>]) -> f64 {
    let l = level_logits.len();
    let total = ksum((0..l).map(|t| {
        let block = &level_logits[t];
        let mut prob = 1.0;
        for j in 0..block.rows() {
            prob *= direct_prob(block.row(j), targets[t][j] as usize);
        }
        -prob.ln()
    }));
    total / l as f64
}

/// Pearson correlation over two equally sized slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = ksum(a.iter().copied()) / n;
    let mb = ksum(b.iter().copied()) / n;
    let cov = ksum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)));
    let va = ksum(a.iter().map(|x| (x - ma) * (x - ma)));
    let vb = ksum(b.iter().map(|y| (y - mb) * (y - mb)));
    cov / (va.sqrt() * vb.sqrt())
}

/// Exact binomial tail P(X >= k) for X ~ Binomial(n, 1/2).
pub fn sign_test_p(successes: usize, trials: usize) -> f64 {
    let mut coeff = vec![0.0f64; trials + 1];
    coeff[0] = 1.0;
    for _ in 0..trials {
        for i in (1..=trials).rev() {
            coeff[i] += coeff[i - 1];
        }
    }
    let total: f64 = 2f64.powi(trials as i32);
    ksum(coeff[successes..].iter().copied()) / total
}
