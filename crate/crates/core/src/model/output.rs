//! Start/end distributions, the span loss and best-span search.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// `p1 = softmax([M0; M1] W1)`, `p2 = softmax([M0; M2] W2)` over the
/// unmasked positions. `M*` are `[.., n, d]`, `W*` are `[2d, 1]` and `mask`
/// is `[.., n]`.
pub fn span_distributions(
    tape: &mut Tape,
    m: [Var; 3],
    w1: Var,
    w2: Var,
    mask: &Tensor,
) -> Result<(Var, Var), ModelError> {
    let shape = tape.shape(m[0]).to_vec();
    if shape.len() < 2 || mask.shape() != &shape[..shape.len() - 1] {
        return Err(TensorError::DimensionMismatch {
            op: "span_distributions",
            lhs: shape,
            rhs: mask.shape().to_vec(),
        }
        .into());
    }
    let axis = shape.len() - 1;
    let logits_shape = &shape[..axis];
    let mut head = |top: Var, w: Var| -> Result<Var, ModelError> {
        let cat = tape.concat(&[m[0], top], axis)?;
        let logits = tape.matmul(cat, w)?;
        let logits = tape.reshape(logits, logits_shape)?;
        Ok(tape.masked_softmax(logits, axis - 1, mask)?)
    };
    let p1 = head(m[1], w1)?;
    let p2 = head(m[2], w2)?;
    Ok((p1, p2))
}

/// Mean over the batch of `-(log p1[y1] + log p2[y2])`.
///
/// `p1, p2` are `[B, n]`; every gold index must be unmasked.
pub fn span_loss(
    tape: &mut Tape,
    p1: Var,
    p2: Var,
    gold: &[(usize, usize)],
    mask: &Tensor,
) -> Result<Var, ModelError> {
    let n = *tape.shape(p1).last().unwrap_or(&0);
    for (row, &(s, e)) in gold.iter().enumerate() {
        for idx in [s, e] {
            if idx >= n || mask.data().get(row * n + idx).copied().unwrap_or(0.0) == 0.0 {
                return Err(ModelError::GoldIndexMasked { row, index: idx });
            }
        }
    }
    let starts: Vec<usize> = gold.iter().map(|g| g.0).collect();
    let ends: Vec<usize> = gold.iter().map(|g| g.1).collect();
    let ps = tape.pick(p1, &starts)?;
    let pe = tape.pick(p2, &ends)?;
    let ps = tape.clamp_min(ps, PROB_FLOOR);
    let pe = tape.clamp_min(pe, PROB_FLOOR);
    let ls = tape.log(ps);
    let le = tape.log(pe);
    let both = tape.add(ls, le)?;
    let mean = tape.mean(both);
    Ok(tape.scale(mean, -1.0))
}

/// Best `(s, e)` with `s <= e < s + max_len` by `p1[s] * p2[e]`, in one
/// sweep that keeps a monotone window of start candidates.
///
/// Ties go to the smallest `s`, then the smallest `e`.
pub fn dp_span_inference(p1: &[f64], p2: &[f64], max_len: usize) -> Result<SpanPrediction, ModelError> {
    let n = p1.len().min(p2.len());
    if n == 0 || max_len == 0 {
        return Err(ModelError::EmptyDistribution);
    }
    let mut window = std::collections::VecDeque::with_capacity(max_len);
    let mut best = SpanPrediction {
        start: 0,
        end: 0,
        score: f64::NEG_INFINITY,
    };
    for e in 0..n {
        while window.back().is_some_and(|&j| p1[j] < p1[e]) {
            window.pop_back();
        }
        window.push_back(e);
        while window.front().is_some_and(|&j| j + max_len <= e) {
            window.pop_front();
        }
        let s = window[0];
        let score = p1[s] * p2[e];
        if score > best.score || (score == best.score && s < best.start) {
            best = SpanPrediction { start: s, end: e, score };
        }
    }
    Ok(best)
}

/// Reference enumeration over every valid pair.
pub fn enumerate_best_span(p1: &[f64], p2: &[f64], max_len: usize) -> Option<SpanPrediction> {
    let n = p1.len().min(p2.len());
    let mut best: Option<SpanPrediction> = None;
    for s in 0..n {
        for e in s..n.min(s + max_len) {
            let score = p1[s] * p2[e];
            if best.is_none_or(|b| score > b.score) {
                best = Some(SpanPrediction { start: s, end: e, score });
            }
        }
    }
    best
}
