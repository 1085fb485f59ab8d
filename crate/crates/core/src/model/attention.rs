//! Context-query attention: trilinear similarity, the two attention
//! directions and the fused `[c; a; c*a; c*b]` representation.
//!
//! Tensors are stored positions × features, so with `C: [n, d]` and
//! `Q: [m, d]` we have `A = S_row Q` and `B = S_row S_colᵀ C`. Every function
//! also accepts leading batch axes.

use super::ModelError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// `S[i, j] = <w_c, C_i> + <w_q, Q_j> + <w_qc, C_i * Q_j>` without building
/// the `n × m × 3d` concatenation. Each weight is a `[d, 1]` column.
pub fn trilinear_similarity(
    tape: &mut Tape,
    c: Var,
    q: Var,
    w_c: Var,
    w_q: Var,
    w_qc: Var,
) -> Result<Var, ModelError> {
    let (cs, qs) = (tape.shape(c).to_vec(), tape.shape(q).to_vec());
    if cs.last() != qs.last() || cs.len() != qs.len() {
        return Err(TensorError::DimensionMismatch {
            op: "trilinear_similarity",
            lhs: cs,
            rhs: qs,
        }
        .into());
    }
    let d = *cs.last().unwrap();
    let c_term = tape.matmul(c, w_c)?;
    let q_term = tape.matmul(q, w_q)?;
    let q_term = tape.transpose(q_term)?;
    let w_flat = tape.reshape(w_qc, &[d])?;
    let cw = tape.mul(c, w_flat)?;
    let qt = tape.transpose(q)?;
    let cross = tape.matmul(cw, qt)?;
    let s = tape.add(cross, c_term)?;
    Ok(tape.add(s, q_term)?)
}

/// Outer product of a context mask `[.., n]` and a query mask `[.., m]`.
pub fn pair_mask(context_mask: &Tensor, question_mask: &Tensor) -> Result<Tensor, ModelError> {
    let (cs, qs) = (context_mask.shape(), question_mask.shape());
    if cs.is_empty() || cs.len() != qs.len() || cs[..cs.len() - 1] != qs[..qs.len() - 1] {
        return Err(TensorError::DimensionMismatch {
            op: "pair_mask",
            lhs: cs.to_vec(),
            rhs: qs.to_vec(),
        }
        .into());
    }
    let (n, m) = (cs[cs.len() - 1], qs[qs.len() - 1]);
    let mut shape = cs.to_vec();
    shape.push(m);
    let (cd, qd) = (context_mask.data(), question_mask.data());
    Ok(Tensor::from_fn(shape, |idx| {
        let (b, i, j) = (idx / (n * m), (idx / m) % n, idx % m);
        cd[b * n + i] * qd[b * m + j]
    }))
}

/// Row softmax (over queries) and column softmax (over context positions)
/// of `s`, both restricted to `mask`.
pub fn similarity_softmaxes(tape: &mut Tape, s: Var, mask: &Tensor) -> Result<(Var, Var), ModelError> {
    let rank = tape.shape(s).len();
    if rank < 2 {
        return Err(TensorError::AxisOutOfRange {
            op: "similarity_softmaxes",
            axis: 1,
            rank,
        }
        .into());
    }
    let s_row = tape.masked_softmax(s, rank - 1, mask)?;
    let s_col = tape.masked_softmax(s, rank - 2, mask)?;
    Ok((s_row, s_col))
}

/// Context-to-query attention `A = S_row Q`.
pub fn c2q_attention(tape: &mut Tape, s_row: Var, q: Var) -> Result<Var, ModelError> {
    Ok(tape.matmul(s_row, q)?)
}

/// Query-to-context attention `B = S_row (S_colᵀ C)`.
pub fn q2c_attention(tape: &mut Tape, s_row: Var, s_col: Var, c: Var) -> Result<Var, ModelError> {
    let st = tape.transpose(s_col)?;
    let hop = tape.matmul(st, c)?;
    Ok(tape.matmul(s_row, hop)?)
}

/// `[c; a; c*a; c*b]` along the feature axis.
pub fn fuse(tape: &mut Tape, c: Var, a: Var, b: Var) -> Result<Var, ModelError> {
    let (cs, as_, bs) = (tape.shape(c), tape.shape(a), tape.shape(b));
    if cs != as_ || cs != bs {
        return Err(TensorError::DimensionMismatch {
            op: "fuse",
            lhs: cs.to_vec(),
            rhs: if cs != as_ { as_.to_vec() } else { bs.to_vec() },
        }
        .into());
    }
    let axis = cs.len() - 1;
    let ca = tape.mul(c, a)?;
    let cb = tape.mul(c, b)?;
    Ok(tape.concat(&[c, a, ca, cb], axis)?)
}
