//! Finite-difference check of the full model loss against backprop.

use super::{Batch, ModelError, QaNet};
use crate::tensor::gradcheck::relative_error;
use crate::tensor::Tape;

/// Norm-wise relative error of the loss gradient for each trainable tensor,
/// probing at most `max_coords` evenly spaced coordinates per tensor.
///
/// Runs in eval mode so the loss is a deterministic function of the weights.
pub fn check_model_gradients(
    model: &QaNet,
    batch: &Batch,
    h: f64,
    max_coords: usize,
) -> Result<Vec<(String, f64)>, ModelError> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let loss = model.loss(&mut tape, &bound, batch, None)?;
    tape.backward(loss)?;
    let grads = bound.grads(&tape);

    let eval = |m: &QaNet| -> Result<f64, ModelError> {
        let mut t = Tape::new();
        let b = m.params.bind(&mut t);
        let l = m.loss(&mut t, &b, batch, None)?;
        Ok(t.value(l).item()?)
    };
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (id, param) in model.params.iter() {
        let Some(grad) = &grads[id.index()] else { continue };
        let numel = param.value.numel();
        let coords: Vec<usize> = if max_coords == 0 || numel <= max_coords {
            (0..numel).collect()
        } else {
            let stride = numel as f64 / max_coords as f64;
            (0..max_coords).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for c in coords {
            let orig = param.value.data()[c];
            probe.params.get_mut(id).value.data_mut()[c] = orig + h;
            let plus = eval(&probe)?;
            probe.params.get_mut(id).value.data_mut()[c] = orig - h;
            let minus = eval(&probe)?;
            probe.params.get_mut(id).value.data_mut()[c] = orig;
            numeric.push((plus - minus) / (2.0 * h));
            analytic.push(grad.data()[c]);
        }
        out.push((param.name.clone(), relative_error(&analytic, &numeric)));
    }
    Ok(out)
}
