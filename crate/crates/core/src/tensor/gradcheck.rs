//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on fresh tapes, so it does
//! not share any code path with the backward rules it verifies.

use super::{Result, Tape, Tensor, Var};

/// Step used for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Norm-wise relative error per input over the checked coordinates.
    pub relative_errors: Vec<f64>,
    /// Number of coordinates checked per input.
    pub checked: Vec<usize>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates `f` on fresh leaves and returns the scalar output.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares analytic gradients of `f` against central differences.
///
/// `max_coords` caps the coordinates probed per input (evenly spaced); `0`
/// probes every coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64, max_coords: usize) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut checked = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let analytic_full = tape.grad_or_zeros(vars[which]);
        let coords = probe_coordinates(input.numel(), max_coords);
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        let mut probe = inputs.to_vec();
        for &c in &coords {
            let orig = input.data()[c];
            probe[which].data_mut()[c] = orig + h;
            let plus = eval_scalar(&f, &probe)?;
            probe[which].data_mut()[c] = orig - h;
            let minus = eval_scalar(&f, &probe)?;
            probe[which].data_mut()[c] = orig;
            numeric.push((plus - minus) / (2.0 * h));
            analytic.push(analytic_full.data()[c]);
        }
        relative_errors.push(relative_error(&analytic, &numeric));
        checked.push(coords.len());
    }
    Ok(GradReport {
        relative_errors,
        checked,
    })
}

fn probe_coordinates(numel: usize, max_coords: usize) -> Vec<usize> {
    if max_coords == 0 || numel <= max_coords {
        return (0..numel).collect();
    }
    let stride = numel as f64 / max_coords as f64;
    (0..max_coords)
        .map(|i| ((i as f64 + 0.5) * stride) as usize)
        .collect()
}
