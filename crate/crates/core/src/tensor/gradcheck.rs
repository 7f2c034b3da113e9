use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients against central finite differences.
///
/// Returns the maximum over all input coordinates of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_impl(f, inputs, eps, None)
}

/// Like [`gradcheck`] but probes at most `max_coords` randomly chosen
/// coordinates per input, for inputs too large to sweep exhaustively.
pub fn gradcheck_sampled<F>(f: F, inputs: &[Tensor], eps: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_impl(f, inputs, eps, Some((max_coords, seed)))
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::Usage(format!("gradcheck function must be scalar, got {:?}", value.shape())));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite function value {v}")));
    }
    Ok(v)
}

fn gradcheck_impl<F>(f: F, inputs: &[Tensor], eps: f64, sampling: Option<(usize, u64)>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Usage(format!("gradcheck eps must lie in (0, 1e-2], got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    drop(tape);

    let mut rng = sampling.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite analytic gradient for input {i}")));
        }
        let n = inputs[i].numel();
        let coords: Vec<usize> = match (&mut rng, sampling) {
            (Some(rng), Some((max, _))) if max < n => {
                let mut picked = sample(rng, n, max).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
