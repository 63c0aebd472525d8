use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::seed;

/// Coordinates probed per tensor; larger tensors are subsampled.
pub const MAX_CHECKED_COORDS: usize = 256;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// Returns the worst relative error over the probed coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].numel();
        let coords: Vec<usize> = if n <= MAX_CHECKED_COORDS {
            (0..n).collect()
        } else {
            let mut picked = sample(&mut seed::rng(0x9c, pi as u64), n, MAX_CHECKED_COORDS).into_vec();
            picked.sort_unstable();
            picked
        };
        for c in coords {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[c]);
            let orig = params[pi].data()[c];
            probe[pi].data_mut()[c] = orig + step;
            let plus = eval(&probe)?;
            probe[pi].data_mut()[c] = orig - step;
            let minus = eval(&probe)?;
            probe[pi].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0]);
        let b = Tensor::vector(vec![0.1, 0.2, 0.3]);
        let err = grad_check(
            |tape, v| {
                let y = tape.dense(v[1], v[0], v[2])?;
                Ok(tape.sum(y))
            },
            &[w, x, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn dense_relu_softmax_cross_entropy_stack() {
        let w = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13).collect()).unwrap();
        let x = Tensor::vector(vec![0.3, -1.2, 0.8, 2.0]);
        let b = Tensor::vector(vec![0.05, -0.1, 0.2]);
        let w2 = Tensor::new(vec![2, 3], vec![0.4, -0.3, 0.9, -0.6, 0.2, 0.7]).unwrap();
        let b2 = Tensor::vector(vec![0.0, 0.1]);
        let err = grad_check(
            |tape, v| {
                let h = tape.dense(v[1], v[0], v[2])?;
                let h = tape.relu(h);
                let logits = tape.dense(h, v[3], v[4])?;
                let p = tape.softmax(logits)?;
                let sq = tape.sum_squares(p);
                let ce = tape.cross_entropy(logits, 1)?;
                tape.add_n(&[sq, ce])
            },
            &[w, x, b, w2, b2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
