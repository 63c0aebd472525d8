//! Finite-difference checks of every tape operation and every loss on
//! randomized small tensors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::error::Result;
use crate::objectives::{crl_loss, kd_penalty, mine_pairs, total_loss, CrlSign, KdTerm, LossConfig};
use crate::seed;

/// Central-difference step used by [`gradient_suite`].
pub const GRAD_STEP: f64 = 1e-6;

/// Worst relative error of one checked function at one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: &'static str,
    pub seed: u64,
    pub error: f64,
}

type CaseFn = fn(&mut Tape, &[Var]) -> Result<Var>;

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .expect("shape matches data length")
}

/// Reduces any output to a scalar with fixed non-uniform weights, so every
/// output coordinate contributes a distinct gradient.
fn weigh(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).numel();
    let flat = tape.reshape(x, vec![n])?;
    let w = tape.constant(Tensor::new(vec![1, n], (0..n).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect())?);
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = tape.dense(flat, w, b)?;
    Ok(tape.sum(y))
}

fn cases() -> Vec<(&'static str, Vec<Vec<usize>>, CaseFn)> {
    vec![
        ("conv2d", vec![vec![2, 5, 5], vec![3, 2, 3, 3], vec![3]], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            weigh(t, y)
        }),
        ("conv2d-stride2", vec![vec![2, 6, 6], vec![2, 2, 3, 3], vec![2]], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
            weigh(t, y)
        }),
        ("max_pool", vec![vec![2, 6, 6]], |t, v| {
            let y = t.max_pool(v[0], 3, 2, 1)?;
            weigh(t, y)
        }),
        ("relu", vec![vec![12]], |t, v| {
            let y = t.relu(v[0]);
            weigh(t, y)
        }),
        ("dense", vec![vec![5], vec![4, 5], vec![4]], |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            weigh(t, y)
        }),
        ("global_avg_pool", vec![vec![3, 4, 4]], |t, v| {
            let y = t.global_avg_pool(v[0])?;
            weigh(t, y)
        }),
        ("add", vec![vec![6], vec![6]], |t, v| {
            let y = t.add(v[0], v[1])?;
            weigh(t, y)
        }),
        ("sub", vec![vec![6], vec![6]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weigh(t, y)
        }),
        ("dropout", vec![vec![10]], |t, v| {
            let y = t.dropout(v[0], 0.5, true, 3)?;
            weigh(t, y)
        }),
        ("softmax", vec![vec![5]], |t, v| {
            let y = t.softmax(v[0])?;
            weigh(t, y)
        }),
        ("sum", vec![vec![3, 2]], |t, v| {
            let y = t.sum(v[0]);
            weigh(t, y)
        }),
        ("sum_squares", vec![vec![7]], |t, v| Ok(t.sum_squares(v[0]))),
        ("scale", vec![vec![5]], |t, v| {
            let y = t.scale(v[0], -1.7);
            weigh(t, y)
        }),
        ("exp", vec![vec![5]], |t, v| {
            let y = t.exp(v[0]);
            weigh(t, y)
        }),
        ("add_n", vec![vec![4], vec![4], vec![4]], |t, v| {
            let y = t.add_n(v)?;
            weigh(t, y)
        }),
        ("concat", vec![vec![3], vec![2]], |t, v| {
            let y = t.concat(v)?;
            weigh(t, y)
        }),
        ("distance", vec![vec![6], vec![6]], |t, v| t.distance(v[0], v[1])),
        ("scale_shift", vec![vec![6], vec![], vec![]], |t, v| {
            let y = t.scale_shift(v[0], v[1], v[2])?;
            weigh(t, y)
        }),
        ("reshape", vec![vec![2, 3]], |t, v| {
            let y = t.reshape(v[0], vec![3, 2])?;
            weigh(t, y)
        }),
        ("l2_normalize", vec![vec![6]], |t, v| {
            let y = t.l2_normalize(v[0]);
            weigh(t, y)
        }),
        ("cross_entropy", vec![vec![3]], |t, v| t.cross_entropy(v[0], 1)),
        ("kd_penalty-scalar", vec![vec![2, 3], vec![2, 3], vec![], vec![]], |t, v| {
            let term = KdTerm {
                target: v[0],
                source: v[1],
                linear: v[2],
                offset: v[3],
            };
            Ok(kd_penalty(t, &[term], 0.7)?.expect("lambda > 0"))
        }),
        ("kd_penalty-dense", vec![vec![2, 2], vec![2, 2], vec![4, 4], vec![4]], |t, v| {
            let term = KdTerm {
                target: v[0],
                source: v[1],
                linear: v[2],
                offset: v[3],
            };
            Ok(kd_penalty(t, &[term], 0.7)?.expect("lambda > 0"))
        }),
        ("crl-separability", vec![vec![3], vec![3], vec![3], vec![3]], |t, v| {
            crl_loss(t, v, &mine_pairs(&[0, 0, 1, 1]), 0.8, CrlSign::Separability)
        }),
        ("crl-as-written", vec![vec![3], vec![3], vec![3], vec![3]], |t, v| {
            crl_loss(t, v, &mine_pairs(&[0, 1, 1, 0]), 0.8, CrlSign::AsWritten)
        }),
        ("total_loss", vec![vec![2, 3], vec![2], vec![2, 3], vec![], vec![]], |t, v| {
            let cfg = LossConfig {
                lambda: 0.3,
                ..LossConfig::default()
            };
            let inputs = [[0.4, -1.0, 0.7], [1.2, 0.3, -0.5], [-0.8, 0.9, 0.1]];
            let labels = [0, 1, 1];
            let mut logits = Vec::new();
            for x in inputs {
                let x = t.constant(Tensor::vector(x.to_vec()));
                logits.push(t.dense(x, v[0], v[1])?);
            }
            let kd = kd_penalty(
                t,
                &[KdTerm {
                    target: v[0],
                    source: v[2],
                    linear: v[3],
                    offset: v[4],
                }],
                cfg.lambda,
            )?;
            let crl = crl_loss(t, &logits, &mine_pairs(&labels), cfg.alpha, cfg.crl_sign)?;
            total_loss(t, &logits, &labels, kd, Some(crl), &cfg)
        }),
    ]
}

/// Runs every case once per seed in `seeds`.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for s in seeds {
        for (i, (name, shapes, f)) in cases().into_iter().enumerate() {
            let mut rng = seed::rng(seed::mix(s, 0x6ad), i as u64);
            let params: Vec<Tensor> = shapes.iter().map(|sh| randn(&mut rng, sh)).collect();
            let error = grad_check(f, &params, GRAD_STEP)?;
            out.push(GradCase { name, seed: s, error });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_on_one_seed() {
        for c in gradient_suite(0..1).unwrap() {
            assert!(c.error < 1e-4, "{} at seed {}: {}", c.name, c.seed, c.error);
        }
    }
}
