use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{sample_objective, Model, Sample, SmoothMode};
use crate::tape::{Tape, Var};

/// Largest relative error between `analytic[i]` and the central difference
/// `(f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)` over `coords`, with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> f64 {
    let mut x = theta.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        x[i] = theta[i] + eps;
        let up = f(&x);
        x[i] = theta[i] - eps;
        let down = f(&x);
        x[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Checks the gradient of the batch objective against central differences
/// over every parameter, or a seeded subset of `max_coords` of them.
///
/// Each side of the central difference, `f(theta +- eps e_i) - f(theta)`, is
/// evaluated by [`Tape::perturbation_delta`], which keeps the rounding error
/// relative to the difference instead of to the objective value.
pub fn grad_check(model: &Model, batch: &[Sample], cfg: &TrainConfig, eps: f64, max_coords: Option<usize>, seed: u64) -> Result<f64> {
    cfg.loss().validate()?;
    let w = 1.0 / batch.len() as f64;
    let tapes: Vec<(Tape, Var)> = batch
        .iter()
        .map(|s| {
            let mut t = Tape::new(&model.params);
            let v = sample_objective(&mut t, model, s, cfg.kl_weight, cfg.beta, w, cfg.dt, SmoothMode::Included);
            (t, v.root)
        })
        .collect();
    let n = model.params.len();
    let mut analytic = vec![0.0; n];
    for (t, root) in &tapes {
        for (a, g) in analytic.iter_mut().zip(t.backward(*root).params) {
            *a += g;
        }
    }
    let coords: Vec<usize> = match max_coords {
        Some(k) if k < n => {
            let mut c = sample_indices(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..n).collect(),
    };
    let mut worst = 0.0f64;
    for &i in &coords {
        let up: f64 = tapes.iter().map(|(t, r)| t.perturbation_delta(*r, i, eps)).sum();
        let down: f64 = tapes.iter().map(|(t, r)| t.perturbation_delta(*r, i, -eps)).sum();
        let numeric = (up - down) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite finite difference at parameter {i}")));
        }
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let a = [[3.0, 0.5, 0.0], [0.5, 2.0, -0.3], [0.0, -0.3, 1.0]];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += x[i];
            }
            s
        };
        let theta = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i][j] * theta[j]).sum::<f64>() + 1.0).collect();
        assert!(finite_difference_check(f, &theta, &grad, &[0, 1, 2], 1e-5) <= 1e-10);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(finite_difference_check(f, &[1.0], &[3.0], &[0], 1e-5) > 0.1);
    }

    #[test]
    fn small_model_gradients_pass_for_both_betas() {
        use crate::scenes::{generate_urban, GenConfig, Standardizer};
        use crate::training::build_samples;
        use crate::training::tests::tiny_cfg;
        let set = generate_urban(&GenConfig { num_scenes: 1, ..GenConfig::default() }, 3).unwrap();
        let std = Standardizer::fit(&set, &[0]).unwrap();
        for beta in [0.0, 1.0] {
            let cfg = TrainConfig { beta, ..tiny_cfg() };
            let samples = build_samples(&set, &[0], &cfg, &std).unwrap();
            let model = Model::new(&cfg.model(), 2).unwrap();
            let err = grad_check(&model, &samples[..2], &cfg, 1e-5, None, 0).unwrap();
            assert!(err <= 1e-5, "beta {beta}: {err}");
            assert!(grad_check(&model, &samples[..2], &cfg, 1e-5, Some(50), 1).unwrap() <= err);
        }
    }
}
