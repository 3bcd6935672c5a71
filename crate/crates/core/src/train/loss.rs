//! Temporally weighted pinball loss.

use crate::domain::{ForecastSample, QuantilePrediction, QUANTILE_LEVELS};
use crate::Scalar;

/// Loss weighting shared by training and validation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub temporal: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            temporal: true,
        }
    }
}

impl LossWeights {
    pub const UNIFORM: LossWeights = LossWeights {
        alpha: 0.5,
        temporal: false,
    };

    pub fn weight(&self, delta_days: f64) -> f64 {
        if self.temporal {
            temporal_weight(delta_days, self.alpha)
        } else {
            1.0
        }
    }
}

/// Residual exactly zero counts as under-prediction.
pub fn pinball<T: Scalar>(y: T, y_hat: T, q: T) -> T {
    let r = y - y_hat;
    if r >= T::zero() {
        q * r
    } else {
        (q - T::one()) * r
    }
}

/// Derivative of `pinball` with respect to `y_hat`; the kink takes the `q`
/// branch.
pub fn pinball_slope<T: Scalar>(y: T, y_hat: T, q: T) -> T {
    if y - y_hat >= T::zero() {
        -q
    } else {
        T::one() - q
    }
}

pub fn temporal_weight(delta_days: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + alpha * delta_days)
}

/// Mean weighted pinball loss over flat `[B, h, 3]` outputs with `[B, h]`
/// targets and temporal distances, plus its gradient with respect to the
/// outputs.
pub fn loss_and_grad<T: Scalar>(output: &[T], targets: &[T], delta_days: &[T], weights: LossWeights) -> (T, Vec<T>) {
    assert_eq!(output.len(), 3 * targets.len(), "outputs must hold three quantiles per target");
    assert_eq!(targets.len(), delta_days.len());
    let n = T::lit(output.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(output.len());
    for ((row, &y), &delta) in output.chunks(3).zip(targets).zip(delta_days) {
        let w = T::lit(weights.weight(delta.as_f64()));
        for (k, &y_hat) in row.iter().enumerate() {
            let q = T::lit(QUANTILE_LEVELS[k]);
            total += w * pinball(y, y_hat, q);
            grad.push(w * pinball_slope(y, y_hat, q) / n);
        }
    }
    (total / n, grad)
}

/// Mean weighted pinball loss of predictions against the samples' scaled
/// targets.
pub fn batch_loss<T: Scalar>(predictions: &[QuantilePrediction<T>], samples: &[ForecastSample], weights: LossWeights) -> T {
    assert_eq!(predictions.len(), samples.len());
    let mut output = Vec::new();
    let mut targets = Vec::new();
    let mut deltas = Vec::new();
    for (p, s) in predictions.iter().zip(samples) {
        assert_eq!(p.horizon(), s.horizon());
        output.extend(p.values.iter().flatten().copied());
        targets.extend(s.targets.iter().map(|&v| T::lit(v)));
        deltas.extend(s.delta_days.iter().map(|&v| T::lit(v)));
    }
    if output.is_empty() {
        return T::zero();
    }
    loss_and_grad(&output, &targets, &deltas, weights).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(1.0, 0.0, 0.5), 0.5);
        // 1 - 0.9 is not 0.1 in binary floating point
        assert_eq!(pinball(0.0, 1.0, 0.9), 1.0 - 0.9);
        assert!((pinball(0.0, 1.0, 0.9) - 0.1_f64).abs() < 1e-15);
        assert_eq!(pinball(0.3, 0.3, 0.1), 0.0);
        assert_eq!(pinball_slope(0.3, 0.3, 0.1), -0.1);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(temporal_weight(0.0, 0.5), 1.0);
        assert_eq!(temporal_weight(2.0, 0.5), 0.5);
        assert_eq!(temporal_weight(10.0, 0.5), 1.0 / 6.0);
        let w: Vec<f64> = [5.0, 10.0, 15.0].iter().map(|&d| temporal_weight(d, 0.5)).collect();
        assert_eq!(w, vec![2.0 / 7.0, 1.0 / 6.0, 2.0 / 17.0]);
        assert_eq!(LossWeights::UNIFORM.weight(15.0), 1.0);
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let (l, g) = loss_and_grad(&[0.2, 0.2, 0.2, -1.0, -1.0, -1.0], &[0.2, -1.0], &[3.0, 8.0], LossWeights::default());
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn single_step_composition() {
        let out = [0.1, 0.4, 0.9];
        let y = 0.5_f64;
        let (a, b, c) = (pinball(y, 0.1, 0.1), pinball(y, 0.4, 0.5), pinball(y, 0.9, 0.9));
        let (l, _) = loss_and_grad(&out, &[y], &[2.0], LossWeights::default());
        assert!((l - 0.5 * (a + b + c) / 3.0).abs() < 1e-16);
    }

    fn oracle(output: &[f64], targets: &[f64], deltas: &[f64], w: LossWeights) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..targets.len() {
            for (k, q) in QUANTILE_LEVELS.iter().enumerate() {
                let r = targets[i] - output[3 * i + k];
                let loss = if r >= 0.0 { q * r } else { (1.0 - q) * -r };
                let weight = if w.temporal { 1.0 / (1.0 + w.alpha * deltas[i]) } else { 1.0 };
                sum += weight * loss;
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn random_batches_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let out: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(1..30) as f64).collect();
            for w in [LossWeights::default(), LossWeights::UNIFORM] {
                let (l, _) = loss_and_grad(&out, &y, &d, w);
                assert!((l - oracle(&out, &y, &d, w)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_off_the_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = vec![5.0, 10.0, 15.0, 5.0, 10.0, 15.0];
        let (_, g) = loss_and_grad(&out, &y, &d, LossWeights::default());
        for i in 0..out.len() {
            let mut hi = out.clone();
            let mut lo = out.clone();
            hi[i] += 1e-7;
            lo[i] -= 1e-7;
            let fd = (oracle(&hi, &y, &d, LossWeights::default()) - oracle(&lo, &y, &d, LossWeights::default())) / 2e-7;
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn loss_is_non_negative_and_zero_only_for_exact_fits(
            rows in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, 0.0f64..40.0), 1..12)
        ) {
            let out: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let d: Vec<f64> = rows.iter().map(|r| r.4).collect();
            let (weighted, _) = loss_and_grad(&out, &y, &d, LossWeights::default());
            let (uniform, _) = loss_and_grad(&out, &y, &d, LossWeights::UNIFORM);
            prop_assert!(weighted >= 0.0);
            prop_assert!(weighted <= uniform + 1e-15);
            let exact = rows.iter().all(|r| r.0 == r.3 && r.1 == r.3 && r.2 == r.3);
            prop_assert_eq!(uniform == 0.0, exact);
        }
    }
}
