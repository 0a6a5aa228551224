//! Loss terms over predicted label distributions and their gradients with
//! respect to the pre-softmax logits.
//!
//! With `p = softmax(z)`, ages `a`, mean `m = Σ a_k p_k` and variance
//! `v = Σ p_k (a_k − m)²`, the per-logit gradients are
//!
//! ```text
//! ∂KL/∂z_j = p_j − y_j
//! ∂|m − t|/∂z_j = sign(m − t) · p_j (a_j − m)
//! ∂v/∂z_j = p_j ((a_j − m)² − v)
//! ```
//!
//! The variance gradient already accounts for `m` depending on `z`.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{discretize_gaussian, AgeGrid, GaussianTarget, LabelDistribution};

/// Lower bound applied to predicted probabilities inside the KL logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weights of the three loss terms and the width of the target Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridLossConfig {
    lambda_kl: f64,
    lambda_l1: f64,
    lambda_var: f64,
    sigma: f64,
}

impl HybridLossConfig {
    /// `lambda_kl`, `lambda_l1`, `lambda_var` weight the KL, L1 and variance
    /// terms. All must be non-negative with at least one positive; `sigma > 0`.
    pub fn new(lambda_kl: f64, lambda_l1: f64, lambda_var: f64, sigma: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda1", lambda_kl),
            ("lambda2", lambda_l1),
            ("lambda3", lambda_var),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if lambda_kl == 0.0 && lambda_l1 == 0.0 && lambda_var == 0.0 {
            return Err(invalid!("at least one loss weight must be positive"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid!("sigma must be positive and finite, got {sigma}"));
        }
        Ok(Self {
            lambda_kl,
            lambda_l1,
            lambda_var,
            sigma,
        })
    }

    pub fn lambda_kl(&self) -> f64 {
        self.lambda_kl
    }

    pub fn lambda_l1(&self) -> f64 {
        self.lambda_l1
    }

    pub fn lambda_var(&self) -> f64 {
        self.lambda_var
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_lambda_kl(self, v: f64) -> Result<Self> {
        Self::new(v, self.lambda_l1, self.lambda_var, self.sigma)
    }

    pub fn with_lambda_l1(self, v: f64) -> Result<Self> {
        Self::new(self.lambda_kl, v, self.lambda_var, self.sigma)
    }

    pub fn with_lambda_var(self, v: f64) -> Result<Self> {
        Self::new(self.lambda_kl, self.lambda_l1, v, self.sigma)
    }

    pub fn with_sigma(self, v: f64) -> Result<Self> {
        Self::new(self.lambda_kl, self.lambda_l1, self.lambda_var, v)
    }

    /// Target distribution for a ground-truth age.
    pub fn target(&self, true_age: f64, grid: AgeGrid) -> Result<LabelDistribution> {
        Ok(discretize_gaussian(
            GaussianTarget::new(true_age, self.sigma)?,
            grid,
        ))
    }

    fn combine(&self, kl: f64, l1: f64, variance: f64) -> LossBreakdown {
        LossBreakdown {
            kl,
            l1,
            variance,
            total: self.lambda_kl * kl + self.lambda_l1 * l1 + self.lambda_var * variance,
        }
    }
}

/// Per-term values of the hybrid loss and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub kl: f64,
    pub l1: f64,
    pub variance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.kl.is_finite()
            && self.l1.is_finite()
            && self.variance.is_finite()
            && self.total.is_finite()
    }

    /// Field-wise arithmetic mean, summed in iteration order. Empty input gives zeros.
    pub fn mean<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a LossBreakdown>,
    {
        let mut acc = LossBreakdown::default();
        let mut n = 0usize;
        for b in items {
            acc.kl += b.kl;
            acc.l1 += b.l1;
            acc.variance += b.variance;
            acc.total += b.total;
            n += 1;
        }
        if n > 0 {
            let n = n as f64;
            acc.kl /= n;
            acc.l1 /= n;
            acc.variance /= n;
            acc.total /= n;
        }
        acc
    }
}

fn check_same_grid(a: &LabelDistribution, b: &LabelDistribution) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(invalid!(
            "distributions live on different grids: {:?} vs {:?}",
            a.grid(),
            b.grid()
        ));
    }
    Ok(())
}

/// Forward KL divergence `Σ y log(y / q)` with `0·log 0 = 0`.
pub fn kl_loss(target: &LabelDistribution, predicted: &LabelDistribution) -> Result<f64> {
    check_same_grid(target, predicted)?;
    Ok(kl_unchecked(target.probs(), predicted.probs()))
}

fn kl_unchecked(target: &[f64], predicted: &[f64]) -> f64 {
    let kl: f64 = target
        .iter()
        .zip(predicted)
        .filter(|(y, _)| **y > 0.0)
        .map(|(y, q)| y * (libm::log(*y) - libm::log(q.max(PROB_FLOOR))))
        .sum();
    kl.max(0.0)
}

/// `|mean(predicted) − true_age|`.
pub fn l1_age_loss(true_age: f64, predicted: &LabelDistribution) -> f64 {
    (predicted.expected_age() - true_age).abs()
}

/// Variance of the predicted distribution.
pub fn variance_loss(predicted: &LabelDistribution) -> f64 {
    predicted.variance()
}

/// Hybrid loss for one sample given raw logits.
pub fn hybrid_loss(
    config: &HybridLossConfig,
    true_age: f64,
    logits: &[f64],
    grid: AgeGrid,
) -> Result<LossBreakdown> {
    let predicted = LabelDistribution::from_logits(grid, logits)?;
    let target = config.target(true_age, grid)?;
    Ok(loss_terms(config, &target, &predicted, true_age))
}

fn loss_terms(
    config: &HybridLossConfig,
    target: &LabelDistribution,
    predicted: &LabelDistribution,
    true_age: f64,
) -> LossBreakdown {
    config.combine(
        kl_unchecked(target.probs(), predicted.probs()),
        l1_age_loss(true_age, predicted),
        variance_loss(predicted),
    )
}

/// Gradient of the hybrid total with respect to the logits.
pub fn hybrid_loss_gradient(
    config: &HybridLossConfig,
    true_age: f64,
    logits: &[f64],
    grid: AgeGrid,
) -> Result<Vec<f64>> {
    hybrid_loss_and_gradient(config, true_age, logits, grid).map(|(_, g)| g)
}

/// Loss and logit gradient in one pass.
pub fn hybrid_loss_and_gradient(
    config: &HybridLossConfig,
    true_age: f64,
    logits: &[f64],
    grid: AgeGrid,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let target = config.target(true_age, grid)?;
    loss_and_gradient_with_target(config, &target, true_age, logits)
}

/// Same as [`hybrid_loss_and_gradient`] with a precomputed target distribution.
/// The trainer builds targets once per sample and reuses them across epochs.
pub fn loss_and_gradient_with_target(
    config: &HybridLossConfig,
    target: &LabelDistribution,
    true_age: f64,
    logits: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    let grid = target.grid();
    let predicted = LabelDistribution::from_logits(grid, logits)?;
    let loss = loss_terms(config, target, &predicted, true_age);

    let p = predicted.probs();
    let mean = predicted.expected_age();
    let l1_sign = match mean.partial_cmp(&true_age) {
        Some(core::cmp::Ordering::Greater) => 1.0,
        Some(core::cmp::Ordering::Less) => -1.0,
        // Subgradient 0 at the kink.
        _ => 0.0,
    };

    let grad = grid
        .ages()
        .zip(p)
        .zip(target.probs())
        .map(|((a, &pj), &yj)| {
            let d = a - mean;
            config.lambda_kl * (pj - yj)
                + config.lambda_l1 * l1_sign * pj * d
                + config.lambda_var * pj * (d * d - loss.variance)
        })
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::discretize_gaussian;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(min: u32, max: u32) -> AgeGrid {
        AgeGrid::new(min, max).unwrap()
    }

    fn dist(g: AgeGrid, p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(g, p.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(HybridLossConfig::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(HybridLossConfig::new(-1.0, 1.0, 0.0, 1.0).is_err());
        assert!(HybridLossConfig::new(1.0, 1.0, 0.1, 0.0).is_err());
        assert!(HybridLossConfig::new(1.0, f64::NAN, 0.1, 1.0).is_err());
        assert!(HybridLossConfig::new(1.0, 1.0, 0.1, 1.0).is_ok());
    }

    #[test]
    fn kl_examples() {
        let g = grid(1, 2);
        let p = dist(g, &[0.3, 0.7]);
        assert_eq!(kl_loss(&p, &p).unwrap(), 0.0);
        // 0.5 ln 2 + 0.5 ln(2/3)
        let kl = kl_loss(&dist(g, &[0.5, 0.5]), &dist(g, &[0.25, 0.75])).unwrap();
        assert_abs_diff_eq!(kl, 0.14384103622589042, epsilon = 1e-12);

        let g5 = grid(1, 5);
        let q = dist(g5, &[0.1, 0.2, 0.4, 0.2, 0.1]);
        let hot = LabelDistribution::one_hot(g5, 4).unwrap();
        assert_abs_diff_eq!(kl_loss(&hot, &q).unwrap(), -(0.2f64.ln()), epsilon = 1e-14);

        assert!(kl_loss(&p, &LabelDistribution::uniform(grid(2, 3))).is_err());
    }

    #[test]
    fn narrow_target_reduces_to_cross_entropy() {
        let g = grid(1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let q = dist(g, &raw.iter().map(|x| x / total).collect::<Vec<_>>());
            let t = rng.random_range(1..=10u32);
            let target = discretize_gaussian(GaussianTarget::new(f64::from(t), 0.1).unwrap(), g);
            let ce = -q.probs()[(t - 1) as usize].ln();
            assert!((kl_loss(&target, &q).unwrap() - ce).abs() < 1e-4);
        }
    }

    #[test]
    fn l1_and_variance_examples() {
        let g = grid(1, 3);
        let u = LabelDistribution::uniform(g);
        assert_abs_diff_eq!(l1_age_loss(2.0, &u), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l1_age_loss(4.0, &u), 2.0, epsilon = 1e-15);
        let hot = LabelDistribution::one_hot(grid(1, 10), 7).unwrap();
        assert_eq!(l1_age_loss(7.0, &hot), 0.0);
        assert_eq!(variance_loss(&hot), 0.0);
        assert_abs_diff_eq!(variance_loss(&u), 2.0 / 3.0, epsilon = 1e-15);
        let d = dist(g, &[0.274069, 0.451862, 0.274069]);
        assert_abs_diff_eq!(variance_loss(&d), 0.548138, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_with_uniform_logits() {
        let cfg = HybridLossConfig::new(1.0, 1.0, 0.1, 1.0).unwrap();
        let b = hybrid_loss(&cfg, 3.0, &[0.0; 5], grid(1, 5)).unwrap();
        // Oracle: KL of the discretized N(3, 1) against uniform over {1..5}.
        assert_abs_diff_eq!(b.kl, 0.23751961042039813, epsilon = 1e-12);
        assert_abs_diff_eq!(b.l1, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.variance, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.total, 0.4375196104203981, epsilon = 1e-12);
    }

    #[test]
    fn component_isolation() {
        let g = grid(1, 7);
        let logits = [0.3, -1.2, 0.8, 2.0, -0.4, 0.1, 0.9];
        let t = 2.6;
        let all = hybrid_loss(
            &HybridLossConfig::new(1.0, 1.0, 1.0, 0.7).unwrap(),
            t,
            &logits,
            g,
        )
        .unwrap();
        let kl = hybrid_loss(
            &HybridLossConfig::new(1.0, 0.0, 0.0, 0.7).unwrap(),
            t,
            &logits,
            g,
        )
        .unwrap();
        let l1 = hybrid_loss(
            &HybridLossConfig::new(0.0, 1.0, 0.0, 0.7).unwrap(),
            t,
            &logits,
            g,
        )
        .unwrap();
        let var = hybrid_loss(
            &HybridLossConfig::new(0.0, 0.0, 2.5, 0.7).unwrap(),
            t,
            &logits,
            g,
        )
        .unwrap();
        assert_eq!(kl.total, all.kl);
        assert_eq!(l1.total, all.l1);
        assert_eq!(var.total, 2.5 * all.variance);
        assert!(hybrid_loss(
            &HybridLossConfig::new(1.0, 0.0, 0.0, 0.7).unwrap(),
            t,
            &logits[..6],
            g
        )
        .is_err());
    }

    #[test]
    fn kl_gradient_vanishes_at_target() {
        let g = grid(1, 6);
        let cfg = HybridLossConfig::new(1.0, 0.0, 0.0, 1.3).unwrap();
        let target = cfg.target(3.4, g).unwrap();
        let logits: Vec<f64> = target.probs().iter().map(|p| p.ln() + 4.0).collect();
        let grad = hybrid_loss_gradient(&cfg, 3.4, &logits, g).unwrap();
        assert!(grad.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn l1_subgradient_is_zero_at_kink() {
        let g = grid(1, 3);
        let cfg = HybridLossConfig::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let grad = hybrid_loss_gradient(&cfg, 2.0, &[0.0; 3], g).unwrap();
        assert_eq!(grad, vec![0.0; 3]);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lambdas = [0.0, 0.1, 1.0, 10.0];
        let sigmas = [0.1, 0.5, 1.0, 3.0];
        let mut checked = 0;
        while checked < 200 {
            let k = [3usize, 10, 50][rng.random_range(0..3)];
            let min = rng.random_range(1..40u32);
            let g = grid(min, min + k as u32 - 1);
            let l = [(); 3].map(|_| lambdas[rng.random_range(0..4)]);
            let Ok(cfg) = HybridLossConfig::new(l[0], l[1], l[2], sigmas[rng.random_range(0..4)])
            else {
                continue;
            };
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(g.age(0) - 1.0..g.age(k - 1) + 1.0);
            let mean = LabelDistribution::from_logits(g, &logits)
                .unwrap()
                .expected_age();
            if cfg.lambda_l1() > 0.0 && (mean - t).abs() < 1e-3 {
                continue;
            }
            let grad = hybrid_loss_gradient(&cfg, t, &logits, g).unwrap();
            let h = 1e-5;
            for j in 0..k {
                let mut up = logits.clone();
                up[j] += h;
                let mut down = logits.clone();
                down[j] -= h;
                let fd = (hybrid_loss(&cfg, t, &up, g).unwrap().total
                    - hybrid_loss(&cfg, t, &down, g).unwrap().total)
                    / (2.0 * h);
                let denom = grad[j].abs().max(fd.abs()).max(1e-3);
                assert!(
                    (grad[j] - fd).abs() / denom < 1e-4,
                    "k={k} cfg={cfg:?} j={j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn breakdown_mean() {
        let a = LossBreakdown {
            kl: 1.0,
            l1: 2.0,
            variance: 3.0,
            total: 4.0,
        };
        let b = LossBreakdown {
            kl: 3.0,
            l1: 4.0,
            variance: 5.0,
            total: 6.0,
        };
        let m = LossBreakdown::mean([a, b].iter());
        assert_eq!(
            m,
            LossBreakdown {
                kl: 2.0,
                l1: 3.0,
                variance: 4.0,
                total: 5.0
            }
        );
        assert_eq!(LossBreakdown::mean([].iter()), LossBreakdown::default());
    }
}
