//! Age grids and the probability distributions defined over them.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Tolerance on the total mass of a [`LabelDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Ordered integer ages `min..=max`; index `i` is age `min + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgeGrid {
    min: u32,
    max: u32,
}

impl AgeGrid {
    /// Builds a grid. Requires `1 <= min < max` so that the grid has at least two labels.
    pub fn new(min: u32, max: u32) -> Result<Self> {
        if min < 1 {
            return Err(invalid!("grid minimum age must be >= 1, got {min}"));
        }
        if max <= min {
            return Err(invalid!("grid needs at least two ages, got [{min}, {max}]"));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> u32 {
        self.min
    }

    pub fn max(&self) -> u32 {
        self.max
    }

    /// Number of labels `K`.
    pub fn len(&self) -> usize {
        (self.max - self.min) as usize + 1
    }

    /// Always false; a grid holds at least two ages.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Age at index `i`. Panics if `i` is out of range.
    pub fn age(&self, i: usize) -> f64 {
        assert!(i < self.len(), "grid index {i} out of range");
        f64::from(self.min) + i as f64
    }

    /// Index of an integer age, if it lies on the grid.
    pub fn index_of(&self, age: u32) -> Option<usize> {
        (self.min..=self.max)
            .contains(&age)
            .then(|| (age - self.min) as usize)
    }

    pub fn ages(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.age(i))
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (f64::from(self.min) + f64::from(self.max))
    }

    pub fn contains(&self, age: f64) -> bool {
        age >= f64::from(self.min) && age <= f64::from(self.max)
    }

    /// The same grid moved by `offset` years.
    pub fn shifted(&self, offset: i64) -> Result<Self> {
        let min = i64::from(self.min) + offset;
        let max = i64::from(self.max) + offset;
        let min =
            u32::try_from(min).map_err(|_| invalid!("shifted grid minimum {min} out of range"))?;
        let max =
            u32::try_from(max).map_err(|_| invalid!("shifted grid maximum {max} out of range"))?;
        Self::new(min, max)
    }
}

impl Default for AgeGrid {
    fn default() -> Self {
        Self { min: 1, max: 100 }
    }
}

/// A probability vector over an [`AgeGrid`].
///
/// Construction checks that every entry lies in `[0, 1]` and that the entries sum
/// to one within [`NORMALIZATION_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    grid: AgeGrid,
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(grid: AgeGrid, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(invalid!(
                "distribution has {} entries but the grid has {} ages",
                probs.len(),
                grid.len()
            ));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(invalid!("probability {p} at index {i} is outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(invalid!("probabilities sum to {total}, expected 1"));
        }
        Ok(Self { grid, probs })
    }

    pub fn uniform(grid: AgeGrid) -> Self {
        let k = grid.len();
        Self {
            grid,
            probs: alloc::vec![1.0 / k as f64; k],
        }
    }

    /// All mass on one on-grid age.
    pub fn one_hot(grid: AgeGrid, age: u32) -> Result<Self> {
        let idx = grid
            .index_of(age)
            .ok_or_else(|| invalid!("age {age} is not on the grid [{}, {}]", grid.min, grid.max))?;
        let mut probs = alloc::vec![0.0; grid.len()];
        probs[idx] = 1.0;
        Ok(Self { grid, probs })
    }

    /// Softmax of `logits`, computed with the maximum subtracted first.
    pub fn from_logits(grid: AgeGrid, logits: &[f64]) -> Result<Self> {
        if logits.len() != grid.len() {
            return Err(invalid!(
                "got {} logits for a grid of {} ages",
                logits.len(),
                grid.len()
            ));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(invalid!("logits must be finite"));
        }
        Ok(Self {
            grid,
            probs: normalized_exp(logits),
        })
    }

    pub fn grid(&self) -> AgeGrid {
        self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Mean age `Σ age(k)·p_k`.
    pub fn expected_age(&self) -> f64 {
        expected_age(self)
    }

    /// `Σ p_k·(age(k) − mean)²`.
    pub fn variance(&self) -> f64 {
        distribution_variance(self)
    }
}

/// Exponentiates `exponents` after shifting by their maximum, then normalizes.
pub(crate) fn normalized_exp(exponents: &[f64]) -> Vec<f64> {
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = exponents.iter().map(|e| libm::exp(e - max)).collect();
    // The maximum entry contributes exp(0) = 1, so the sum is never below one.
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Ground-truth age and width of the Gaussian used to build a target distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTarget {
    age: f64,
    sigma: f64,
}

impl GaussianTarget {
    pub fn new(age: f64, sigma: f64) -> Result<Self> {
        if !age.is_finite() {
            return Err(invalid!("target age must be finite, got {age}"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid!("sigma must be positive and finite, got {sigma}"));
        }
        Ok(Self { age, sigma })
    }

    pub fn age(&self) -> f64 {
        self.age
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Evaluates the Gaussian density centred at the target age at every grid age and
/// renormalizes, so `p_k ∝ exp(−(age(k) − t)² / 2σ²)`.
///
/// Targets outside the grid are accepted; their mass piles up on the nearest
/// boundary and a warning is logged.
pub fn discretize_gaussian(target: GaussianTarget, grid: AgeGrid) -> LabelDistribution {
    if !grid.contains(target.age) {
        log::warn!(
            "target age {} lies outside the grid [{}, {}]",
            target.age,
            grid.min,
            grid.max
        );
    }
    let two_var = 2.0 * target.sigma * target.sigma;
    let exponents: Vec<f64> = grid
        .ages()
        .map(|a| {
            let d = a - target.age;
            -(d * d) / two_var
        })
        .collect();
    LabelDistribution {
        grid,
        probs: normalized_exp(&exponents),
    }
}

/// Mean age of a distribution.
///
/// Accumulated as an offset from the grid minimum and clamped into the grid, so
/// the result is always inside `[min, max]` despite rounding.
pub fn expected_age(dist: &LabelDistribution) -> f64 {
    let offset: f64 = dist
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| i as f64 * p)
        .sum();
    let top = (dist.grid.len() - 1) as f64;
    f64::from(dist.grid.min) + offset.clamp(0.0, top)
}

/// Variance of a distribution around its own mean.
pub fn distribution_variance(dist: &LabelDistribution) -> f64 {
    let mean = expected_age(dist);
    dist.grid
        .ages()
        .zip(&dist.probs)
        .map(|(a, p)| {
            let d = a - mean;
            p * d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(min: u32, max: u32) -> AgeGrid {
        AgeGrid::new(min, max).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(AgeGrid::new(0, 10).is_err());
        assert!(AgeGrid::new(5, 5).is_err());
        assert!(AgeGrid::new(6, 5).is_err());
        let g = grid(18, 80);
        assert_eq!(g.len(), 63);
        assert_eq!(g.age(0), 18.0);
        assert_eq!(g.age(62), 80.0);
        assert_eq!(g.index_of(18), Some(0));
        assert_eq!(g.index_of(81), None);
        assert_eq!(AgeGrid::default(), grid(1, 100));
    }

    #[test]
    fn distribution_rejects_bad_vectors() {
        let g = grid(1, 3);
        assert!(LabelDistribution::new(g, vec![0.5, 0.5]).is_err());
        assert!(LabelDistribution::new(g, vec![0.5, 0.5, 0.5]).is_err());
        assert!(LabelDistribution::new(g, vec![1.5, -0.5, 0.0]).is_err());
        assert!(LabelDistribution::new(g, vec![0.2, 0.3, 0.5]).is_ok());
    }

    #[test]
    fn gaussian_on_three_point_grid() {
        // exp(-1/2), 1, exp(-1/2) normalized.
        let d = discretize_gaussian(GaussianTarget::new(2.0, 1.0).unwrap(), grid(1, 3));
        let expected = [0.274068619061197, 0.45186276187760605, 0.274068619061197];
        for (p, e) in d.probs().iter().zip(expected) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-12);
        }
        assert_eq!(d.probs()[0], d.probs()[2]);
    }

    #[test]
    fn narrow_gaussian_is_one_hot() {
        let d = discretize_gaussian(GaussianTarget::new(5.0, 0.1).unwrap(), grid(1, 10));
        for (i, p) in d.probs().iter().enumerate() {
            let e = if i == 4 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(*p, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn tiny_sigma_stays_finite() {
        let d = discretize_gaussian(GaussianTarget::new(37.3, 0.01).unwrap(), grid(1, 100));
        assert!(d.probs().iter().all(|p| p.is_finite()));
        assert_abs_diff_eq!(d.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(d.probs()[36], 1.0);
    }

    #[test]
    fn target_outside_grid_concentrates_on_boundary() {
        let d = discretize_gaussian(GaussianTarget::new(150.0, 1.0).unwrap(), grid(1, 100));
        assert_abs_diff_eq!(d.probs()[99], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_sigma() {
        assert!(GaussianTarget::new(3.0, 0.0).is_err());
        assert!(GaussianTarget::new(3.0, -1.0).is_err());
        assert!(GaussianTarget::new(3.0, f64::NAN).is_err());
        assert!(GaussianTarget::new(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn moments() {
        let g = grid(1, 3);
        let u = LabelDistribution::uniform(g);
        assert_abs_diff_eq!(u.expected_age(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.variance(), 2.0 / 3.0, epsilon = 1e-15);

        let h = LabelDistribution::one_hot(grid(1, 10), 7).unwrap();
        assert_eq!(h.expected_age(), 7.0);
        assert_eq!(h.variance(), 0.0);

        let two = LabelDistribution::new(grid(10, 20), {
            let mut v = vec![0.0; 11];
            v[0] = 0.25;
            v[10] = 0.75;
            v
        })
        .unwrap();
        assert_abs_diff_eq!(two.expected_age(), 17.5, epsilon = 1e-12);

        let d = discretize_gaussian(GaussianTarget::new(2.0, 1.0).unwrap(), g);
        assert_abs_diff_eq!(d.variance(), 0.548137238122394, epsilon = 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let g = grid(1, 4);
        let a = LabelDistribution::from_logits(g, &[0.1, 2.0, -1.0, 0.5]).unwrap();
        let b = LabelDistribution::from_logits(g, &[100.1, 102.0, 99.0, 100.5]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        assert!(LabelDistribution::from_logits(g, &[0.0; 3]).is_err());
        assert!(LabelDistribution::from_logits(g, &[0.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
