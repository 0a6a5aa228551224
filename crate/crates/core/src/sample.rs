//! Labelled embeddings and a synthetic stand-in for real speaker corpora.
//!
//! # Synthetic generative law
//!
//! For a sample with age `a` drawn from `[a_min, a_max]`:
//!
//! ```text
//! u    = 2 (a − a_min) / (a_max − a_min) − 1                  ∈ [−1, 1]
//! φ(u) = [u, u² − 1/3, sin πu, cos πu, sin 2πu, cos 2πu]     (first min(dim, 6) entries)
//! x    = W φ(u) + ε,   W_ij ~ N(0, 1),   ε ~ N(0, noise_sigma² I)
//! ```
//!
//! `W` is drawn from `mixing_seed`, independently of `seed`, so datasets generated
//! with different sample seeds share the same mixing matrix and can serve as
//! train and test sets for each other. With `noise_sigma = 0` and `dim >= 2`,
//! `u` (and hence the age) is an exact linear function of the embedding because
//! `W` has full column rank with probability one.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Result};

/// Number of smooth features in the synthetic age map.
pub const SYNTHETIC_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: String,
    pub speaker_id: Option<String>,
    /// Age in years, `> 0`.
    pub age: f64,
    pub embedding: Vec<f64>,
}

impl LabeledSample {
    pub fn new(
        sample_id: impl Into<String>,
        speaker_id: Option<String>,
        age: f64,
        embedding: Vec<f64>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if !(age.is_finite() && age > 0.0) {
            return Err(invalid!(
                "sample {sample_id}: age must be positive, got {age}"
            ));
        }
        Ok(Self {
            sample_id,
            speaker_id,
            age,
            embedding,
        })
    }
}

/// Checks the per-dataset invariants and returns the embedding dimension.
pub fn validate_dataset(samples: &[LabeledSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| invalid!("dataset is empty"))?;
    let dim = first.embedding.len();
    if dim == 0 {
        return Err(invalid!("embeddings must have at least one component"));
    }
    for s in samples {
        if s.embedding.len() != dim {
            return Err(invalid!(
                "sample {} has dimension {}, expected {dim}",
                s.sample_id,
                s.embedding.len()
            ));
        }
        if !(s.age.is_finite() && s.age > 0.0) {
            return Err(invalid!("sample {} has invalid age {}", s.sample_id, s.age));
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgeDistribution {
    /// Integer ages uniform over the range.
    Uniform,
    /// Mixture of two equally weighted Gaussians at 30% and 65% of the range with
    /// a standard deviation of 12% of the range, rounded and rejected outside it.
    TwoMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub age_min: u32,
    pub age_max: u32,
    pub noise_sigma: f64,
    pub seed: u64,
    pub age_distribution: AgeDistribution,
    /// Clips per speaker. Clips of a speaker share the age and get independent noise.
    pub samples_per_speaker: usize,
    pub mixing_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            dim: 32,
            age_min: 18,
            age_max: 80,
            noise_sigma: 1.0,
            seed: 0,
            age_distribution: AgeDistribution::Uniform,
            samples_per_speaker: 1,
            mixing_seed: 0x1d1a_9e5e,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid!("n_samples must be positive"));
        }
        if self.dim < 2 {
            return Err(invalid!("dim must be >= 2, got {}", self.dim));
        }
        if self.age_min < 1 || self.age_min >= self.age_max {
            return Err(invalid!(
                "age range must satisfy 1 <= min < max, got {}:{}",
                self.age_min,
                self.age_max
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.samples_per_speaker == 0 {
            return Err(invalid!("samples_per_speaker must be positive"));
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.dim.min(SYNTHETIC_FEATURES)
    }

    /// The `dim × num_features` mixing matrix, row-major.
    pub fn mixing_matrix(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.mixing_seed);
        (0..self.dim * self.num_features())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    /// `φ(u)` for an age, truncated to `num_features`.
    pub fn features(&self, age: f64) -> Vec<f64> {
        let span = f64::from(self.age_max - self.age_min);
        let u = 2.0 * (age - f64::from(self.age_min)) / span - 1.0;
        let pi = core::f64::consts::PI;
        let all = [
            u,
            u * u - 1.0 / 3.0,
            libm::sin(pi * u),
            libm::cos(pi * u),
            libm::sin(2.0 * pi * u),
            libm::cos(2.0 * pi * u),
        ];
        all[..self.num_features()].to_vec()
    }

    fn draw_age(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self.age_distribution {
            AgeDistribution::Uniform => rng.random_range(self.age_min..=self.age_max),
            AgeDistribution::TwoMode => {
                let lo = f64::from(self.age_min);
                let span = f64::from(self.age_max - self.age_min);
                let sd = (0.12 * span).max(0.5);
                loop {
                    let centre = if rng.random_bool(0.5) { 0.30 } else { 0.65 };
                    let z: f64 = StandardNormal.sample(rng);
                    let a = libm::round(lo + centre * span + sd * z);
                    if a >= lo && a <= f64::from(self.age_max) {
                        return a as u32;
                    }
                }
            }
        }
    }
}

/// Generates `spec.n_samples` labelled embeddings following the law in the module
/// docs. Identical specs give identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let w = spec.mixing_matrix();
    let f = spec.num_features();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid!("noise: {e}"))?;

    let mut out = Vec::with_capacity(spec.n_samples);
    let mut age = spec.age_min;
    let mut phi = spec.features(f64::from(age));
    for i in 0..spec.n_samples {
        let speaker = i / spec.samples_per_speaker;
        if i % spec.samples_per_speaker == 0 {
            age = spec.draw_age(&mut rng);
            phi = spec.features(f64::from(age));
        }
        let embedding = w
            .chunks_exact(f)
            .map(|row| {
                row.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng)
            })
            .collect();
        out.push(LabeledSample {
            sample_id: format!("s{i:06}"),
            speaker_id: Some(format!("spk{speaker:06}")),
            age: f64::from(age),
            embedding,
        });
    }
    Ok(out)
}
