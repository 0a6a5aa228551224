//! Expectation-based age prediction, clip aggregation and evaluation metrics.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{AgeGrid, LabelDistribution};
use crate::model::ModelHead;

/// Prediction for one clip: the softmax distribution and its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub distribution: LabelDistribution,
    pub point_estimate: f64,
    pub weight: f64,
}

impl ClipPrediction {
    pub fn from_distribution(distribution: LabelDistribution) -> Self {
        let point_estimate = distribution.expected_age();
        Self {
            distribution,
            point_estimate,
            weight: 1.0,
        }
    }

    /// Replaces the default unit weight, e.g. with the clip duration.
    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(invalid!(
                "clip weight must be finite and >= 0, got {weight}"
            ));
        }
        self.weight = weight;
        Ok(self)
    }
}

pub fn predict_clip(head: &ModelHead, embedding: &[f64], grid: AgeGrid) -> Result<ClipPrediction> {
    if head.out_dim() != grid.len() {
        return Err(invalid!(
            "head has {} outputs but the grid has {} ages",
            head.out_dim(),
            grid.len()
        ));
    }
    let logits = head.logits(embedding)?;
    Ok(ClipPrediction::from_distribution(
        LabelDistribution::from_logits(grid, &logits)?,
    ))
}

/// Weighted mean of the clips' point estimates.
pub fn predict_utterance(clips: &[ClipPrediction]) -> Result<f64> {
    if clips.is_empty() {
        return Err(invalid!("cannot aggregate an empty clip list"));
    }
    let total_weight: f64 = clips.iter().map(|c| c.weight).sum();
    if total_weight.is_nan() || total_weight <= 0.0 {
        return Err(invalid!("clip weights sum to {total_weight}"));
    }
    let weighted: f64 = clips.iter().map(|c| c.weight * c.point_estimate).sum();
    Ok(weighted / total_weight)
}

/// Weighted average of the clip distributions. Its mean equals
/// [`predict_utterance`] by linearity of the expectation.
pub fn average_distribution(clips: &[ClipPrediction]) -> Result<LabelDistribution> {
    let first = clips
        .first()
        .ok_or_else(|| invalid!("cannot average an empty clip list"))?;
    let grid = first.distribution.grid();
    if clips.iter().any(|c| c.distribution.grid() != grid) {
        return Err(invalid!("clips were predicted on different grids"));
    }
    let total_weight: f64 = clips.iter().map(|c| c.weight).sum();
    if total_weight.is_nan() || total_weight <= 0.0 {
        return Err(invalid!("clip weights sum to {total_weight}"));
    }
    let mut probs = alloc::vec![0.0; grid.len()];
    for c in clips {
        let w = c.weight / total_weight;
        for (acc, p) in probs.iter_mut().zip(c.distribution.probs()) {
            *acc += w * p;
        }
    }
    LabelDistribution::new(grid, probs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mae: f64,
    /// `None` when fewer than two pairs are given or either side has zero variance.
    pub pearson: Option<f64>,
    pub n: usize,
}

/// MAE and Pearson correlation over `(true_age, predicted_age)` pairs.
///
/// Pearson uses sample means and sample standard deviations with the `1/(N−1)`
/// normalization.
pub fn evaluate(pairs: &[(f64, f64)]) -> Result<EvalResult> {
    let n = pairs.len();
    if n == 0 {
        return Err(invalid!("cannot evaluate zero predictions"));
    }
    if pairs.iter().any(|(t, y)| !(t.is_finite() && y.is_finite())) {
        return Err(invalid!("ages must be finite"));
    }
    let mae = pairs.iter().map(|(t, y)| (y - t).abs()).sum::<f64>() / n as f64;
    Ok(EvalResult {
        mae,
        pearson: pearson(pairs),
        n,
    })
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean_t = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sd = |values: &mut dyn Iterator<Item = f64>, mean: f64| {
        libm::sqrt(values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0))
    };
    let sd_t = sd(&mut pairs.iter().map(|p| p.0), mean_t);
    let sd_y = sd(&mut pairs.iter().map(|p| p.1), mean_y);
    if !(sd_t > 0.0 && sd_y > 0.0) {
        return None;
    }
    let rho = pairs
        .iter()
        .map(|(t, y)| ((y - mean_y) / sd_y) * ((t - mean_t) / sd_t))
        .sum::<f64>()
        / (nf - 1.0);
    Some(rho.clamp(-1.0, 1.0))
}

/// Predicts every embedding and evaluates against the given ages.
pub fn evaluate_head<'a, I>(head: &ModelHead, grid: AgeGrid, samples: I) -> Result<EvalResult>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let pairs = samples
        .into_iter()
        .map(|(x, t)| predict_clip(head, x, grid).map(|c| (t, c.point_estimate)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}
