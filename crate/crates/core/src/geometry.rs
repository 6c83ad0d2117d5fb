//! Similarity, angle and weighting math over unit-norm embeddings.
//!
//! Everything here is a pure function. Similarities are inner products of
//! unit vectors, so they double as cosines of the angle between the vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on similarity inputs before they are rejected.
const SIMILARITY_SLACK: f64 = 1e-9;

/// A unit-norm dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `raw` to unit Euclidean norm.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidInput("cannot normalize an empty vector".into()));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("vector has non-finite entries".into()));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        Ok(Self(raw.iter().map(|x| x / norm).collect()))
    }

    pub fn normalize_f32(raw: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = raw.iter().map(|&x| f64::from(x)).collect();
        Self::normalize(&wide)
    }

    /// Wraps a row that is already unit-norm (e.g. read back from an index)
    /// without renormalizing it.
    pub(crate) fn from_unit_f32(row: &[f32]) -> Self {
        Self(row.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Free-function form of [`EmbeddingVector::normalize`].
pub fn normalize(raw: &[f64]) -> Result<EmbeddingVector> {
    EmbeddingVector::normalize(raw)
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {a} vs {b}"
        )));
    }
    Ok(())
}

/// Sequential dot product of a probe against an `f32` row, accumulated in `f64`.
#[inline]
pub(crate) fn dot_f32_row(probe: &[f64], row: &[f32]) -> f64 {
    probe
        .iter()
        .zip(row)
        .map(|(&p, &r)| p * f64::from(r))
        .sum()
}

/// Inner product of two unit vectors, clamped to `[-1, 1]`.
pub fn inner_product(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Angle between two unit vectors, in `[0, π]`.
pub fn angle(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(inner_product(a, b)?.acos())
}

fn check_similarity(s: f64, name: &str) -> Result<f64> {
    if !s.is_finite() || s.abs() > 1.0 + SIMILARITY_SLACK {
        return Err(Error::InvalidInput(format!(
            "{name} = {s} is outside [-1, 1]"
        )));
    }
    Ok(s.clamp(-1.0, 1.0))
}

/// Angle-sum score: the cosine of `arccos(s1) + arccos(s2)`, evaluated without
/// trigonometry as `s1·s2 − √(1−s1²)·√(1−s2²)`.
///
/// Documents close to both probes score near 1. The score is not monotone in
/// the angle sum beyond π; ranking uses it as-is.
pub fn ais_score(s1: f64, s2: f64) -> Result<f64> {
    let s1 = check_similarity(s1, "s1")?;
    let s2 = check_similarity(s2, "s2")?;
    let score = s1 * s2 - (1.0 - s1 * s1).sqrt() * (1.0 - s2 * s2).sqrt();
    Ok(score.clamp(-1.0, 1.0))
}

/// Plain sum of the two similarities.
pub fn additive_score(s1: f64, s2: f64) -> Result<f64> {
    let s1 = check_similarity(s1, "s1")?;
    let s2 = check_similarity(s2, "s2")?;
    Ok(s1 + s2)
}

/// Query weight implied by a document's angles: `θ₂ / (θ₁ + θ₂)`.
pub fn alpha_from_angles(theta1: f64, theta2: f64) -> Result<f64> {
    if !(theta1.is_finite() && theta2.is_finite()) || theta1 < 0.0 || theta2 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "angles must be finite and nonnegative, got ({theta1}, {theta2})"
        )));
    }
    let total = theta1 + theta2;
    if total == 0.0 {
        return Err(Error::Degenerate(
            "both angles are zero; alpha is undefined".into(),
        ));
    }
    Ok(theta2 / total)
}

/// Weighted direction `α·θ₁ + (1−α)·θ₂`.
pub fn dynamic_angle(theta1: f64, theta2: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} is outside [0, 1]")));
    }
    if !(theta1.is_finite() && theta2.is_finite()) {
        return Err(Error::InvalidInput("angles must be finite".into()));
    }
    Ok(alpha * theta1 + (1.0 - alpha) * theta2)
}

/// Linear predictor of α from the query/pseudo-context angle θ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaModel {
    pub slope: f64,
    pub intercept: f64,
}

impl AlphaModel {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    /// `slope·θ₀ + intercept`, clamped to `[0, 1]`.
    pub fn predict(&self, theta0: f64) -> f64 {
        (self.slope * theta0 + self.intercept).clamp(0.0, 1.0)
    }
}

impl Default for AlphaModel {
    /// Coefficients measured on 5,000 HotpotQA training queries.
    fn default() -> Self {
        Self::new(0.058, 0.455)
    }
}

pub fn predict_alpha(theta0: f64, model: &AlphaModel) -> f64 {
    model.predict(theta0)
}

/// Angles measured for one (query, pseudo-context, relevant document) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub alpha: f64,
}

impl AngleSample {
    /// Builds a sample, deriving α from θ₁ and θ₂.
    pub fn from_angles(theta0: f64, theta1: f64, theta2: f64) -> Result<Self> {
        let alpha = alpha_from_angles(theta1, theta2)?;
        Ok(Self {
            theta0,
            theta1,
            theta2,
            alpha,
        })
    }
}

/// Result of a least-squares fit of α on θ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl AlphaFit {
    pub fn model(&self) -> AlphaModel {
        AlphaModel::new(self.slope, self.intercept)
    }
}

/// Ordinary least-squares regression of `alpha` on `theta0`.
pub fn fit_alpha_model(samples: &[AngleSample]) -> Result<AlphaFit> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Degenerate("no samples to fit".into()))?;
    if samples
        .iter()
        .any(|s| !(s.theta0.is_finite() && s.alpha.is_finite()))
    {
        return Err(Error::InvalidInput("samples contain non-finite values".into()));
    }
    if samples.iter().all(|s| s.theta0 == first.theta0) {
        return Err(Error::Degenerate(
            "need at least 2 distinct theta0 values to fit".into(),
        ));
    }

    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.theta0).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.alpha).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for s in samples {
        let dx = s.theta0 - mean_x;
        sxx += dx * dx;
        sxy += dx * (s.alpha - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for s in samples {
        let resid = s.alpha - (slope * s.theta0 + intercept);
        ss_res += resid * resid;
        ss_tot += (s.alpha - mean_y).powi(2);
    }
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };

    Ok(AlphaFit {
        slope,
        intercept,
        r2,
        n: samples.len(),
    })
}
