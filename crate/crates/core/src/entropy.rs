//! Entropy scores.
//!
//! The Gaussian entropy of a map with variance `σ²` is `log σ` up to additive
//! constants, and upper-bounds the differential entropy of any distribution
//! with that variance. A stage's entropy is measured on its last
//! pre-activation map, compensated for the rescaling applied upstream, and
//! multiplied by the map's element count `C·H·W`:
//!
//! ```text
//! H(Ci) = numel(Ci) · (½ log Var(Ci) + Σ log γ)
//! Z(F)  = Σ αi · H(Ci)
//! ```

use crate::arch::{ArchitectureSpec, Resolution, ValidationError, NUM_STAGES, OUTPUT_STRIDE};
use crate::forward::{rescaled_forward, ForwardError, RescaleRule};
use crate::rng::SeededRng;
use crate::tensor::{gaussian_input, FeatureMap};
use core::fmt;
use alloc::string::{String, ToString};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EntropyError {
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("degenerate feature map: {0}")]
    Degenerate(&'static str),
}

/// `log σ`; the Gaussian differential entropy without its constant terms.
pub fn gaussian_entropy(sigma: f64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0) {
        return Err(EntropyError::NonPositiveSigma(sigma));
    }
    Ok(libm::log(sigma))
}

/// Entropy of one pre-activation map: `numel · (½ log Var + log_gamma_sum)`.
///
/// `Var` is the population variance over all `C·H·W` elements.
pub fn stage_entropy(map: &FeatureMap, log_gamma_sum: f64) -> Result<f64, EntropyError> {
    if map.numel() < 2 {
        return Err(EntropyError::Degenerate("fewer than two elements"));
    }
    let (_, var) = map.mean_variance();
    if !(var > 0.0) {
        return Err(EntropyError::Degenerate("zero variance"));
    }
    let per_element = gaussian_entropy(libm::sqrt(var))? + log_gamma_sum;
    Ok(map.numel() as f64 * per_element)
}

/// Stage weights `α1..α5`. Non-negative, at least one positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsepWeights([f64; NUM_STAGES]);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage weights must be finite, non-negative and not all zero: {0:?}")]
pub struct InvalidWeights(pub [f64; NUM_STAGES]);

impl MsepWeights {
    pub fn new(alpha: [f64; NUM_STAGES]) -> Result<Self, InvalidWeights> {
        let ok = alpha.iter().all(|a| a.is_finite() && *a >= 0.0) && alpha.iter().any(|&a| a > 0.0);
        if ok {
            Ok(MsepWeights(alpha))
        } else {
            Err(InvalidWeights(alpha))
        }
    }

    /// Only the last stage counts.
    pub fn single_scale() -> Self {
        MsepWeights([0.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn values(&self) -> [f64; NUM_STAGES] {
        self.0
    }

    pub fn weighted_sum(&self, stage_entropy: &[f64; NUM_STAGES]) -> f64 {
        self.0.iter().zip(stage_entropy).map(|(a, h)| a * h).sum()
    }
}

impl Default for MsepWeights {
    /// `(0, 0, 1, 1, 6)`: C3:C4:C5 at 1:1:6.
    fn default() -> Self {
        MsepWeights([0.0, 0.0, 1.0, 1.0, 6.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// `H(C1)..H(C5)` in nats, already multiplied by the map size.
    pub stage_entropy: [f64; NUM_STAGES],
    /// `Σ log γ` upstream of each stage's captured map.
    pub gammas_logsum: [f64; NUM_STAGES],
    /// `Σ αi · H(Ci)`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreError {
    Invalid(ValidationError),
    Resolution(Resolution),
    Degenerate(String),
    Forward(ForwardError),
}

impl fmt::Display for ScoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreError::Invalid(e) => write!(f, "invalid architecture: {e}"),
            ScoreError::Resolution(r) => write!(f, "resolution {r} is not divisible by {OUTPUT_STRIDE}"),
            ScoreError::Degenerate(why) => write!(f, "degenerate architecture: {why}"),
            ScoreError::Forward(e) => write!(f, "forward pass failed: {e}"),
        }
    }
}

impl core::error::Error for ScoreError {}

impl ScoreError {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, ScoreError::Degenerate(_))
    }
}

impl From<ForwardError> for ScoreError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::Vanished { .. } => ScoreError::Degenerate(e.to_string()),
            e => ScoreError::Forward(e),
        }
    }
}

/// Multi-scale entropy with the default (RMS) rescaler.
pub fn multiscale_entropy(
    arch: &ArchitectureSpec,
    weights: &MsepWeights,
    resolution: Resolution,
    rng: &mut SeededRng,
) -> Result<EntropyReport, ScoreError> {
    multiscale_entropy_with(arch, weights, resolution, rng, RescaleRule::Rms)
}

/// One forward pass on Gaussian noise; the noise image is drawn before any weight.
pub fn multiscale_entropy_with(
    arch: &ArchitectureSpec,
    weights: &MsepWeights,
    resolution: Resolution,
    rng: &mut SeededRng,
    rule: RescaleRule,
) -> Result<EntropyReport, ScoreError> {
    arch.validate().map_err(ScoreError::Invalid)?;
    if resolution.height % OUTPUT_STRIDE != 0 || resolution.width % OUTPUT_STRIDE != 0 || resolution.area() == 0 {
        return Err(ScoreError::Resolution(resolution));
    }
    let channels = arch.input_channels().unwrap_or(3);
    let input = gaussian_input(channels, resolution.height, resolution.width, rng);
    let out = rescaled_forward(arch, input, rng, rule)?;
    debug_assert_eq!(out.stages.len(), NUM_STAGES);

    let mut report = EntropyReport {
        stage_entropy: [0.0; NUM_STAGES],
        gammas_logsum: [0.0; NUM_STAGES],
        score: 0.0,
    };
    for capture in &out.stages {
        let i = capture.stage - 1;
        report.stage_entropy[i] = stage_entropy(&capture.map, capture.log_gamma_sum)
            .map_err(|e| ScoreError::Degenerate(alloc::format!("stage C{}: {e}", capture.stage)))?;
        report.gammas_logsum[i] = capture.log_gamma_sum;
    }
    report.score = weights.weighted_sum(&report.stage_entropy);
    Ok(report)
}

/// Ranks an architecture; larger is better.
///
/// `seed` and `stream` address the random draws, so a scorer must return the
/// same value for the same `(arch, seed, stream)` regardless of call order
/// or thread.
pub trait Scorer: Sync {
    fn score(&self, arch: &ArchitectureSpec, seed: u64, stream: u64) -> Result<f64, ScoreError>;
}

/// The multi-scale entropy scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct MsepScorer {
    pub weights: MsepWeights,
    pub resolution: Resolution,
    /// Independent forward passes averaged per score.
    pub repeats: usize,
    pub rule: RescaleRule,
}

impl MsepScorer {
    pub fn new(weights: MsepWeights, resolution: Resolution) -> Self {
        MsepScorer { weights, resolution, repeats: 1, rule: RescaleRule::Rms }
    }

    /// Full report, averaged over `repeats` passes. Repeat `r` uses stream
    /// `stream + r`.
    pub fn report(&self, arch: &ArchitectureSpec, seed: u64, stream: u64) -> Result<EntropyReport, ScoreError> {
        let repeats = self.repeats.max(1);
        let mut sum: Option<EntropyReport> = None;
        for r in 0..repeats {
            let mut rng = SeededRng::new(seed, stream.wrapping_add(r as u64));
            let rep = multiscale_entropy_with(arch, &self.weights, self.resolution, &mut rng, self.rule)?;
            sum = Some(match sum {
                None => rep,
                Some(mut acc) => {
                    for i in 0..NUM_STAGES {
                        acc.stage_entropy[i] += rep.stage_entropy[i];
                        acc.gammas_logsum[i] += rep.gammas_logsum[i];
                    }
                    acc
                }
            });
        }
        let mut report = sum.expect("at least one repeat");
        if repeats > 1 {
            let n = repeats as f64;
            for i in 0..NUM_STAGES {
                report.stage_entropy[i] /= n;
                report.gammas_logsum[i] /= n;
            }
        }
        report.score = self.weights.weighted_sum(&report.stage_entropy);
        Ok(report)
    }
}

impl Scorer for MsepScorer {
    fn score(&self, arch: &ArchitectureSpec, seed: u64, stream: u64) -> Result<f64, ScoreError> {
        self.report(arch, seed, stream).map(|r| r.score)
    }
}
