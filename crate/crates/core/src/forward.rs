//! Forward inference of a backbone with per-unit rescaling.
//!
//! Every conv weight is drawn from N(0, 1) with zero bias, so activations grow
//! by roughly `sqrt(fan_in / 2)` per layer and a deep net overflows `f32`
//! quickly. After each unit the post-activation output is divided by a
//! positive `γ`; all `γ` are recorded so that entropies can be compensated by
//! `Σ log γ`. The network is positively homogeneous (ReLU, no bias, residual
//! adds of equally scaled branches), so the compensation is exact for any
//! choice of `γ`.
//!
//! Unit semantics, with `φ` = ReLU:
//!
//! - plain: `h = W * x`, output `φ(h)`
//! - bottleneck: `h = W3 * φ(W2 * φ(W1 * x)) + shortcut(x)`, output `φ(h)`
//! - inverted: `h = Wp * φ(Wd * φ(We * x)) [+ x]`, output `h` (linear bottleneck)
//!
//! Weights are drawn in unit order, main path first, then the projection.

use crate::arch::{ArchitectureSpec, ConvShape, Unit};
use crate::rng::SeededRng;
use crate::tensor::{conv2d, relu_in_place, ConvWeights, FeatureMap, ShapeError};
use alloc::vec::Vec;

/// How the per-unit divisor `γ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RescaleRule {
    /// Root mean square of the map (Euclidean norm over `sqrt(numel)`).
    #[default]
    Rms,
    /// Euclidean norm of the map.
    Norm,
    /// Fixed divisor; `Constant(1.0)` disables rescaling.
    Constant(f64),
    /// Independent uniform draw from `[lo, hi)` per unit, from its own stream.
    Uniform { lo: f64, hi: f64, seed: u64 },
}

const UNIFORM_RESCALE_STREAM: u64 = 0x7e5c_a1e0;

struct Rescaler {
    rule: RescaleRule,
    rng: Option<SeededRng>,
}

impl Rescaler {
    fn new(rule: RescaleRule) -> Self {
        let rng = match rule {
            RescaleRule::Uniform { seed, .. } => Some(SeededRng::new(seed, UNIFORM_RESCALE_STREAM)),
            _ => None,
        };
        Rescaler { rule, rng }
    }

    fn gamma(&mut self, map: &FeatureMap) -> f64 {
        match self.rule {
            RescaleRule::Rms => libm::sqrt(map.sum_squares() / map.numel() as f64),
            RescaleRule::Norm => libm::sqrt(map.sum_squares()),
            RescaleRule::Constant(c) => c,
            RescaleRule::Uniform { lo, hi, .. } => self.rng.as_mut().map_or(1.0, |r| r.uniform(lo, hi)),
        }
    }
}

/// Every `γ` applied during one forward pass, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RescaleLedger {
    gammas: Vec<f64>,
}

impl RescaleLedger {
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn log_sum(&self) -> f64 {
        self.gammas.iter().map(|&g| libm::log(g)).sum()
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Last pre-activation map of a stage and the `Σ log γ` applied upstream of it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCapture {
    /// 1 for C1 ... 5 for C5; 0 for blocks before the first downsample.
    pub stage: usize,
    pub map: FeatureMap,
    pub log_gamma_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub stages: Vec<StageCapture>,
    /// Last pre-activation map of the network (the input if there are no units).
    pub output: FeatureMap,
    pub output_log_gamma_sum: f64,
    pub ledger: RescaleLedger,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForwardError {
    #[error("input has {found} channels, first block expects {expected}")]
    InputChannels { expected: usize, found: usize },
    #[error("non-finite activation at unit {unit}")]
    NonFinite { unit: usize },
    #[error("activations vanished at unit {unit}")]
    Vanished { unit: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

fn conv(x: &FeatureMap, shape: &ConvShape, rng: &mut SeededRng) -> Result<FeatureMap, ShapeError> {
    let w = ConvWeights::gaussian(shape.cout, shape.cin, shape.kernel, shape.groups, rng)?;
    conv2d(x, &w, shape.stride)
}

/// Runs one unit; returns its pre-activation output `h`.
fn run_unit(x: &FeatureMap, unit: &Unit, rng: &mut SeededRng) -> Result<FeatureMap, ShapeError> {
    let convs = unit.convs();
    let mut h: Option<FeatureMap> = None;
    for shape in convs.main.iter().flatten() {
        if let Some(prev) = h.as_mut() {
            relu_in_place(prev);
        }
        h = Some(conv(h.as_ref().unwrap_or(x), shape, rng)?);
    }
    let mut h = h.expect("every unit has a main-path conv");
    if let Some(proj) = convs.projection {
        h.add_assign(&conv(x, &proj, rng)?)?;
    } else if unit.has_identity_shortcut() {
        h.add_assign(x)?;
    }
    Ok(h)
}

/// Forward pass with rescaling after every unit.
///
/// Captures the last pre-activation map of every stage. Blocks are not
/// validated; any list of channel-chained blocks runs.
pub fn rescaled_forward(
    arch: &ArchitectureSpec,
    input: FeatureMap,
    rng: &mut SeededRng,
    rule: RescaleRule,
) -> Result<ForwardOutput, ForwardError> {
    if let Some(expected) = arch.input_channels() {
        if expected != input.channels() {
            return Err(ForwardError::InputChannels { expected, found: input.channels() });
        }
    }
    let stage_of = arch.stage_of_block();
    let mut rescaler = Rescaler::new(rule);
    let mut ledger = RescaleLedger::default();
    let mut stages = Vec::new();
    let mut log_sum = 0.0;
    let mut x = input;
    let mut output = None;
    let mut unit_index = 0;

    for (bi, block) in arch.blocks.iter().enumerate() {
        let closes_stage = arch.blocks.get(bi + 1).is_none_or(|next| next.stride == 2);
        let units: Vec<Unit> = block.units().collect();
        for (ui, unit) in units.iter().enumerate() {
            let h = run_unit(&x, unit, rng)?;
            if !h.is_finite() {
                return Err(ForwardError::NonFinite { unit: unit_index });
            }
            let mut post = h.clone();
            if !matches!(unit, Unit::Inverted { .. }) {
                relu_in_place(&mut post);
            }
            let gamma = rescaler.gamma(&post);
            if !gamma.is_finite() {
                return Err(ForwardError::NonFinite { unit: unit_index });
            }
            if gamma <= 0.0 {
                return Err(ForwardError::Vanished { unit: unit_index });
            }
            post.scale_down(gamma);

            if ui + 1 == units.len() {
                if bi + 1 == arch.blocks.len() {
                    output = Some(h.clone());
                }
                if closes_stage {
                    stages.push(StageCapture { stage: stage_of[bi], map: h, log_gamma_sum: log_sum });
                }
            }
            ledger.gammas.push(gamma);
            log_sum += libm::log(gamma);
            x = post;
            unit_index += 1;
        }
    }

    let output_log_gamma_sum = match stages.last() {
        Some(s) if output.is_some() => s.log_gamma_sum,
        _ => 0.0,
    };
    Ok(ForwardOutput {
        stages,
        output: output.unwrap_or(x),
        output_log_gamma_sum,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::BlockSpec;
    use crate::tensor::gaussian_input;
    use alloc::vec;

    fn noise(c: usize, side: usize, seed: u64) -> FeatureMap {
        gaussian_input(c, side, side, &mut SeededRng::new(seed, 0))
    }

    #[test]
    fn depth_zero_passes_input_through() {
        let x = noise(3, 8, 1);
        let out = rescaled_forward(&ArchitectureSpec::default(), x.clone(), &mut SeededRng::new(0, 0), RescaleRule::Rms)
            .unwrap();
        assert_eq!(out.output, x);
        assert!(out.ledger.is_empty());
        assert!(out.stages.is_empty());
    }

    #[test]
    fn rescaled_outputs_have_unit_rms() {
        let arch = ArchitectureSpec::new(vec![
            BlockSpec::conv(3, 3, 16, 2, 2),
            BlockSpec::res_block(5, 16, 32, 2, 8, 1),
            BlockSpec::mobile(3, 32, 32, 1, 3, 2),
        ]);
        // Re-run prefix by prefix and check the rescaled output of the last unit.
        for n in 1..=arch.blocks.len() {
            let prefix = ArchitectureSpec::new(arch.blocks[..n].to_vec());
            let out = rescaled_forward(&prefix, noise(3, 16, 4), &mut SeededRng::new(9, 9), RescaleRule::Rms).unwrap();
            let gamma = *out.ledger.gammas().last().unwrap();
            let mut post = out.output.clone();
            if n < 3 {
                relu_in_place(&mut post);
            }
            post.scale_down(gamma);
            let rms = libm::sqrt(post.sum_squares() / post.numel() as f64);
            assert!((rms - 1.0).abs() < 1e-6, "{rms}");
        }
    }

    #[test]
    fn stage_captures_and_log_sums() {
        let arch = ArchitectureSpec::new(vec![
            BlockSpec::conv(3, 3, 8, 2, 1),
            BlockSpec::res_block(3, 8, 16, 2, 8, 1),
            BlockSpec::res_block(3, 16, 16, 1, 8, 1),
        ]);
        let out = rescaled_forward(&arch, noise(3, 16, 2), &mut SeededRng::new(1, 0), RescaleRule::Rms).unwrap();
        assert_eq!(out.stages.len(), 2);
        assert_eq!(out.stages[0].stage, 1);
        assert_eq!(out.stages[0].map.shape(), (8, 8, 8));
        assert_eq!(out.stages[0].log_gamma_sum, 0.0);
        assert_eq!(out.stages[1].stage, 2);
        assert_eq!(out.stages[1].map.shape(), (16, 4, 4));
        // 1 stem unit + 2 + 2 bottleneck units, last one not yet applied at capture.
        assert_eq!(out.ledger.len(), 5);
        let upstream: f64 = out.ledger.gammas()[..4].iter().map(|&g| libm::log(g)).sum();
        assert_eq!(out.stages[1].log_gamma_sum, upstream);
        assert_eq!(out.output, out.stages[1].map);
    }

    #[test]
    fn deterministic_given_seed() {
        let arch = crate::zoo::initial_structure();
        let run = || rescaled_forward(&arch, noise(3, 32, 5), &mut SeededRng::new(5, 1), RescaleRule::Rms).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let arch = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 8, 2, 1)]);
        let err = rescaled_forward(&arch, noise(4, 8, 1), &mut SeededRng::new(0, 0), RescaleRule::Rms).unwrap_err();
        assert_eq!(err, ForwardError::InputChannels { expected: 3, found: 4 });
    }

    #[test]
    fn deep_vanilla_net_overflows_without_rescaling() {
        let arch = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 64, 1, 40)]);
        let err = rescaled_forward(&arch, noise(3, 8, 1), &mut SeededRng::new(0, 0), RescaleRule::Constant(1.0))
            .unwrap_err();
        assert!(matches!(err, ForwardError::NonFinite { .. }));
        let ok = rescaled_forward(&arch, noise(3, 8, 1), &mut SeededRng::new(0, 0), RescaleRule::Rms).unwrap();
        assert!(ok.output.is_finite());
    }
}
