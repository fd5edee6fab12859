//! Analytic cost model.
//!
//! FLOPs are multiply-accumulates: each convolution contributes its weight
//! count times the number of output positions. Biases and normalisation
//! parameters are not counted. Projection shortcuts count towards FLOPs and
//! parameters but not towards depth.

use crate::arch::{ArchitectureSpec, Resolution, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    /// Main-path convolution layers.
    pub depth: u64,
}

/// Costs of an architecture without validating it first.
///
/// Works on any block list whose channels chain; used by the search for
/// candidates that are valid by construction.
pub fn cost_unchecked(arch: &ArchitectureSpec, input: Resolution) -> CostReport {
    let mut report = CostReport::default();
    let mut res = input;
    for block in &arch.blocks {
        for unit in block.units() {
            let convs = unit.convs();
            for conv in convs.main.iter().flatten() {
                let out = res.strided(conv.stride);
                let weights = conv.weight_count();
                report.params += weights;
                report.flops += weights * out.area();
                report.depth += 1;
                res = out;
            }
            if let Some(proj) = convs.projection {
                let weights = proj.weight_count();
                report.params += weights;
                report.flops += weights * res.area();
            }
        }
    }
    report
}

pub fn cost(arch: &ArchitectureSpec, input: Resolution) -> Result<CostReport, ValidationError> {
    arch.validate()?;
    Ok(cost_unchecked(arch, input))
}

pub fn count_params(arch: &ArchitectureSpec) -> Result<u64, ValidationError> {
    // Parameter count does not depend on resolution.
    cost(arch, Resolution::square(1)).map(|c| c.params)
}

pub fn count_flops(arch: &ArchitectureSpec, input: Resolution) -> Result<u64, ValidationError> {
    cost(arch, input).map(|c| c.flops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::BlockSpec;
    use crate::zoo;
    use alloc::vec;

    #[test]
    fn single_stem_conv() {
        let stem = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 64, 2, 1)]);
        let c = cost_unchecked(&stem, Resolution::square(224));
        assert_eq!(c.params, 1728);
        assert_eq!(c.flops, 21_676_032);
        assert_eq!(c.depth, 1);
    }

    #[test]
    fn odd_sizes_round_up() {
        let stem = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 8, 2, 1)]);
        let c = cost_unchecked(&stem, Resolution::new(7, 5));
        assert_eq!(c.flops, 3 * 3 * 3 * 8 * 4 * 3);
    }

    #[test]
    fn projection_only_on_shape_change() {
        // One unit, same width, stride 1: no projection.
        let b = ArchitectureSpec::new(vec![BlockSpec::bottleneck(3, 64, 64, 1, 16, 1)]);
        assert_eq!(cost_unchecked(&b, Resolution::square(1)).params, 64 * 16 + 9 * 16 * 16 + 16 * 64);
        let b = ArchitectureSpec::new(vec![BlockSpec::bottleneck(3, 32, 64, 1, 16, 1)]);
        assert_eq!(
            cost_unchecked(&b, Resolution::square(1)).params,
            32 * 16 + 9 * 16 * 16 + 16 * 64 + 32 * 64
        );
    }

    #[test]
    fn mobile_unit_costs() {
        // expand 16->96, depthwise 3x3 on 96, project 96->24 at stride 2.
        let b = ArchitectureSpec::new(vec![BlockSpec::mobile(3, 16, 24, 2, 6, 1)]);
        let c = cost_unchecked(&b, Resolution::square(8));
        assert_eq!(c.params, 16 * 96 + 9 * 96 + 96 * 24);
        assert_eq!(c.flops, 16 * 96 * 64 + (9 * 96 + 96 * 24) * 16);
        assert_eq!(c.depth, 3);
        // expansion 1 drops the expand conv
        let b = ArchitectureSpec::new(vec![BlockSpec::mobile(3, 16, 16, 1, 1, 1)]);
        assert_eq!(cost_unchecked(&b, Resolution::square(1)).depth, 2);
    }

    #[test]
    fn invalid_arch_is_an_error() {
        let mut arch = zoo::initial_structure();
        arch.blocks[0].kernel = 7;
        assert!(count_params(&arch).is_err());
        assert!(count_flops(&arch, Resolution::square(224)).is_err());
    }

    #[test]
    fn depth_of_tables() {
        let depth = |a: &ArchitectureSpec| cost_unchecked(a, Resolution::square(32)).depth;
        assert_eq!(depth(&zoo::initial_structure()), 25);
        assert_eq!(depth(&zoo::searched_small()), 79);
        assert_eq!(depth(&zoo::searched_medium()), 91);
        assert_eq!(depth(&zoo::searched_large()), 109);
        assert_eq!(depth(&zoo::resnet50()), 49);
    }
}
