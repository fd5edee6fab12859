//! Reference backbones used as fixtures and as the default search start.

use crate::arch::{ArchitectureSpec, BlockSpec};
use alloc::vec;

/// Five narrow downsampling stages: the default starting point of a search.
pub fn initial_structure() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 64, 2, 1),
        BlockSpec::res_block(3, 64, 256, 2, 64, 1),
        BlockSpec::res_block(3, 256, 512, 2, 128, 1),
        BlockSpec::res_block(3, 512, 1024, 2, 256, 1),
        BlockSpec::res_block(3, 1024, 2048, 2, 512, 1),
    ])
}

/// The initial structure at a quarter of its widths, for desk-scale searches.
pub fn initial_quarter() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 16, 2, 1),
        BlockSpec::res_block(3, 16, 64, 2, 16, 1),
        BlockSpec::res_block(3, 64, 128, 2, 32, 1),
        BlockSpec::res_block(3, 128, 256, 2, 64, 1),
        BlockSpec::res_block(3, 256, 512, 2, 128, 1),
    ])
}

/// Searched backbone at roughly 60% of ResNet-50's FLOPs.
pub fn searched_small() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 32, 2, 1),
        BlockSpec::res_block(5, 32, 48, 2, 32, 1),
        BlockSpec::res_block(3, 48, 272, 2, 120, 2),
        BlockSpec::res_block(5, 272, 1024, 2, 80, 5),
        BlockSpec::res_block(3, 1024, 2048, 2, 240, 5),
    ])
}

/// Searched backbone aligned with ResNet-50's budget.
pub fn searched_medium() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 64, 2, 1),
        BlockSpec::res_block(3, 64, 120, 2, 64, 1),
        BlockSpec::res_block(5, 120, 512, 2, 72, 5),
        BlockSpec::res_block(5, 512, 1632, 2, 112, 5),
        BlockSpec::res_block(5, 1632, 2048, 2, 184, 4),
    ])
}

/// Searched backbone aligned with ResNet-101's budget.
pub fn searched_large() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 80, 2, 1),
        BlockSpec::res_block(3, 80, 144, 2, 80, 1),
        BlockSpec::res_block(5, 144, 608, 2, 88, 6),
        BlockSpec::res_block(5, 608, 1912, 2, 136, 6),
        BlockSpec::res_block(5, 1912, 2400, 2, 220, 5),
    ])
}

/// ResNet-50 (v1.5 stride placement) in block form.
///
/// The 7×7 stem and max-pool are folded into a 3×3 stride-2 stem plus a
/// stride-2 first stage, since kernels are restricted to {3, 5}.
pub fn resnet50() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        BlockSpec::conv(3, 3, 64, 2, 1),
        BlockSpec::bottleneck(3, 64, 256, 2, 64, 3),
        BlockSpec::bottleneck(3, 256, 512, 2, 128, 4),
        BlockSpec::bottleneck(3, 512, 1024, 2, 256, 6),
        BlockSpec::bottleneck(3, 1024, 2048, 2, 512, 3),
    ])
}

/// Looks a reference backbone up by name.
pub fn by_name(name: &str) -> Option<ArchitectureSpec> {
    Some(match name {
        "initial" => initial_structure(),
        "initial-quarter" => initial_quarter(),
        "searched-s" => searched_small(),
        "searched-m" => searched_medium(),
        "searched-l" => searched_large(),
        "resnet50" => resnet50(),
        _ => return None,
    })
}

pub const NAMES: [&str; 6] = ["initial", "initial-quarter", "searched-s", "searched-m", "searched-l", "resnet50"];
