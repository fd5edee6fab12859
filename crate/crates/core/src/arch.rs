//! Block-level architecture IR.
//!
//! A backbone is an ordered list of [`BlockSpec`]s. Every block with stride 2
//! opens a new stage; a valid backbone has exactly five of them, so its
//! stages C1..C5 sit at output strides 2, 4, 8, 16 and 32.
//!
//! A block expands into a sequence of [`Unit`]s, and a unit into plain
//! convolutions ([`ConvShape`]). The cost model and the inference engine both
//! walk this expansion, so the two always agree on what a block means:
//!
//! | block        | one layer is                                           |
//! |--------------|--------------------------------------------------------|
//! | `Conv`       | k×k conv + ReLU                                        |
//! | `ResBlock`   | two stacked bottleneck units                           |
//! | `Bottleneck` | one bottleneck unit (1×1 reduce, k×k, 1×1 expand, add) |
//! | `Mobile`     | one inverted-residual unit (1×1 expand, k×k dw, 1×1)   |
//!
//! Only the first unit of a block carries the block's stride and input
//! width; later units map `out -> out` at stride 1. A bottleneck unit whose
//! width or resolution changes gets a 1×1 projection shortcut.

use alloc::vec::Vec;
use core::fmt;

/// Kernel sizes a block may use.
pub const KERNEL_CHOICES: [usize; 2] = [3, 5];
/// Expansion ratios allowed for inverted-residual blocks.
pub const EXPANSION_CHOICES: [u32; 3] = [1, 3, 6];
/// Layers a single block may hold before it has to be split in two.
pub const MAX_BLOCK_LAYERS: usize = 10;
/// Number of stride-2 stages in a detection backbone.
pub const NUM_STAGES: usize = 5;
/// Total downsampling factor of a valid backbone.
pub const OUTPUT_STRIDE: usize = 1 << NUM_STAGES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockType {
    /// Plain convolution followed by ReLU. Used for the stem.
    Conv,
    /// Residual bottleneck pair: each layer stacks two bottleneck units.
    ResBlock,
    /// Single residual bottleneck unit per layer (classic ResNet stage).
    Bottleneck,
    /// MobileNetV2 inverted bottleneck with a depthwise k×k.
    Mobile,
}

impl BlockType {
    pub const ALL: [BlockType; 4] = [
        BlockType::Conv,
        BlockType::ResBlock,
        BlockType::Bottleneck,
        BlockType::Mobile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockType::Conv => "Conv",
            BlockType::ResBlock => "ResBlock",
            BlockType::Bottleneck => "Bottleneck",
            BlockType::Mobile => "Mobile",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Whether the block carries an explicit bottleneck width.
    pub fn has_bottleneck(self) -> bool {
        matches!(self, BlockType::ResBlock | BlockType::Bottleneck)
    }

    fn units_per_layer(self) -> usize {
        match self {
            BlockType::ResBlock => 2,
            _ => 1,
        }
    }

    fn tag(self) -> u8 {
        match self {
            BlockType::Conv => 1,
            BlockType::ResBlock => 2,
            BlockType::Bottleneck => 3,
            BlockType::Mobile => 4,
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of a backbone table; the unit the evolutionary search mutates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub block_type: BlockType,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Bottleneck width for `ResBlock`/`Bottleneck`, 0 otherwise.
    pub bottleneck_channels: usize,
    pub stride: usize,
    /// Number of times the block's layer is duplicated.
    pub num_layers: usize,
    /// Expansion ratio, present for `Mobile` blocks only.
    pub expansion: Option<u32>,
}

impl BlockSpec {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize, stride: usize, num_layers: usize) -> Self {
        BlockSpec {
            block_type: BlockType::Conv,
            kernel,
            in_channels,
            out_channels,
            bottleneck_channels: 0,
            stride,
            num_layers,
            expansion: None,
        }
    }

    pub fn res_block(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bottleneck_channels: usize,
        num_layers: usize,
    ) -> Self {
        BlockSpec {
            block_type: BlockType::ResBlock,
            kernel,
            in_channels,
            out_channels,
            bottleneck_channels,
            stride,
            num_layers,
            expansion: None,
        }
    }

    pub fn bottleneck(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bottleneck_channels: usize,
        num_layers: usize,
    ) -> Self {
        BlockSpec {
            block_type: BlockType::Bottleneck,
            ..Self::res_block(kernel, in_channels, out_channels, stride, bottleneck_channels, num_layers)
        }
    }

    pub fn mobile(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: u32,
        num_layers: usize,
    ) -> Self {
        BlockSpec {
            block_type: BlockType::Mobile,
            kernel,
            in_channels,
            out_channels,
            bottleneck_channels: 0,
            stride,
            num_layers,
            expansion: Some(expansion),
        }
    }

    /// Expands the block into its computational units, in execution order.
    pub fn units(&self) -> impl Iterator<Item = Unit> + '_ {
        let count = self.num_layers * self.block_type.units_per_layer();
        (0..count).map(move |i| {
            let (cin, stride) = if i == 0 {
                (self.in_channels, self.stride)
            } else {
                (self.out_channels, 1)
            };
            let kernel = self.kernel;
            let cout = self.out_channels;
            match self.block_type {
                BlockType::Conv => Unit::Plain { kernel, cin, cout, stride },
                BlockType::ResBlock | BlockType::Bottleneck => Unit::Bottleneck {
                    kernel,
                    cin,
                    mid: self.bottleneck_channels,
                    cout,
                    stride,
                },
                BlockType::Mobile => Unit::Inverted {
                    kernel,
                    cin,
                    expansion: self.expansion.unwrap_or(1) as usize,
                    cout,
                    stride,
                },
            }
        })
    }

    /// Main-path convolution layers in this block.
    pub fn depth(&self) -> usize {
        self.units().map(|u| u.depth()).sum()
    }

    fn check(&self) -> Result<(), Violation> {
        if !KERNEL_CHOICES.contains(&self.kernel) {
            return Err(Violation::Kernel(self.kernel));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Violation::Stride(self.stride));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Violation::ZeroChannels);
        }
        if self.num_layers == 0 || self.num_layers > MAX_BLOCK_LAYERS {
            return Err(Violation::Layers(self.num_layers));
        }
        if self.block_type.has_bottleneck() == (self.bottleneck_channels == 0) {
            return Err(Violation::Bottleneck(self.bottleneck_channels));
        }
        match (self.block_type, self.expansion) {
            (BlockType::Mobile, Some(e)) if EXPANSION_CHOICES.contains(&e) => Ok(()),
            (BlockType::Mobile, e) => Err(Violation::Expansion(e)),
            (_, None) => Ok(()),
            (_, e) => Err(Violation::Expansion(e)),
        }
    }

    fn hash_into(&self, h: &mut Fnv) {
        h.write_u64(u64::from(self.block_type.tag()));
        for v in [
            self.kernel,
            self.in_channels,
            self.out_channels,
            self.bottleneck_channels,
            self.stride,
            self.num_layers,
        ] {
            h.write_u64(v as u64);
        }
        h.write_u64(u64::from(self.expansion.unwrap_or(0)));
    }
}

/// A computational unit produced by expanding a [`BlockSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Plain { kernel: usize, cin: usize, cout: usize, stride: usize },
    Bottleneck { kernel: usize, cin: usize, mid: usize, cout: usize, stride: usize },
    Inverted { kernel: usize, cin: usize, expansion: usize, cout: usize, stride: usize },
}

/// Shape of a single convolution. `groups == cin == cout` is depthwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvShape {
    pub const fn new(kernel: usize, cin: usize, cout: usize, stride: usize) -> Self {
        ConvShape { kernel, cin, cout, stride, groups: 1 }
    }

    pub fn weight_count(&self) -> u64 {
        (self.kernel * self.kernel * (self.cin / self.groups) * self.cout) as u64
    }
}

/// Convolutions of one unit, in the order the engine runs (and initialises) them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitConvs {
    /// Main path.
    pub main: [Option<ConvShape>; 3],
    /// 1×1 projection on the shortcut, if any.
    pub projection: Option<ConvShape>,
}

impl Unit {
    pub fn stride(&self) -> usize {
        match *self {
            Unit::Plain { stride, .. } | Unit::Bottleneck { stride, .. } | Unit::Inverted { stride, .. } => stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            Unit::Plain { cout, .. } | Unit::Bottleneck { cout, .. } | Unit::Inverted { cout, .. } => cout,
        }
    }

    pub fn convs(&self) -> UnitConvs {
        match *self {
            Unit::Plain { kernel, cin, cout, stride } => UnitConvs {
                main: [Some(ConvShape::new(kernel, cin, cout, stride)), None, None],
                projection: None,
            },
            Unit::Bottleneck { kernel, cin, mid, cout, stride } => UnitConvs {
                main: [
                    Some(ConvShape::new(1, cin, mid, 1)),
                    Some(ConvShape::new(kernel, mid, mid, stride)),
                    Some(ConvShape::new(1, mid, cout, 1)),
                ],
                projection: (cin != cout || stride != 1).then(|| ConvShape::new(1, cin, cout, stride)),
            },
            Unit::Inverted { kernel, cin, expansion, cout, stride } => {
                let hidden = cin * expansion;
                UnitConvs {
                    main: [
                        (expansion != 1).then(|| ConvShape::new(1, cin, hidden, 1)),
                        Some(ConvShape { kernel, cin: hidden, cout: hidden, stride, groups: hidden }),
                        Some(ConvShape::new(1, hidden, cout, 1)),
                    ],
                    projection: None,
                }
            }
        }
    }

    /// Identity shortcut present (inverted units only add one when shapes match).
    pub fn has_identity_shortcut(&self) -> bool {
        match *self {
            Unit::Plain { .. } => false,
            Unit::Bottleneck { cin, cout, stride, .. } => cin == cout && stride == 1,
            Unit::Inverted { cin, cout, stride, .. } => cin == cout && stride == 1,
        }
    }

    pub fn depth(&self) -> usize {
        self.convs().main.iter().flatten().count()
    }
}

/// Spatial size of an input or feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Resolution { height, width }
    }

    pub const fn square(side: usize) -> Self {
        Resolution { height: side, width: side }
    }

    /// Output size of a "same"-padded convolution with the given stride.
    pub const fn strided(self, stride: usize) -> Self {
        Resolution {
            height: self.height.div_ceil(stride),
            width: self.width.div_ceil(stride),
        }
    }

    pub const fn area(self) -> u64 {
        (self.height * self.width) as u64
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("architecture has no blocks")]
    Empty,
    #[error("kernel {0} not in {{3,5}}")]
    Kernel(usize),
    #[error("stride {0} not in {{1,2}}")]
    Stride(usize),
    #[error("channel count is zero")]
    ZeroChannels,
    #[error("layer count {0} outside 1..={max}", max = MAX_BLOCK_LAYERS)]
    Layers(usize),
    #[error("bottleneck width {0} does not fit the block type")]
    Bottleneck(usize),
    #[error("expansion {0:?} does not fit the block type")]
    Expansion(Option<u32>),
    #[error("input channels {found} do not match previous output {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("first block must downsample (stride 2)")]
    StemStride,
    #[error("stage count {0} ≠ 5")]
    StageCount(usize),
}

/// First violated invariant, with the offending block when there is one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub block: Option<usize>,
    pub violation: Violation,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.block {
            write!(f, "block {i}: ")?;
        }
        write!(f, "{}", self.violation)
    }
}

impl core::error::Error for ValidationError {}

/// Ordered list of blocks forming a backbone.
///
/// Construction does not validate; call [`ArchitectureSpec::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ArchitectureSpec {
    pub blocks: Vec<BlockSpec>,
}

impl ArchitectureSpec {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        ArchitectureSpec { blocks }
    }

    /// Full check: block rules, channel chaining, a downsampling stem and five stages.
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.validate_blocks()?;
        if self.blocks[0].stride != 2 {
            return Err(ValidationError { block: Some(0), violation: Violation::StemStride });
        }
        let stages = self.blocks.iter().filter(|b| b.stride == 2).count();
        if stages != NUM_STAGES {
            return Err(ValidationError { block: None, violation: Violation::StageCount(stages) });
        }
        Ok(())
    }

    /// Block rules and channel chaining only; the stage layout is not checked.
    pub fn validate_blocks(&self) -> Result<(), ValidationError> {
        let at = |i: usize| move |violation| ValidationError { block: Some(i), violation };
        if self.blocks.is_empty() {
            return Err(ValidationError { block: None, violation: Violation::Empty });
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.check().map_err(at(i))?;
            if i > 0 {
                let expected = self.blocks[i - 1].out_channels;
                if b.in_channels != expected {
                    return Err(at(i)(Violation::ChannelMismatch { expected, found: b.in_channels }));
                }
            }
        }
        Ok(())
    }

    /// Stage of every block: 1 for C1 ... 5 for C5, 0 before the first downsample.
    pub fn stage_of_block(&self) -> Vec<usize> {
        let mut stage = 0;
        self.blocks
            .iter()
            .map(|b| {
                if b.stride == 2 {
                    stage += 1;
                }
                stage
            })
            .collect()
    }

    /// Total main-path convolution layers.
    pub fn depth(&self) -> usize {
        self.blocks.iter().map(BlockSpec::depth).sum()
    }

    pub fn input_channels(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.in_channels)
    }

    /// Stable structural hash (FNV-1a over every field); identical on all platforms.
    pub fn structural_hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.blocks.len() as u64);
        for b in &self.blocks {
            b.hash_into(&mut h);
        }
        h.finish()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;
    use alloc::string::ToString;

    #[test]
    fn well_formed_five_stage_net_is_valid() {
        assert_eq!(zoo::initial_structure().validate(), Ok(()));
        for arch in [zoo::searched_small(), zoo::searched_medium(), zoo::searched_large(), zoo::resnet50()] {
            arch.validate().unwrap();
        }
    }

    #[test]
    fn four_stages_is_rejected() {
        let mut arch = zoo::initial_structure();
        arch.blocks[4].stride = 1;
        let err = arch.validate().unwrap_err();
        assert_eq!(err.violation, Violation::StageCount(4));
        assert!(err.to_string().contains("stage count"));
    }

    #[test]
    fn kernel_seven_is_rejected() {
        let mut arch = zoo::initial_structure();
        arch.blocks[2].kernel = 7;
        let err = arch.validate().unwrap_err();
        assert_eq!(err.block, Some(2));
        assert_eq!(err.violation, Violation::Kernel(7));
        assert_eq!(err.to_string(), "block 2: kernel 7 not in {3,5}");
    }

    #[test]
    fn channel_mismatch_names_the_block() {
        let mut arch = zoo::initial_structure();
        arch.blocks[3].in_channels = 500;
        let err = arch.validate().unwrap_err();
        assert_eq!(err.block, Some(3));
        assert_eq!(err.violation, Violation::ChannelMismatch { expected: 512, found: 500 });
    }

    #[test]
    fn misc_block_violations() {
        let base = zoo::initial_structure();
        let cases: [(fn(&mut BlockSpec), Violation); 5] = [
            (|b| b.num_layers = 11, Violation::Layers(11)),
            (|b| b.num_layers = 0, Violation::Layers(0)),
            (|b| b.bottleneck_channels = 0, Violation::Bottleneck(0)),
            (|b| b.stride = 3, Violation::Stride(3)),
            (|b| b.expansion = Some(3), Violation::Expansion(Some(3))),
        ];
        for (edit, violation) in cases {
            let mut arch = base.clone();
            edit(&mut arch.blocks[1]);
            assert_eq!(arch.validate().unwrap_err().violation, violation);
        }
        assert_eq!(ArchitectureSpec::default().validate().unwrap_err().violation, Violation::Empty);
    }

    #[test]
    fn stages_follow_stride_two_blocks() {
        let arch = zoo::searched_small();
        assert_eq!(arch.stage_of_block(), [1, 2, 3, 4, 5]);
        let mut arch = zoo::initial_structure();
        arch.blocks.push(BlockSpec::res_block(3, 2048, 2048, 1, 512, 1));
        assert_eq!(arch.stage_of_block(), [1, 2, 3, 4, 5, 5]);
    }

    #[test]
    fn res_block_layer_is_two_units() {
        let b = BlockSpec::res_block(5, 64, 128, 2, 32, 3);
        let units: Vec<_> = b.units().collect();
        assert_eq!(units.len(), 6);
        assert_eq!(units[0], Unit::Bottleneck { kernel: 5, cin: 64, mid: 32, cout: 128, stride: 2 });
        assert_eq!(units[5], Unit::Bottleneck { kernel: 5, cin: 128, mid: 32, cout: 128, stride: 1 });
        assert!(units[0].convs().projection.is_some());
        assert!(units[1].convs().projection.is_none());
        assert_eq!(b.depth(), 18);
    }

    #[test]
    fn hash_separates_field_changes() {
        let a = zoo::initial_structure();
        let mut b = a.clone();
        b.blocks[1].kernel = 5;
        assert_ne!(a.structural_hash(), b.structural_hash());
        assert_eq!(a.structural_hash(), zoo::initial_structure().structural_hash());
    }
}
