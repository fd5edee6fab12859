//! Versioned JSON architecture files.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "blocks": [
//!     { "block": "Conv", "kernel": 3, "in": 3, "out": 64, "stride": 2, "bottleneck": 0, "layers": 1 },
//!     { "block": "Mobile", "kernel": 5, "in": 64, "out": 64, "stride": 2, "bottleneck": 0, "layers": 2, "expansion": 6 }
//!   ]
//! }
//! ```
//!
//! `block` is one of `Conv`, `ResBlock` (two bottleneck units per layer),
//! `Bottleneck` (one unit per layer) or `Mobile`. `expansion` appears on
//! `Mobile` blocks only. Unknown keys are rejected.

use entropynas_core::{ArchitectureSpec, BlockSpec, BlockType, ValidationError};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Kind {
    Conv,
    ResBlock,
    Bottleneck,
    Mobile,
}

impl From<BlockType> for Kind {
    fn from(t: BlockType) -> Self {
        match t {
            BlockType::Conv => Kind::Conv,
            BlockType::ResBlock => Kind::ResBlock,
            BlockType::Bottleneck => Kind::Bottleneck,
            BlockType::Mobile => Kind::Mobile,
        }
    }
}

impl From<Kind> for BlockType {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Conv => BlockType::Conv,
            Kind::ResBlock => BlockType::ResBlock,
            Kind::Bottleneck => BlockType::Bottleneck,
            Kind::Mobile => BlockType::Mobile,
        }
    }
}

/// One row of an architecture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    block: Kind,
    kernel: usize,
    #[serde(rename = "in")]
    in_channels: usize,
    #[serde(rename = "out")]
    out_channels: usize,
    stride: usize,
    bottleneck: usize,
    layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expansion: Option<u32>,
}

impl From<&BlockSpec> for BlockRecord {
    fn from(b: &BlockSpec) -> Self {
        BlockRecord {
            block: b.block_type.into(),
            kernel: b.kernel,
            in_channels: b.in_channels,
            out_channels: b.out_channels,
            stride: b.stride,
            bottleneck: b.bottleneck_channels,
            layers: b.num_layers,
            expansion: b.expansion,
        }
    }
}

impl From<BlockRecord> for BlockSpec {
    fn from(r: BlockRecord) -> Self {
        BlockSpec {
            block_type: r.block.into(),
            kernel: r.kernel,
            in_channels: r.in_channels,
            out_channels: r.out_channels,
            bottleneck_channels: r.bottleneck,
            stride: r.stride,
            num_layers: r.layers,
            expansion: r.expansion,
        }
    }
}

pub fn to_records(arch: &ArchitectureSpec) -> Vec<BlockRecord> {
    arch.blocks.iter().map(BlockRecord::from).collect()
}

pub fn from_records(records: Vec<BlockRecord>) -> ArchitectureSpec {
    ArchitectureSpec::new(records.into_iter().map(BlockSpec::from).collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    format_version: u32,
    blocks: Vec<BlockRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Canonical pretty-printed document, newline-terminated.
pub fn serialize(arch: &ArchitectureSpec) -> String {
    let file = ArchFile { format_version: FORMAT_VERSION, blocks: to_records(arch) };
    let mut text = serde_json::to_string_pretty(&file).expect("architecture files always serialize");
    text.push('\n');
    text
}

/// Parses a document and checks block rules and channel chaining. The stage
/// layout is left to [`ArchitectureSpec::validate`], so partial backbones load.
pub fn parse(text: &str) -> Result<ArchitectureSpec, FormatError> {
    let file: ArchFile = serde_json::from_str(text).map_err(|e| FormatError::Syntax {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(FormatError::Version(file.format_version));
    }
    let arch = from_records(file.blocks);
    arch.validate_blocks()?;
    Ok(arch)
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

pub fn read(path: &Path) -> Result<ArchitectureSpec, FormatError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use entropynas_core::zoo;

    #[test]
    fn round_trips_reference_backbones() {
        for name in zoo::NAMES {
            let arch = zoo::by_name(name).unwrap();
            assert_eq!(parse(&serialize(&arch)).unwrap(), arch, "{name}");
        }
    }

    #[test]
    fn mobile_blocks_carry_expansion() {
        let arch = ArchitectureSpec::new(vec![
            BlockSpec::conv(3, 3, 16, 2, 1),
            BlockSpec::mobile(5, 16, 24, 2, 6, 2),
        ]);
        let text = serialize(&arch);
        assert_eq!(text.matches("expansion").count(), 1);
        assert_eq!(parse(&text).unwrap(), arch);
        assert!(!serialize(&zoo::initial_structure()).contains("expansion"));
    }

    #[test]
    fn key_order_follows_table_columns() {
        let text = serialize(&zoo::initial_structure());
        let keys = ["\"block\"", "\"kernel\"", "\"in\"", "\"out\"", "\"stride\"", "\"bottleneck\"", "\"layers\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_document_is_a_positioned_error() {
        match parse("") {
            Err(FormatError::Syntax { line: 1, column: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_point_at_the_offending_token() {
        let text = "{\n  \"format_version\": 1,\n  \"blocks\": [\n    {\"block\": \"Dense\", \"kernel\": 3}\n  ]\n}";
        let err = parse(text).unwrap_err();
        let FormatError::Syntax { line, message, .. } = &err else { panic!("{err:?}") };
        assert_eq!(*line, 4);
        assert!(message.contains("Dense"), "{message}");
        assert!(err.to_string().starts_with("line 4, column "));
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let good = serialize(&zoo::initial_structure());
        let extra = good.replacen("\"layers\": 1", "\"layers\": 1, \"groups\": 2", 1);
        assert!(matches!(parse(&extra), Err(FormatError::Syntax { .. })));
        let v2 = good.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(parse(&v2), Err(FormatError::Version(2))));
    }

    #[test]
    fn block_rules_are_checked_but_not_stage_count() {
        let stem = ArchitectureSpec::new(vec![BlockSpec::conv(3, 3, 64, 2, 1)]);
        assert_eq!(parse(&serialize(&stem)).unwrap(), stem);
        let mut bad = zoo::initial_structure();
        bad.blocks[2].kernel = 7;
        let err = parse(&serialize(&bad)).unwrap_err();
        assert_eq!(err.to_string(), "block 2: kernel 7 not in {3,5}");
    }
}
