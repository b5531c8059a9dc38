//! Compression of model tensor collections: whole-layer dedup, distance
//! encoding of repeated parameters, exponent-less float encoding and a
//! checksummed archive container, plus the analyzers used to size them.

pub mod analyzer;
pub mod archive;
pub mod bitstream;
pub mod chunk;
pub mod de;
pub mod dedup;
pub mod elf;
pub mod float;
pub mod model;
pub mod report;
pub mod synth;
mod varint;
