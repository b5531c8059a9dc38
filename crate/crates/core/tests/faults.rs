//! Damaged archives fail with a corruption error that names what was hit.

use std::path::PathBuf;

use elves_core::archive::backend::STORE;
use elves_core::archive::{compress_corpus, decompress_corpus, ArchiveError, CompressOptions, ElvesArchive, Stages};
use elves_core::model::ModelFile;
use proptest::prelude::*;

fn archive() -> Vec<u8> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let models: Vec<ModelFile> = ["model_a.safetensors", "model_b.safetensors"]
        .iter()
        .map(|n| ModelFile::load(dir.join(n), *n).unwrap())
        .collect();
    let opts = CompressOptions { stages: Stages::ALL, backend: STORE, block_params: 1024, workers: 1 };
    compress_corpus(&models, &opts).unwrap().0
}

fn corrupt_context(bytes: &[u8]) -> String {
    match decompress_corpus(bytes, 1) {
        Err(ArchiveError::Corrupt { context, .. }) => context,
        Err(e) => panic!("expected corruption, got {e}"),
        Ok(_) => panic!("damaged archive decoded"),
    }
}

#[test]
fn truncation_at_every_section_boundary() {
    let bytes = archive();
    let ar = ElvesArchive::parse(&bytes).unwrap();
    for s in &ar.sections {
        for cut in [s.offset, s.offset + s.framed_len / 2] {
            let ctx = corrupt_context(&bytes[..cut]);
            assert!(ctx.contains("archive") || ctx.contains("model"), "cut at {cut}: {ctx}");
        }
    }
    // cutting inside a block names that block
    let block = ar.sections.iter().find(|s| s.label.contains("block")).unwrap();
    let next = ar.sections.iter().find(|s| s.offset > block.offset).unwrap();
    let ctx = corrupt_context(&bytes[..next.offset - 1]);
    assert_eq!(ctx, block.label);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_flipped_bit_is_detected(pos in 8usize..18_000, bit in 0u8..8) {
        let mut bytes = archive();
        let pos = pos % bytes.len();
        bytes[pos] ^= 1 << bit;
        let detected = matches!(decompress_corpus(&bytes, 1), Err(ArchiveError::Corrupt { .. }));
        prop_assert!(detected, "flip at {} bit {} went unnoticed", pos, bit);
    }
}
