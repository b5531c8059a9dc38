use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use elves_core::archive::PathCorpus;
use walkdir::WalkDir;

pub const EXTENSION: &str = "safetensors";

/// Collects model files from files and directories. Ids are paths relative
/// to the directory given on the command line, or the bare file name.
pub fn discover(inputs: &[PathBuf]) -> Result<PathCorpus> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for input in inputs {
        let meta = std::fs::metadata(input).with_context(|| format!("reading {}", input.display()))?;
        let mut add = |id: String, path: PathBuf| -> Result<()> {
            if let Some(prev) = found.insert(id.clone(), path.clone()) {
                bail!("model id `{id}` given twice ({} and {})", prev.display(), path.display());
            }
            Ok(())
        };
        if meta.is_file() {
            let name = input.file_name().context("input has no file name")?;
            add(name.to_string_lossy().into_owned(), input.clone())?;
            continue;
        }
        for entry in WalkDir::new(input).follow_links(true).sort_by_file_name() {
            let entry = entry?;
            let path = entry.path();
            if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != EXTENSION) {
                continue;
            }
            let rel = path.strip_prefix(input).expect("walk stays under root");
            add(id_of(rel), path.to_path_buf())?;
        }
    }
    if found.is_empty() {
        bail!("no .{EXTENSION} files found");
    }
    Ok(PathCorpus::new(found.into_iter().collect()))
}

fn id_of(rel: &Path) -> String {
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Output location for a model id, refusing anything that escapes `root`.
pub fn output_path(root: &Path, id: &str) -> Option<PathBuf> {
    let rel = Path::new(id);
    if id.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}
