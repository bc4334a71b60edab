use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gridlab_core::{Annotation, GridSpec, ImportanceMap};
use serde::de::DeserializeOwned;

use crate::error::{io, CliError, Result};

/// Writes through a synced temporary file in the target directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| io(path, e))?;
    tmp.persist(path).map_err(|e| io(path, e.error))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_spec(path: &Path) -> Result<GridSpec> {
    let spec: GridSpec = read_json(path)?;
    spec.validate().map_err(|e| CliError::from(e).in_file(path))?;
    Ok(spec)
}

/// Reads a map from `.png` (grayscale) or JSON.
pub fn read_map(path: &Path) -> Result<ImportanceMap> {
    let bytes = read(path)?;
    let map = if has_extension(path, "png") {
        ImportanceMap::decode_png(&bytes)
    } else {
        std::str::from_utf8(&bytes)
            .map_err(|_| gridlab_core::Error::Input("map file is not UTF-8 JSON".into()))
            .and_then(ImportanceMap::from_json)
    };
    map.map_err(|e| CliError::from(e).in_file(path))
}

pub fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// `dir/name.json` -> `dir/name.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Loads every `*.json` file in `dir` (sorted by name) as an annotation for
/// `spec`. Files for another stimulus or grid mode, or naming blocks the spec
/// lacks, are rejected with the file name.
pub fn load_annotations(dir: &Path, spec: &GridSpec) -> Result<Vec<Annotation>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!("{}: no annotation files (*.json)", dir.display())));
    }
    paths
        .iter()
        .map(|path| {
            let ann: Annotation = read_json(path)?;
            let fail = |m: String| CliError::Input(format!("{}: {m}", path.display()));
            if ann.stimulus_id != spec.stimulus_id {
                return Err(fail(format!(
                    "field `stimulus_id` is `{}` but the grid spec is for `{}`",
                    ann.stimulus_id, spec.stimulus_id
                )));
            }
            if ann.grid_mode != spec.mode {
                return Err(fail(format!(
                    "field `grid_mode` is `{}` but the grid spec is `{}`",
                    ann.grid_mode, spec.mode
                )));
            }
            let unknown = ann.unknown_blocks(spec);
            if !unknown.is_empty() {
                return Err(fail(format!(
                    "field `selected_block_ids` names blocks not in the grid: {}",
                    unknown.join(", ")
                )));
            }
            Ok(ann)
        })
        .collect()
}
