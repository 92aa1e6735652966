//! Views file: JSON Lines, one [`ViewSpec`] per line, consumed by the encoder.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{GeometryError, ViewSpec};

fn io(path: &Path, source: std::io::Error) -> GeometryError {
    GeometryError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_views_to<W: Write>(mut out: W, views: &[ViewSpec]) -> std::io::Result<()> {
    for v in views {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_views_file(path: &Path, views: &[ViewSpec]) -> Result<(), GeometryError> {
    let f = File::create(path).map_err(|e| io(path, e))?;
    write_views_to(BufWriter::new(f), views).map_err(|e| io(path, e))
}

/// Reads a views file; blank lines are skipped, duplicate `(instance, view)` pairs rejected.
pub fn read_views_file(path: &Path) -> Result<Vec<ViewSpec>, GeometryError> {
    let f = File::open(path).map_err(|e| io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: ViewSpec = serde_json::from_str(&line).map_err(|e| GeometryError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert((v.instance_id.clone(), v.view_id)) {
            return Err(GeometryError::Format {
                line: i + 1,
                message: format!("duplicate view {}/{}", v.instance_id, v.view_id),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Sorted view ids per instance.
pub fn group_views(views: &[ViewSpec]) -> BTreeMap<String, Vec<u32>> {
    let mut map: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for v in views {
        map.entry(v.instance_id.clone()).or_default().push(v.view_id);
    }
    for ids in map.values_mut() {
        ids.sort_unstable();
    }
    map
}
