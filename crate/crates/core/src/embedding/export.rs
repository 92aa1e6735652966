//! Feature table for external projection tools: `instance_id,class,f0..f{C-1}`.

use std::path::Path;

use super::{EmbeddingError, EmbeddingStore};
use crate::dataset::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub instance_id: String,
    pub class: String,
    pub feature: Vec<f64>,
}

fn csv_err(path: &Path, e: csv::Error) -> EmbeddingError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => EmbeddingError::io(path, io),
        other => EmbeddingError::Format(format!("{}: {other:?}", path.display())),
    }
}

/// One row per manifest instance that has an embedding, in manifest order.
/// Returns the number of rows written.
pub fn export_features_csv(
    store: &EmbeddingStore,
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<usize, EmbeddingError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["instance_id".to_string(), "class".to_string()];
    header.extend((0..store.channels()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut rows = 0;
    for inst in &manifest.instances {
        let Some(e) = store.get(&inst.instance_id) else {
            continue;
        };
        let mut rec = vec![inst.instance_id.clone(), inst.class_label.clone()];
        rec.extend(e.feature.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        rows += 1;
    }
    w.flush().map_err(|e| EmbeddingError::io(path, e))?;
    Ok(rows)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>, EmbeddingError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < 2 {
            return Err(EmbeddingError::Format("feature row needs id and class".into()));
        }
        let feature = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| EmbeddingError::Format(format!("bad value {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(FeatureRow {
            instance_id: rec[0].to_string(),
            class: rec[1].to_string(),
            feature,
        });
    }
    Ok(out)
}
