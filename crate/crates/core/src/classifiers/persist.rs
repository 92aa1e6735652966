//! Trained cache-model parameters on disk.
//!
//! ```text
//! magic   "MVP1"
//! u32     version (1)
//! u32     C, u32 NK, u32 N
//! u32     flags: bit 0 train_cache, bit 1 train_zip, bit 2 adapt_cache
//! f64     beta
//! u32     header length, UTF-8 JSON {"classes", "labels", "config"}
//! f64     W (C × C, row-major), b (C), cache (NK × C, row-major)
//! ```
//!
//! Little-endian throughout, as in the embedding file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Result, ZipModel, ZipParams};
use crate::numerics::Tensor2;

pub const MVP1_MAGIC: [u8; 4] = *b"MVP1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    labels: Vec<usize>,
    config: serde_json::Value,
}

fn to_bytes(model: &ZipModel, classes: &[String], config: &serde_json::Value) -> Result<Vec<u8>> {
    let p = model.params();
    let c = p.channels();
    let header = serde_json::to_vec(&Header {
        classes: classes.to_vec(),
        labels: model.labels().to_vec(),
        config: config.clone(),
    })
    .map_err(|e| ClassifierError::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MVP1_MAGIC);
    for v in [VERSION, c as u32, p.cache.rows() as u32, model.num_classes() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let flags = u32::from(p.train_cache) | u32::from(p.train_zip) << 1 | u32::from(model.adapt_cache()) << 2;
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&model.beta().to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in p.w.data().iter().chain(&p.b).chain(p.cache.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn from_bytes(bytes: &[u8]) -> Result<(ZipModel, Vec<String>, serde_json::Value)> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(ClassifierError::Format(format!("parameter file truncated at byte {pos}")));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4)? != MVP1_MAGIC {
        return Err(ClassifierError::Format("bad parameter file magic".into()));
    }
    let mut u32s = [0u32; 5];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    }
    let [version, c, nk, n, flags] = u32s.map(|v| v as usize);
    if version != VERSION as usize {
        return Err(ClassifierError::Format(format!("unsupported parameter file version {version}")));
    }
    let beta = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let hlen = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(hlen)?).map_err(|e| ClassifierError::Format(e.to_string()))?;
    let total = c * c + c + nk * c;
    let raw = take(total * 8)?;
    let vals: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if pos != bytes.len() {
        return Err(ClassifierError::Format("trailing bytes in parameter file".into()));
    }
    if header.classes.len() != n {
        return Err(ClassifierError::Format("class list does not match N".into()));
    }
    let params = ZipParams {
        w: Tensor2::from_vec(c, c, vals[..c * c].to_vec())?,
        b: vals[c * c..c * c + c].to_vec(),
        cache: Tensor2::from_vec(nk, c, vals[c * c + c..].to_vec())?,
        train_cache: flags & 1 != 0,
        train_zip: flags & 2 != 0,
    };
    let model = ZipModel::new(params, beta, flags & 4 != 0, header.labels, n)?;
    Ok((model, header.classes, header.config))
}

/// Writes `model` with its class names and a free-form config echo.
pub fn write_zip_model(path: &Path, model: &ZipModel, classes: &[String], config: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(model, classes, config)?).map_err(|e| ClassifierError::io(path, e))
}

pub fn read_zip_model(path: &Path) -> Result<(ZipModel, Vec<String>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| ClassifierError::io(path, e))?;
    from_bytes(&bytes)
}
