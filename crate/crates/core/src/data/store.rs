//! On-disk dataset directory:
//!
//! ```text
//! manifest.json
//! data.bin    "SCDS" | u32 count | u32 rank | u32 dims... | f32 samples...
//! labels.bin  u32 count | u32 labels...
//! ```
//!
//! All integers and floats are little-endian. `rank` and `dims` describe a
//! single sample. Samples are stored as f32, so values written from f64 are
//! rounded once; a second save/load cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataMode, Dataset};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SCDS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub mode: DataMode,
    /// Shape of one sample.
    pub shape: Vec<usize>,
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
    /// Data blob first, labels blob second.
    pub blobs: Vec<String>,
    /// sha256 over the data blob bytes followed by the labels blob bytes.
    pub checksum: String,
}

fn encode(d: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut data = Vec::with_capacity(12 + 4 * d.samples().numel());
    data.extend_from_slice(MAGIC);
    data.extend_from_slice(&(d.len() as u32).to_le_bytes());
    data.extend_from_slice(&(d.sample_shape().len() as u32).to_le_bytes());
    for &dim in d.sample_shape() {
        data.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in d.samples().data() {
        data.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut labels = Vec::with_capacity(4 + 4 * d.len());
    labels.extend_from_slice(&(d.len() as u32).to_le_bytes());
    for &l in d.labels() {
        labels.extend_from_slice(&(l as u32).to_le_bytes());
    }
    (data, labels)
}

fn digest(data: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    h.update(labels);
    hex::encode(h.finalize())
}

/// Writes `manifest.json`, `data.bin` and `labels.bin` into `dir`, creating
/// it if needed. Returns the manifest path.
pub fn save_dataset(dir: &Path, d: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (data, labels) = encode(d);
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        mode: d.mode(),
        shape: d.sample_shape().to_vec(),
        class_names: d.class_names().to_vec(),
        counts: d.class_counts(),
        blobs: vec!["data.bin".into(), "labels.bin".into()],
        checksum: digest(&data, &labels),
    };
    fs::write(dir.join("data.bin"), &data)?;
    fs::write(dir.join("labels.bin"), &labels)?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

struct Reader<'a> {
    file: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Load {
            file: self.file.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        if self.bytes.len() - self.pos < 4 {
            return Err(self.err_at(self.pos, format!("truncated while reading {what}")));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }
}

fn load_err(file: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Load {
        file: file.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| load_err(path, 0, e.to_string()))
}

/// Loads a dataset directory. `path` may be the directory or its manifest.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = read(&manifest_path)?;
    if text.iter().all(u8::is_ascii_whitespace) {
        return Err(load_err(&manifest_path, 0, "empty manifest"));
    }
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| load_err(&manifest_path, 0, format!("invalid manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(load_err(
            &manifest_path,
            0,
            format!("unsupported schema_version {}", manifest.schema_version),
        ));
    }
    if manifest.blobs.len() != 2 {
        return Err(load_err(&manifest_path, 0, "expected exactly two blobs (data, labels)"));
    }
    if manifest.counts.is_empty() || manifest.counts.len() != manifest.class_names.len() {
        return Err(load_err(&manifest_path, 0, "counts and class_names must be non-empty and equally long"));
    }
    if manifest.counts.iter().sum::<usize>() == 0 {
        return Err(load_err(&manifest_path, 0, "manifest declares no samples"));
    }

    let data_path = dir.join(&manifest.blobs[0]);
    let labels_path = dir.join(&manifest.blobs[1]);
    let data_bytes = read(&data_path)?;
    let label_bytes = read(&labels_path)?;

    let mut r = Reader { file: &data_path, bytes: &data_bytes, pos: 0 };
    if data_bytes.len() < 4 || &data_bytes[..4] != MAGIC {
        return Err(r.err_at(0, "bad magic, expected SCDS"));
    }
    r.pos = 4;
    let count = r.u32("sample count")? as usize;
    let rank_at = r.pos;
    let rank = r.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("dims")? as usize);
    }
    if shape != manifest.shape {
        return Err(r.err_at(rank_at, format!("sample shape {shape:?} disagrees with manifest {:?}", manifest.shape)));
    }
    let expected_total: usize = manifest.counts.iter().sum();
    if count != expected_total {
        return Err(r.err_at(4, format!("count mismatch: blob has {count} samples, manifest declares {expected_total}")));
    }
    let per = shape.iter().product::<usize>();
    let payload = count * per * 4;
    if data_bytes.len() - r.pos != payload {
        return Err(r.err_at(
            r.pos,
            format!("expected {payload} payload bytes, found {}", data_bytes.len() - r.pos),
        ));
    }
    let start = r.pos;
    let mut values = Vec::with_capacity(count * per);
    for (i, chunk) in data_bytes[start..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        let bad = !v.is_finite() || (manifest.mode == DataMode::Image && !(0.0..=1.0).contains(&v));
        if bad {
            return Err(r.err_at(start + 4 * i, format!("invalid sample value {v}")));
        }
        values.push(v);
    }

    let mut lr = Reader { file: &labels_path, bytes: &label_bytes, pos: 0 };
    let label_count = lr.u32("label count")? as usize;
    if label_count != count {
        return Err(lr.err_at(0, format!("count mismatch: {label_count} labels for {count} samples")));
    }
    if label_bytes.len() != 4 + 4 * count {
        return Err(lr.err_at(4, format!("expected {} label bytes, found {}", 4 * count, label_bytes.len() - 4)));
    }
    let num_classes = manifest.counts.len();
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let at = lr.pos;
        let l = lr.u32("label")? as usize;
        if l >= num_classes {
            return Err(lr.err_at(at, format!("label {l} out of range for {num_classes} classes")));
        }
        labels.push(l);
    }

    if digest(&data_bytes, &label_bytes) != manifest.checksum {
        return Err(load_err(&manifest_path, 0, "checksum mismatch"));
    }

    let mut full = vec![count];
    full.extend_from_slice(&shape);
    let samples = Tensor::new(full, values).map_err(|e| load_err(&data_path, start as u64, e.to_string()))?;
    let d = Dataset::new(samples, labels, num_classes, manifest.mode)
        .map_err(|e| load_err(&manifest_path, 0, e.to_string()))?
        .with_class_names(manifest.class_names)?;
    if d.class_counts() != manifest.counts {
        return Err(load_err(
            &labels_path,
            4,
            format!("count mismatch: labels give {:?}, manifest declares {:?}", d.class_counts(), manifest.counts),
        ));
    }
    Ok(d)
}
