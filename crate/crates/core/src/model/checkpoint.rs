//! Binary checkpoint format:
//!
//! ```text
//! "SCKP" | u16 version | u32 header length | JSON header | f64 parameters...
//! ```
//!
//! All integers and floats are little-endian. Parameters follow the header
//! in declaration order: extractor, projection, classifier.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Component, FreezeState, ModelConfig, ModelStack};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCKP";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub d_rep: usize,
    pub d_z: usize,
    pub freeze: FreezeState,
    pub seed: u64,
    pub parameters: Vec<ParamEntry>,
}

fn header_for(stack: &ModelStack, seed: u64) -> CheckpointHeader {
    let parameters = Component::ALL
        .iter()
        .flat_map(|&c| {
            stack
                .param_names(c)
                .into_iter()
                .zip(stack.params(c))
                .map(|(name, p)| ParamEntry {
                    name,
                    shape: p.shape().to_vec(),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    CheckpointHeader {
        model: stack.config().clone(),
        input_shape: stack.input_shape().to_vec(),
        num_classes: stack.num_classes(),
        d_rep: stack.d_rep(),
        d_z: stack.d_z(),
        freeze: stack.freeze_state(),
        seed,
        parameters,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, stack: &ModelStack, seed: u64) -> Result<()> {
    let header = serde_json::to_vec(&header_for(stack, seed))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for c in Component::ALL {
        for p in stack.params(c) {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, stack: &ModelStack, seed: u64) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, stack, seed)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    file: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Load {
            file: self.file.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Parses a checkpoint; `file` is only used in error messages.
pub fn read_checkpoint<R: Read>(mut r: R, file: &Path) -> Result<(ModelStack, CheckpointHeader)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { file, bytes: &bytes, pos: 0 };

    if cur.take(4, "magic")? != MAGIC {
        cur.pos = 0;
        return Err(cur.err("bad magic, expected SCKP"));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        cur.pos -= 2;
        return Err(cur.err(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(cur.take(4, "header length")?.try_into().unwrap()) as usize;
    let header_start = cur.pos;
    let header: CheckpointHeader = serde_json::from_slice(cur.take(len, "header")?).map_err(|e| Error::Load {
        file: file.to_path_buf(),
        offset: header_start as u64,
        reason: format!("invalid header: {e}"),
    })?;

    // Rebuild the skeleton from the architecture, then overwrite every parameter.
    let mut stack = ModelStack::new(
        &header.model,
        &header.input_shape,
        header.num_classes,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .map_err(|e| cur.err(format!("header describes an invalid model: {e}")))?;
    let expected = header_for(&stack, header.seed).parameters;
    if expected != header.parameters {
        return Err(cur.err("parameter table does not match the declared architecture"));
    }
    for c in Component::ALL {
        for p in stack.params_mut(c) {
            let raw = cur.take(p.numel() * 8, "parameters")?;
            for (v, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(cur.err("non-finite parameter value"));
                }
            }
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    for c in Component::ALL {
        stack.set_frozen(c, header.freeze.is_frozen(c));
    }
    Ok((stack, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelStack, CheckpointHeader)> {
    let file = fs::File::open(path).map_err(|e| Error::Load {
        file: path.to_path_buf(),
        offset: 0,
        reason: e.to_string(),
    })?;
    read_checkpoint(file, path)
}
