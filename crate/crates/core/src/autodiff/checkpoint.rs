//! Checkpoint files: one JSON header line followed by little-endian f32 blobs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

const MAGIC: &str = "kbdd-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Registry name of the architecture.
    pub model: String,
    /// Architecture hyper-parameters, model specific.
    pub config: serde_json::Value,
    pub epoch: usize,
    pub seed: u64,
    /// Free-form training details (mode, input layout, metrics).
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor<f32>>,
}

impl CheckpointFile {
    pub fn new(model: &str, config: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                format: MAGIC.into(),
                version: VERSION,
                model: model.into(),
                config,
                epoch: 0,
                seed: 0,
                metadata: BTreeMap::new(),
                tensors: Vec::new(),
            },
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.header.tensors.push(TensorEntry {
            name: name.into(),
            shape: t.shape().to_vec(),
        });
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }

    /// Looks up `name` and checks its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>, TensorError> {
        let t = self
            .get(name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(TensorError::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> TensorError + '_ {
    move |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<(), TensorError> {
    let header = serde_json::to_string(&ckpt.header)
        .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let file = std::fs::File::create(path).map_err(io(path))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(header.as_bytes()).map_err(io(path))?;
    w.write_all(b"\n").map_err(io(path))?;
    for t in &ckpt.tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile, TensorError> {
    let file = std::fs::File::open(path).map_err(io(path))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io(path))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| TensorError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != MAGIC || header.version != VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io(path))?;
    let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(TensorError::Checkpoint(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut at = 0;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let data = payload[at..at + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        at += 4 * n;
        tensors.push(Tensor::new(&e.shape, data)?);
    }
    Ok(CheckpointFile { header, tensors })
}
