//! Text checkpoint format.
//!
//! ```text
//! {"format":"r2bc-policy","schema_version":1,"scalar":"f32","sizes":[16,64,64,2],"seed":0}
//! w 0 <row-major weights of layer 0>
//! b 0 <biases of layer 0>
//! ...
//! end <param_count>
//! ```
//!
//! Values are written in Rust's shortest round-trip notation, so a
//! save/load cycle reproduces every parameter bit for bit.

use super::{PolicyNet, Scalar};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_SCHEMA: u32 = 1;
const FORMAT: &str = "r2bc-policy";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(String),
    #[error("checkpoint schema version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint stores {found} parameters, expected {expected}")]
    ScalarType { found: String, expected: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    schema_version: u32,
    scalar: String,
    sizes: Vec<usize>,
    seed: u64,
}

impl<S: Scalar> PolicyNet<S> {
    pub fn to_checkpoint_string(&self) -> String {
        let header = Header {
            format: FORMAT.to_string(),
            schema_version: CHECKPOINT_SCHEMA,
            scalar: S::NAME.to_string(),
            sizes: self.sizes.clone(),
            seed: self.seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            write_values(&mut out, 'w', l, w.iter());
            write_values(&mut out, 'b', l, b.iter());
        }
        let _ = writeln!(out, "end {}", self.param_count());
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, CheckpointError> {
        let corrupt = |m: String| CheckpointError::Corrupt(m);
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
        let header: Header = serde_json::from_str(head).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(corrupt(format!("format tag {:?}", header.format)));
        }
        if header.schema_version != CHECKPOINT_SCHEMA {
            return Err(CheckpointError::Version { found: header.schema_version, expected: CHECKPOINT_SCHEMA });
        }
        if header.scalar != S::NAME {
            return Err(CheckpointError::ScalarType { found: header.scalar, expected: S::NAME.to_string() });
        }
        if header.sizes.len() < 2 || header.sizes.contains(&0) {
            return Err(corrupt(format!("layer sizes {:?}", header.sizes)));
        }

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in header.sizes.windows(2).enumerate() {
            let w = read_values::<S>(lines.next(), 'w', l, pair[0] * pair[1])?;
            let b = read_values::<S>(lines.next(), 'b', l, pair[1])?;
            weights.push(Array2::from_shape_vec((pair[0], pair[1]), w).map_err(|e| corrupt(e.to_string()))?);
            biases.push(Array1::from_vec(b));
        }
        let net = PolicyNet::from_parts(header.sizes, weights, biases, header.seed).map_err(|e| corrupt(e.to_string()))?;
        let end = lines.next().ok_or_else(|| corrupt("missing end marker".into()))?;
        if end != format!("end {}", net.param_count()) {
            return Err(corrupt(format!("bad end marker {end:?}")));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(corrupt("trailing data".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint_str(&text)
    }
}

fn write_values<'a, S: Scalar>(out: &mut String, tag: char, layer: usize, values: impl Iterator<Item = &'a S>) {
    let _ = write!(out, "{tag} {layer}");
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

fn read_values<S: Scalar>(line: Option<&str>, tag: char, layer: usize, count: usize) -> Result<Vec<S>, CheckpointError> {
    let line = line.ok_or_else(|| CheckpointError::Corrupt(format!("missing {tag} {layer}")))?;
    let mut parts = line.split(' ');
    let prefix = (parts.next(), parts.next());
    if prefix != (Some(tag.to_string().as_str()), Some(layer.to_string().as_str())) {
        return Err(CheckpointError::Corrupt(format!("expected {tag} {layer}")));
    }
    let values: Vec<S> = parts
        .map(|p| S::parse(p).filter(|v| v.is_finite()).ok_or_else(|| CheckpointError::Corrupt(format!("bad value {p:?} in {tag} {layer}"))))
        .collect::<Result<_, _>>()?;
    if values.len() != count {
        return Err(CheckpointError::Corrupt(format!("{tag} {layer} has {} values, expected {count}", values.len())));
    }
    Ok(values)
}
