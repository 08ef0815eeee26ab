//! Single-file checkpoints: one line of JSON header, then every tensor as
//! little-endian `f64` values in header order.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "textgsl-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    /// Scalar type the parameters were trained in.
    pub scalar: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub hyperparameters: serde_json::Value,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    store: &ParamStore<T>,
    step: u64,
    hyperparameters: serde_json::Value,
) -> Result<(), CheckpointError> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        scalar: T::type_name().to_string(),
        step,
        tensors: store
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        hyperparameters,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, p) in store.iter() {
        for &v in p.value.data() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(
    mut input: R,
) -> Result<(CheckpointHeader, ParamStore<T>), CheckpointError> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(CheckpointError::Format("missing header terminator".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line[..line.len() - 1])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(format!(
            "unsupported format `{}`",
            header.format
        )));
    }
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            input.read_exact(&mut buf).map_err(|e| {
                CheckpointError::Format(format!("payload for `{}` truncated: {e}", entry.name))
            })?;
            data.push(T::lit(f64::from_le_bytes(buf)));
        }
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        store
            .add(entry.name.clone(), t)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
    }
    if input.read(&mut buf)? != 0 {
        return Err(CheckpointError::Format("trailing bytes after payload".into()));
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_values() {
        let mut s = ParamStore::<f64>::new();
        s.add("a.b.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, -7.25]).unwrap())
            .unwrap();
        s.add("a.b.bias", Tensor::scalar(0.125)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s, 42, serde_json::json!({"lr": 0.001})).unwrap();
        let (h, back) = read_checkpoint::<f64, _>(&bytes[..]).unwrap();
        assert_eq!(h.step, 42);
        assert_eq!(h.hyperparameters["lr"], 0.001);
        assert_eq!(back, s);
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(bytes.len() - header_len, 8 * 7);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[4])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s, 0, serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            read_checkpoint::<f64, _>(&bytes[..]),
            Err(CheckpointError::Format(_))
        ));
    }
}
