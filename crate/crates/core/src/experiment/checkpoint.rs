//! Single-file checkpoints: magic, version, JSON header, raw tensors.
//!
//! Layout: 8-byte magic `TRNDFAIR`, little-endian u32 format version,
//! little-endian u64 header length, the JSON header, then every parameter
//! tensor followed by the first and second Adam moments, each as row-major
//! little-endian f64.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::AdamConfig;
use crate::scalar::Scalar;

use super::config::ExperimentConfig;
use super::train::EpochRecord;

pub const MAGIC: &[u8; 8] = b"TRNDFAIR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Scalar type of the run that wrote the file.
    pub scalar: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub tensors: Vec<TensorInfo>,
    pub parameter_count: usize,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub trace: Vec<EpochRecord>,
    pub stall: usize,
    pub prev_monitor: Option<f64>,
    pub converged_at: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: Vec<Matrix<T>>,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    header: &CheckpointHeader,
    params: &[Matrix<T>],
    m: &[Matrix<T>],
    v: &[Matrix<T>],
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let json = serde_json::to_vec(header)?;
    let file = fs::File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for t in params.iter().chain(m).chain(v) {
        for &x in t.as_slice() {
            out.write_all(&x.to_f64_lossy().to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut input = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let read_group = |input: &mut BufReader<fs::File>| -> Result<Vec<Matrix<T>>> {
        header
            .tensors
            .iter()
            .map(|t| {
                let mut data = Vec::with_capacity(t.rows * t.cols);
                let mut buf = [0u8; 8];
                for _ in 0..t.rows * t.cols {
                    input
                        .read_exact(&mut buf)
                        .map_err(|_| Error::Checkpoint(format!("truncated tensor `{}`", t.name)))?;
                    data.push(T::from_f64_lossy(f64::from_le_bytes(buf)));
                }
                Ok(Matrix::from_vec(t.rows, t.cols, data))
            })
            .collect()
    };
    let params = read_group(&mut input)?;
    let m = read_group(&mut input)?;
    let v = read_group(&mut input)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { header, params, m, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            scalar: "f64".into(),
            config: ExperimentConfig::default(),
            seed: 4,
            epoch: 2,
            rng: ChaCha8Rng::seed_from_u64(4),
            tensors: vec![TensorInfo {
                name: "w".into(),
                rows: 2,
                cols: 2,
            }],
            parameter_count: 4,
            adam: AdamConfig::default(),
            adam_step: 2,
            trace: Vec::new(),
            stall: 0,
            prev_monitor: Some(0.1 + 0.2),
            converged_at: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = Matrix::from_vec(2, 2, vec![0.1f64, -1e-300, f64::MAX, 1.0 / 3.0]);
        let m = p.map(|x| x * 0.5);
        let v = p.map(|x| x * x);
        save(&path, &header(), std::slice::from_ref(&p), std::slice::from_ref(&m), std::slice::from_ref(&v)).unwrap();
        let back = load::<f64>(&path).unwrap();
        assert_eq!(back.header, header());
        assert_eq!(back.params, vec![p]);
        assert_eq!(back.m, vec![m]);
        assert_eq!(back.v, vec![v]);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        fs::write(&path, b"NOTACKPT....").unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Checkpoint(_))));
        let p = Matrix::from_vec(2, 2, vec![1.0f64; 4]);
        save(&path, &header(), std::slice::from_ref(&p), std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Checkpoint(_))));
    }
}
