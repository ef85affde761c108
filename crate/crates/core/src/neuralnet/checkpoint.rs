//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "WTLSTMCK"
//! version  u32
//! hdr_len  u64
//! header   hdr_len bytes of JSON (config, epoch, val_loss, sidecar, tensor shapes)
//! data     f64 values of each tensor, row-major, in header order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::params::{DenseParams, LstmParams, ModelParams, TENSOR_NAMES};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics;

const MAGIC: &[u8; 8] = b"WTLSTMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Best-on-validation parameters plus the metadata needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_loss: f64,
    /// Path of the scaler sidecar the inputs were scaled with.
    pub scaler_sidecar: Option<String>,
    pub optimizer_state: Option<ModelParams>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    val_loss: f64,
    scaler_sidecar: Option<String>,
    tensors: Vec<TensorHeader>,
    optimizer_state: bool,
}

impl Checkpoint {
    /// Dropout-free predictions (log1p space) for scaled inputs.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.params.predict_matrix(x)
    }

    /// Validation MAE, computed the same way as during training.
    pub fn evaluate(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
        Ok(metrics::mae(y, &self.predict(x)?)?.value)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            val_loss: self.val_loss,
            scaler_sidecar: self.scaler_sidecar.clone(),
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.params.shapes())
                .map(|(name, shape)| TensorHeader {
                    name: (*name).to_owned(),
                    shape,
                })
                .collect(),
            optimizer_state: self.optimizer_state.is_some(),
        };
        let header = serde_json::to_vec(&header)?;
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&header).map_err(io)?;
        let mut write_model = |m: &ModelParams| -> std::io::Result<()> {
            for (_, t) in m.tensors() {
                for v in t {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            Ok(())
        };
        write_model(&self.params).map_err(io)?;
        if let Some(state) = &self.optimizer_state {
            write_model(state).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut input = BufReader::new(File::open(path).map_err(io)?);

        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint file", path.display())));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        input.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header)?;

        if header.tensors.len() != TENSOR_NAMES.len()
            || header.tensors.iter().zip(TENSOR_NAMES).any(|(t, n)| t.name != n)
        {
            return Err(Error::Format("checkpoint tensor list does not match the model layout".into()));
        }
        let dims2 = |t: &TensorHeader| -> Result<(usize, usize)> {
            match t.shape[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Error::Format(format!("tensor {} must be 2-D", t.name))),
            }
        };
        let dims1 = |t: &TensorHeader| -> Result<usize> {
            match t.shape[..] {
                [a] => Ok(a),
                _ => Err(Error::Format(format!("tensor {} must be 1-D", t.name))),
            }
        };
        let shapes = (
            dims2(&header.tensors[0])?,
            dims2(&header.tensors[1])?,
            dims1(&header.tensors[2])?,
            dims2(&header.tensors[3])?,
            dims1(&header.tensors[4])?,
        );

        let read_model = |input: &mut BufReader<File>| -> Result<ModelParams> {
            let mut read_vec = |n: usize| -> Result<Vec<f64>> {
                let mut bytes = vec![0u8; n * 8];
                input.read_exact(&mut bytes).map_err(io)?;
                Ok(bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect())
            };
            let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
            let (wi, wr, b, dw, db) = shapes;
            let model = ModelParams {
                lstm: LstmParams {
                    w_input: Array2::from_shape_vec(wi, read_vec(wi.0 * wi.1)?).map_err(shape_err)?,
                    w_recurrent: Array2::from_shape_vec(wr, read_vec(wr.0 * wr.1)?).map_err(shape_err)?,
                    bias: Array1::from(read_vec(b)?),
                },
                dense: DenseParams {
                    weights: Array2::from_shape_vec(dw, read_vec(dw.0 * dw.1)?).map_err(shape_err)?,
                    bias: Array1::from(read_vec(db)?),
                },
            };
            model
                .check()
                .map_err(|e| Error::Format(format!("inconsistent checkpoint shapes: {e}")))?;
            Ok(model)
        };
        let params = read_model(&mut input)?;
        let optimizer_state = if header.optimizer_state {
            Some(read_model(&mut input)?)
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint data".into()));
        }
        if !header.val_loss.is_finite() {
            return Err(Error::Format("checkpoint validation loss is not finite".into()));
        }
        Ok(Checkpoint {
            params,
            config: header.config,
            epoch: header.epoch,
            val_loss: header.val_loss,
            scaler_sidecar: header.scaler_sidecar,
            optimizer_state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::params::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Checkpoint, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = init_params(6, 5, 3, &mut rng);
        let x = Array2::from_shape_simple_fn((9, 6), || rng.random::<f64>());
        let y = Array2::from_shape_simple_fn((9, 3), || rng.random::<f64>());
        let mut ck = Checkpoint {
            params: params.clone(),
            config: TrainConfig { hidden_size: 5, ..Default::default() },
            epoch: 4,
            val_loss: 0.0,
            scaler_sidecar: Some("scaler.json".into()),
            optimizer_state: Some(params.zeros_like()),
        };
        ck.val_loss = ck.evaluate(&x, &y).unwrap();
        (ck, x, y)
    }

    #[test]
    fn round_trip_is_exact() {
        let (ck, x, y) = sample();
        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        let back = Checkpoint::load(f.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.predict(&x).unwrap(), ck.predict(&x).unwrap());
        assert!((back.evaluate(&x, &y).unwrap() - ck.val_loss).abs() <= 1e-9);
    }

    #[test]
    fn predict_is_deterministic_and_checks_features() {
        let (ck, x, _) = sample();
        assert_eq!(ck.predict(&x).unwrap(), ck.predict(&x).unwrap());
        assert_eq!(ck.predict(&x).unwrap().dim(), (9, 3));
        assert_eq!(ck.predict(&x.slice(ndarray::s![..1, ..]).to_owned()).unwrap().dim(), (1, 3));
        assert!(matches!(ck.predict(&Array2::zeros((2, 4))), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_wrong_version_and_magic() {
        let (ck, _, _) = sample();
        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        bytes[8] = 99;
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(Checkpoint::load(f.path()), Err(Error::Format(ref m)) if m.contains("version")));
        bytes[0] = b'X';
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(Checkpoint::load(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let (mut ck, _, _) = sample();
        ck.params.dense.weights = Array2::zeros((4, 3));
        ck.optimizer_state = None;
        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        assert!(matches!(Checkpoint::load(f.path()), Err(Error::Format(ref m)) if m.contains("shapes")));
    }

    #[test]
    fn rejects_truncated_file() {
        let (ck, _, _) = sample();
        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(f.path()).is_err());
    }
}
