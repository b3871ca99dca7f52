//! Self-describing model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "REDECKPT"
//! version      u32       1
//! header_len   u32       byte length of the JSON header
//! header       JSON      {"config": ModelConfig, "vocab": [..] | null,
//!                         "tensors": [{"name", "group", "shape": [rows, cols]}, ..]}
//! data         f32 LE    every tensor in header order, row-major
//! ```
//!
//! Parameters are held in f64 in memory and stored as f32; loading widens
//! them back, so a save/load/save cycle is byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::conversation::Vocab;
use crate::encoder::{EncoderModel, ModelConfig, ParamGroup};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"REDECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Option<Vocab>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub vocab: Option<Vocab>,
}

/// Rounds every parameter to the nearest f32, matching what a checkpoint stores.
pub fn round_to_f32(model: &mut EncoderModel) {
    model.for_each_tensor_mut(|_, _, t| t.mapv_inplace(|v| v as f32 as f64));
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let tensors = self.model.tensors();
        let header = Header {
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            tensors: tensors
                .iter()
                .map(|(name, group, t)| TensorEntry {
                    name: name.clone(),
                    group: *group,
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, _, t) in &tensors {
            // iter() walks in logical row-major order regardless of memory layout
            let bytes: Vec<u8> = t.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;

        let mut model = EncoderModel::zeros(&header.config)?;
        let mut slots = model.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} tensors, file lists {}",
                slots.len(),
                header.tensors.len()
            )));
        }
        for ((name, group, slot), entry) in slots.iter_mut().zip(&header.tensors) {
            if *name != entry.name || *group != entry.group || [slot.nrows(), slot.ncols()] != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} ({:?}, {:?}) does not match expected {name} ({group:?}, {:?})",
                    entry.name,
                    entry.group,
                    entry.shape,
                    slot.dim()
                )));
            }
            let mut buf = vec![0u8; slot.len() * 4];
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            **slot = Array2::from_shape_vec(slot.raw_dim(), values).expect("shape checked");
        }
        drop(slots);
        Ok(Checkpoint {
            model,
            vocab: header.vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
