//! Self-describing checkpoint container.
//!
//! ```text
//! b"DABCCKPT" | u32 version | u64 header length | JSON header | tensor data
//! ```
//!
//! The JSON header carries the model config, schedule state, seed and a
//! tensor index (`name`, `shape`, `dtype`, byte `offset` into the data
//! section). Tensor data is little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DabcModel, ModelConfig};
use crate::data::Geometry;
use crate::nn::{ParamSet, Tensor};
use crate::quantizer::QuantizationSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DABCCKPT";
const VERSION: u32 = 1;

/// Storage precision of tensor data. `F64` round-trips bit-exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub spec: QuantizationSpec,
    pub schedule: ScheduleState,
    pub seed: u64,
    /// Input geometry the model was trained at, if known.
    pub geometry: Option<Geometry>,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    dtype: Precision,
    decay: bool,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    spec: QuantizationSpec,
    schedule_state: ScheduleState,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geometry: Option<Geometry>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &DabcModel, spec: &QuantizationSpec, schedule: ScheduleState, seed: u64) -> Self {
        Self {
            config: model.config().clone(),
            spec: spec.clone(),
            schedule,
            seed,
            geometry: None,
            params: model.params().clone(),
        }
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Self {
        self.geometry = Some(geometry);
        self
    }

    /// Rebuilds the model; tensor names and shapes must match the config.
    pub fn to_model(&self) -> Result<DabcModel> {
        let mut model = DabcModel::new(self.config.clone(), self.seed)?;
        model.load_params(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(_, p)| {
                let e = TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    dtype: precision,
                    decay: p.decay,
                    offset,
                };
                offset += (p.value.len() * precision.width()) as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            spec: self.spec.clone(),
            schedule_state: self.schedule,
            seed: self.seed,
            geometry: self.geometry,
            tensors,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, p) in self.params.iter() {
            for &v in p.value.data() {
                match precision {
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..data_start])?;
        let data = &bytes[data_start..];
        let mut params = ParamSet::new();
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let start = t.offset as usize;
            let end = start + n * t.dtype.width();
            let raw = data
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} extends past end of file", t.name)))?;
            let values = match t.dtype {
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            if params.find(&t.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
            params.add(t.name, Tensor::from_vec(t.shape, values)?, t.decay);
        }
        let ckpt = Self {
            config: header.config,
            spec: header.spec,
            schedule: header.schedule_state,
            seed: header.seed,
            geometry: header.geometry,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks tensor names and shapes against a freshly built model of the
    /// stored config.
    pub fn validate(&self) -> Result<()> {
        self.config.check_spec(&self.spec)?;
        let reference = DabcModel::new(self.config.clone(), 0)?;
        if reference.params().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} tensors, file holds {}",
                reference.params().len(),
                self.params.len()
            )));
        }
        for (_, p) in reference.params().iter() {
            let id = self
                .params
                .find(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            self.params.get(id).ensure_shape(p.value.shape(), &p.name)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let bytes = self.to_bytes(precision)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint {
                path: path.to_path_buf(),
                hint: "train one first with `dabc train` or pass --checkpoint".into(),
            },
            _ => Error::Io(e),
        })?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
