//! Binary model snapshots.
//!
//! Layout: the 8-byte magic `KGEXSNAP`, a little-endian u32 format version,
//! a u64 header length, a JSON header, then the entity and relation tables as
//! little-endian f64 in row-major order. Loading reproduces the parameters
//! bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::error::{Error, Result};
use crate::kge::{EmbeddingModel, ModelConfig, Parameters};

pub const MAGIC: &[u8; 8] = b"KGEXSNAP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    width: usize,
    trained_epochs: usize,
    calibrator: Option<Calibrator>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub model: EmbeddingModel,
    pub calibrator: Option<Calibrator>,
}

fn snap_err(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

impl Snapshot {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let params = self.model.parameters();
        let header = Header {
            config: self.model.config().clone(),
            num_entities: params.num_entities(),
            num_relations: params.num_relations(),
            width: params.width,
            trained_epochs: self.model.trained_epochs(),
            calibrator: self.calibrator.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC).map_err(snap_err)?;
        out.write_u32::<LittleEndian>(VERSION).map_err(snap_err)?;
        out.write_u64::<LittleEndian>(json.len() as u64).map_err(snap_err)?;
        out.write_all(&json).map_err(snap_err)?;
        for x in params.entity.iter().chain(&params.relation) {
            out.write_f64::<LittleEndian>(*x).map_err(snap_err)?;
        }
        out.flush().map_err(snap_err)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(snap_err)?;
        if &magic != MAGIC {
            return Err(Error::Snapshot("not a model snapshot".into()));
        }
        let version = input.read_u32::<LittleEndian>().map_err(snap_err)?;
        if version != VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
        }
        let len = input.read_u64::<LittleEndian>().map_err(snap_err)?;
        let mut json = vec![0u8; len as usize];
        input.read_exact(&mut json).map_err(snap_err)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.width != header.config.width() {
            return Err(Error::DimensionMismatch {
                expected: header.config.width(),
                got: header.width,
            });
        }
        let mut params = Parameters::zeros(header.width, header.num_entities, header.num_relations);
        input
            .read_f64_into::<LittleEndian>(&mut params.entity)
            .map_err(snap_err)?;
        input
            .read_f64_into::<LittleEndian>(&mut params.relation)
            .map_err(snap_err)?;
        let model = EmbeddingModel::from_parameters(header.config, params, header.trained_epochs)?;
        if let Some(c) = &header.calibrator {
            c.check_model(&model)?;
        }
        Ok(Snapshot {
            model,
            calibrator: header.calibrator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
