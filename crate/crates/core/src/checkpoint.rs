//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "GORC1" | version u32 | d u32 | H u32 | L_r u32 | L_e u32 | act_r u8 | act_e u8
//! epoch u64 | best_val_mrr f64 | tensor_count u64
//! per tensor: name_len u64 | name | rows u64 | cols u64 | f32 × rows·cols
//! has_moments u8 [ | step u64 | first moments f32… | second moments f32… ]
//! ```
//!
//! Moment payloads follow the tensor order and sizes of the header section.

use std::io::Write;
use std::path::Path;

use crate::error::CheckpointError;
use crate::optim::Moments;
use crate::params::{tensor_specs, Activation, Dims, ModelParams};

pub const MAGIC: &[u8; 5] = b"GORC1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub epoch: u64,
    pub best_val_mrr: f64,
    pub moments: Option<Moments<f32>>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Checkpoint {
            params,
            epoch: 0,
            best_val_mrr: 0.0,
            moments: None,
        }
    }

    pub fn dims(&self) -> Dims {
        self.params.dims
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for x in [dims.dim, dims.heads, dims.relation_layers, dims.entity_layers] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        out.push(dims.relation_act.code());
        out.push(dims.entity_act.code());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_mrr.to_le_bytes());
        let specs = tensor_specs(&dims);
        out.extend_from_slice(&(specs.len() as u64).to_le_bytes());
        for (spec, t) in specs.iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(spec.name.len() as u64).to_le_bytes());
            out.extend_from_slice(spec.name.as_bytes());
            out.extend_from_slice(&(spec.rows as u64).to_le_bytes());
            out.extend_from_slice(&(spec.cols as u64).to_le_bytes());
            put_floats(&mut out, t);
        }
        match &self.moments {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                out.extend_from_slice(&m.step.to_le_bytes());
                for t in m.first.tensors() {
                    put_floats(&mut out, t);
                }
                for t in m.second.tensors() {
                    put_floats(&mut out, t);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut dims = Dims {
            dim: r.u32()? as usize,
            heads: r.u32()? as usize,
            relation_layers: r.u32()? as usize,
            entity_layers: r.u32()? as usize,
            ..Dims::default()
        };
        let rel = r.u8()?;
        dims.relation_act = Activation::from_code(rel).ok_or(CheckpointError::Activation(rel))?;
        let ent = r.u8()?;
        dims.entity_act = Activation::from_code(ent).ok_or(CheckpointError::Activation(ent))?;
        let epoch = r.u64()?;
        let best_val_mrr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let specs = tensor_specs(&dims);
        let count = r.u64()?;
        if count != specs.len() as u64 {
            return Err(CheckpointError::SizeMismatch(format!(
                "header declares {count} tensors, dimensions imply {}",
                specs.len()
            )));
        }
        let mut params = ModelParams::zeros(dims);
        for (spec, t) in specs.iter().zip(params.tensors_mut()) {
            let len = r.u64()? as usize;
            let name = r.take(len)?;
            if name != spec.name.as_bytes() {
                return Err(CheckpointError::SizeMismatch(format!(
                    "expected tensor `{}`, found `{}`",
                    spec.name,
                    String::from_utf8_lossy(name)
                )));
            }
            let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
            if (rows, cols) != (spec.rows, spec.cols) {
                return Err(CheckpointError::SizeMismatch(format!(
                    "tensor `{}` is {rows}×{cols}, expected {}×{}",
                    spec.name, spec.rows, spec.cols
                )));
            }
            r.floats(t)?;
        }
        let moments = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut first = ModelParams::zeros(dims);
                let mut second = ModelParams::zeros(dims);
                for t in first.tensors_mut() {
                    r.floats(t)?;
                }
                for t in second.tensors_mut() {
                    r.floats(t)?;
                }
                Some(Moments { step, first, second })
            }
            flag => {
                return Err(CheckpointError::SizeMismatch(format!("bad moment flag {flag}")));
            }
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::SizeMismatch(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            params,
            epoch,
            best_val_mrr,
            moments,
        })
    }

    /// Fails unless the stored dimensions equal `expected`.
    pub fn check_dims(&self, expected: &Dims) -> Result<(), CheckpointError> {
        if self.params.dims != *expected {
            return Err(CheckpointError::DimsMismatch {
                found: self.params.dims.to_string(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn put_floats(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::SizeMismatch(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, out: &mut [f32]) -> Result<(), CheckpointError> {
        let raw = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}
