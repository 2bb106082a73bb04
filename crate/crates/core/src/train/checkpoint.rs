//! Binary checkpoint container ("RPCK").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "RPCK"
//! version u32
//! arch    u32 length + canonical architecture JSON
//! count   u32
//! entry*  u16 name length, UTF-8 name, u8 dtype, u8 rank, u32 dims[rank], data
//! ```
//!
//! A file is parsed in full before anything is built from it, so a
//! truncated or inconsistent file never leaves a half-loaded model behind.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::AdamState;
use crate::codec::{ArchitectureConfig, Model};
use crate::loss::LossBaseline;
use crate::nn::ParamSet;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"RPCK";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 4;
const MAX_ARCH_JSON: usize = 1 << 16;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam/m/";
const ADAM_V: &str = "adam/v/";
const ADAM_STEP: &str = "adam/step";
const BASELINE: &str = "loss/baseline";
const TRAIN_STEP: &str = "train/step";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    Version(u32),
    #[error("checkpoint truncated at byte {offset}: needed {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("architecture mismatch: checkpoint {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("unknown entry {0:?}")]
    UnknownName(String),
    #[error("missing entry {0:?}")]
    MissingName(String),
    #[error("duplicate entry {0:?}")]
    DuplicateName(String),
    #[error("entry {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("entry {name:?} has dtype {found}, expected {expected}")]
    Dtype { name: String, expected: &'static str, found: &'static str },
    #[error("entry {name:?}: {message}")]
    Entry { name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F32,
    F64,
    U64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::U64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            2 => Some(Dtype::U64),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::U64 => "u64",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::U64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Data {
    fn dtype(&self) -> Dtype {
        match self {
            Data::F32(_) => Dtype::F32,
            Data::F64(_) => Dtype::F64,
            Data::U64(_) => Dtype::U64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    dims: Vec<usize>,
    data: Data,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: ArchitectureConfig,
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
    pub baseline: LossBaseline,
    pub step: u64,
}

fn dims_of(shape: Shape) -> Vec<usize> {
    shape.0.to_vec()
}

impl Checkpoint {
    /// A checkpoint for a freshly built model: zero moments, unset baseline.
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            architecture: model.config().clone(),
            params: model.params().clone(),
            adam: AdamState::new(model.params()),
            baseline: LossBaseline::new(),
            step: 0,
        }
    }

    /// Rebuilds the model in the requested precision.
    pub fn model<T: crate::tensor::Scalar>(&self) -> Result<Model<T>, CheckpointError> {
        let mut model = Model::<f32>::zeros(self.architecture.clone())
            .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        *model.params_mut() = self.params.clone();
        Ok(model.cast())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, Entry)> = Vec::new();
        for (prefix, set) in [(PARAM, self.params.tensors()), (ADAM_M, &self.adam.m[..]), (ADAM_V, &self.adam.v[..])] {
            for ((name, _), tensor) in self.params.iter().zip(set) {
                let entry = Entry { dims: dims_of(tensor.shape()), data: Data::F32(tensor.data().to_vec()) };
                entries.push((format!("{prefix}{name}"), entry));
            }
        }
        entries.push((ADAM_STEP.into(), Entry { dims: vec![], data: Data::U64(vec![self.adam.step]) }));
        entries.push((TRAIN_STEP.into(), Entry { dims: vec![], data: Data::U64(vec![self.step]) }));
        entries.push((BASELINE.into(), Entry { dims: vec![], data: Data::F64(vec![self.baseline.value()]) }));

        let arch = self.architecture.to_canonical_json();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, entry) in &entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(entry.data.dtype().tag());
            out.push(entry.dims.len() as u8);
            for &d in &entry.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &entry.data {
                Data::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (architecture, mut entries) = parse(bytes)?;
        let model = Model::<f32>::zeros(architecture.clone()).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        let template = model.params();

        let mut take_tensors = |prefix: &str| -> Result<Vec<Tensor<f32>>, CheckpointError> {
            template
                .iter()
                .map(|(name, t)| {
                    let full = format!("{prefix}{name}");
                    let entry = entries.remove(&full).ok_or_else(|| CheckpointError::MissingName(full.clone()))?;
                    let expected = dims_of(t.shape());
                    if entry.dims != expected {
                        return Err(CheckpointError::ShapeMismatch { name: full, expected, found: entry.dims });
                    }
                    match entry.data {
                        Data::F32(v) => Tensor::from_vec(t.shape(), v)
                            .map_err(|e| CheckpointError::Entry { name: full, message: e.to_string() }),
                        other => Err(CheckpointError::Dtype { name: full, expected: "f32", found: other.dtype().name() }),
                    }
                })
                .collect()
        };
        let values = take_tensors(PARAM)?;
        let m = take_tensors(ADAM_M)?;
        let v = take_tensors(ADAM_V)?;
        let adam_step = take_u64(&mut entries, ADAM_STEP)?;
        let step = take_u64(&mut entries, TRAIN_STEP)?;
        let baseline = take_f64(&mut entries, BASELINE)?;
        if let Some(name) = entries.keys().next() {
            return Err(CheckpointError::UnknownName(name.clone()));
        }
        if !(baseline.is_finite() && baseline >= 0.0) {
            return Err(CheckpointError::Entry { name: BASELINE.into(), message: format!("invalid value {baseline}") });
        }

        let mut params = template.clone();
        for (slot, value) in params.tensors_mut().iter_mut().zip(values) {
            *slot = value;
        }
        Ok(Self {
            architecture,
            params,
            adam: AdamState { m, v, step: adam_step },
            baseline: LossBaseline::from_value(baseline),
            step,
        })
    }

    /// Writes through a temporary file and renames it into place, so a
    /// crash mid-write leaves any previous file intact.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("rpck.tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails when the stored layout differs from `expected`. Priming and
    /// diffusion counts are ignored; they do not change the parameters.
    pub fn check_architecture(&self, expected: &ArchitectureConfig) -> Result<(), CheckpointError> {
        let (e, f) = (expected.digest(), self.architecture.digest());
        if e != f {
            return Err(CheckpointError::ArchitectureMismatch { expected: e, found: f });
        }
        Ok(())
    }
}

fn take_scalar(entries: &mut BTreeMap<String, Entry>, name: &str) -> Result<Data, CheckpointError> {
    let entry = entries.remove(name).ok_or_else(|| CheckpointError::MissingName(name.into()))?;
    if !entry.dims.is_empty() {
        return Err(CheckpointError::ShapeMismatch { name: name.into(), expected: vec![], found: entry.dims });
    }
    Ok(entry.data)
}

fn take_u64(entries: &mut BTreeMap<String, Entry>, name: &str) -> Result<u64, CheckpointError> {
    match take_scalar(entries, name)? {
        Data::U64(v) => Ok(v[0]),
        other => Err(CheckpointError::Dtype { name: name.into(), expected: "u64", found: other.dtype().name() }),
    }
}

fn take_f64(entries: &mut BTreeMap<String, Entry>, name: &str) -> Result<f64, CheckpointError> {
    match take_scalar(entries, name)? {
        Data::F64(v) => Ok(v[0]),
        other => Err(CheckpointError::Dtype { name: name.into(), expected: "f64", found: other.dtype().name() }),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(CheckpointError::Truncated { offset: self.pos, need: n - rest });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8]) -> Result<(ArchitectureConfig, BTreeMap<String, Entry>), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let arch_len = r.u32()? as usize;
    if arch_len > MAX_ARCH_JSON {
        return Err(CheckpointError::Architecture(format!("header of {arch_len} bytes")));
    }
    let arch_bytes = r.take(arch_len)?;
    let architecture: ArchitectureConfig =
        serde_json::from_slice(arch_bytes).map_err(|e| CheckpointError::Architecture(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Entry { name: "?".into(), message: "name is not UTF-8".into() })?
            .to_string();
        let tag = r.u8()?;
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| CheckpointError::Entry { name: name.clone(), message: format!("unknown dtype tag {tag}") })?;
        let rank = r.u8()? as usize;
        if rank > MAX_RANK {
            return Err(CheckpointError::Entry { name, message: format!("rank {rank} exceeds {MAX_RANK}") });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let nbytes = numel.and_then(|n| n.checked_mul(dtype.width()));
        let Some(nbytes) = nbytes else {
            return Err(CheckpointError::Entry { name, message: format!("dims {dims:?} overflow") });
        };
        let raw = r.take(nbytes)?;
        let data = match dtype {
            Dtype::F32 => Data::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::F64 => Data::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::U64 => Data::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        if entries.insert(name.clone(), Entry { dims, data }).is_some() {
            return Err(CheckpointError::DuplicateName(name));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok((architecture, entries))
}
