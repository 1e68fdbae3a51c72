//! Model checkpoints: a small self-describing binary container holding the
//! resolved model configuration (flat key/value text) and every parameter
//! tensor as f32.
//!
//! Layout, all integers little-endian u64 unless noted:
//!
//! ```text
//! magic   4 bytes  "MVDF"
//! version u32      currently 1
//! config  u64 length + UTF-8 key/value text (net.* and sched.* keys)
//! count   u64      number of tensors
//! tensor  u64 name length + name bytes
//!         u64 ndim + ndim × u64 dims
//!         u64 element count + count × f32 data
//! ```
//!
//! Parameters are stored f32 (half the size, ~1e-7 relative quantization —
//! far below any acceptance tolerance); arithmetic stays f64 in memory.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::diffusion::{DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::kv::{format as kv_format, KvReader};
use crate::net::{Denoiser, DenoiserConfig, ParamStore};

const MAGIC: &[u8; 4] = b"MVDF";
const VERSION: u32 = 1;

/// Raw checkpoint contents before model reconstruction.
#[derive(Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Guards length fields read from disk so a corrupt header cannot trigger a
/// huge allocation.
fn checked_len(v: u64, what: &str) -> Result<usize> {
    const LIMIT: u64 = 1 << 32;
    if v > LIMIT {
        return Err(Error::Checkpoint(format!("checkpoint {what} length {v} is implausible")));
    }
    Ok(v as usize)
}

pub fn save_checkpoint(path: &Path, config_text: &str, params: &ParamStore) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    write_u64(&mut w, config_text.len() as u64).map_err(io)?;
    w.write_all(config_text.as_bytes()).map_err(io)?;
    write_u64(&mut w, params.len() as u64).map_err(io)?;
    for (name, tensor) in params.iter() {
        write_u64(&mut w, name.len() as u64).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        write_u64(&mut w, tensor.ndim() as u64).map_err(io)?;
        for &d in tensor.shape() {
            write_u64(&mut w, d as u64).map_err(io)?;
        }
        write_u64(&mut w, tensor.len() as u64).map_err(io)?;
        for &x in tensor.iter() {
            w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a model checkpoint (bad magic)", path.display())));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(io)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let cfg_len = checked_len(read_u64(&mut r).map_err(io)?, "config")?;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes).map_err(io)?;
    let config_text = String::from_utf8(cfg_bytes).map_err(|_| Error::Checkpoint("checkpoint config is not UTF-8".into()))?;
    let count = checked_len(read_u64(&mut r).map_err(io)?, "tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = checked_len(read_u64(&mut r).map_err(io)?, "name")?;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = checked_len(read_u64(&mut r).map_err(io)?, "ndim")?;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(checked_len(read_u64(&mut r).map_err(io)?, "dim")?);
        }
        let len = checked_len(read_u64(&mut r).map_err(io)?, "data")?;
        if dims.iter().product::<usize>() != len {
            return Err(Error::Checkpoint(format!("tensor {name}: dims {dims:?} disagree with element count {len}")));
        }
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    // A well-formed checkpoint ends exactly at the last tensor.
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(io)? {
        0 => Ok(Checkpoint { config_text, tensors }),
        _ => Err(Error::Checkpoint("trailing bytes after final tensor".into())),
    }
}

/// A denoiser together with its parameters and noise schedule — everything
/// needed to train further, sample, or evaluate.
#[derive(Debug)]
pub struct Model {
    pub denoiser: Denoiser,
    pub params: ParamStore,
    pub schedule: DiffusionSchedule,
    pub sched_cfg: ScheduleConfig,
}

impl Model {
    /// Fresh model with deterministically initialized parameters.
    pub fn new(cfg: DenoiserConfig, sched_cfg: ScheduleConfig, seed: u64) -> Result<Self> {
        let denoiser = Denoiser::new(cfg)?;
        let params = denoiser.init_params(seed);
        let schedule = sched_cfg.build()?;
        Ok(Model { denoiser, params, schedule, sched_cfg })
    }

    /// Serialized configuration: exactly the net.* and sched.* keys.
    pub fn config_text(&self) -> String {
        let mut pairs = self.denoiser.config().to_kv_pairs();
        pairs.extend(self.sched_cfg.to_kv_pairs());
        kv_format(&pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config_text(), &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let mut reader = KvReader::from_text(&ckpt.config_text)?;
        let net_cfg = DenoiserConfig::from_kv(&mut reader)?;
        let sched_cfg = ScheduleConfig::from_kv(&mut reader)?;
        reader.finish()?;
        let denoiser = Denoiser::new(net_cfg)?;
        let schedule = sched_cfg.build()?;
        let params = restore_params(&denoiser, ckpt.tensors, 0, false)?;
        Ok(Model { denoiser, params, schedule, sched_cfg })
    }

    /// Rebuilds this model under a modified architecture, carrying over
    /// every stored tensor and freshly initializing parameters the new
    /// architecture adds (e.g. enabling cross-view attention on a trained
    /// backbone: the zero-initialized output projections keep the function
    /// identical until training moves them).
    pub fn with_architecture(self, cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        let denoiser = Denoiser::new(cfg)?;
        let stored: BTreeMap<String, ArrayD<f64>> = self.params.into_inner();
        let params = restore_params(&denoiser, stored, seed, true)?;
        Ok(Model { denoiser, params, schedule: self.schedule, sched_cfg: self.sched_cfg })
    }
}

/// Builds the parameter store for `denoiser` from stored tensors. With
/// `allow_new`, parameters absent from the store are seeded fresh; otherwise
/// the tensor set must match exactly. Stored tensors unknown to the
/// architecture are always an error.
fn restore_params(
    denoiser: &Denoiser,
    mut stored: BTreeMap<String, ArrayD<f64>>,
    seed: u64,
    allow_new: bool,
) -> Result<ParamStore> {
    let mut params = denoiser.init_params(seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut missing = Vec::new();
    for name in &names {
        match stored.remove(name) {
            Some(tensor) => {
                if tensor.shape() != params.get(name).shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name}: stored shape {:?} does not fit architecture shape {:?}",
                        tensor.shape(),
                        params.get(name).shape()
                    )));
                }
                params.get_mut(name).assign(&tensor);
            }
            None => missing.push(name.to_string()),
        }
    }
    if !allow_new && !missing.is_empty() {
        return Err(Error::Checkpoint(format!("checkpoint lacks {} tensors, e.g. {}", missing.len(), missing[0])));
    }
    if let Some(name) = stored.keys().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint carries {} tensors unknown to the architecture, e.g. {name}",
            stored.len()
        )));
    }
    Ok(params)
}
